//! Running pixels, sweeps and scans.

use rand::Rng;
use rayon::prelude::*;

use super::config::{EstimatorKind, ExperimentConfig, ParameterSource, SweepPoint};
use super::report::{compute_metrics, MetricsReport, ResultRow, STATUS_FAILED, STATUS_OK};
use crate::error::{Error, Result};
use crate::estimators::{
    coates_depth, coates_transient, dither_depth, estimate_background, DepthPosterior, PriorTag,
};
use crate::model::{timestamps_to_histogram, Observation, SceneTransient, SpadConfig};
use crate::policies::{
    calibration_cycles_for_budget, AdaptiveConfig, BackgroundSource, FluxGridSpec, PolicyKind, PolicyState,
};
use crate::rng::{mix_seed, stream_rng, SCENE_STREAM};
use crate::scene::{
    flatness_prior, load_external_prior, mismatch_transient, pixel_transient, read_flux_file, read_grid_file,
    serpentine_order, ExternalPrior, FluxField, Grid, PriorSpec, SceneGrid,
};
use crate::spadsim::{acquire, AcquisitionLimits, Simulator};

/// Everything needed to run one pixel under one policy.
#[derive(Debug, Clone)]
pub struct PixelSpec {
    pub spad: SpadConfig,
    pub scene: SceneTransient,
    pub true_depth_bin: usize,
    pub ambient_flux: f64,
    pub signal_flux: f64,
    pub budget_us: f64,
    /// Depth prior mass; uniform when `None`.
    pub prior: Option<(Vec<f64>, PriorTag)>,
    /// Labels copied into the row.
    pub point: usize,
    pub pixel: Option<(usize, usize)>,
    pub seed_index: usize,
    pub sbr: f64,
    pub dead_time_ns: f64,
}

/// Seed of the acquisition for (point or pixel, seed index); shared by every
/// policy so that comparisons use common random numbers.
pub fn row_seed(global_seed: u64, point: usize, seed_index: usize) -> u64 {
    mix_seed(mix_seed(global_seed, point as u64), seed_index as u64)
}

/// True depth for a seed when the config leaves it unspecified: uniform over
/// the period, drawn from the scene stream, independent of the sweep point.
pub fn random_depth(global_seed: u64, seed_index: usize, num_bins: usize) -> usize {
    stream_rng(mix_seed(global_seed, seed_index as u64), SCENE_STREAM).random_range(0..num_bins)
}

struct Estimate {
    bin: usize,
    subbin: f64,
    termination: f64,
    entropy: f64,
    background: f64,
}

fn policy_for(cfg: &ExperimentConfig, kind: PolicyKind, pixel: &PixelSpec, budget_bins: u64) -> Result<PolicyState> {
    let b = pixel.spad.num_bins;
    // calibration cycles only serve the background estimate
    let calibration = match cfg.policies.background {
        ParameterSource::Known => 0,
        ParameterSource::Estimate => calibration_cycles_for_budget(budget_bins, b),
    };
    Ok(match kind {
        PolicyKind::Fixed => PolicyState::fixed(cfg.policies.fixed_gate).with_calibration(calibration, b)?,
        PolicyKind::Uniform => PolicyState::uniform(b).with_calibration(calibration, b)?,
        PolicyKind::FreeRunning => PolicyState::free_running().with_calibration(calibration, b)?,
        PolicyKind::Adaptive => {
            let background = match cfg.policies.background {
                ParameterSource::Known => BackgroundSource::Known(pixel.ambient_flux),
                ParameterSource::Estimate => BackgroundSource::Estimate {
                    fallback: cfg.policies.background_fallback,
                },
            };
            let mut acfg = AdaptiveConfig::new(calibration, background, pixel.spad.max_active_periods);
            acfg.gate_offset = cfg.policies.gate_offset;
            acfg.flux_grid = cfg.policies.flux_grid(pixel.signal_flux);
            let policy = match &pixel.prior {
                Some((mass, tag)) => PolicyState::adaptive_with_prior(mass.clone(), *tag, acfg)?,
                None => PolicyState::adaptive(b, acfg)?,
            };
            match cfg.exposure.to_config() {
                Some(exp) => policy.with_exposure(exp)?,
                None => policy,
            }
        }
    })
}

fn estimate(
    cfg: &ExperimentConfig,
    pixel: &PixelSpec,
    policy: &PolicyState,
    rec: &crate::model::AcquisitionRecord,
) -> Result<Estimate> {
    let b = pixel.spad.num_bins;
    let m = pixel.spad.max_active_periods;
    let hist = timestamps_to_histogram(rec, b);
    let owned;
    let (post, background) = match (policy.posterior(), policy.background()) {
        (Some(p), Some(bkg)) => (p, bkg.flux),
        _ => {
            let background = match cfg.policies.background {
                ParameterSource::Known => pixel.ambient_flux,
                ParameterSource::Estimate => estimate_background(rec, b, cfg.policies.background_fallback).flux,
            };
            let grid: FluxGridSpec = cfg.policies.flux_grid(pixel.signal_flux);
            let grid = grid.resolve(background)?;
            let mut post = match &pixel.prior {
                Some((mass, tag)) => DepthPosterior::new(mass, grid, *tag)?,
                None => DepthPosterior::uniform(b, grid)?,
            };
            post.update_from_histogram(&hist, background, m)?;
            owned = post;
            (&owned, background)
        }
    };
    let transient = coates_transient(&hist);
    let bin = match cfg.acquisition.estimator {
        EstimatorKind::Map => post.map_depth(),
        EstimatorKind::Coates => coates_depth(&transient).bin,
    };
    Ok(Estimate {
        bin,
        subbin: dither_depth(&transient, bin, cfg.acquisition.dither_window),
        termination: post.termination_value(),
        entropy: post.entropy(),
        background,
    })
}

/// Runs one acquisition and estimates depth. Errors do not propagate: they
/// produce a row with status `failed` and the reason.
pub fn run_pixel_experiment(cfg: &ExperimentConfig, pixel: &PixelSpec, kind: PolicyKind, seed: u64) -> ResultRow {
    let bin_m = pixel.spad.bin_depth_m();
    let mut row = ResultRow {
        experiment_id: cfg.experiment_id.clone(),
        policy: kind.to_string(),
        point: pixel.point,
        x: pixel.pixel.map(|p| p.0),
        y: pixel.pixel.map(|p| p.1),
        ambient_flux: pixel.ambient_flux,
        signal_flux: pixel.signal_flux,
        sbr: pixel.sbr,
        dead_time_ns: pixel.dead_time_ns,
        budget_us: pixel.budget_us,
        seed_index: pixel.seed_index,
        seed,
        true_depth_bin: pixel.true_depth_bin,
        true_depth_m: pixel.true_depth_bin as f64 * bin_m,
        est_depth_bin: None,
        est_depth_subbin: f64::NAN,
        est_depth_m: f64::NAN,
        abs_error_bins: f64::NAN,
        loss01: f64::NAN,
        termination: f64::NAN,
        entropy: f64::NAN,
        background_est: f64::NAN,
        cycles: 0,
        detections: 0,
        true_bin_detections: 0,
        exposure_us: 0.0,
        status: STATUS_OK.into(),
        failure: String::new(),
    };
    if let Err(e) = fill_row(cfg, pixel, kind, seed, &mut row) {
        row.status = STATUS_FAILED.into();
        row.failure = e.to_string();
    }
    row
}

fn fill_row(cfg: &ExperimentConfig, pixel: &PixelSpec, kind: PolicyKind, seed: u64, row: &mut ResultRow) -> Result<()> {
    let budget_bins = pixel.spad.us_to_bins(pixel.budget_us);
    let mut policy = policy_for(cfg, kind, pixel, budget_bins)?;
    let sim = Simulator::new(&pixel.scene, &pixel.spad)?.with_sampler(cfg.acquisition.sampler);
    let acq = acquire(&sim, &mut policy, AcquisitionLimits::budget(budget_bins), seed)?;
    let rec = &acq.record;
    let est = estimate(cfg, pixel, &policy, rec)?;
    let bin_m = pixel.spad.bin_depth_m();
    row.est_depth_bin = Some(est.bin);
    row.est_depth_subbin = est.subbin;
    row.est_depth_m = est.bin as f64 * bin_m;
    row.abs_error_bins = (est.bin as f64 - pixel.true_depth_bin as f64).abs();
    row.loss01 = if est.bin == pixel.true_depth_bin { 0.0 } else { 1.0 };
    row.termination = est.termination;
    row.entropy = est.entropy;
    row.background_est = est.background;
    row.cycles = rec.len();
    row.detections = rec.detections();
    row.true_bin_detections = rec
        .timestamps
        .iter()
        .filter(|o| **o == Observation::Detected(pixel.true_depth_bin as u32))
        .count();
    row.exposure_us = pixel.spad.bins_to_us(rec.exposure_bins);
    Ok(())
}

/// Runs `f` on a pool with `threads` workers (the global pool when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Rows plus their aggregate.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<ResultRow>,
    pub report: MetricsReport,
}

impl SweepResult {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

fn pixel_for_point(cfg: &ExperimentConfig, point: &SweepPoint, seed_index: usize) -> Result<PixelSpec> {
    let spad = cfg.spad.to_config(point.dead_time_ns)?;
    let b = spad.num_bins;
    let scene_cfg = &cfg.scene;
    let (scene, depth) = match scene_cfg.mismatch {
        Some(kind) => {
            let depth = match kind {
                crate::scene::MismatchKind::TwoPeak { d1, .. } => d1,
                crate::scene::MismatchKind::CornerTail { d, .. } => d,
            };
            (mismatch_transient(kind, point.ambient_flux, b)?, depth)
        }
        None => {
            let depth = match (scene_cfg.depth_bin, scene_cfg.depth_m) {
                (Some(d), _) => d,
                (None, Some(z)) => crate::scene::depth_to_bin_clamped(z, &spad).0,
                (None, None) => random_depth(cfg.acquisition.global_seed, seed_index, b),
            };
            let scene = if point.signal_flux > 0.0 {
                SceneTransient::single_peak(b, point.ambient_flux, depth, point.signal_flux)?
            } else {
                SceneTransient::ambient_only(b, point.ambient_flux)?
            };
            (scene, depth)
        }
    };
    Ok(PixelSpec {
        spad,
        scene,
        true_depth_bin: depth,
        ambient_flux: point.ambient_flux,
        signal_flux: point.signal_flux,
        budget_us: point.budget_us,
        prior: None,
        point: point.index,
        pixel: None,
        seed_index,
        sbr: point.sbr,
        dead_time_ns: spad.dead_time_bins as f64 * spad.bin_resolution_ps * 1e-3,
    })
}

/// Sweep points × policies × seeds. Rows come back in that nesting order
/// whatever the thread count; each row depends only on its own seeds.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let points = cfg.sweep_points();
    if points.is_empty() {
        return Err(Error::Config("sweep has no points".into()));
    }
    let mut tasks = Vec::new();
    for point in &points {
        for &policy in &cfg.policies.list {
            for seed_index in 0..cfg.acquisition.seeds {
                tasks.push((point, policy, seed_index));
            }
        }
    }
    let rows: Vec<ResultRow> = tasks
        .par_iter()
        .map(|&(point, policy, seed_index)| {
            let seed = row_seed(cfg.acquisition.global_seed, point.index, seed_index);
            match pixel_for_point(cfg, point, seed_index) {
                Ok(pixel) => run_pixel_experiment(cfg, &pixel, policy, seed),
                Err(e) => failed_row(cfg, point, policy, seed_index, seed, &e),
            }
        })
        .collect();
    let report = compute_metrics(&rows)?;
    Ok(SweepResult { rows, report })
}

fn failed_row(cfg: &ExperimentConfig, point: &SweepPoint, policy: PolicyKind, seed_index: usize, seed: u64, e: &Error) -> ResultRow {
    ResultRow {
        experiment_id: cfg.experiment_id.clone(),
        policy: policy.to_string(),
        point: point.index,
        x: None,
        y: None,
        ambient_flux: point.ambient_flux,
        signal_flux: point.signal_flux,
        sbr: point.sbr,
        dead_time_ns: point.dead_time_ns.unwrap_or(cfg.spad.dead_time_ns),
        budget_us: point.budget_us,
        seed_index,
        seed,
        true_depth_bin: 0,
        true_depth_m: f64::NAN,
        est_depth_bin: None,
        est_depth_subbin: f64::NAN,
        est_depth_m: f64::NAN,
        abs_error_bins: f64::NAN,
        loss01: f64::NAN,
        termination: f64::NAN,
        entropy: f64::NAN,
        background_est: f64::NAN,
        cycles: 0,
        detections: 0,
        true_bin_detections: 0,
        exposure_us: 0.0,
        status: STATUS_FAILED.into(),
        failure: e.to_string(),
    }
}

/// Per-pixel maps from one (policy, seed) pass over the scene. Failed pixels
/// hold [`MAP_SENTINEL`].
#[derive(Debug, Clone)]
pub struct ScanMaps {
    pub policy: PolicyKind,
    pub seed_index: usize,
    pub depth_m: Grid<f64>,
    pub error_m: Grid<f64>,
    pub entropy: Grid<f64>,
    pub exposure_us: Grid<f64>,
}

pub const MAP_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub rows: Vec<ResultRow>,
    pub maps: Vec<ScanMaps>,
    pub report: MetricsReport,
}

impl ScanResult {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Builds the scene grid from the config's depth and flux sources.
pub fn load_scene_grid(cfg: &ExperimentConfig) -> Result<SceneGrid> {
    let spad = cfg.spad_config()?;
    let s = &cfg.scene;
    let depth_path = s
        .depth_file
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key: scene.depth_file".into()))?;
    let depth = read_grid_file(depth_path)?;
    let ambient = match &s.ambient_file {
        Some(p) => FluxField::Grid(read_flux_file(p)?),
        None => FluxField::Scalar(s.ambient_flux.unwrap_or(0.0)),
    };
    let signal = match (&s.signal_file, s.signal_flux, s.sbr) {
        (Some(p), _, _) => FluxField::Grid(read_flux_file(p)?),
        (None, Some(v), _) => FluxField::Scalar(v),
        (None, None, Some(sbr)) => match &ambient {
            FluxField::Scalar(a) => FluxField::Scalar(sbr * a),
            FluxField::Grid(g) => FluxField::Grid(Grid::new(g.width, g.height, g.values.iter().map(|a| sbr * a).collect())?),
        },
        (None, None, None) => FluxField::Scalar(0.0),
    };
    SceneGrid::from_meters(&depth, &spad, ambient, signal)
}

/// Serpentine scan of the scene for every (policy, seed). With a flatness
/// prior each pixel's prior is centered on the previous pixel's estimate in
/// scan order.
pub fn run_scene_scan(cfg: &ExperimentConfig) -> Result<ScanResult> {
    let grid = load_scene_grid(cfg)?;
    run_scene_scan_on(cfg, &grid)
}

/// [`run_scene_scan`] on an already built grid.
pub fn run_scene_scan_on(cfg: &ExperimentConfig, grid: &SceneGrid) -> Result<ScanResult> {
    let spad = cfg.spad_config()?;
    if grid.num_bins != spad.num_bins {
        return Err(Error::Config("scene grid and spad config disagree on bin count".into()));
    }
    let prior_spec = cfg.prior.to_spec()?;
    let external = match &prior_spec {
        PriorSpec::External { path, .. } => Some(load_external_prior(path, &spad, Some((grid.width, grid.height)))?),
        _ => None,
    };
    let order = serpentine_order(grid.width, grid.height);
    let mut chains = Vec::new();
    for &policy in &cfg.policies.list {
        for seed_index in 0..cfg.acquisition.seeds {
            chains.push((policy, seed_index));
        }
    }
    let results: Vec<(Vec<ResultRow>, ScanMaps)> = chains
        .par_iter()
        .map(|&(policy, seed_index)| scan_chain(cfg, grid, &spad, &prior_spec, external.as_ref(), &order, policy, seed_index))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut maps = Vec::new();
    for (r, m) in results {
        rows.extend(r);
        maps.push(m);
    }
    let report = compute_metrics(&rows)?;
    Ok(ScanResult { rows, maps, report })
}

#[allow(clippy::too_many_arguments)]
fn scan_chain(
    cfg: &ExperimentConfig,
    grid: &SceneGrid,
    spad: &SpadConfig,
    prior_spec: &PriorSpec,
    external: Option<&ExternalPrior>,
    order: &[(usize, usize)],
    policy: PolicyKind,
    seed_index: usize,
) -> Result<(Vec<ResultRow>, ScanMaps)> {
    let (w, h) = (grid.width, grid.height);
    let mut maps = ScanMaps {
        policy,
        seed_index,
        depth_m: Grid::filled(w, h, MAP_SENTINEL)?,
        error_m: Grid::filled(w, h, MAP_SENTINEL)?,
        entropy: Grid::filled(w, h, MAP_SENTINEL)?,
        exposure_us: Grid::filled(w, h, MAP_SENTINEL)?,
    };
    let b = spad.num_bins;
    let mut prev_estimate: Option<usize> = None;
    let mut rows = Vec::with_capacity(order.len());
    for &(x, y) in order {
        let linear = y * w + x;
        let seed = row_seed(cfg.acquisition.global_seed, linear, seed_index);
        let prior = match prior_spec {
            PriorSpec::Uniform => None,
            PriorSpec::Flatness {
                sigma_bins,
                floor_weight,
            } => Some((flatness_prior(prev_estimate, *sigma_bins, *floor_weight, b)?, PriorTag::Flatness)),
            PriorSpec::External { floor_weight, .. } => {
                let ext = external.expect("external prior loaded");
                Some((ext.prior_at(x, y, *floor_weight, b)?, PriorTag::External))
            }
        };
        let ambient = grid.ambient_at(x, y);
        let signal = grid.signal_at(x, y);
        let pixel = PixelSpec {
            spad: *spad,
            scene: pixel_transient(grid, x, y)?,
            true_depth_bin: grid.depth_bin(x, y)?,
            ambient_flux: ambient,
            signal_flux: signal,
            budget_us: cfg.acquisition.budget_us,
            prior,
            point: 0,
            pixel: Some((x, y)),
            seed_index,
            sbr: if ambient > 0.0 { signal / ambient } else { f64::INFINITY },
            dead_time_ns: spad.dead_time_bins as f64 * spad.bin_resolution_ps * 1e-3,
        };
        let row = run_pixel_experiment(cfg, &pixel, policy, seed);
        if let (true, Some(est)) = (row.is_ok(), row.est_depth_bin) {
            prev_estimate = Some(est);
            maps.depth_m.set(x, y, row.est_depth_m);
            maps.error_m.set(x, y, (row.est_depth_m - row.true_depth_m).abs());
            maps.entropy.set(x, y, row.entropy);
            maps.exposure_us.set(x, y, row.exposure_us);
        }
        rows.push(row);
    }
    Ok((rows, maps))
}
