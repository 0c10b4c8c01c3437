//! Experiment configuration (TOML).
//!
//! Every key, its default, and its meaning:
//!
//! ```toml
//! experiment_id = "experiment"     # copied into every result row
//!
//! [spad]
//! bin_resolution_ps = 100.0        # Δ
//! rep_rate_hz = 20e6               # F; B = floor(1/(ΔF))
//! dead_time_ns = 81.0              # rounded up to whole bins
//! dead_time_bins = 810             # optional, overrides dead_time_ns
//! max_active_periods = 16          # censoring cap per cycle
//!
//! [scene]                          # required
//! ambient_flux = 0.02              # photons/pulse/bin; required unless ambient_file
//! signal_flux = 0.04               # or sbr; one of them is required unless signal_file
//! sbr = 2.0                        # signal_flux = sbr * ambient_flux
//! depth_bin = 250                  # optional; drawn uniformly per seed when absent
//! depth_m = 3.75                   # optional alternative to depth_bin
//! depth_file = "depth.txt"         # scans: depth map in meters
//! ambient_file = "ambient.txt"     # scans: optional per-pixel ambient flux
//! signal_file = "signal.txt"       # scans: optional per-pixel signal flux
//! mismatch = { kind = "two_peak", d1 = 150, flux1 = 0.1, d2 = 350, flux2 = 0.1 }
//!                                  # or { kind = "corner_tail", d, signal_flux, amp, decay }
//!
//! [acquisition]
//! budget_us = 100.0                # exposure per pixel
//! seeds = 1                        # seeds per sweep point / pixel
//! global_seed = 0
//! estimator = "map"                # "map" or "coates"
//! dither_window = 3
//! sampler = "hazard"               # "hazard" or "per_bin"
//!
//! [policies]
//! list = ["adaptive", "free_running"]   # also "fixed", "uniform"
//! fixed_gate = 0
//! gate_offset = 0                  # adaptive: bins subtracted from the sampled depth
//! background = "estimate"          # "estimate" or "known" (use the true ambient flux)
//! background_fallback = 0.01       # used when calibration sees < 10 detections
//! flux_model = "grid"              # "grid" or "known" (use the true signal flux)
//! flux_grid_size = 16
//! flux_grid_lo = 0.1               # grid spans [lo, hi] x estimated ambient flux
//! flux_grid_hi = 100.0
//!
//! [exposure]                       # adaptive exposure (adaptive policy only)
//! enabled = false
//! epsilon = 0.25
//! metric = "termination"           # "termination" (1 - p(MAP)) or "entropy"
//! min_cycles = 50                  # optional; default calibration cycles + 10
//!
//! [prior]
//! kind = "uniform"                 # "uniform", "flatness" or "external"
//! sigma_bins = 10.0                # flatness
//! floor_weight = 0.1               # flatness and external
//! path = "prior.txt"               # external
//!
//! [sweep]                          # each axis optional; absent axes use the base value
//! ambient_flux = [0.01, 0.02]
//! sbr = [1.0, 2.0]
//! dead_time_ns = [50.0, 81.0]
//! budget_us = [50.0, 100.0]
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dead_time_to_bins, SpadConfig, DEFAULT_MAX_ACTIVE_PERIODS};
use crate::policies::{ExposureConfig, FluxGridSpec, PolicyKind, TerminationMetric};
use crate::scene::{MismatchKind, PriorSpec, DEFAULT_FLATNESS_SIGMA_BINS, DEFAULT_FLOOR_WEIGHT};
use crate::spadsim::SamplerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment_id")]
    pub experiment_id: String,
    #[serde(default)]
    pub spad: SpadSection,
    pub scene: SceneSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub policies: PolicySection,
    #[serde(default)]
    pub exposure: ExposureSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_experiment_id() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpadSection {
    pub bin_resolution_ps: f64,
    pub rep_rate_hz: f64,
    pub dead_time_ns: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dead_time_bins: Option<usize>,
    pub max_active_periods: u32,
}

impl Default for SpadSection {
    fn default() -> Self {
        Self {
            bin_resolution_ps: 100.0,
            rep_rate_hz: 20e6,
            dead_time_ns: 81.0,
            dead_time_bins: None,
            max_active_periods: DEFAULT_MAX_ACTIVE_PERIODS,
        }
    }
}

impl SpadSection {
    pub fn to_config(&self, dead_time_ns: Option<f64>) -> Result<SpadConfig> {
        let dead_ns = dead_time_ns.unwrap_or(self.dead_time_ns);
        let mut cfg = SpadConfig::new(self.bin_resolution_ps, self.rep_rate_hz, dead_ns)?
            .with_max_active_periods(self.max_active_periods);
        if dead_time_ns.is_none() {
            if let Some(bins) = self.dead_time_bins {
                cfg = cfg.with_dead_time_bins(bins);
            }
        } else {
            cfg = cfg.with_dead_time_bins(dead_time_to_bins(dead_ns, self.bin_resolution_ps)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambient_flux: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_flux: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_bin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambient_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<MismatchKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Map,
    Coates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionSection {
    pub budget_us: f64,
    pub seeds: usize,
    pub global_seed: u64,
    pub estimator: EstimatorKind,
    pub dither_window: usize,
    pub sampler: SamplerKind,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            budget_us: 100.0,
            seeds: 1,
            global_seed: 0,
            estimator: EstimatorKind::Map,
            dither_window: 3,
            sampler: SamplerKind::Hazard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterSource {
    #[default]
    Estimate,
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxModel {
    #[default]
    Grid,
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub list: Vec<PolicyKind>,
    pub fixed_gate: usize,
    pub gate_offset: usize,
    pub background: ParameterSource,
    pub background_fallback: f64,
    pub flux_model: FluxModel,
    pub flux_grid_size: usize,
    pub flux_grid_lo: f64,
    pub flux_grid_hi: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            list: vec![PolicyKind::Adaptive, PolicyKind::FreeRunning],
            fixed_gate: 0,
            gate_offset: 0,
            background: ParameterSource::Estimate,
            background_fallback: 0.01,
            flux_model: FluxModel::Grid,
            flux_grid_size: crate::estimators::DEFAULT_FLUX_GRID_SIZE,
            flux_grid_lo: 0.1,
            flux_grid_hi: 100.0,
        }
    }
}

impl PolicySection {
    /// Flux grid for a pixel whose true signal flux is `signal_flux`.
    pub fn flux_grid(&self, signal_flux: f64) -> FluxGridSpec {
        match self.flux_model {
            FluxModel::Known => FluxGridSpec::Known(signal_flux),
            FluxModel::Grid => FluxGridSpec::LogSpaced {
                count: self.flux_grid_size,
                lo_mult: self.flux_grid_lo,
                hi_mult: self.flux_grid_hi,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposureSection {
    pub enabled: bool,
    pub epsilon: f64,
    pub metric: TerminationMetric,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_cycles: Option<usize>,
}

impl Default for ExposureSection {
    fn default() -> Self {
        let d = ExposureConfig::default();
        Self {
            enabled: false,
            epsilon: d.epsilon,
            metric: d.metric,
            min_cycles: None,
        }
    }
}

impl ExposureSection {
    pub fn to_config(&self) -> Option<ExposureConfig> {
        self.enabled.then_some(ExposureConfig {
            epsilon: self.epsilon,
            metric: self.metric,
            min_cycles: self.min_cycles,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Uniform,
    Flatness,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSection {
    pub kind: PriorKind,
    pub sigma_bins: f64,
    pub floor_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            kind: PriorKind::Uniform,
            sigma_bins: DEFAULT_FLATNESS_SIGMA_BINS,
            floor_weight: DEFAULT_FLOOR_WEIGHT,
            path: None,
        }
    }
}

impl PriorSection {
    pub fn to_spec(&self) -> Result<PriorSpec> {
        let spec = match self.kind {
            PriorKind::Uniform => PriorSpec::Uniform,
            PriorKind::Flatness => PriorSpec::Flatness {
                sigma_bins: self.sigma_bins,
                floor_weight: self.floor_weight,
            },
            PriorKind::External => PriorSpec::External {
                path: self
                    .path
                    .clone()
                    .ok_or_else(|| Error::Config("missing required key: prior.path".into()))?,
                floor_weight: self.floor_weight,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ambient_flux: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sbr: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dead_time_ns: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub budget_us: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub ambient_flux: f64,
    pub signal_flux: f64,
    pub sbr: f64,
    /// `None` keeps the base dead time (which may be given in bins).
    pub dead_time_ns: Option<f64>,
    pub budget_us: f64,
}

impl ExperimentConfig {
    /// A config for one inline pixel with every other key at its default.
    pub fn single_pixel(ambient_flux: f64, signal_flux: f64) -> Self {
        Self {
            experiment_id: default_experiment_id(),
            spad: SpadSection::default(),
            scene: SceneSection {
                ambient_flux: Some(ambient_flux),
                signal_flux: Some(signal_flux),
                ..SceneSection::default()
            },
            acquisition: AcquisitionSection::default(),
            policies: PolicySection::default(),
            exposure: ExposureSection::default(),
            prior: PriorSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn spad_config(&self) -> Result<SpadConfig> {
        self.spad.to_config(None)
    }

    /// Checks values and cross-key requirements. Missing keys are reported
    /// together.
    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        let scene = &self.scene;
        let scan = scene.depth_file.is_some();
        if scene.ambient_flux.is_none() && !(scan && scene.ambient_file.is_some()) {
            missing.push("scene.ambient_flux");
        }
        if scene.signal_flux.is_none() && scene.sbr.is_none() && scene.mismatch.is_none() && !(scan && scene.signal_file.is_some()) {
            missing.push("scene.signal_flux (or scene.sbr)");
        }
        if self.prior.kind == PriorKind::External && self.prior.path.is_none() {
            missing.push("prior.path");
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
        }
        if scene.signal_flux.is_some() && scene.sbr.is_some() {
            return Err(Error::Config("scene.signal_flux and scene.sbr are mutually exclusive".into()));
        }
        if scene.depth_bin.is_some() && scene.depth_m.is_some() {
            return Err(Error::Config("scene.depth_bin and scene.depth_m are mutually exclusive".into()));
        }
        let spad = self.spad_config().map_err(|e| Error::Config(format!("spad: {e}")))?;
        for v in [scene.ambient_flux, scene.signal_flux, scene.sbr].into_iter().flatten() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("scene fluxes must be finite and >= 0, got {v}")));
            }
        }
        if let Some(d) = scene.depth_bin {
            if d >= spad.num_bins {
                return Err(Error::Config(format!("scene.depth_bin {d} outside [0, {})", spad.num_bins)));
            }
        }
        if self.acquisition.seeds == 0 {
            return Err(Error::Config("acquisition.seeds must be >= 1".into()));
        }
        if !(self.acquisition.budget_us > 0.0 && self.acquisition.budget_us.is_finite()) {
            return Err(Error::Config("acquisition.budget_us must be positive".into()));
        }
        if self.acquisition.dither_window == 0 {
            return Err(Error::Config("acquisition.dither_window must be >= 1".into()));
        }
        if self.policies.list.is_empty() {
            return Err(Error::Config("policies.list must not be empty".into()));
        }
        if self.policies.fixed_gate >= spad.num_bins || self.policies.gate_offset >= spad.num_bins {
            return Err(Error::Config(format!(
                "policies.fixed_gate and policies.gate_offset must lie in [0, {})",
                spad.num_bins
            )));
        }
        if !(self.policies.background_fallback.is_finite() && self.policies.background_fallback >= 0.0) {
            return Err(Error::Config("policies.background_fallback must be >= 0".into()));
        }
        let p = &self.policies;
        if p.flux_grid_size == 0 || !(p.flux_grid_lo > 0.0 && p.flux_grid_hi >= p.flux_grid_lo) {
            return Err(Error::Config("invalid flux grid bounds".into()));
        }
        if !(self.exposure.epsilon > 0.0 && self.exposure.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "exposure.epsilon must lie in (0, 1), got {}",
                self.exposure.epsilon
            )));
        }
        self.prior.to_spec().map_err(|e| Error::Config(format!("prior: {e}")))?;
        for (name, axis) in [
            ("sweep.ambient_flux", &self.sweep.ambient_flux),
            ("sweep.sbr", &self.sweep.sbr),
        ] {
            if axis.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(format!("{name} values must be finite and >= 0")));
            }
        }
        if !self.sweep.sbr.is_empty() && scene.signal_flux.is_some() {
            return Err(Error::Config("sweep.sbr conflicts with scene.signal_flux; use scene.sbr".into()));
        }
        for ns in &self.sweep.dead_time_ns {
            self.spad
                .to_config(Some(*ns))
                .map_err(|e| Error::Config(format!("sweep.dead_time_ns: {e}")))?;
        }
        if self.sweep.budget_us.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("sweep.budget_us values must be positive".into()));
        }
        for path in [&scene.depth_file, &scene.ambient_file, &scene.signal_file, &self.prior.path]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::Config(format!("referenced file not found: {}", path.display())));
            }
        }
        Ok(())
    }

    /// The Cartesian product of the sweep axes (ambient, SBR, dead time,
    /// budget, in that nesting order); absent axes contribute the base value.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let base_ambient = self.scene.ambient_flux.unwrap_or(0.0);
        let ambients = axis_or(&self.sweep.ambient_flux, base_ambient);
        let sbrs: Vec<Option<f64>> = if self.sweep.sbr.is_empty() {
            vec![self.scene.sbr]
        } else {
            self.sweep.sbr.iter().map(|&s| Some(s)).collect()
        };
        let deads: Vec<Option<f64>> = if self.sweep.dead_time_ns.is_empty() {
            vec![None]
        } else {
            self.sweep.dead_time_ns.iter().map(|&d| Some(d)).collect()
        };
        let budgets = axis_or(&self.sweep.budget_us, self.acquisition.budget_us);
        let mut points = Vec::new();
        for &ambient in &ambients {
            for &sbr in &sbrs {
                let signal = match sbr {
                    Some(s) => s * ambient,
                    None => self.scene.signal_flux.unwrap_or(0.0),
                };
                let sbr = sbr.unwrap_or(if ambient > 0.0 { signal / ambient } else { f64::INFINITY });
                for &dead in &deads {
                    for &budget in &budgets {
                        points.push(SweepPoint {
                            index: points.len(),
                            ambient_flux: ambient,
                            signal_flux: signal,
                            sbr,
                            dead_time_ns: dead,
                            budget_us: budget,
                        });
                    }
                }
            }
        }
        points
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.scene.depth_file);
        fix(&mut self.scene.ambient_file);
        fix(&mut self.scene.signal_file);
        fix(&mut self.prior.path);
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn axis_or(axis: &[f64], base: f64) -> Vec<f64> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

/// Parses TOML text without validating. Unknown keys are collected and
/// reported together.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    let cfg: ExperimentConfig = serde_ignored::deserialize(table, |path| unknown.push(path.to_string()))
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(cfg)
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[scene]\nambient_flux = 0.02\nsbr = 2.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        let spad = cfg.spad_config().unwrap();
        assert_eq!(spad.num_bins, 500);
        assert_eq!(spad.dead_time_bins, 810);
        assert_eq!(cfg.acquisition.budget_us, 100.0);
        assert_eq!(cfg.exposure.epsilon, 0.25);
        assert_eq!(cfg.exposure.metric, TerminationMetric::Termination);
        let points = cfg.sweep_points();
        assert_eq!(points.len(), 1);
        assert!((points[0].signal_flux - 0.04).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text = format!("{MINIMAL}[spad]\ndeadtime_nss = 5\n[output]\nfolder = \"x\"\n");
        match parse_config_str(&text) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("spad.deadtime_nss"), "{msg}");
                assert!(msg.contains("output.folder"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_keys_are_named() {
        match parse_config_str("[acquisition]\nseeds = 2\n") {
            Err(Error::Config(msg)) => assert!(msg.contains("scene"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let cfg = parse_config_str("[scene]\ndepth_bin = 3\n").unwrap();
        match cfg.validate() {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("scene.ambient_flux"), "{msg}");
                assert!(msg.contains("scene.signal_flux"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for extra in [
            "[acquisition]\nseeds = 0\n",
            "[exposure]\nepsilon = 1.5\n",
            "[policies]\nfixed_gate = 500\n",
            "[prior]\nkind = \"flatness\"\nsigma_bins = -1.0\n",
            "[scene.mismatch]\nkind = \"two_peak\"\nd1 = 1\nflux1 = 0.1\nd2 = 2\nflux2 = 0.1\n[spad]\nrep_rate_hz = -1.0\n",
        ] {
            let cfg = parse_config_str(&format!("{MINIMAL}{extra}")).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{extra}");
        }
        assert!(parse_config_str("[scene]\nambient_flux = \"x\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}depth_bin = 7\n[sweep]\nsbr = [1.0, 2.0]\ndead_time_ns = [50.0]\n[policies]\nlist = [\"uniform\", \"adaptive\"]\n[scene.mismatch]\nkind = \"corner_tail\"\nd = 4\nsignal_flux = 0.1\namp = 0.05\ndecay = 0.5\n"
        );
        let parsed = parse_config_str(&text).unwrap();
        let again = parse_config_str(&parsed.to_toml().unwrap()).unwrap();
        assert_eq!(parsed, again);
        assert_eq!(parsed.to_toml().unwrap(), again.to_toml().unwrap());
    }

    #[test]
    fn sweep_product_order() {
        let text = format!("{MINIMAL}[sweep]\nambient_flux = [0.01, 0.02]\nsbr = [1.0, 5.0]\nbudget_us = [10.0, 20.0, 30.0]\n");
        let cfg = parse_config_str(&text).unwrap();
        let points = cfg.sweep_points();
        assert_eq!(points.len(), 12);
        assert_eq!(points[0].budget_us, 10.0);
        assert_eq!(points[1].budget_us, 20.0);
        assert_eq!(points[3].sbr, 5.0);
        assert!((points[11].signal_flux - 0.1).abs() < 1e-15);
        assert!(points.iter().enumerate().all(|(i, p)| p.index == i));
    }

    #[test]
    fn dead_time_in_bins_overrides() {
        let cfg = parse_config_str(&format!("{MINIMAL}[spad]\ndead_time_bins = 500\n")).unwrap();
        assert_eq!(cfg.spad_config().unwrap().dead_time_bins, 500);
        let swept = cfg.spad.to_config(Some(50.0)).unwrap();
        assert_eq!(swept.dead_time_bins, 500);
        assert_eq!(cfg.spad.to_config(Some(100.0)).unwrap().dead_time_bins, 1000);
    }
}
