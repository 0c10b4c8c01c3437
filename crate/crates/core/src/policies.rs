//! Gating policies, the per-cycle reward, and adaptive-exposure termination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_background, posterior_entropy, BackgroundEstimate, DepthPosterior, FluxGrid, PriorTag,
};
use crate::model::{
    detection_log_likelihood, AcquisitionRecord, SceneTransient,
};
use crate::rng::SimRng;
use crate::spadsim::CycleOutcome;

/// Fraction of the cycle budget spent on uniformly gated calibration cycles
/// by the adaptive policy.
pub const CALIBRATION_FRACTION: f64 = 0.02;
pub const DEFAULT_EPSILON: f64 = 0.25;
/// Extra cycles after calibration before adaptive exposure may stop.
pub const MIN_CYCLES_AFTER_CALIBRATION: usize = 10;

/// What the detector should do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDirective {
    Gate(usize),
    /// Re-arm as soon as the dead time ends.
    FreeRun,
}

/// The interface the simulator drives.
pub trait GatingPolicy {
    fn next_gate(&mut self, rng: &mut SimRng) -> GateDirective;
    fn observe(&mut self, outcome: &CycleOutcome) -> Result<()>;
    fn should_stop(&self) -> bool {
        false
    }
    /// Number of leading cycles used only for background calibration.
    fn calibration_cycles(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fixed,
    Uniform,
    FreeRunning,
    Adaptive,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Fixed => "fixed",
            PolicyKind::Uniform => "uniform",
            PolicyKind::FreeRunning => "free_running",
            PolicyKind::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMetric {
    /// `1 − p(MAP)`.
    #[default]
    Termination,
    /// Entropy of the depth marginal, in nats.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    pub epsilon: f64,
    pub metric: TerminationMetric,
    /// Defaults to the calibration cycle count plus 10.
    pub min_cycles: Option<usize>,
}

impl ExposureConfig {
    pub fn new(epsilon: f64, metric: TerminationMetric) -> Result<Self> {
        let cfg = Self {
            epsilon,
            metric,
            min_cycles: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            metric: TerminationMetric::Termination,
            min_cycles: None,
        }
    }
}

/// How the adaptive policy learns the ambient flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundSource {
    /// Estimate from the calibration cycles; `fallback` is used when they
    /// hold too few detections.
    Estimate { fallback: f64 },
    Known(f64),
}

/// Signal-flux hypotheses, resolved once the background is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxGridSpec {
    /// Zero plus `count` log-spaced values over `[lo·Φ_bkg, hi·Φ_bkg]`.
    LogSpaced { count: usize, lo_mult: f64, hi_mult: f64 },
    Known(f64),
    Values(Vec<f64>),
}

// Floor for the background when scaling a log-spaced grid.
const MIN_GRID_BACKGROUND: f64 = 1e-6;

impl FluxGridSpec {
    pub fn resolve(&self, background: f64) -> Result<FluxGrid> {
        match self {
            FluxGridSpec::LogSpaced {
                count,
                lo_mult,
                hi_mult,
            } => FluxGrid::log_spaced(background.max(MIN_GRID_BACKGROUND), *count, *lo_mult, *hi_mult, true),
            FluxGridSpec::Known(s) => FluxGrid::known(*s),
            FluxGridSpec::Values(v) => FluxGrid::new(v.clone()),
        }
    }
}

impl Default for FluxGridSpec {
    fn default() -> Self {
        FluxGridSpec::LogSpaced {
            count: crate::estimators::DEFAULT_FLUX_GRID_SIZE,
            lo_mult: 0.1,
            hi_mult: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub calibration_cycles: usize,
    /// Bins subtracted from the sampled depth to form the gate.
    pub gate_offset: usize,
    pub background: BackgroundSource,
    pub flux_grid: FluxGridSpec,
    pub max_active_periods: u32,
}

impl AdaptiveConfig {
    pub fn new(calibration_cycles: usize, background: BackgroundSource, max_active_periods: u32) -> Self {
        Self {
            calibration_cycles,
            gate_offset: 0,
            background,
            flux_grid: FluxGridSpec::default(),
            max_active_periods,
        }
    }
}

/// `ceil(2% · budget periods)` calibration cycles.
pub fn calibration_cycles_for_budget(budget_bins: u64, num_bins: usize) -> usize {
    let periods = budget_bins as f64 / num_bins as f64;
    (CALIBRATION_FRACTION * periods - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone)]
struct AdaptiveState {
    cfg: AdaptiveConfig,
    prior: Vec<f64>,
    prior_tag: PriorTag,
    calibration: AcquisitionRecord,
    background: Option<BackgroundEstimate>,
    posterior: Option<DepthPosterior>,
}

/// A gating policy: fixed, uniform, free-running, or adaptive (posterior
/// sampling with optional adaptive exposure).
#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    num_bins: usize,
    fixed_gate: usize,
    cycle_index: usize,
    exposure: Option<ExposureConfig>,
    pending: Option<GateDirective>,
    /// Leading uniformly gated cycles of a non-adaptive policy, over
    /// `calibration_bins` bins.
    calibration: usize,
    calibration_bins: usize,
    adaptive: Option<Box<AdaptiveState>>,
}

fn calibration_gate(index: usize, cycles: usize, num_bins: usize) -> usize {
    index * num_bins / cycles.max(1)
}

impl PolicyState {
    fn base(kind: PolicyKind, num_bins: usize) -> Self {
        Self {
            kind,
            num_bins,
            fixed_gate: 0,
            cycle_index: 0,
            exposure: None,
            pending: None,
            calibration: 0,
            calibration_bins: 0,
            adaptive: None,
        }
    }

    pub fn fixed(gate: usize) -> Self {
        let mut p = Self::base(PolicyKind::Fixed, gate + 1);
        p.fixed_gate = gate;
        p
    }

    pub fn uniform(num_bins: usize) -> Self {
        Self::base(PolicyKind::Uniform, num_bins)
    }

    pub fn free_running() -> Self {
        Self::base(PolicyKind::FreeRunning, 1)
    }

    /// Adaptive policy with a uniform depth prior.
    pub fn adaptive(num_bins: usize, cfg: AdaptiveConfig) -> Result<Self> {
        Self::adaptive_with_prior(vec![1.0; num_bins], PriorTag::Uniform, cfg)
    }

    pub fn adaptive_with_prior(prior: Vec<f64>, prior_tag: PriorTag, cfg: AdaptiveConfig) -> Result<Self> {
        let b = prior.len();
        if b == 0 {
            return Err(Error::invalid("adaptive policy needs at least one bin"));
        }
        if cfg.gate_offset >= b {
            return Err(Error::invalid(format!("gate offset {} outside [0, {b})", cfg.gate_offset)));
        }
        let (BackgroundSource::Known(f) | BackgroundSource::Estimate { fallback: f }) = cfg.background;
        if !(f.is_finite() && f >= 0.0) {
            return Err(Error::invalid(format!("background flux must be finite and >= 0, got {f}")));
        }
        let calibration = AcquisitionRecord::new(b, cfg.max_active_periods);
        let mut state = AdaptiveState {
            cfg,
            prior,
            prior_tag,
            calibration,
            background: None,
            posterior: None,
        };
        if state.cfg.calibration_cycles == 0 {
            state.finish_calibration()?;
        }
        let mut p = Self::base(PolicyKind::Adaptive, b);
        p.adaptive = Some(Box::new(state));
        Ok(p)
    }

    /// Prepends `cycles` uniformly gated calibration cycles over `num_bins`
    /// bins to a non-adaptive policy. Adaptive policies take theirs from
    /// [`AdaptiveConfig`].
    pub fn with_calibration(mut self, cycles: usize, num_bins: usize) -> Result<Self> {
        if self.adaptive.is_some() {
            return Err(Error::invalid("adaptive calibration is set through AdaptiveConfig"));
        }
        if cycles > 0 && num_bins == 0 {
            return Err(Error::invalid("calibration needs at least one bin"));
        }
        self.calibration = cycles;
        self.calibration_bins = num_bins;
        Ok(self)
    }

    pub fn with_exposure(mut self, exposure: ExposureConfig) -> Result<Self> {
        exposure.validate()?;
        self.exposure = Some(exposure);
        Ok(self)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle_index
    }

    pub fn gate_offset(&self) -> usize {
        self.adaptive.as_ref().map_or(0, |a| a.cfg.gate_offset)
    }

    pub fn exposure(&self) -> Option<&ExposureConfig> {
        self.exposure.as_ref()
    }

    /// The depth posterior, once calibration has finished.
    pub fn posterior(&self) -> Option<&DepthPosterior> {
        self.adaptive.as_ref().and_then(|a| a.posterior.as_ref())
    }

    pub fn background(&self) -> Option<BackgroundEstimate> {
        self.adaptive.as_ref().and_then(|a| a.background)
    }

    pub fn min_cycles(&self) -> usize {
        let calibration = self.calibration_cycles();
        self.exposure
            .and_then(|e| e.min_cycles)
            .unwrap_or(calibration + MIN_CYCLES_AFTER_CALIBRATION)
    }
}

impl AdaptiveState {
    fn in_calibration(&self) -> bool {
        self.posterior.is_none()
    }

    fn finish_calibration(&mut self) -> Result<()> {
        let b = self.prior.len();
        let estimate = match self.cfg.background {
            BackgroundSource::Known(f) => BackgroundEstimate {
                flux: f,
                low_confidence: false,
            },
            BackgroundSource::Estimate { fallback } => {
                let mut rec = self.calibration.clone();
                rec.calibration_cycles = rec.len();
                estimate_background(&rec, b, fallback)
            }
        };
        let grid = self.cfg.flux_grid.resolve(estimate.flux)?;
        let mut post = DepthPosterior::new(&self.prior, grid, self.prior_tag)?;
        let m = self.cfg.max_active_periods;
        for (gate, obs) in self.calibration.cycles() {
            post.update(obs, gate as usize, estimate.flux, m)?;
        }
        self.background = Some(estimate);
        self.posterior = Some(post);
        Ok(())
    }
}

impl PolicyState {
    fn policy_gate(&self, rng: &mut SimRng) -> GateDirective {
        let b = self.num_bins;
        match self.kind {
            PolicyKind::Fixed => GateDirective::Gate(self.fixed_gate),
            PolicyKind::Uniform => GateDirective::Gate(self.cycle_index % b),
            PolicyKind::FreeRunning => GateDirective::FreeRun,
            PolicyKind::Adaptive => {
                let a = self.adaptive.as_ref().expect("adaptive state");
                match &a.posterior {
                    None => {
                        let n = a.cfg.calibration_cycles.max(1);
                        GateDirective::Gate(calibration_gate(self.cycle_index % n, n, b))
                    }
                    Some(post) => {
                        let d = post.sample_depth(rng);
                        GateDirective::Gate((d + b - a.cfg.gate_offset) % b)
                    }
                }
            }
        }
    }
}

impl GatingPolicy for PolicyState {
    fn next_gate(&mut self, rng: &mut SimRng) -> GateDirective {
        let directive = if self.cycle_index < self.calibration {
            GateDirective::Gate(calibration_gate(self.cycle_index, self.calibration, self.calibration_bins))
        } else {
            self.policy_gate(rng)
        };
        self.pending = Some(directive);
        directive
    }

    fn observe(&mut self, outcome: &CycleOutcome) -> Result<()> {
        if let Some(GateDirective::Gate(g)) = self.pending {
            if outcome.gate as usize != g {
                return Err(Error::Contract(format!(
                    "outcome gate {} does not match issued gate {g}",
                    outcome.gate
                )));
            }
        }
        self.pending = None;
        self.cycle_index += 1;
        let Some(a) = self.adaptive.as_mut() else {
            return Ok(());
        };
        if a.in_calibration() {
            a.calibration.push(
                outcome.gate,
                outcome.observation,
                outcome.elapsed_periods,
                outcome.cycle_duration_bins,
            );
            if a.calibration.len() >= a.cfg.calibration_cycles {
                a.finish_calibration()?;
            }
            return Ok(());
        }
        let flux = a.background.map_or(0.0, |e| e.flux);
        let m = a.cfg.max_active_periods;
        let post = a.posterior.as_mut().expect("posterior after calibration");
        post.update(outcome.observation, outcome.gate as usize, flux, m)?;
        Ok(())
    }

    fn should_stop(&self) -> bool {
        match (&self.exposure, self.posterior()) {
            (Some(exp), Some(post)) => {
                self.cycle_index >= self.min_cycles() && termination_value(post, exp.metric) < exp.epsilon
            }
            _ => false,
        }
    }

    fn calibration_cycles(&self) -> usize {
        self.adaptive
            .as_ref()
            .map_or(self.calibration, |a| a.cfg.calibration_cycles)
    }
}

/// Stopping statistic of a posterior.
pub fn termination_value(post: &DepthPosterior, metric: TerminationMetric) -> f64 {
    match metric {
        TerminationMetric::Termination => post.termination_value(),
        TerminationMetric::Entropy => posterior_entropy(post.marginal()),
    }
}

/// `should_stop` as a free function over an explicit posterior.
pub fn should_stop(cycle_index: usize, exposure: &ExposureConfig, min_cycles: usize, post: &DepthPosterior) -> bool {
    cycle_index >= min_cycles && termination_value(post, exposure.metric) < exposure.epsilon
}

/// Scene hypothesis used by the reward: uniform ambient plus one peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxHypothesis {
    pub ambient_flux: f64,
    pub signal_flux: f64,
}

/// Expected negative 0-1 loss of gating at `gate` when the depth is `depth`,
/// in `[−1, 0]`.
///
/// After one detection the single-measurement MAP is the detection bin, so
/// the loss is `1 − p(t = d | g, d)`; a cycle with no detection in the
/// period counts as a loss.
pub fn reward(depth: usize, gate: usize, num_bins: usize, hyp: FluxHypothesis) -> Result<f64> {
    let scene = SceneTransient::single_peak(num_bins, hyp.ambient_flux, depth, hyp.signal_flux)?;
    let t = if depth >= gate { depth } else { depth + num_bins };
    Ok(-(1.0 - detection_log_likelihood(&scene, t, gate)?.exp()))
}

/// [`reward`] by explicit expectation over every single-period outcome, each
/// decoded with the single-measurement MAP over all depth hypotheses (lowest
/// index on ties; no detection decodes to a uniform posterior, i.e. bin 0
/// unless it is the only option, and is scored as a loss).
pub fn reward_brute_force(depth: usize, gate: usize, num_bins: usize, hyp: FluxHypothesis) -> Result<f64> {
    let b = num_bins;
    let scenes: Vec<SceneTransient> = (0..b)
        .map(|d| SceneTransient::single_peak(b, hyp.ambient_flux, d, hyp.signal_flux))
        .collect::<Result<_>>()?;
    let truth = &scenes[depth];
    let mut expected_loss = 0.0;
    let mut detect_total = 0.0;
    for t in gate..gate + b {
        let p = detection_log_likelihood(truth, t, gate)?.exp();
        detect_total += p;
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (d, scene) in scenes.iter().enumerate() {
            let ll = detection_log_likelihood(scene, t, gate)?;
            if ll > best_ll {
                best = d;
                best_ll = ll;
            }
        }
        if best != depth {
            expected_loss += p;
        }
    }
    expected_loss += 1.0 - detect_total;
    Ok(-expected_loss)
}

/// The reward-maximizing gate for a depth hypothesis: the hypothesis itself.
pub fn optimal_gate(depth: usize, _hyp: FluxHypothesis) -> usize {
    depth
}
