use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bins_before_detection, ln_fold_factor, ln_one_minus_exp_neg, DetectedHistogram, Observation};

/// Default number of nonzero log-spaced signal-flux hypotheses.
pub const DEFAULT_FLUX_GRID_SIZE: usize = 16;

// Cells this far below the maximum log-mass contribute less than e^-60 and are
// not exponentiated during normalization.
const NEGLIGIBLE_LOG_MASS: f64 = -60.0;

/// Signal-flux hypotheses with a uniform prior over grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxGrid {
    values: Vec<f64>,
}

impl FluxGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("flux grid must not be empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("flux grid values must be finite and >= 0"));
        }
        Ok(Self { values })
    }

    /// A single known signal flux.
    pub fn known(signal_flux: f64) -> Result<Self> {
        Self::new(vec![signal_flux])
    }

    /// `count` log-spaced values over `[lo·Φ_bkg, hi·Φ_bkg]`, preceded by 0
    /// when `include_zero`.
    pub fn log_spaced(
        background: f64,
        count: usize,
        lo_mult: f64,
        hi_mult: f64,
        include_zero: bool,
    ) -> Result<Self> {
        if !(background > 0.0 && background.is_finite()) {
            return Err(Error::invalid(format!(
                "log-spaced flux grid needs a positive background, got {background}"
            )));
        }
        if count == 0 || !(lo_mult > 0.0 && hi_mult >= lo_mult) {
            return Err(Error::invalid("invalid flux grid bounds"));
        }
        let (lo, hi) = ((lo_mult * background).ln(), (hi_mult * background).ln());
        let mut values = Vec::with_capacity(count + 1);
        if include_zero {
            values.push(0.0);
        }
        for i in 0..count {
            let frac = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            values.push((lo + frac * (hi - lo)).exp());
        }
        Self::new(values)
    }

    /// The default grid: 16 values over `[0.1·Φ_bkg, 100·Φ_bkg]` plus zero.
    pub fn default_for(background: f64) -> Result<Self> {
        Self::log_spaced(background, DEFAULT_FLUX_GRID_SIZE, 0.1, 100.0, true)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Where the prior came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorTag {
    Uniform,
    Flatness,
    External,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    /// Every hypothesis assigned zero likelihood; the posterior was left as
    /// it was before the update.
    Rejected,
}

/// Discrete posterior over depth bins, jointly with a signal-flux grid.
///
/// Stored as log-mass, row-major by flux hypothesis: cell `(k, d)` lives at
/// `k·B + d`. The depth marginal is refreshed on every normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthPosterior {
    num_bins: usize,
    flux_grid: FluxGrid,
    log_mass: Vec<f64>,
    marginal: Vec<f64>,
    prior_tag: PriorTag,
    rejected_updates: u32,
    #[serde(skip)]
    scratch: Vec<f64>,
}

impl DepthPosterior {
    /// Posterior equal to the given prior mass over depth (normalized here),
    /// with a uniform prior over the flux grid.
    pub fn new(prior: &[f64], flux_grid: FluxGrid, prior_tag: PriorTag) -> Result<Self> {
        let b = prior.len();
        if b == 0 {
            return Err(Error::invalid("prior must cover at least one bin"));
        }
        if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("prior mass must be finite and nonnegative"));
        }
        let total: f64 = prior.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("prior mass is identically zero"));
        }
        let ln_rows = (flux_grid.len() as f64).ln();
        let row: Vec<f64> = prior.iter().map(|p| (p / total).ln() - ln_rows).collect();
        let mut log_mass = Vec::with_capacity(b * flux_grid.len());
        for _ in 0..flux_grid.len() {
            log_mass.extend_from_slice(&row);
        }
        let mut post = Self {
            num_bins: b,
            flux_grid,
            log_mass,
            marginal: vec![0.0; b],
            prior_tag,
            rejected_updates: 0,
            scratch: Vec::new(),
        };
        post.normalize();
        Ok(post)
    }

    pub fn uniform(num_bins: usize, flux_grid: FluxGrid) -> Result<Self> {
        Self::new(&vec![1.0; num_bins], flux_grid, PriorTag::Uniform)
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn flux_grid(&self) -> &FluxGrid {
        &self.flux_grid
    }

    pub fn prior_tag(&self) -> PriorTag {
        self.prior_tag
    }

    pub fn rejected_updates(&self) -> u32 {
        self.rejected_updates
    }

    /// Normalized log-mass of cell `(flux index, depth)`.
    pub fn log_mass(&self, flux_index: usize, depth: usize) -> f64 {
        self.log_mass[flux_index * self.num_bins + depth]
    }

    pub fn log_masses(&self) -> &[f64] {
        &self.log_mass
    }

    /// Depth marginal (sums to one).
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Marginal over the flux grid.
    pub fn flux_marginal(&self) -> Vec<f64> {
        self.log_mass
            .chunks(self.num_bins)
            .map(|row| row.iter().map(|l| l.exp()).sum())
            .collect()
    }

    /// Conditional depth distribution given flux hypothesis `k`, in log space.
    pub fn conditional_log(&self, flux_index: usize) -> Vec<f64> {
        let row = &self.log_mass[flux_index * self.num_bins..(flux_index + 1) * self.num_bins];
        let lse = log_sum_exp(row);
        row.iter().map(|l| l - lse).collect()
    }

    /// MAP depth of the flux-marginalized posterior, lowest index on ties.
    pub fn map_depth(&self) -> usize {
        argmax_lowest(&self.marginal)
    }

    pub fn map_mass(&self) -> f64 {
        self.marginal[self.map_depth()]
    }

    /// `1 − p(MAP)`, the expected 0-1 loss of the MAP estimate.
    pub fn termination_value(&self) -> f64 {
        1.0 - self.map_mass()
    }

    pub fn entropy(&self) -> f64 {
        posterior_entropy(&self.marginal)
    }

    /// Draws a depth from the marginal.
    pub fn sample_depth<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (d, &p) in self.marginal.iter().enumerate() {
            acc += p;
            if u < acc {
                return d;
            }
        }
        // rounding left a sliver above the last cumulative value
        self.marginal.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Bayes update with one cycle's observation.
    pub fn update(
        &mut self,
        obs: Observation,
        gate: usize,
        background: f64,
        max_periods: u32,
    ) -> Result<UpdateStatus> {
        let b = self.num_bins;
        if gate >= b {
            return Err(Error::invalid(format!("gate {gate} outside [0, {b})")));
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(&self.log_mass);
        let ln_det_bkg = ln_one_minus_exp_neg(background);
        for (k, &s) in self.flux_grid.values.iter().enumerate() {
            let row = &mut self.log_mass[k * b..(k + 1) * b];
            let period_rate = background * b as f64 + s;
            match obs {
                Observation::Censored => {
                    // d-independent: only the flux dimension moves
                    let delta = -(max_periods.max(1) as f64) * s;
                    row.iter_mut().for_each(|l| *l += delta);
                }
                Observation::Detected(t) => {
                    let t = t as usize;
                    if t >= b {
                        return Err(Error::invalid(format!("timestamp {t} outside [0, {b})")));
                    }
                    let fold = ln_fold_factor(period_rate, max_periods);
                    let at_t = row[t] + ln_one_minus_exp_neg(background + s) + fold;
                    let base = ln_det_bkg + fold;
                    row.iter_mut().for_each(|l| *l += base);
                    if s > 0.0 {
                        let passed = bins_before_detection(gate, t, b);
                        let first = passed.min(b - gate);
                        row[gate..gate + first].iter_mut().for_each(|l| *l -= s);
                        row[..passed - first].iter_mut().for_each(|l| *l -= s);
                    }
                    row[t] = at_t;
                }
            }
        }
        if self.normalize() {
            Ok(UpdateStatus::Applied)
        } else {
            std::mem::swap(&mut self.log_mass, &mut self.scratch);
            self.normalize();
            self.rejected_updates += 1;
            Ok(UpdateStatus::Rejected)
        }
    }

    /// Batch update from a detected histogram, using the sufficient
    /// statistics of the folded likelihood. Equivalent to applying
    /// [`update`](Self::update) once per cycle.
    pub fn update_from_histogram(
        &mut self,
        hist: &DetectedHistogram,
        background: f64,
        max_periods: u32,
    ) -> Result<UpdateStatus> {
        let b = self.num_bins;
        if hist.num_bins() != b {
            return Err(Error::invalid("histogram and posterior disagree on bin count"));
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(&self.log_mass);
        let m = max_periods.max(1) as f64;
        let det = hist.detections as f64;
        let ln_det_bkg = ln_one_minus_exp_neg(background);
        let times = |n: f64, v: f64| if n == 0.0 { 0.0 } else { n * v };
        for (k, &s) in self.flux_grid.values.iter().enumerate() {
            let ln_det_peak = ln_one_minus_exp_neg(background + s);
            let fold = ln_fold_factor(background * b as f64 + s, max_periods);
            let row = &mut self.log_mass[k * b..(k + 1) * b];
            for d in 0..b {
                let n_d = hist.counts[d] as f64;
                let passes = (hist.denominators[d] - hist.counts[d] - hist.wrap_passes) as f64;
                row[d] += times(passes + m * hist.censored as f64, -s)
                    + times(n_d, ln_det_peak)
                    + times(det - n_d, ln_det_bkg)
                    + times(det, fold);
            }
        }
        if self.normalize() {
            Ok(UpdateStatus::Applied)
        } else {
            std::mem::swap(&mut self.log_mass, &mut self.scratch);
            self.normalize();
            self.rejected_updates += 1;
            Ok(UpdateStatus::Rejected)
        }
    }

    /// Renormalizes in log space and refreshes the depth marginal. Returns
    /// `false` when no cell has finite mass.
    fn normalize(&mut self) -> bool {
        let b = self.num_bins;
        let max = self
            .log_mass
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return false;
        }
        self.marginal.iter_mut().for_each(|m| *m = 0.0);
        let mut total = 0.0;
        for row in self.log_mass.chunks(b) {
            for (d, &l) in row.iter().enumerate() {
                let x = l - max;
                if x > NEGLIGIBLE_LOG_MASS {
                    let w = x.exp();
                    self.marginal[d] += w;
                    total += w;
                }
            }
        }
        let shift = max + total.ln();
        self.log_mass.iter_mut().for_each(|l| *l -= shift);
        self.marginal.iter_mut().for_each(|m| *m /= total);
        true
    }
}

/// `−Σ p ln p` over a probability vector, with `0·ln 0 = 0`.
pub fn posterior_entropy(mass: &[f64]) -> f64 {
    mass.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
