//! Timing model and probabilistic kernels for a single gated SPAD pixel.
//!
//! Time between two laser pulses is split into `B` bins. A scene is described
//! by its transient: the mean number of photons incident in each bin per
//! pulse. A cycle arms the detector at a gate bin `g`; the first photon after
//! arming is timestamped. All functions here are pure.
//!
//! Detection times are stored folded modulo `B`. Because rates repeat every
//! period, the probability of a folded detection time is the single-period
//! probability times a factor that depends only on the total rate per period
//! (and the cap on how many periods the detector stays armed), never on the
//! depth. Inference can therefore use single-period likelihoods unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default number of pulse periods a triggered detector stays armed before
/// the cycle is declared censored.
pub const DEFAULT_MAX_ACTIVE_PERIODS: u32 = 16;

// Relative slack when flooring/ceiling ratios of physical quantities, so that
// 100 ps at 20 MHz gives 500 bins rather than 499.
const RATIO_SLACK: f64 = 1e-9;

/// Number of bins between pulses: `floor(1 / (Δ·F))`.
pub fn derive_bins(bin_resolution_ps: f64, rep_rate_hz: f64) -> Result<usize> {
    if !(bin_resolution_ps > 0.0 && bin_resolution_ps.is_finite()) {
        return Err(Error::invalid(format!(
            "bin resolution must be positive, got {bin_resolution_ps} ps"
        )));
    }
    if !(rep_rate_hz > 0.0 && rep_rate_hz.is_finite()) {
        return Err(Error::invalid(format!(
            "repetition rate must be positive, got {rep_rate_hz} Hz"
        )));
    }
    let ratio = 1e12 / (bin_resolution_ps * rep_rate_hz);
    let bins = (ratio * (1.0 + RATIO_SLACK)).floor();
    if bins < 1.0 {
        return Err(Error::invalid(format!(
            "bin resolution {bin_resolution_ps} ps exceeds the pulse period at {rep_rate_hz} Hz"
        )));
    }
    Ok(bins as usize)
}

/// Dead time rounded up to whole bins (at least one).
pub fn dead_time_to_bins(dead_time_ns: f64, bin_resolution_ps: f64) -> Result<usize> {
    if !(dead_time_ns > 0.0 && dead_time_ns.is_finite()) {
        return Err(Error::invalid(format!(
            "dead time must be positive, got {dead_time_ns} ns"
        )));
    }
    if !(bin_resolution_ps > 0.0) {
        return Err(Error::invalid("bin resolution must be positive"));
    }
    let ratio = dead_time_ns * 1e3 / bin_resolution_ps;
    Ok(((ratio * (1.0 - RATIO_SLACK)).ceil() as usize).max(1))
}

/// Timing constants of the acquisition hardware.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpadConfig {
    pub bin_resolution_ps: f64,
    pub rep_rate_hz: f64,
    pub num_bins: usize,
    pub dead_time_ns: f64,
    pub dead_time_bins: usize,
    /// Periods a detector stays armed without a detection before the cycle
    /// is censored.
    pub max_active_periods: u32,
}

impl SpadConfig {
    pub fn new(bin_resolution_ps: f64, rep_rate_hz: f64, dead_time_ns: f64) -> Result<Self> {
        let num_bins = derive_bins(bin_resolution_ps, rep_rate_hz)?;
        let dead_time_bins = dead_time_to_bins(dead_time_ns, bin_resolution_ps)?;
        Ok(Self {
            bin_resolution_ps,
            rep_rate_hz,
            num_bins,
            dead_time_ns,
            dead_time_bins,
            max_active_periods: DEFAULT_MAX_ACTIVE_PERIODS,
        })
    }

    /// Configuration with an explicit bin count, 100 ps bins and a repetition
    /// rate chosen so that the period is exactly `num_bins` bins.
    pub fn from_bins(num_bins: usize, dead_time_bins: usize) -> Result<Self> {
        if num_bins == 0 || dead_time_bins == 0 {
            return Err(Error::invalid("bin count and dead time must be positive"));
        }
        let bin_resolution_ps = 100.0;
        Ok(Self {
            bin_resolution_ps,
            rep_rate_hz: 1e12 / (bin_resolution_ps * num_bins as f64),
            num_bins,
            dead_time_ns: dead_time_bins as f64 * bin_resolution_ps * 1e-3,
            dead_time_bins,
            max_active_periods: DEFAULT_MAX_ACTIVE_PERIODS,
        })
    }

    pub fn with_max_active_periods(mut self, periods: u32) -> Self {
        self.max_active_periods = periods.max(1);
        self
    }

    pub fn with_dead_time_bins(mut self, dead_time_bins: usize) -> Self {
        self.dead_time_bins = dead_time_bins.max(1);
        self.dead_time_ns = self.dead_time_bins as f64 * self.bin_resolution_ps * 1e-3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 || self.dead_time_bins == 0 || self.max_active_periods == 0 {
            return Err(Error::invalid("spad config fields must be positive"));
        }
        if !(self.bin_resolution_ps > 0.0 && self.rep_rate_hz > 0.0 && self.dead_time_ns > 0.0) {
            return Err(Error::invalid("spad config fields must be positive"));
        }
        Ok(())
    }

    /// Depth covered by one bin, `cΔ/2`, in meters.
    pub fn bin_depth_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.bin_resolution_ps * 1e-12 / 2.0
    }

    pub fn us_to_bins(&self, us: f64) -> u64 {
        (us * 1e6 / self.bin_resolution_ps * (1.0 + RATIO_SLACK)).floor() as u64
    }

    pub fn bins_to_us(&self, bins: u64) -> f64 {
        bins as f64 * self.bin_resolution_ps * 1e-6
    }

    /// `d = floor(2z / (cΔ))`.
    pub fn meters_to_bin(&self, z: f64) -> i64 {
        (z / self.bin_depth_m() * (1.0 + RATIO_SLACK)).floor() as i64
    }
}

impl Default for SpadConfig {
    /// 100 ps bins, 20 MHz, 81 ns dead time (500 bins, 810 dead bins).
    fn default() -> Self {
        Self::new(100.0, 20e6, 81.0).expect("default config is valid")
    }
}

/// A delta-shaped return at one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bin: usize,
    pub signal_flux: f64,
}

/// Exponentially decaying tail after a peak, `amplitude·e^{−decay·(i−start)}`
/// for `start < i < B` (no wrap-around).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub start: usize,
    pub amplitude: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum RateProfile {
    Parametric {
        ambient_flux: f64,
        peaks: Vec<Peak>,
        tail: Option<Tail>,
    },
    Explicit(Vec<f64>),
}

/// Per-bin incident photon rate `r[i]`, photons per pulse per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTransient {
    num_bins: usize,
    profile: RateProfile,
}

fn check_flux(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl SceneTransient {
    /// `r[i] = Φ_bkg + δ_{i,d}·Φ_sig`.
    pub fn single_peak(
        num_bins: usize,
        ambient_flux: f64,
        depth_bin: usize,
        signal_flux: f64,
    ) -> Result<Self> {
        Self::parametric(
            num_bins,
            ambient_flux,
            vec![Peak {
                bin: depth_bin,
                signal_flux,
            }],
            None,
        )
    }

    pub fn ambient_only(num_bins: usize, ambient_flux: f64) -> Result<Self> {
        Self::parametric(num_bins, ambient_flux, Vec::new(), None)
    }

    pub fn parametric(
        num_bins: usize,
        ambient_flux: f64,
        peaks: Vec<Peak>,
        tail: Option<Tail>,
    ) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::invalid("transient needs at least one bin"));
        }
        check_flux("ambient flux", ambient_flux)?;
        for p in &peaks {
            check_flux("signal flux", p.signal_flux)?;
            if p.bin >= num_bins {
                return Err(Error::invalid(format!(
                    "peak bin {} outside [0, {num_bins})",
                    p.bin
                )));
            }
        }
        if let Some(t) = &tail {
            check_flux("tail amplitude", t.amplitude)?;
            check_flux("tail decay", t.decay)?;
            if t.start >= num_bins {
                return Err(Error::invalid("tail start outside the period"));
            }
        }
        Ok(Self {
            num_bins,
            profile: RateProfile::Parametric {
                ambient_flux,
                peaks,
                tail,
            },
        })
    }

    /// Transient from an explicit rate array.
    pub fn from_rates(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::invalid("transient needs at least one bin"));
        }
        for &r in &rates {
            check_flux("rate", r)?;
        }
        Ok(Self {
            num_bins: rates.len(),
            profile: RateProfile::Explicit(rates),
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Ambient level for parametric transients; `None` for explicit arrays.
    pub fn ambient_flux(&self) -> Option<f64> {
        match &self.profile {
            RateProfile::Parametric { ambient_flux, .. } => Some(*ambient_flux),
            RateProfile::Explicit(_) => None,
        }
    }

    pub fn peaks(&self) -> &[Peak] {
        match &self.profile {
            RateProfile::Parametric { peaks, .. } => peaks,
            RateProfile::Explicit(_) => &[],
        }
    }

    /// `r[i mod B]`.
    pub fn rate(&self, bin: usize) -> f64 {
        let i = bin % self.num_bins;
        match &self.profile {
            RateProfile::Explicit(r) => r[i],
            RateProfile::Parametric {
                ambient_flux,
                peaks,
                tail,
            } => {
                let mut r = *ambient_flux;
                for p in peaks {
                    if p.bin == i {
                        r += p.signal_flux;
                    }
                }
                if let Some(t) = tail {
                    if i > t.start {
                        r += t.amplitude * (-t.decay * (i - t.start) as f64).exp();
                    }
                }
                r
            }
        }
    }

    /// Checked `r[bin]` for `bin ∈ [0, B)`.
    pub fn transient_rate(&self, bin: usize) -> Result<f64> {
        if bin >= self.num_bins {
            return Err(Error::invalid(format!(
                "bin {bin} outside [0, {})",
                self.num_bins
            )));
        }
        Ok(self.rate(bin))
    }

    pub fn rates(&self) -> Vec<f64> {
        (0..self.num_bins).map(|i| self.rate(i)).collect()
    }

    /// `Σ_i r[i]` over one period.
    pub fn total_rate(&self) -> f64 {
        match &self.profile {
            RateProfile::Parametric {
                ambient_flux,
                peaks,
                tail: None,
            } => {
                *ambient_flux * self.num_bins as f64
                    + peaks.iter().map(|p| p.signal_flux).sum::<f64>()
            }
            _ => (0..self.num_bins).map(|i| self.rate(i)).sum(),
        }
    }

    /// `Σ r[τ mod B]` for `τ ∈ [start, start + len)`.
    pub fn window_rate_sum(&self, start: usize, len: usize) -> f64 {
        let b = self.num_bins;
        match &self.profile {
            RateProfile::Parametric {
                ambient_flux,
                peaks,
                tail: None,
            } => {
                let full = len / b;
                let rem = len % b;
                let mut sum = *ambient_flux * len as f64;
                for p in peaks {
                    let off = (p.bin + b - start % b) % b;
                    let hits = full + usize::from(off < rem);
                    sum += p.signal_flux * hits as f64;
                }
                sum
            }
            _ => (start..start + len).map(|i| self.rate(i)).sum(),
        }
    }

    /// Same transient circularly shifted right by `shift` bins.
    pub fn shifted(&self, shift: usize) -> Self {
        let b = self.num_bins;
        let rates: Vec<f64> = (0..b).map(|i| self.rate((i + b - shift % b) % b)).collect();
        Self {
            num_bins: b,
            profile: RateProfile::Explicit(rates),
        }
    }
}

/// `ln(1 − e^{−r})`, accurate for tiny and large `r`; `−∞` at `r = 0`.
pub fn ln_one_minus_exp_neg(r: f64) -> f64 {
    if r <= 0.0 {
        f64::NEG_INFINITY
    } else if r < std::f64::consts::LN_2 {
        (-(-r).exp_m1()).ln()
    } else {
        (-(-r).exp()).ln_1p()
    }
}

/// `1 − e^{−r}` via `expm1`.
pub fn detect_probability(r: f64) -> f64 {
    -(-r).exp_m1()
}

/// Log of the factor mapping a single-period detection probability to the
/// folded probability when the detector stays armed for at most
/// `max_periods` periods: `ln((1 − q^M)/(1 − q))` with `q = e^{−total_rate}`.
pub fn ln_fold_factor(total_rate: f64, max_periods: u32) -> f64 {
    let m = max_periods.max(1) as f64;
    if total_rate <= 0.0 {
        return m.ln();
    }
    if max_periods <= 1 {
        return 0.0;
    }
    ((-m * total_rate).exp_m1() / (-total_rate).exp_m1()).ln()
}

/// One cycle's observation: a folded detection bin or a censored cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Detected(u32),
    Censored,
}

impl Observation {
    pub fn bin(self) -> Option<u32> {
        match self {
            Observation::Detected(t) => Some(t),
            Observation::Censored => None,
        }
    }
}

/// Number of bins the detector was armed before the detection bin within the
/// detection's own period: `(t − g) mod B`.
pub fn bins_before_detection(gate: usize, folded_t: usize, num_bins: usize) -> usize {
    (folded_t + num_bins - gate % num_bins) % num_bins
}

/// Single-period detection probability `p(t | g)` for `t ∈ [g, g + B)`.
pub fn detection_likelihood(scene: &SceneTransient, t: usize, gate: usize) -> Result<f64> {
    detection_log_likelihood(scene, t, gate).map(f64::exp)
}

/// `ln p(t | g)`; see [`detection_likelihood`].
pub fn detection_log_likelihood(scene: &SceneTransient, t: usize, gate: usize) -> Result<f64> {
    let b = scene.num_bins();
    if gate >= b {
        return Err(Error::invalid(format!("gate {gate} outside [0, {b})")));
    }
    if t < gate || t >= gate + b {
        return Err(Error::invalid(format!(
            "timestamp {t} outside [{gate}, {})",
            gate + b
        )));
    }
    let passed = scene.window_rate_sum(gate, t - gate);
    Ok(ln_one_minus_exp_neg(scene.rate(t)) - passed)
}

/// Probability that no photon is detected during one period after arming,
/// `e^{−Σ r}`. Independent of the gate.
pub fn no_detection_probability(scene: &SceneTransient) -> f64 {
    (-scene.total_rate()).exp()
}

/// Log-likelihood of one folded observation with the detector armed for at
/// most `max_periods` periods.
pub fn folded_log_likelihood(
    scene: &SceneTransient,
    obs: Observation,
    gate: usize,
    max_periods: u32,
) -> Result<f64> {
    let b = scene.num_bins();
    match obs {
        Observation::Detected(t) => {
            let t = t as usize;
            if t >= b {
                return Err(Error::invalid(format!("folded timestamp {t} outside [0, {b})")));
            }
            let unfolded = gate + bins_before_detection(gate, t, b);
            Ok(detection_log_likelihood(scene, unfolded, gate)?
                + ln_fold_factor(scene.total_rate(), max_periods))
        }
        Observation::Censored => Ok(-(max_periods.max(1) as f64) * scene.total_rate()),
    }
}

/// `Σ_p ln p(t_p | g_p)` under the folded convention. Impossible observations
/// give `−∞`.
pub fn sequence_log_likelihood(scene: &SceneTransient, rec: &AcquisitionRecord) -> Result<f64> {
    if rec.num_bins != scene.num_bins() {
        return Err(Error::invalid("record and scene disagree on bin count"));
    }
    let mut total = 0.0;
    for (g, obs) in rec.gates.iter().zip(&rec.timestamps) {
        total += folded_log_likelihood(scene, *obs, *g as usize, rec.max_active_periods)?;
    }
    Ok(total)
}

/// Detection-time distribution with the gate at bin 0 (the pile-up curve).
/// Sums to `1 − e^{−Σr}`.
pub fn pileup_distribution(scene: &SceneTransient) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.num_bins());
    let mut survived = 0.0;
    for i in 0..scene.num_bins() {
        let r = scene.rate(i);
        out.push((ln_one_minus_exp_neg(r) - survived).exp());
        survived += r;
    }
    out
}

/// Detection-time distribution over folded bins for an arbitrary gate,
/// renormalized over detected outcomes.
pub fn folded_detection_distribution(scene: &SceneTransient, gate: usize) -> Vec<f64> {
    let b = scene.num_bins();
    let mut out = vec![0.0; b];
    let mut survived = 0.0;
    for k in 0..b {
        let i = (gate + k) % b;
        let r = scene.rate(i);
        out[i] = (ln_one_minus_exp_neg(r) - survived).exp();
        survived += r;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|p| *p /= total);
    }
    out
}

/// Paired gate and timestamp sequences from one pixel's acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub num_bins: usize,
    pub max_active_periods: u32,
    pub gates: Vec<u32>,
    pub timestamps: Vec<Observation>,
    /// Whole periods the detector stayed armed before the period containing
    /// the detection (or `max_active_periods` for censored cycles).
    pub elapsed_periods: Vec<u32>,
    pub cycle_durations: Vec<u64>,
    /// Total absolute time consumed, in bins.
    pub exposure_bins: u64,
    /// Leading cycles acquired with uniformly spaced gates for background
    /// estimation.
    pub calibration_cycles: usize,
}

impl AcquisitionRecord {
    pub fn new(num_bins: usize, max_active_periods: u32) -> Self {
        Self {
            num_bins,
            max_active_periods,
            gates: Vec::new(),
            timestamps: Vec::new(),
            elapsed_periods: Vec::new(),
            cycle_durations: Vec::new(),
            exposure_bins: 0,
            calibration_cycles: 0,
        }
    }

    /// Record built from `(gate, observation)` pairs with no timing data.
    pub fn from_pairs(
        num_bins: usize,
        max_active_periods: u32,
        pairs: impl IntoIterator<Item = (u32, Observation)>,
    ) -> Self {
        let mut rec = Self::new(num_bins, max_active_periods);
        for (g, obs) in pairs {
            let elapsed = match obs {
                Observation::Detected(_) => 0,
                Observation::Censored => max_active_periods,
            };
            rec.push(g, obs, elapsed, 0);
        }
        rec
    }

    pub fn push(&mut self, gate: u32, obs: Observation, elapsed_periods: u32, duration: u64) {
        self.gates.push(gate);
        self.timestamps.push(obs);
        self.elapsed_periods.push(elapsed_periods);
        self.cycle_durations.push(duration);
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn detections(&self) -> usize {
        self.timestamps
            .iter()
            .filter(|o| matches!(o, Observation::Detected(_)))
            .count()
    }

    pub fn cycles(&self) -> impl Iterator<Item = (u32, Observation)> + '_ {
        self.gates.iter().copied().zip(self.timestamps.iter().copied())
    }

    /// Sub-record of cycles `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            num_bins: self.num_bins,
            max_active_periods: self.max_active_periods,
            gates: self.gates[range.clone()].to_vec(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            elapsed_periods: self.elapsed_periods[range.clone()].to_vec(),
            cycle_durations: self.cycle_durations[range.clone()].to_vec(),
            exposure_bins: self.cycle_durations[range].iter().sum(),
            calibration_cycles: 0,
        }
    }

    /// Appends another record's cycles.
    pub fn extend_from(&mut self, other: &AcquisitionRecord) {
        self.gates.extend_from_slice(&other.gates);
        self.timestamps.extend_from_slice(&other.timestamps);
        self.elapsed_periods.extend_from_slice(&other.elapsed_periods);
        self.cycle_durations.extend_from_slice(&other.cycle_durations);
        self.exposure_bins += other.exposure_bins;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gates.len();
        if self.timestamps.len() != n
            || self.elapsed_periods.len() != n
            || self.cycle_durations.len() != n
        {
            return Err(Error::invalid("record sequences have different lengths"));
        }
        for (i, (g, obs)) in self.cycles().enumerate() {
            if g as usize >= self.num_bins {
                return Err(Error::invalid(format!("cycle {i}: gate {g} out of range")));
            }
            if let Observation::Detected(t) = obs {
                if t as usize >= self.num_bins {
                    return Err(Error::invalid(format!(
                        "cycle {i}: timestamp {t} out of range"
                    )));
                }
            }
        }
        if self.calibration_cycles > n {
            return Err(Error::invalid("more calibration cycles than cycles"));
        }
        Ok(())
    }
}

/// Detection counts and armed-bin denominators per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedHistogram {
    pub counts: Vec<u64>,
    /// `D_i`: passes over bin `i` with the detector armed and not yet fired
    /// (the detection bin itself included). A cycle that stays armed through
    /// whole periods passes every bin once per period.
    pub denominators: Vec<u64>,
    pub detections: u64,
    pub censored: u64,
    /// Whole-period passes included in every `D_i`: the elapsed periods of
    /// detected cycles plus the armed periods of censored ones.
    pub wrap_passes: u64,
}

impl DetectedHistogram {
    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn cycles(&self) -> u64 {
        self.detections + self.censored
    }
}

/// Converts a detection sequence into a detected histogram. A detection's
/// active window is `[g, g + ((t − g) mod B)]`, plus one pass over every bin
/// for each whole period it stayed armed before that; a censored cycle passes
/// every bin once per armed period.
pub fn timestamps_to_histogram(rec: &AcquisitionRecord, num_bins: usize) -> DetectedHistogram {
    let b = num_bins;
    let mut counts = vec![0u64; b];
    // difference array over two periods for wrapped windows
    let mut diff = vec![0i64; b + 1];
    let mut detections = 0;
    let mut censored = 0u64;
    let mut wrap_passes = 0u64;
    for (i, (g, obs)) in rec.cycles().enumerate() {
        let g = g as usize % b;
        let elapsed = rec.elapsed_periods.get(i).copied();
        match obs {
            Observation::Detected(t) => {
                let t = t as usize % b;
                counts[t] += 1;
                detections += 1;
                let end = g + bins_before_detection(g, t, b); // inclusive
                if end < b {
                    diff[g] += 1;
                    diff[end + 1] -= 1;
                } else {
                    diff[g] += 1;
                    diff[b] -= 1;
                    diff[0] += 1;
                    diff[end - b + 1] -= 1;
                }
            }
            Observation::Censored => censored += 1,
        }
        wrap_passes += match obs {
            Observation::Detected(_) => elapsed.unwrap_or(0),
            Observation::Censored => elapsed.unwrap_or(rec.max_active_periods).max(1),
        } as u64;
    }
    let mut running = 0i64;
    let denominators = (0..b)
        .map(|i| {
            running += diff[i];
            running as u64 + wrap_passes
        })
        .collect();
    DetectedHistogram {
        counts,
        denominators,
        detections,
        censored,
        wrap_passes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bin_counts_from_timing() {
        assert_eq!(derive_bins(100.0, 20e6).unwrap(), 500);
        assert_eq!(derive_bins(1000.0, 1e9).unwrap(), 1);
        assert_eq!(derive_bins(100.0, 10e6).unwrap(), 1000);
        assert!(derive_bins(0.0, 20e6).is_err());
        assert!(derive_bins(100.0, -1.0).is_err());
        assert!(derive_bins(1e6, 20e6).is_err());
    }

    #[test]
    fn default_config() {
        let cfg = SpadConfig::default();
        assert_eq!(cfg.num_bins, 500);
        assert_eq!(cfg.dead_time_bins, 810);
        assert_eq!(cfg.us_to_bins(100.0), 1_000_000);
        assert_abs_diff_eq!(cfg.bin_depth_m(), 0.0149896229, epsilon = 1e-9);
        assert_eq!(cfg.meters_to_bin(3.75), 250);
        let small = SpadConfig::from_bins(50, 3).unwrap();
        assert_eq!(derive_bins(small.bin_resolution_ps, small.rep_rate_hz).unwrap(), 50);
    }

    #[test]
    fn transient_rates() {
        let s = SceneTransient::single_peak(500, 0.016, 250, 0.08).unwrap();
        assert_abs_diff_eq!(s.transient_rate(250).unwrap(), 0.096, epsilon = 1e-15);
        assert_eq!(s.transient_rate(0).unwrap(), 0.016);
        assert!(s.transient_rate(500).is_err());
        let s = SceneTransient::single_peak(8, 0.0, 7, 1.0).unwrap();
        assert_eq!(s.transient_rate(7).unwrap(), 1.0);
        assert!(SceneTransient::single_peak(8, -0.1, 0, 1.0).is_err());
        assert!(SceneTransient::single_peak(8, 0.1, 8, 1.0).is_err());
    }

    #[test]
    fn detection_likelihood_examples() {
        let s = SceneTransient::single_peak(16, 0.0, 10, std::f64::consts::LN_2).unwrap();
        assert_abs_diff_eq!(detection_likelihood(&s, 10, 10).unwrap(), 0.5, epsilon = 1e-15);
        let s = SceneTransient::ambient_only(16, 0.1).unwrap();
        assert_abs_diff_eq!(
            detection_likelihood(&s, 0, 0).unwrap(),
            0.09516258196404048,
            epsilon = 1e-15
        );
        // explicit product, term by term
        let s = SceneTransient::single_peak(8, 0.1, 3, 0.5).unwrap();
        let mut expected = 1.0 - (-0.1f64).exp();
        for tau in 0..5 {
            let r: f64 = if tau == 3 { 0.6 } else { 0.1 };
            expected *= (-r).exp();
        }
        assert_abs_diff_eq!(detection_likelihood(&s, 5, 0).unwrap(), expected, epsilon = 1e-15);
        assert!(detection_likelihood(&s, 8, 0).is_err());
        assert!(detection_likelihood(&s, 2, 3).is_err());
    }

    #[test]
    fn no_detection_examples() {
        let s = SceneTransient::single_peak(500, 0.0, 3, 0.0).unwrap();
        assert_eq!(no_detection_probability(&s), 1.0);
        let s = SceneTransient::ambient_only(500, 0.01).unwrap();
        assert_abs_diff_eq!(no_detection_probability(&s), (-5.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn pileup_attenuation() {
        let s = SceneTransient::single_peak(500, 0.02, 400, 0.1).unwrap();
        let p = pileup_distribution(&s);
        let ratio = (p[400] / ln_one_minus_exp_neg(0.12).exp()) / (p[0] / ln_one_minus_exp_neg(0.02).exp());
        assert_abs_diff_eq!(ratio, (-8.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(ratio, 3.35e-4, epsilon = 1e-6);
        let total: f64 = p.iter().sum();
        assert_abs_diff_eq!(total, 1.0 - no_detection_probability(&s), epsilon = 1e-12);

        let s = SceneTransient::single_peak(64, 0.0, 17, 0.7).unwrap();
        let p = pileup_distribution(&s);
        for (i, v) in p.iter().enumerate() {
            if i != 17 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn sequence_likelihood() {
        let s = SceneTransient::single_peak(8, 0.1, 4, 1.0).unwrap();
        let empty = AcquisitionRecord::new(8, 1);
        assert_eq!(sequence_log_likelihood(&s, &empty).unwrap(), 0.0);

        let one = AcquisitionRecord::from_pairs(8, 1, [(2, Observation::Detected(4))]);
        assert_abs_diff_eq!(
            sequence_log_likelihood(&s, &one).unwrap(),
            detection_likelihood(&s, 4, 2).unwrap().ln(),
            epsilon = 1e-14
        );

        // three cycles, one wrapping past the period end
        let rec = AcquisitionRecord::from_pairs(
            8,
            1,
            [
                (0, Observation::Detected(4)),
                (5, Observation::Detected(1)),
                (4, Observation::Detected(6)),
            ],
        );
        let expected = detection_likelihood(&s, 4, 0).unwrap().ln()
            + detection_likelihood(&s, 9, 5).unwrap().ln()
            + detection_likelihood(&s, 6, 4).unwrap().ln();
        assert_abs_diff_eq!(sequence_log_likelihood(&s, &rec).unwrap(), expected, epsilon = 1e-12);

        let zero_bkg = SceneTransient::single_peak(8, 0.0, 4, 1.0).unwrap();
        let off_peak = AcquisitionRecord::from_pairs(8, 1, [(0, Observation::Detected(3))]);
        assert_eq!(
            sequence_log_likelihood(&zero_bkg, &off_peak).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn censored_term_matches_no_detection() {
        let s = SceneTransient::single_peak(8, 0.1, 4, 1.0).unwrap();
        let rec = AcquisitionRecord::from_pairs(8, 1, [(3, Observation::Censored)]);
        assert_abs_diff_eq!(
            sequence_log_likelihood(&s, &rec).unwrap(),
            no_detection_probability(&s).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn fold_factor_limits() {
        assert_abs_diff_eq!(ln_fold_factor(0.0, 16), 16f64.ln());
        assert_eq!(ln_fold_factor(3.0, 1), 0.0);
        // M → ∞ gives 1/(1 − q)
        let q = (-0.5f64).exp();
        assert_abs_diff_eq!(ln_fold_factor(0.5, 400), -(1.0 - q).ln(), epsilon = 1e-12);
    }

    #[test]
    fn histogram_examples() {
        let rec = AcquisitionRecord::from_pairs(
            3,
            1,
            [
                (0, Observation::Detected(1)),
                (1, Observation::Detected(2)),
                (2, Observation::Detected(0)),
            ],
        );
        let h = timestamps_to_histogram(&rec, 3);
        assert_eq!(h.counts, vec![1, 1, 1]);
        assert_eq!(h.denominators, vec![2, 2, 2]);

        let h = timestamps_to_histogram(&AcquisitionRecord::new(5, 1), 5);
        assert_eq!(h.counts, vec![0; 5]);
        assert_eq!(h.denominators, vec![0; 5]);

        let rec = AcquisitionRecord::from_pairs(4, 1, [(0, Observation::Detected(0))]);
        let h = timestamps_to_histogram(&rec, 4);
        assert_eq!(h.counts, vec![1, 0, 0, 0]);
        assert_eq!(h.denominators, vec![1, 0, 0, 0]);

        let rec = AcquisitionRecord::from_pairs(4, 2, [(1, Observation::Censored)]);
        let h = timestamps_to_histogram(&rec, 4);
        assert_eq!(h.denominators, vec![2; 4]);
        assert_eq!(h.censored, 1);

        // detection after one whole armed period
        let mut rec = AcquisitionRecord::new(4, 4);
        rec.push(1, Observation::Detected(2), 1, 0);
        let h = timestamps_to_histogram(&rec, 4);
        assert_eq!(h.denominators, vec![1, 2, 2, 1]);
        assert_eq!(h.wrap_passes, 1);
    }

    #[test]
    fn window_sum_matches_loop() {
        let s = SceneTransient::parametric(
            10,
            0.03,
            vec![
                Peak { bin: 2, signal_flux: 0.5 },
                Peak { bin: 7, signal_flux: 0.25 },
            ],
            None,
        )
        .unwrap();
        for start in 0..10 {
            for len in 0..35 {
                let direct: f64 = (start..start + len).map(|i| s.rate(i)).sum();
                assert_abs_diff_eq!(s.window_rate_sum(start, len), direct, epsilon = 1e-12);
            }
        }
    }
}
