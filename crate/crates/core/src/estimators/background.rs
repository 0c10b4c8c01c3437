use serde::{Deserialize, Serialize};

use crate::model::{timestamps_to_histogram, AcquisitionRecord};

/// Below this many detections the estimate falls back to the configured value.
pub const MIN_CALIBRATION_DETECTIONS: u64 = 10;

// At most this fraction of bins may be excluded as signal.
const MAX_EXCLUDED_FRACTION: f64 = 0.05;
// A bin is treated as signal when its count exceeds the pooled expectation by
// this many standard deviations (plus one count).
const OUTLIER_SIGMAS: f64 = 4.0;
const EXCLUSION_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEstimate {
    pub flux: f64,
    pub low_confidence: bool,
}

/// Ambient flux from the record's calibration cycles (all cycles when the
/// record has none designated).
///
/// The estimate is the pooled Coates rate `ln(ΣD / (ΣD − ΣN))` over bins,
/// after excluding up to 5% of bins whose counts are significant outliers
/// above the pooled rate (signal peaks).
pub fn estimate_background(
    rec: &AcquisitionRecord,
    num_bins: usize,
    fallback: f64,
) -> BackgroundEstimate {
    let cycles = if rec.calibration_cycles > 0 {
        rec.slice(0..rec.calibration_cycles.min(rec.len()))
    } else {
        rec.clone()
    };
    let hist = timestamps_to_histogram(&cycles, num_bins);
    let fallback = BackgroundEstimate {
        flux: fallback,
        low_confidence: true,
    };
    if hist.detections < MIN_CALIBRATION_DETECTIONS {
        return fallback;
    }

    let b = num_bins;
    let max_excluded = ((MAX_EXCLUDED_FRACTION * b as f64).ceil() as usize).max(1);
    let mut excluded = vec![false; b];
    let pooled = |excluded: &[bool]| {
        let (mut n, mut d) = (0u64, 0u64);
        for i in 0..b {
            if !excluded[i] {
                n += hist.counts[i];
                d += hist.denominators[i];
            }
        }
        if d == 0 || n == 0 {
            None
        } else if n >= d {
            Some((d as f64 / 0.5).ln())
        } else {
            Some((d as f64 / (d - n) as f64).ln())
        }
    };

    let mut rate = match pooled(&excluded) {
        Some(r) => r,
        None => return fallback,
    };
    for _ in 0..EXCLUSION_ROUNDS {
        let p = -(-rate).exp_m1();
        let mut outliers: Vec<(f64, usize)> = (0..b)
            .filter(|&i| !excluded[i])
            .filter_map(|i| {
                let expected = hist.denominators[i] as f64 * p;
                let n = hist.counts[i] as f64;
                let z = (n - expected - 1.0) / expected.max(1e-12).sqrt();
                (z > OUTLIER_SIGMAS).then_some((z, i))
            })
            .collect();
        let already = excluded.iter().filter(|&&e| e).count();
        if outliers.is_empty() || already >= max_excluded {
            break;
        }
        outliers.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in outliers.iter().take(max_excluded - already) {
            excluded[i] = true;
        }
        rate = match pooled(&excluded) {
            Some(r) => r,
            None => return fallback,
        };
    }
    BackgroundEstimate {
        flux: rate,
        low_confidence: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;

    #[test]
    fn empty_record_uses_fallback() {
        let rec = AcquisitionRecord::new(100, 16);
        let est = estimate_background(&rec, 100, 0.01);
        assert_eq!(est.flux, 0.01);
        assert!(est.low_confidence);
    }

    #[test]
    fn strong_peak_is_excluded() {
        // 50 bins, every cycle gated at 0: detections pile up at bin 10 and a
        // few background counts elsewhere.
        let mut pairs = Vec::new();
        for i in 0..400u32 {
            let t = if i % 4 == 0 { 3 + (i % 7) } else { 10 };
            pairs.push((0, Observation::Detected(t)));
        }
        let rec = AcquisitionRecord::from_pairs(50, 1, pairs);
        let est = estimate_background(&rec, 50, 0.5);
        assert!(!est.low_confidence);
        // with bin 10 dropped: 100 detections over bins 3..=9
        let hist = timestamps_to_histogram(&rec, 50);
        let (mut n, mut d) = (0u64, 0u64);
        for i in 0..50 {
            if i != 10 {
                n += hist.counts[i];
                d += hist.denominators[i];
            }
        }
        let expected = (d as f64 / (d - n) as f64).ln();
        assert!((est.flux - expected).abs() < 1e-12, "{} vs {}", est.flux, expected);
    }
}
