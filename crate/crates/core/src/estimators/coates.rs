use serde::{Deserialize, Serialize};

use crate::model::DetectedHistogram;

/// Closed-form ML estimate of the transient from a detected histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientEstimate {
    pub rates: Vec<f64>,
    pub denominators: Vec<u64>,
    /// Bins where every armed cycle fired (`N_i = D_i > 0`); their rate uses
    /// the continuity correction `N_i → D_i − ½`.
    pub saturated: Vec<bool>,
}

/// `r̂[i] = ln(D_i / (D_i − N_i))`, zero where `D_i = 0`.
pub fn coates_transient(hist: &DetectedHistogram) -> TransientEstimate {
    let b = hist.num_bins();
    let mut rates = Vec::with_capacity(b);
    let mut saturated = Vec::with_capacity(b);
    for (&n, &d) in hist.counts.iter().zip(&hist.denominators) {
        if d == 0 {
            rates.push(0.0);
            saturated.push(false);
        } else if n >= d {
            rates.push((d as f64 / 0.5).ln());
            saturated.push(true);
        } else {
            rates.push((d as f64 / (d - n) as f64).ln());
            saturated.push(false);
        }
    }
    TransientEstimate {
        rates,
        denominators: hist.denominators.clone(),
        saturated,
    }
}

/// A depth bin plus a flag for estimates that carry no information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub bin: usize,
    pub degenerate: bool,
}

/// Argmax of the estimated transient, lowest index on ties.
pub fn coates_depth(est: &TransientEstimate) -> DepthEstimate {
    let mut best = 0;
    let mut best_rate = f64::NEG_INFINITY;
    for (i, &r) in est.rates.iter().enumerate() {
        if r > best_rate {
            best = i;
            best_rate = r;
        }
    }
    DepthEstimate {
        bin: best,
        degenerate: !(best_rate > 0.0),
    }
}

/// Sub-bin refinement: least-squares parabola through `ln r̂` on the positive
/// rates in `[d̂ − window, d̂ + window]` (a Gaussian fit in linear space);
/// returns the vertex clamped to the window. Falls back to `d̂` with fewer
/// than three positive rates or no interior maximum.
pub fn dither_depth(est: &TransientEstimate, depth: usize, window: usize) -> f64 {
    let b = est.rates.len();
    let window = window.max(1);
    let lo = depth.saturating_sub(window);
    let hi = (depth + window).min(b.saturating_sub(1));
    // power sums of x and x^k·y with x centered on the estimate
    let mut s = [0.0f64; 5];
    let mut sy = [0.0f64; 3];
    let mut points = 0;
    for i in lo..=hi {
        let r = est.rates[i];
        if r <= 0.0 || !r.is_finite() {
            continue;
        }
        let x = i as f64 - depth as f64;
        let y = r.ln();
        let mut xp = 1.0;
        for sk in s.iter_mut() {
            *sk += xp;
            xp *= x;
        }
        sy[0] += y;
        sy[1] += x * y;
        sy[2] += x * x * y;
        points += 1;
    }
    if points < 3 {
        return depth as f64;
    }
    // normal equations [s0 s1 s2; s1 s2 s3; s2 s3 s4]·[a b c] = sy
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = det3(m);
    if det.abs() < 1e-12 {
        return depth as f64;
    }
    let mut mb = m;
    let mut mc = m;
    for row in 0..3 {
        mb[row][1] = sy[row];
        mc[row][2] = sy[row];
    }
    let slope = det3(mb) / det;
    let curvature = det3(mc) / det;
    if !(curvature < -1e-12) {
        return depth as f64;
    }
    let offset = (-slope / (2.0 * curvature)).clamp(lo as f64 - depth as f64, hi as f64 - depth as f64);
    depth as f64 + offset
}
