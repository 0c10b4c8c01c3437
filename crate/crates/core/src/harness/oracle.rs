//! Self-checks exposed by the `oracle` command: likelihood normalization over
//! random scenes and the exhaustive optimal-gate check.

use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::model::{detection_likelihood, no_detection_probability, Peak, SceneTransient, Tail};
use crate::policies::{reward_brute_force, FluxHypothesis};
use crate::rng::stream_rng;

pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Flux pairs `(ambient, signal)` for the optimal-gate check.
pub const GATE_CHECK_FLUXES: [(f64, f64); 3] = [(0.05, 0.5), (0.2, 1.0), (1.0, 0.1)];

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest deviation seen (normalization error; 0 for the gate check).
    pub worst: f64,
    pub seconds: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Sums `p(t | g)` over one period plus the censoring mass for `scenes`
/// random scenes (alternating B = 16 and B = 500) and counts those off 1 by
/// more than [`NORMALIZATION_TOLERANCE`].
pub fn likelihood_normalization_check(seed: u64, scenes: usize) -> Result<OracleCheck> {
    let start = Instant::now();
    let mut rng = stream_rng(seed, 0);
    let (mut worst, mut failures) = (0.0f64, 0);
    for i in 0..scenes {
        let b = if i % 2 == 0 { 16 } else { 500 };
        let ambient = rng.random_range(0.0..0.3);
        let mut peaks = vec![Peak {
            bin: rng.random_range(0..b),
            signal_flux: rng.random_range(0.0..3.0),
        }];
        if i % 3 == 0 {
            peaks.push(Peak {
                bin: rng.random_range(0..b),
                signal_flux: rng.random_range(0.0..1.0),
            });
        }
        let tail = (i % 5 == 0).then(|| Tail {
            start: peaks[0].bin,
            amplitude: rng.random_range(0.0..0.5),
            decay: rng.random_range(0.05..1.0),
        });
        let scene = SceneTransient::parametric(b, ambient, peaks, tail)?;
        let gate = rng.random_range(0..b);
        let mut total = no_detection_probability(&scene);
        for t in gate..gate + b {
            total += detection_likelihood(&scene, t, gate)?;
        }
        let err = (total - 1.0).abs();
        worst = worst.max(err);
        if err > NORMALIZATION_TOLERANCE {
            failures += 1;
        }
    }
    Ok(OracleCheck {
        name: "likelihood normalization",
        cases: scenes,
        failures,
        worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// For B ∈ {16, 64}, every flux pair and every depth hypothesis, the
/// brute-force reward must have its unique argmax at the hypothesis.
pub fn optimal_gate_check() -> Result<OracleCheck> {
    let start = Instant::now();
    let (mut cases, mut failures) = (0, 0);
    for b in [16usize, 64] {
        for &(ambient_flux, signal_flux) in &GATE_CHECK_FLUXES {
            let hyp = FluxHypothesis {
                ambient_flux,
                signal_flux,
            };
            for d in 0..b {
                let rewards = (0..b)
                    .map(|g| reward_brute_force(d, g, b, hyp))
                    .collect::<Result<Vec<f64>>>()?;
                let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let unique = rewards.iter().filter(|&&r| r == best).count() == 1;
                cases += 1;
                if !(unique && rewards[d] == best) {
                    failures += 1;
                }
            }
        }
    }
    Ok(OracleCheck {
        name: "optimal gate",
        cases,
        failures,
        worst: 0.0,
        seconds: start.elapsed().as_secs_f64(),
    })
}
