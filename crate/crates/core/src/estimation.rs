//! Scalar Gaussian measurement, local MMSE estimation, and precision-weighted
//! fusion into the global estimate.
//!
//! All internal arithmetic is carried in precision (inverse-variance) form so
//! that zero effort (an infinite-variance measurement) is an ordinary value
//! rather than a special case. A sensor measuring with precision `xi` has
//!
//! ```text
//! local mean  = xi / (xi_x + xi) * y        (prior mean is zero)
//! local mse   = 1 / (xi_x + xi)
//! ```
//!
//! and fusing sensors adds their precisions on top of the prior:
//!
//! ```text
//! global precision = xi_x + sum_i xi_i
//! global mean      = sum_i (local precision_i * local mean_i) / global precision
//! ```

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("measurement value must be finite, got {0}")]
    NonFiniteMeasurement(f64),
    #[error("measurement precision must be >= 0, got {0}")]
    NegativePrecision(f64),
    #[error("local mse {mse} outside (0, prior variance {prior_variance}]")]
    LocalMseOutOfRange { mse: f64, prior_variance: f64 },
    #[error("prior precision must be positive and finite, got {0}")]
    InvalidPrior(f64),
}

/// Scalar Gaussian prior on the latent value, stored as a precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    precision: f64,
}

impl PriorModel {
    pub fn from_precision(precision: f64) -> Result<Self, EstimationError> {
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(EstimationError::InvalidPrior(precision));
        }
        Ok(Self { precision })
    }

    pub fn from_variance(variance: f64) -> Result<Self, EstimationError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(EstimationError::InvalidPrior(variance));
        }
        Ok(Self {
            precision: 1.0 / variance,
        })
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }
}

/// A single sensor measurement. `precision == 0` encodes the no-effort case:
/// the value carries no information and local estimation ignores it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub agent_id: usize,
    pub value: f64,
    pub precision: f64,
}

/// Posterior mean and MSE for the latent value given one sensor's measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEstimate {
    pub agent_id: usize,
    pub mean: f64,
    pub mse: f64,
}

/// Fused posterior over all reporting sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalEstimate {
    pub mean: f64,
    pub mse: f64,
}

/// Local MMSE estimate from one measurement.
pub fn local_estimate(
    prior: &PriorModel,
    m: &Measurement,
) -> Result<LocalEstimate, EstimationError> {
    if !m.value.is_finite() {
        return Err(EstimationError::NonFiniteMeasurement(m.value));
    }
    if m.precision < 0.0 {
        return Err(EstimationError::NegativePrecision(m.precision));
    }
    let total = prior.precision() + m.precision;
    Ok(LocalEstimate {
        agent_id: m.agent_id,
        mean: m.precision / total * m.value,
        mse: 1.0 / total,
    })
}

/// Fuse local estimates into the global MMSE estimate.
///
/// Each local MSE must lie in `(0, prior variance]`; the measurement precision
/// it encodes is recovered as `1/mse - xi_x`.
pub fn fuse(
    prior: &PriorModel,
    locals: &[LocalEstimate],
) -> Result<GlobalEstimate, EstimationError> {
    let xi_x = prior.precision();
    let mut precision = xi_x;
    let mut weighted_sum = 0.0;
    for l in locals {
        if !(l.mse > 0.0 && l.mse <= prior.variance()) {
            return Err(EstimationError::LocalMseOutOfRange {
                mse: l.mse,
                prior_variance: prior.variance(),
            });
        }
        let local_precision = 1.0 / l.mse;
        precision += local_precision - xi_x;
        weighted_sum += local_precision * l.mean;
    }
    Ok(GlobalEstimate {
        mean: weighted_sum / precision,
        mse: 1.0 / precision,
    })
}

/// A sampled world: the latent value and one measurement per agent.
#[derive(Debug, Clone)]
pub struct World {
    pub value: f64,
    pub measurements: Vec<Measurement>,
}

/// Raw standard-normal draws for one trial, before effort scaling.
///
/// Keeping the unscaled noise around lets deviation sweeps vary one agent's
/// effort while replaying the identical randomness everywhere else.
#[derive(Debug, Clone)]
pub struct RawWorld {
    pub value: f64,
    pub agent_noise: Vec<f64>,
    pub honest_noise: f64,
}

impl RawWorld {
    /// Measurement for agent `i` at effort `xi`. Zero effort yields the
    /// latent value itself, flagged uninformative by `precision == 0`.
    pub fn measurement(&self, agent_id: usize, xi: f64) -> Measurement {
        let value = if xi > 0.0 {
            self.value + self.agent_noise[agent_id] / xi.sqrt()
        } else {
            self.value
        };
        Measurement {
            agent_id,
            value,
            precision: xi,
        }
    }

    /// Honest agent's truthful measurement at its known precision.
    pub fn honest_measurement(&self, xi_h: f64) -> f64 {
        self.value + self.honest_noise / xi_h.sqrt()
    }
}

/// Draws worlds for a numbered sequence of trials under one master seed.
///
/// Per trial, the latent value and each agent's unit noise come from disjoint
/// substreams keyed `(seed, trial, purpose)`.
#[derive(Debug, Clone, Copy)]
pub struct WorldSampler<'a> {
    prior: &'a PriorModel,
    seed: u64,
    n_agents: usize,
}

impl<'a> WorldSampler<'a> {
    pub fn new(prior: &'a PriorModel, seed: u64, n_agents: usize) -> Self {
        Self {
            prior,
            seed,
            n_agents,
        }
    }

    pub fn draw(&self, trial: u64) -> RawWorld {
        let sigma_x = self.prior.variance().sqrt();
        let x: f64 = {
            let mut r = rng::substream(self.seed, &[trial, rng::TAG_WORLD]);
            let z: f64 = StandardNormal.sample(&mut r);
            z * sigma_x
        };
        let agent_noise = (0..self.n_agents)
            .map(|i| rng::normal_draw(self.seed, &[trial, rng::TAG_AGENT_BASE + i as u64]))
            .collect();
        let honest_noise = rng::normal_draw(self.seed, &[trial, rng::TAG_HONEST]);
        RawWorld {
            value: x,
            agent_noise,
            honest_noise,
        }
    }
}

/// Sample one world: the latent value plus each agent's measurement at the
/// given effort levels. Effort levels must be non-negative.
pub fn sample_world(prior: &PriorModel, efforts: &[f64], seed: u64) -> World {
    assert!(
        efforts.iter().all(|&xi| xi >= 0.0),
        "effort levels must be non-negative"
    );
    let raw = WorldSampler::new(prior, seed, efforts.len()).draw(0);
    let measurements = efforts
        .iter()
        .enumerate()
        .map(|(i, &xi)| raw.measurement(i, xi))
        .collect();
    World {
        value: raw.value,
        measurements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior(xi_x: f64) -> PriorModel {
        PriorModel::from_precision(xi_x).unwrap()
    }

    #[test]
    fn zero_effort_reduces_to_prior() {
        let p = prior(1.0);
        let est = local_estimate(
            &p,
            &Measurement {
                agent_id: 0,
                value: 2.0,
                precision: 0.0,
            },
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.mse, 1.0);
    }

    #[test]
    fn equal_precisions_halve_variance_and_split_value() {
        let p = prior(1.0);
        let est = local_estimate(
            &p,
            &Measurement {
                agent_id: 0,
                value: 2.0,
                precision: 1.0,
            },
        )
        .unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.mse, 0.5);
    }

    #[test]
    fn local_estimate_matches_grid_posterior() {
        // xi_x = 0.001 (prior variance 1000), y = 10, xi = 0.009.
        let p = prior(0.001);
        let est = local_estimate(
            &p,
            &Measurement {
                agent_id: 0,
                value: 10.0,
                precision: 0.009,
            },
        )
        .unwrap();
        assert!((est.mean - 9.0).abs() < 1e-12);
        assert!((est.mse - 100.0).abs() < 1e-9);

        // Oracle: posterior mean of X given y by direct density integration.
        let (y, s2x, s2v) = (10.0, 1000.0, 1.0 / 0.009);
        let mut num = 0.0;
        let mut den = 0.0;
        let n = 400_000;
        let (lo, hi) = (-300.0, 300.0);
        let h = (hi - lo) / n as f64;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let w = (-(x * x) / (2.0 * s2x) - (y - x) * (y - x) / (2.0 * s2v)).exp();
            let w = if k == 0 || k == n { 0.5 * w } else { w };
            num += x * w;
            den += w;
        }
        let oracle_mean = num / den;
        assert!(
            (est.mean - oracle_mean).abs() < 1e-6,
            "grid oracle gave {oracle_mean}"
        );
    }

    #[test]
    fn non_finite_measurement_rejected() {
        let p = prior(1.0);
        let err = local_estimate(
            &p,
            &Measurement {
                agent_id: 0,
                value: f64::NAN,
                precision: 1.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, EstimationError::NonFiniteMeasurement(_)));
    }

    #[test]
    fn fuse_empty_returns_prior() {
        let p = prior(0.25);
        let g = fuse(&p, &[]).unwrap();
        assert_eq!(g.mean, 0.0);
        assert_eq!(g.mse, 4.0);
    }

    #[test]
    fn fuse_single_equals_local() {
        let p = prior(0.8);
        let l = local_estimate(
            &p,
            &Measurement {
                agent_id: 0,
                value: 1.7,
                precision: 0.6,
            },
        )
        .unwrap();
        let g = fuse(&p, &[l]).unwrap();
        assert!((g.mean - l.mean).abs() < 1e-15);
        assert!((g.mse - l.mse).abs() < 1e-15);
    }

    #[test]
    fn fuse_two_agents_matches_joint_posterior() {
        // xi_x = 1, both agents at precision 1 with local means 1 (so y_i = 2).
        let p = prior(1.0);
        let locals = vec![
            LocalEstimate {
                agent_id: 0,
                mean: 1.0,
                mse: 0.5,
            },
            LocalEstimate {
                agent_id: 1,
                mean: 1.0,
                mse: 0.5,
            },
        ];
        let g = fuse(&p, &locals).unwrap();
        assert!((g.mse - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.mean - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fuse_rejects_mse_above_prior_variance() {
        let p = prior(1.0);
        let locals = vec![LocalEstimate {
            agent_id: 0,
            mean: 0.0,
            mse: 1.5,
        }];
        assert!(matches!(
            fuse(&p, &locals),
            Err(EstimationError::LocalMseOutOfRange { .. })
        ));
    }

    #[test]
    fn sample_world_is_deterministic() {
        let p = prior(1.0);
        let efforts = [0.5, 0.0, 2.0];
        let a = sample_world(&p, &efforts, 99);
        let b = sample_world(&p, &efforts, 99);
        assert_eq!(a.value, b.value);
        assert_eq!(a.measurements, b.measurements);
    }

    #[test]
    fn zero_effort_world_measurement_is_latent_value() {
        let p = prior(1.0);
        let w = sample_world(&p, &[0.0, 1.0], 7);
        assert_eq!(w.measurements[0].value, w.value);
        assert_eq!(w.measurements[0].precision, 0.0);
        let est = local_estimate(&p, &w.measurements[0]).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn adding_an_agent_leaves_other_noise_untouched() {
        let p = prior(1.0);
        let small = sample_world(&p, &[1.0, 2.0], 5);
        let large = sample_world(&p, &[1.0, 2.0, 3.0], 5);
        assert_eq!(small.value, large.value);
        assert_eq!(small.measurements[0], large.measurements[0]);
        assert_eq!(small.measurements[1], large.measurements[1]);
    }
}
