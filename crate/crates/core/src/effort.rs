//! Effort-cost curves and the curvature condition that decides which payment
//! mechanism applies.
//!
//! A cost model maps an effort level (measurement precision) to a monetary
//! cost, with `c(0) = 0`, `c` increasing, and a hard cap at `max_effort`.
//! Three shapes are supported:
//!
//! * `Quadratic`: `c = coeff * xi^2`;
//! * `DiscreteLinear`: the agent takes an integer number of unit measurements,
//!   each adding `1/unit_variance` of precision at `unit_cost`. The lattice
//!   view prices exact counts; the linear envelope `c = unit_variance *
//!   unit_cost * xi` supplies the derivatives that payment calibration needs;
//! * `Tabulated`: linear interpolation through sampled `(effort, cost)` points,
//!   with finite-difference derivatives and a smoothed second derivative.
//!
//! The curvature condition checked by [`EffortCostModel::realizability`] is
//!
//! ```text
//! -2 c'(xi) - c''(xi) * (xi_x + xi) < 0   for all xi in [0, max_effort]
//! ```
//!
//! evaluated on a dense grid. Convex costs always satisfy it; sufficiently
//! concave ones fail, which routes allocation to the max-effort fallback
//! mechanism.

use thiserror::Error;

/// Grid density used for realizability checks and derivative-bound searches
/// when the caller does not override it.
pub const DEFAULT_REALIZABILITY_GRID: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum EffortError {
    #[error("effort {xi} outside [0, {max_effort}]")]
    EffortOutOfRange { xi: f64, max_effort: f64 },
    #[error("effort {xi} is not a multiple of the unit precision {unit_precision}")]
    OffLattice { xi: f64, unit_precision: f64 },
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    Quadratic {
        coeff: f64,
    },
    DiscreteLinear {
        unit_variance: f64,
        unit_cost: f64,
        max_count: u32,
    },
    Tabulated {
        efforts: Vec<f64>,
        costs: Vec<f64>,
        /// Nodal first derivatives (centered differences).
        derivs: Vec<f64>,
        /// Nodal second derivatives after window smoothing.
        second_derivs: Vec<f64>,
    },
}

/// An agent's effort-cost curve with its effort and cost caps.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortCostModel {
    kind: CostKind,
    max_effort: f64,
    max_cost: f64,
}

impl EffortCostModel {
    pub fn quadratic(coeff: f64, max_effort: f64) -> Result<Self, EffortError> {
        if !(coeff > 0.0 && coeff.is_finite()) {
            return Err(EffortError::InvalidModel(format!(
                "quadratic coefficient must be positive, got {coeff}"
            )));
        }
        if !(max_effort > 0.0 && max_effort.is_finite()) {
            return Err(EffortError::InvalidModel(format!(
                "max effort must be positive, got {max_effort}"
            )));
        }
        Ok(Self {
            kind: CostKind::Quadratic { coeff },
            max_effort,
            max_cost: coeff * max_effort * max_effort,
        })
    }

    pub fn discrete_linear(
        unit_variance: f64,
        unit_cost: f64,
        max_count: u32,
    ) -> Result<Self, EffortError> {
        if !(unit_variance > 0.0 && unit_variance.is_finite()) {
            return Err(EffortError::InvalidModel(format!(
                "unit variance must be positive, got {unit_variance}"
            )));
        }
        if !(unit_cost > 0.0 && unit_cost.is_finite()) {
            return Err(EffortError::InvalidModel(format!(
                "unit cost must be positive, got {unit_cost}"
            )));
        }
        if max_count == 0 {
            return Err(EffortError::InvalidModel(
                "max measurement count must be at least 1".into(),
            ));
        }
        // Same expression as the lattice so the cap is its last point exactly.
        let max_effort = max_count as f64 * (1.0 / unit_variance);
        Ok(Self {
            kind: CostKind::DiscreteLinear {
                unit_variance,
                unit_cost,
                max_count,
            },
            max_effort,
            max_cost: max_count as f64 * unit_cost,
        })
    }

    /// Build a tabulated model from `(effort, cost)` samples. Points must
    /// start at `(0, 0)`, have strictly increasing efforts, and non-decreasing
    /// costs.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self, EffortError> {
        if points.len() < 2 {
            return Err(EffortError::InvalidModel(
                "tabulated model needs at least two points".into(),
            ));
        }
        if points[0] != (0.0, 0.0) {
            return Err(EffortError::InvalidModel(
                "tabulated model must start at (0, 0)".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(EffortError::InvalidModel(
                    "tabulated efforts must be strictly increasing".into(),
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(EffortError::InvalidModel(
                    "tabulated costs must be non-decreasing".into(),
                ));
            }
        }
        if points
            .iter()
            .any(|&(x, c)| !x.is_finite() || !c.is_finite())
        {
            return Err(EffortError::InvalidModel(
                "tabulated points must be finite".into(),
            ));
        }
        let efforts: Vec<f64> = points.iter().map(|p| p.0).collect();
        let costs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let derivs = nodal_derivatives(&efforts, &costs);
        let second_derivs = smoothed(&nodal_derivatives(&efforts, &derivs), 5);
        let (max_effort, max_cost) = (*efforts.last().unwrap(), *costs.last().unwrap());
        Ok(Self {
            kind: CostKind::Tabulated {
                efforts,
                costs,
                derivs,
                second_derivs,
            },
            max_effort,
            max_cost,
        })
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn max_effort(&self) -> f64 {
        self.max_effort
    }

    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, CostKind::DiscreteLinear { .. })
    }

    /// Precision added by one unit measurement, for discrete models.
    pub fn unit_precision(&self) -> Option<f64> {
        match self.kind {
            CostKind::DiscreteLinear { unit_variance, .. } => Some(1.0 / unit_variance),
            _ => None,
        }
    }

    /// Cost per unit measurement, for discrete models.
    pub fn unit_cost(&self) -> Option<f64> {
        match self.kind {
            CostKind::DiscreteLinear { unit_cost, .. } => Some(unit_cost),
            _ => None,
        }
    }

    pub fn max_count(&self) -> Option<u32> {
        match self.kind {
            CostKind::DiscreteLinear { max_count, .. } => Some(max_count),
            _ => None,
        }
    }

    /// Achievable effort levels for a discrete model: `0, w, 2w, ..`.
    /// Computed as `count * unit_precision` so lattice points compare
    /// bit-for-bit with efforts assembled the same way elsewhere.
    pub fn effort_lattice(&self) -> Option<Vec<f64>> {
        match self.kind {
            CostKind::DiscreteLinear {
                unit_variance,
                max_count,
                ..
            } => {
                let unit_precision = 1.0 / unit_variance;
                Some(
                    (0..=max_count)
                        .map(|eta| eta as f64 * unit_precision)
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// Cost at effort `xi`. Discrete models only price lattice points.
    pub fn cost(&self, xi: f64) -> Result<f64, EffortError> {
        if !(0.0..=self.max_effort * (1.0 + 1e-12)).contains(&xi) {
            return Err(EffortError::EffortOutOfRange {
                xi,
                max_effort: self.max_effort,
            });
        }
        match &self.kind {
            CostKind::Quadratic { coeff } => Ok(coeff * xi * xi),
            CostKind::DiscreteLinear {
                unit_variance,
                unit_cost,
                ..
            } => {
                let unit_precision = 1.0 / unit_variance;
                let eta = (xi * unit_variance).round();
                if (xi - eta * unit_precision).abs() > 1e-9 * unit_precision.max(xi) {
                    return Err(EffortError::OffLattice { xi, unit_precision });
                }
                Ok(eta * unit_cost)
            }
            CostKind::Tabulated { efforts, costs, .. } => Ok(interp(efforts, costs, xi)),
        }
    }

    /// Continuous view of the cost curve; identical to [`Self::cost`] except
    /// that discrete models are replaced by their linear envelope.
    pub fn envelope_cost(&self, xi: f64) -> f64 {
        let xi = xi.clamp(0.0, self.max_effort);
        match &self.kind {
            CostKind::Quadratic { coeff } => coeff * xi * xi,
            CostKind::DiscreteLinear {
                unit_variance,
                unit_cost,
                ..
            } => unit_variance * unit_cost * xi,
            CostKind::Tabulated { efforts, costs, .. } => interp(efforts, costs, xi),
        }
    }

    /// First derivative of the (envelope) cost at `xi`.
    pub fn derivative(&self, xi: f64) -> f64 {
        let xi = xi.clamp(0.0, self.max_effort);
        match &self.kind {
            CostKind::Quadratic { coeff } => 2.0 * coeff * xi,
            CostKind::DiscreteLinear {
                unit_variance,
                unit_cost,
                ..
            } => unit_variance * unit_cost,
            CostKind::Tabulated {
                efforts, derivs, ..
            } => interp(efforts, derivs, xi),
        }
    }

    /// Second derivative of the (envelope) cost at `xi`.
    pub fn second_derivative(&self, xi: f64) -> f64 {
        let xi = xi.clamp(0.0, self.max_effort);
        match &self.kind {
            CostKind::Quadratic { coeff } => 2.0 * coeff,
            CostKind::DiscreteLinear { .. } => 0.0,
            CostKind::Tabulated {
                efforts,
                second_derivs,
                ..
            } => interp(efforts, second_derivs, xi),
        }
    }

    /// Check `-2 c' - c'' (xi_x + xi) < 0` on a `grid_points`-point grid over
    /// `[0, max_effort]` and report the worst point.
    pub fn realizability(&self, prior_precision: f64, grid_points: usize) -> RealizabilityReport {
        let n = grid_points.max(2);
        let mut worst_value = f64::NEG_INFINITY;
        let mut worst_effort = 0.0;
        for k in 0..n {
            let xi = self.max_effort * k as f64 / (n - 1) as f64;
            let value =
                -2.0 * self.derivative(xi) - self.second_derivative(xi) * (prior_precision + xi);
            if value > worst_value {
                worst_value = value;
                worst_effort = xi;
            }
        }
        RealizabilityReport {
            holds: worst_value < 0.0,
            worst_effort,
            worst_value,
        }
    }

    /// Largest value of `c'(xi) * (xi_x + xi)^2` over the effort range, on the
    /// same grid the realizability check uses. Drives the fallback-mechanism
    /// payment curvature.
    pub fn derivative_bound(&self, prior_precision: f64, grid_points: usize) -> f64 {
        let n = grid_points.max(2);
        let mut best = f64::NEG_INFINITY;
        for k in 0..n {
            let xi = self.max_effort * k as f64 / (n - 1) as f64;
            let t = prior_precision + xi;
            best = best.max(self.derivative(xi) * t * t);
        }
        best
    }
}

/// Outcome of the curvature-condition grid check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizabilityReport {
    pub holds: bool,
    /// Grid point where the condition is closest to failing (or fails worst).
    pub worst_effort: f64,
    /// Value of `-2c' - c''(xi_x + xi)` at that point; negative means holds.
    pub worst_value: f64,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert!(xs.len() == ys.len() && xs.len() >= 2);
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let (y0, y1) = (ys[j - 1], ys[j]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn nodal_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                (ys[1] - ys[0]) / (xs[1] - xs[0])
            } else if k == n - 1 {
                (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2])
            } else {
                (ys[k + 1] - ys[k - 1]) / (xs[k + 1] - xs[k - 1])
            }
        })
        .collect()
}

fn smoothed(ys: &[f64], window: usize) -> Vec<f64> {
    let n = ys.len();
    let half = window / 2;
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            ys[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}
