//! Payment-minimizing effort allocation.
//!
//! The estimator needs the fleet to supply `1/mse_target - xi_x` of extra
//! precision at minimum total effort cost. Depending on the cost curves this
//! is solved by:
//!
//! * an equal-split closed form with active-set clamping when every cost is
//!   quadratic with a common coefficient;
//! * an exact covering-knapsack DP over a discretized precision axis when
//!   every agent is a discrete measurement-count model;
//! * multi-start projected gradient descent for other continuous curves;
//! * a binary knapsack over `(max_effort, max_cost)` when some cost curve
//!   fails the realizability condition and only maximum effort can be
//!   elicited.
//!
//! Selection flags are recovered from a continuous solution by mapping zero
//! effort to "not selected", which preserves the objective value exactly
//! because `c(0) = 0`.

use thiserror::Error;

use crate::effort::{EffortCostModel, EffortError};
use crate::estimation::PriorModel;

/// Slack allowed when checking plan feasibility against the precision demand.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error(
        "infeasible: demand {demand:.6e} exceeds achievable precision {supply:.6e} \
         (shortfall {shortfall:.6e})"
    )]
    Infeasible {
        demand: f64,
        supply: f64,
        shortfall: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Effort(#[from] EffortError),
}

/// The estimator's allocation instance: a prior, one cost model per agent,
/// and the global MSE threshold to hit.
#[derive(Debug, Clone)]
pub struct AllocationProblem {
    pub prior: PriorModel,
    pub costs: Vec<EffortCostModel>,
    pub mse_target: f64,
}

impl AllocationProblem {
    pub fn new(
        prior: PriorModel,
        costs: Vec<EffortCostModel>,
        mse_target: f64,
    ) -> Result<Self, AllocationError> {
        if !(mse_target > 0.0 && mse_target.is_finite()) {
            return Err(AllocationError::InvalidProblem(format!(
                "mse target must be positive, got {mse_target}"
            )));
        }
        Ok(Self {
            prior,
            costs,
            mse_target,
        })
    }

    /// Extra precision the fleet must contribute beyond the prior.
    pub fn demand(&self) -> f64 {
        1.0 / self.mse_target - self.prior.precision()
    }

    /// Precision available if every agent works at maximum effort.
    pub fn supply(&self) -> f64 {
        self.costs.iter().map(|c| c.max_effort()).sum()
    }

    fn check_feasible(&self) -> Result<(), AllocationError> {
        let demand = self.demand();
        let supply = self.supply();
        if demand > supply + FEASIBILITY_TOLERANCE {
            return Err(AllocationError::Infeasible {
                demand,
                supply,
                shortfall: demand - supply,
            });
        }
        Ok(())
    }
}

/// Selection flags and target efforts, with the total expected payment.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub selected: Vec<bool>,
    pub efforts: Vec<f64>,
    pub total_cost: f64,
}

impl AllocationPlan {
    pub fn empty(n: usize) -> Self {
        Self {
            selected: vec![false; n],
            efforts: vec![0.0; n],
            total_cost: 0.0,
        }
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Global precision achieved when selected agents deliver their targets.
    pub fn achieved_precision(&self, prior: &PriorModel) -> f64 {
        prior.precision()
            + self
                .selected
                .iter()
                .zip(&self.efforts)
                .filter(|(&s, _)| s)
                .map(|(_, &xi)| xi)
                .sum::<f64>()
    }

    /// Global MSE achieved by the plan.
    pub fn achieved_mse(&self, prior: &PriorModel) -> f64 {
        1.0 / self.achieved_precision(prior)
    }

    pub fn is_feasible(&self, problem: &AllocationProblem) -> bool {
        self.achieved_precision(&problem.prior) >= 1.0 / problem.mse_target - FEASIBILITY_TOLERANCE
    }
}

/// Allocation regime: whether target efforts are enforceable or only the
/// max-effort fallback applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Optimal,
    Suboptimal,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Optimal => "optimal",
            Regime::Suboptimal => "suboptimal",
        }
    }
}

/// Plan plus the regime it was produced under.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub plan: AllocationPlan,
    pub regime: Regime,
}

/// Tuning knobs for the solvers; defaults match the documented behavior.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Grid density for realizability checks and derivative bounds.
    pub realizability_grid: usize,
    /// Fixed-point scale for binary-knapsack weights.
    pub binary_scale: f64,
    /// Hard bound on DP table cells before a configuration error.
    pub max_cells: usize,
    /// Cell budget the bounded-knapsack axis aims for when auto-coarsening.
    pub bkp_target_cells: usize,
    /// Sub-units per minimum unit precision for the bounded-knapsack axis.
    pub bkp_sub_units: u64,
    /// Multi-start count for the generic continuous solver.
    pub descent_starts: usize,
    /// Iterations per descent start.
    pub descent_iters: usize,
    /// Seed for descent start points.
    pub descent_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            realizability_grid: crate::effort::DEFAULT_REALIZABILITY_GRID,
            binary_scale: 1e6,
            max_cells: 1 << 25,
            bkp_target_cells: 1 << 21,
            bkp_sub_units: 1024,
            descent_starts: 16,
            descent_iters: 200,
            descent_seed: 0x5eed,
        }
    }
}

/// Build a plan from a continuous effort vector: nonzero efforts are selected
/// as-is, zeros are deselected. The objective value is preserved exactly.
pub fn plan_from_efforts(
    problem: &AllocationProblem,
    efforts: &[f64],
) -> Result<AllocationPlan, AllocationError> {
    assert_eq!(
        efforts.len(),
        problem.costs.len(),
        "effort vector length mismatch"
    );
    let mut total_cost = 0.0;
    let mut selected = Vec::with_capacity(efforts.len());
    for (model, &xi) in problem.costs.iter().zip(efforts) {
        total_cost += model.cost(xi)?;
        selected.push(xi != 0.0);
    }
    let plan = AllocationPlan {
        selected,
        efforts: efforts.to_vec(),
        total_cost,
    };
    if !plan.is_feasible(problem) {
        return Err(AllocationError::Infeasible {
            demand: problem.demand(),
            supply: efforts.iter().sum(),
            shortfall: problem.demand() - efforts.iter().sum::<f64>(),
        });
    }
    Ok(plan)
}

/// Closed-form solve when every cost is `l * xi^2` with one common `l`:
/// the demand splits equally, clamping saturated agents and re-equalizing.
pub fn solve_quadratic(problem: &AllocationProblem) -> Result<AllocationPlan, AllocationError> {
    let n = problem.costs.len();
    let mut common_coeff = None;
    for model in &problem.costs {
        match model.kind() {
            crate::effort::CostKind::Quadratic { coeff } => match common_coeff {
                None => common_coeff = Some(*coeff),
                Some(l) if l == *coeff => {}
                Some(l) => {
                    return Err(AllocationError::InvalidProblem(format!(
                        "quadratic solver needs a common coefficient, saw {l} and {coeff}"
                    )))
                }
            },
            _ => {
                return Err(AllocationError::InvalidProblem(
                    "quadratic solver requires all-quadratic costs".into(),
                ))
            }
        }
    }
    let coeff = common_coeff
        .ok_or_else(|| AllocationError::InvalidProblem("no agents in problem".into()))?;

    let demand = problem.demand();
    if demand <= 0.0 {
        return Ok(AllocationPlan::empty(n));
    }
    problem.check_feasible()?;

    // Water-filling: clamp agents whose cap is below the equal share, then
    // re-split the remainder among the rest.
    let mut efforts = vec![0.0_f64; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut remaining = demand;
    loop {
        let share = remaining / active.len() as f64;
        let (saturated, open): (Vec<usize>, Vec<usize>) = active
            .iter()
            .partition(|&&i| problem.costs[i].max_effort() < share);
        if saturated.is_empty() {
            for &i in &open {
                efforts[i] = share;
            }
            break;
        }
        for &i in &saturated {
            efforts[i] = problem.costs[i].max_effort();
            remaining -= efforts[i];
        }
        active = open;
        if active.is_empty() {
            break;
        }
    }
    let mut total_cost = 0.0;
    for &xi in &efforts {
        total_cost += coeff * xi * xi;
    }
    let selected = efforts.iter().map(|&xi| xi != 0.0).collect();
    Ok(AllocationPlan {
        selected,
        efforts,
        total_cost,
    })
}

// A 0/1 piece of the covering-knapsack instance. `count` is how many unit
// measurements of `agent` the piece stands for (1 for binary items).
#[derive(Debug, Clone, Copy)]
struct CoverItem {
    agent: usize,
    count: u32,
    weight: u64,
    cost: f64,
}

// dp[q] = min cost of a sub-multiset with scaled weight >= q, q in 0..=target.
fn covering_table(items: &[CoverItem], target: usize) -> Vec<f64> {
    let mut dp = vec![f64::INFINITY; target + 1];
    dp[0] = 0.0;
    for item in items {
        let w = item.weight.min(target as u64) as usize;
        for q in (1..=target).rev() {
            let prev = q.saturating_sub(w);
            let cand = dp[prev] + item.cost;
            if cand < dp[q] {
                dp[q] = cand;
            }
        }
    }
    dp
}

// Divide-and-conquer reconstruction: find which items cover `target` at the
// optimal cost, recursing on halves so memory stays O(target).
fn covering_assign(items: &[CoverItem], target: usize, taken: &mut [bool], offset: usize) {
    if target == 0 {
        return;
    }
    if items.len() == 1 {
        taken[offset] = true;
        return;
    }
    let mid = items.len() / 2;
    let left = covering_table(&items[..mid], target);
    let right = covering_table(&items[mid..], target);
    let mut best_q = 0;
    let mut best = f64::INFINITY;
    // Descending scan: among ties, put demand on the earlier (lower-index)
    // half for a deterministic plan.
    for q in (0..=target).rev() {
        let total = left[q] + right[target - q];
        if total < best {
            best = total;
            best_q = q;
        }
    }
    drop(left);
    drop(right);
    covering_assign(&items[..mid], best_q, taken, offset);
    covering_assign(&items[mid..], target - best_q, taken, offset + mid);
}

// Exact min-cost covering over 0/1 items; returns per-item taken flags.
// Infeasibility (even all items can't reach the target) returns None.
fn covering_solve(items: &[CoverItem], target: usize) -> Option<Vec<bool>> {
    let total_weight: u64 = items.iter().map(|it| it.weight).sum();
    if total_weight < target as u64 {
        return None;
    }
    let mut taken = vec![false; items.len()];
    covering_assign(items, target, &mut taken, 0);
    Some(taken)
}

// Split a bounded count into 0/1 pieces (1, 2, 4, ..., remainder).
fn binary_split(max_count: u32) -> Vec<u32> {
    let mut parts = Vec::new();
    let mut remaining = max_count;
    let mut piece = 1u32;
    while remaining > 0 {
        let take = piece.min(remaining);
        parts.push(take);
        remaining -= take;
        piece = piece.saturating_mul(2);
    }
    parts
}

/// Exact bounded-knapsack solve for all-discrete fleets: integer measurement
/// counts minimizing total cost subject to the precision demand.
///
/// Weights are scaled onto an integer axis with conservative rounding
/// (weights round down, the demand rounds up), so any returned plan is
/// feasible in real arithmetic. The resolution adapts to the instance but a
/// resolution coarser than the smallest unit precision is rejected.
pub fn solve_bounded_knapsack(
    problem: &AllocationProblem,
    opts: &SolverOptions,
) -> Result<AllocationPlan, AllocationError> {
    let n = problem.costs.len();
    let demand = problem.demand();
    if demand <= 0.0 {
        return Ok(AllocationPlan::empty(n));
    }
    problem.check_feasible()?;

    let mut units = Vec::with_capacity(n);
    for model in &problem.costs {
        let w = model.unit_precision().ok_or_else(|| {
            AllocationError::InvalidProblem(
                "bounded knapsack requires all-discrete cost models".into(),
            )
        })?;
        units.push(w);
    }
    let min_unit = units.iter().cloned().fold(f64::INFINITY, f64::min);

    let target_cells = opts.bkp_target_cells.min(opts.max_cells);
    let mut resolution = (min_unit / opts.bkp_sub_units as f64).max(demand / target_cells as f64);
    if resolution > min_unit {
        return Err(AllocationError::Config(format!(
            "precision axis resolution {resolution:.3e} is coarser than the smallest unit \
             precision {min_unit:.3e}; raise bkp_target_cells ({target_cells}) to fit the table"
        )));
    }

    loop {
        // Cover the demand up to the documented plan slack, so demands at
        // the exact feasibility boundary survive the conservative rounding.
        let target = ((demand - FEASIBILITY_TOLERANCE).max(0.0) / resolution).ceil() as usize;
        if target > opts.max_cells {
            return Err(AllocationError::Config(format!(
                "DP table would need {target} cells (> {}); use a coarser resolution",
                opts.max_cells
            )));
        }
        let mut items = Vec::new();
        for (agent, model) in problem.costs.iter().enumerate() {
            let unit_weight = (units[agent] / resolution).floor() as u64;
            let unit_cost = model.unit_cost().unwrap();
            for part in binary_split(model.max_count().unwrap()) {
                items.push(CoverItem {
                    agent,
                    count: part,
                    weight: unit_weight * part as u64,
                    cost: unit_cost * part as f64,
                });
            }
        }
        match covering_solve(&items, target) {
            Some(taken) => {
                let mut counts = vec![0u32; n];
                for (item, take) in items.iter().zip(&taken) {
                    if *take {
                        counts[item.agent] += item.count;
                    }
                }
                let mut efforts = vec![0.0; n];
                let mut total_cost = 0.0;
                for (agent, &eta) in counts.iter().enumerate() {
                    efforts[agent] = eta as f64 * units[agent];
                    total_cost += eta as f64 * problem.costs[agent].unit_cost().unwrap();
                }
                let selected = counts.iter().map(|&c| c > 0).collect();
                return Ok(AllocationPlan {
                    selected,
                    efforts,
                    total_cost,
                });
            }
            None => {
                // True-feasible but scaled-infeasible: rounding ate the
                // margin. Refine and retry while the table still fits.
                let finer = resolution / 2.0;
                if (demand / finer).ceil() as usize > opts.max_cells {
                    return Err(AllocationError::Config(format!(
                        "cannot resolve the feasibility margin at resolution {resolution:.3e} \
                         within {} cells; raise max_cells",
                        opts.max_cells
                    )));
                }
                resolution = finer;
            }
        }
    }
}

/// Binary-knapsack fallback: each agent is either recruited at maximum effort
/// (paying its maximum cost) or left out.
pub fn solve_binary_knapsack(
    problem: &AllocationProblem,
    opts: &SolverOptions,
) -> Result<AllocationPlan, AllocationError> {
    let n = problem.costs.len();
    let demand = problem.demand();
    if demand <= 0.0 {
        return Ok(AllocationPlan::empty(n));
    }
    problem.check_feasible()?;

    let mut scale = opts.binary_scale;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(AllocationError::Config(format!(
            "binary knapsack scale must be positive, got {scale}"
        )));
    }
    loop {
        let target_u = ((demand - FEASIBILITY_TOLERANCE).max(0.0) * scale).ceil();
        if target_u > opts.max_cells as f64 {
            return Err(AllocationError::Config(format!(
                "scaled demand needs {target_u:.0} cells (> {}); use a coarser scale \
                 than {scale:.3e}",
                opts.max_cells
            )));
        }
        let target = target_u as usize;
        let mut items = Vec::with_capacity(n);
        for (agent, model) in problem.costs.iter().enumerate() {
            let weight = (model.max_effort() * scale).floor() as u64;
            if weight == 0 {
                return Err(AllocationError::Config(format!(
                    "scale {scale:.3e} is too coarse: agent {agent}'s max effort {:.3e} \
                     rounds to zero weight",
                    model.max_effort()
                )));
            }
            items.push(CoverItem {
                agent,
                count: 1,
                weight,
                cost: model.max_cost(),
            });
        }
        match covering_solve(&items, target) {
            Some(taken) => {
                let mut selected = vec![false; n];
                let mut efforts = vec![0.0; n];
                let mut total_cost = 0.0;
                for (item, take) in items.iter().zip(&taken) {
                    if *take {
                        selected[item.agent] = true;
                        efforts[item.agent] = problem.costs[item.agent].max_effort();
                        total_cost += item.cost;
                    }
                }
                return Ok(AllocationPlan {
                    selected,
                    efforts,
                    total_cost,
                });
            }
            None => {
                let finer = scale * 2.0;
                if (demand * finer).ceil() > opts.max_cells as f64 {
                    return Err(AllocationError::Config(format!(
                        "cannot resolve the feasibility margin at scale {scale:.3e} within \
                         {} cells; raise max_cells",
                        opts.max_cells
                    )));
                }
                scale = finer;
            }
        }
    }
}

/// Quantization slack of the binary-knapsack scaling: any selection whose
/// true precision clears the demand by at least this much survives the
/// floor-rounding of the weights, so the DP's cost exceeds the true optimum
/// only if every optimal selection sits closer than this to the boundary.
pub fn binary_quantization_slack(problem: &AllocationProblem, opts: &SolverOptions) -> f64 {
    (problem.costs.len() as f64 + 1.0) / opts.binary_scale
}

// Project v onto { x : sum x = demand, 0 <= x_i <= cap_i } by bisecting the
// shift in x_i = clamp(v_i - shift, 0, cap_i).
fn project_onto_budget(v: &[f64], caps: &[f64], demand: f64) -> Vec<f64> {
    let sum_at = |shift: f64| -> f64 {
        v.iter()
            .zip(caps)
            .map(|(&vi, &ui)| (vi - shift).clamp(0.0, ui))
            .sum()
    };
    let mut lo = v
        .iter()
        .zip(caps)
        .map(|(&vi, &ui)| vi - ui)
        .fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    v.iter()
        .zip(caps)
        .map(|(&vi, &ui)| (vi - shift).clamp(0.0, ui))
        .collect()
}

/// Multi-start projected gradient descent for general continuous cost curves.
pub fn solve_descent(
    problem: &AllocationProblem,
    opts: &SolverOptions,
) -> Result<AllocationPlan, AllocationError> {
    use rand::Rng;

    let n = problem.costs.len();
    let demand = problem.demand();
    if demand <= 0.0 {
        return Ok(AllocationPlan::empty(n));
    }
    problem.check_feasible()?;

    let caps: Vec<f64> = problem.costs.iter().map(|c| c.max_effort()).collect();
    let objective = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&problem.costs)
            .map(|(&xi, m)| m.envelope_cost(xi))
            .sum()
    };

    let mut best: Option<Vec<f64>> = None;
    let mut best_value = f64::INFINITY;
    for start in 0..opts.descent_starts.max(1) {
        let mut rng = crate::rng::substream(opts.descent_seed, &[start as u64]);
        let raw: Vec<f64> = caps.iter().map(|&u| rng.random_range(0.0..=u)).collect();
        let mut x = project_onto_budget(&raw, &caps, demand);
        let mut value = objective(&x);
        let mut step = demand / n as f64;
        for _ in 0..opts.descent_iters {
            let grad: Vec<f64> = x
                .iter()
                .zip(&problem.costs)
                .map(|(&xi, m)| m.derivative(xi))
                .collect();
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&grad).map(|(&xi, &g)| xi - step * g).collect();
                let projected = project_onto_budget(&trial, &caps, demand);
                let trial_value = objective(&projected);
                if trial_value < value - 1e-15 {
                    x = projected;
                    value = trial_value;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if value < best_value {
            best_value = value;
            best = Some(x);
        }
    }
    let mut efforts = best.expect("at least one descent start");
    // Snap negligible coordinates to exact zero so deselection kicks in.
    let snap = 1e-12 * demand;
    for xi in &mut efforts {
        if *xi < snap {
            *xi = 0.0;
        }
    }
    // Guard against projection round-off leaving a hair of shortfall.
    let total: f64 = efforts.iter().sum();
    if total < demand {
        let deficit = demand - total;
        for (xi, &cap) in efforts.iter_mut().zip(&caps) {
            let room = cap - *xi;
            if room >= deficit {
                *xi += deficit;
                break;
            }
        }
    }
    plan_from_efforts(problem, &efforts)
}

/// Dispatch: pick the regime from the realizability condition, solve with the
/// most specific solver, and return the plan with its regime tag.
pub fn solve(
    problem: &AllocationProblem,
    opts: &SolverOptions,
) -> Result<SolveOutcome, AllocationError> {
    if problem.costs.is_empty() {
        return Err(AllocationError::InvalidProblem(
            "no agents in problem".into(),
        ));
    }
    let all_realizable = problem.costs.iter().all(|model| {
        model
            .realizability(problem.prior.precision(), opts.realizability_grid)
            .holds
    });
    if !all_realizable {
        let plan = solve_binary_knapsack(problem, opts)?;
        return Ok(SolveOutcome {
            plan,
            regime: Regime::Suboptimal,
        });
    }

    let all_discrete = problem.costs.iter().all(|m| m.is_discrete());
    let any_discrete = problem.costs.iter().any(|m| m.is_discrete());
    let quadratic_common = {
        let mut coeffs = problem.costs.iter().map(|m| match m.kind() {
            crate::effort::CostKind::Quadratic { coeff } => Some(*coeff),
            _ => None,
        });
        match coeffs.next().flatten() {
            Some(first) => coeffs.all(|c| c == Some(first)),
            None => false,
        }
    };

    let plan = if quadratic_common {
        solve_quadratic(problem)?
    } else if all_discrete {
        solve_bounded_knapsack(problem, opts)?
    } else if any_discrete {
        return Err(AllocationError::InvalidProblem(
            "fleets mixing discrete and continuous cost models are not supported \
             in the optimal regime"
                .into(),
        ));
    } else {
        solve_descent(problem, opts)?
    };
    Ok(SolveOutcome {
        plan,
        regime: Regime::Optimal,
    })
}
