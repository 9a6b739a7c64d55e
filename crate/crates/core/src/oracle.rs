//! Independent cross-check routes for small instances.
//!
//! Everything here is deliberately brute force (exhaustive enumeration,
//! dense grids, direct linear algebra on the joint Gaussian) and shares no
//! code with the production solvers it checks. The `oracle` CLI subcommand
//! and the test suites both run these against the fast paths.

use rand_distr::{Distribution, StandardNormal};

use crate::effort::EffortCostModel;
use crate::estimation::{Measurement, PriorModel};
use crate::game::MonteCarloStats;
use crate::rng;

/// Exact conditional mean `E[X | y_1..y_n]` from the joint Gaussian
/// covariance, by direct solve. Zero-precision measurements carry no
/// information and are skipped.
pub fn exact_mmse_mean(prior: &PriorModel, measurements: &[Measurement]) -> f64 {
    let informative: Vec<&Measurement> =
        measurements.iter().filter(|m| m.precision > 0.0).collect();
    let n = informative.len();
    if n == 0 {
        return 0.0;
    }
    let s2x = prior.variance();
    // C_yy = s2x * ones + diag(1/xi_i); solve C_yy w = y, mean = s2x * sum(w).
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (i, m) in informative.iter().enumerate() {
        for j in 0..n {
            a[i][j] = s2x;
        }
        a[i][i] += 1.0 / m.precision;
        a[i][n] = m.value;
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        a.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            for k in col..=n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    let mut w = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut rhs = a[row][n];
        for k in row + 1..n {
            rhs -= a[row][k] * w[k];
        }
        w[row] = rhs / a[row][row];
    }
    s2x * w.iter().sum::<f64>()
}

/// Exhaustive 0/1 cover: cheapest subset with total weight >= demand.
/// Subset sums build incrementally from the subset without the lowest bit.
pub fn enumerate_binary_cover(
    weights: &[f64],
    values: &[f64],
    demand: f64,
) -> Option<(f64, Vec<bool>)> {
    let n = weights.len();
    assert!(n <= 24, "enumeration is exponential; keep instances small");
    let size = 1usize << n;
    let mut subset_weight = vec![0.0f64; size];
    let mut subset_value = vec![0.0f64; size];
    let mut best: Option<(f64, usize)> = None;
    if 0.0 >= demand {
        best = Some((0.0, 0));
    }
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        subset_weight[mask] = subset_weight[rest] + weights[low];
        subset_value[mask] = subset_value[rest] + values[low];
        if subset_weight[mask] >= demand && best.map_or(true, |(bv, _)| subset_value[mask] < bv) {
            best = Some((subset_value[mask], mask));
        }
    }
    best.map(|(value, mask)| {
        let flags = (0..n).map(|i| mask >> i & 1 == 1).collect();
        (value, flags)
    })
}

/// Exhaustive bounded cover: cheapest integer count vector with total
/// precision >= demand.
pub fn enumerate_bounded_cover(
    unit_precisions: &[f64],
    unit_costs: &[f64],
    max_counts: &[u32],
    demand: f64,
) -> Option<(f64, Vec<u32>)> {
    let n = unit_precisions.len();
    let mut counts = vec![0u32; n];
    let mut best: Option<(f64, Vec<u32>)> = None;
    loop {
        let weight: f64 = counts
            .iter()
            .zip(unit_precisions)
            .map(|(&c, &w)| c as f64 * w)
            .sum();
        if weight >= demand {
            let cost: f64 = counts
                .iter()
                .zip(unit_costs)
                .map(|(&c, &k)| c as f64 * k)
                .sum();
            if best.as_ref().map_or(true, |(bc, _)| cost < *bc) {
                best = Some((cost, counts.clone()));
            }
        }
        // Odometer increment over 0..=max per agent.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if counts[i] < max_counts[i] {
                counts[i] += 1;
                break;
            }
            counts[i] = 0;
            i += 1;
        }
    }
}

/// Minimum of `sum_i phi_i c_i(xi_i)` over joint `(phi, xi)` choices on the
/// given effort grids, subject to `sum_i phi_i xi_i >= demand`.
pub fn enumerate_joint_allocation(
    models: &[EffortCostModel],
    grids: &[Vec<f64>],
    demand: f64,
) -> Option<f64> {
    let n = models.len();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; n];
    loop {
        for mask in 0u32..(1 << n) {
            let mut weight = 0.0;
            let mut cost = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    let xi = grids[i][idx[i]];
                    weight += xi;
                    cost += models[i].cost(xi).expect("grid point within range");
                }
            }
            if weight >= demand && best.map_or(true, |b| cost < b) {
                best = Some(cost);
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if idx[i] + 1 < grids[i].len() {
                idx[i] += 1;
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Minimum of `sum_i c_i(xi_i)` over effort grids with `sum_i xi_i >= demand`
/// (selection implicit: zero effort costs zero).
pub fn enumerate_effort_allocation(
    models: &[EffortCostModel],
    grids: &[Vec<f64>],
    demand: f64,
) -> Option<f64> {
    let n = models.len();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; n];
    loop {
        let mut weight = 0.0;
        let mut cost = 0.0;
        for i in 0..n {
            let xi = grids[i][idx[i]];
            weight += xi;
            cost += models[i].cost(xi).expect("grid point within range");
        }
        if weight >= demand && best.map_or(true, |b| cost < b) {
            best = Some(cost);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if idx[i] + 1 < grids[i].len() {
                idx[i] += 1;
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Continuous minimizer by pairwise mass transfers: keep `sum xi = demand`
/// tight and repeatedly ternary-search the transfer between each coordinate
/// pair. Converges on convex separable objectives; structurally unrelated to
/// the production projected-descent solver.
pub fn pairwise_transfer_minimize(
    models: &[EffortCostModel],
    demand: f64,
    sweeps: usize,
) -> Option<Vec<f64>> {
    let n = models.len();
    let caps: Vec<f64> = models.iter().map(|m| m.max_effort()).collect();
    let total_cap: f64 = caps.iter().sum();
    if demand > total_cap {
        return None;
    }
    if demand <= 0.0 {
        return Some(vec![0.0; n]);
    }
    // Feasible start: fill proportionally to caps.
    let mut x: Vec<f64> = caps.iter().map(|&u| demand * u / total_cap).collect();
    let pair_cost = |a: f64, i: usize, b: f64, j: usize| -> f64 {
        models[i].envelope_cost(a) + models[j].envelope_cost(b)
    };
    for _ in 0..sweeps {
        for i in 0..n {
            for j in i + 1..n {
                // Transfer t from j to i: xi+t in [0, cap_i], xj-t in [0, cap_j].
                let lo = (-x[i]).max(x[j] - caps[j]);
                let hi = (caps[i] - x[i]).min(x[j]);
                if hi - lo < 1e-15 {
                    continue;
                }
                let (mut a, mut b) = (lo, hi);
                for _ in 0..90 {
                    let m1 = a + (b - a) / 3.0;
                    let m2 = b - (b - a) / 3.0;
                    let c1 = pair_cost(x[i] + m1, i, x[j] - m1, j);
                    let c2 = pair_cost(x[i] + m2, i, x[j] - m2, j);
                    if c1 <= c2 {
                        b = m2;
                    } else {
                        a = m1;
                    }
                }
                let t = 0.5 * (a + b);
                if pair_cost(x[i] + t, i, x[j] - t, j) < pair_cost(x[i], i, x[j], j) {
                    x[i] += t;
                    x[j] -= t;
                }
            }
        }
    }
    Some(x)
}

/// Dense 2-D grid search for two-agent continuous problems.
pub fn grid_search_2d(
    models: &[EffortCostModel],
    demand: f64,
    points: usize,
) -> Option<(f64, (f64, f64))> {
    assert_eq!(models.len(), 2);
    let (u0, u1) = (models[0].max_effort(), models[1].max_effort());
    let mut best: Option<(f64, (f64, f64))> = None;
    for i in 0..=points {
        let a = u0 * i as f64 / points as f64;
        for j in 0..=points {
            let b = u1 * j as f64 / points as f64;
            if a + b >= demand {
                let cost = models[0].envelope_cost(a) + models[1].envelope_cost(b);
                if best.map_or(true, |(bc, _)| cost < bc) {
                    best = Some((cost, (a, b)));
                }
            }
        }
    }
    best
}

/// Monte Carlo estimate of `E[(xhat_i - y_j)^2]` by direct simulation.
pub fn expected_gap_monte_carlo(
    prior: &PriorModel,
    xi_i: f64,
    xi_j: f64,
    samples: u64,
    seed: u64,
) -> MonteCarloStats {
    let sigma_x = prior.variance().sqrt();
    let mut r = rng::substream(seed, &[0x6a9]);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let x: f64 = {
            let z: f64 = StandardNormal.sample(&mut r);
            z * sigma_x
        };
        let y_i = if xi_i > 0.0 {
            let z: f64 = StandardNormal.sample(&mut r);
            x + z / xi_i.sqrt()
        } else {
            x
        };
        let y_j = {
            let z: f64 = StandardNormal.sample(&mut r);
            x + z / xi_j.sqrt()
        };
        let xhat = xi_i / (prior.precision() + xi_i) * y_i;
        let gap = xhat - y_j;
        let v = gap * gap;
        sum += v;
        sumsq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let variance = ((sumsq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
    MonteCarloStats {
        mean,
        standard_error: (variance / n).sqrt(),
        trials: samples,
    }
}

/// Seeded random instances for the cross-check battery. Costs are dyadic
/// rationals (multiples of 1/1024) so that sums of them compare exactly
/// regardless of summation order.
pub mod instances {
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use crate::allocation::AllocationProblem;
    use crate::effort::EffortCostModel;
    use crate::estimation::PriorModel;

    fn dyadic(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let lo_units = (lo * 1024.0) as i64;
        let hi_units = (hi * 1024.0) as i64;
        rng.random_range(lo_units..=hi_units) as f64 / 1024.0
    }

    #[derive(Debug, Clone)]
    pub struct BinaryInstance {
        pub weights: Vec<f64>,
        pub values: Vec<f64>,
        pub demand: f64,
    }

    /// Random 0/1 cover instance with `2..=max_agents` agents and a feasible
    /// demand at a random fill fraction. Weight magnitudes keep the scaled
    /// DP axis around a million cells at the default fixed-point scale.
    pub fn binary(rng: &mut ChaCha8Rng, max_agents: usize) -> BinaryInstance {
        let n = rng.random_range(2..=max_agents);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.2)).collect();
        let values: Vec<f64> = (0..n).map(|_| dyadic(rng, 0.5, 10.0)).collect();
        let fill = rng.random_range(0.1..0.9);
        let demand = fill * weights.iter().sum::<f64>();
        BinaryInstance {
            weights,
            values,
            demand,
        }
    }

    /// Lift a binary instance into an allocation problem whose max efforts
    /// and max costs are exactly the instance's weights and values (two-point
    /// tabulated curves introduce no rounding).
    pub fn binary_problem(inst: &BinaryInstance) -> AllocationProblem {
        let prior = PriorModel::from_precision(0.5).unwrap();
        let costs: Vec<EffortCostModel> = inst
            .weights
            .iter()
            .zip(&inst.values)
            .map(|(&w, &v)| EffortCostModel::tabulated(&[(0.0, 0.0), (w, v)]).unwrap())
            .collect();
        let mse_target = 1.0 / (0.5 + inst.demand);
        AllocationProblem::new(prior, costs, mse_target).unwrap()
    }

    #[derive(Debug, Clone)]
    pub struct BoundedInstance {
        pub unit_precisions: Vec<f64>,
        pub unit_costs: Vec<f64>,
        pub max_counts: Vec<u32>,
        pub demand: f64,
    }

    /// Random bounded-count cover instance.
    pub fn bounded(rng: &mut ChaCha8Rng, max_agents: usize, max_count: u32) -> BoundedInstance {
        let n = rng.random_range(1..=max_agents);
        let unit_precisions: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let unit_costs: Vec<f64> = (0..n).map(|_| dyadic(rng, 0.5, 8.0)).collect();
        let max_counts: Vec<u32> = (0..n).map(|_| rng.random_range(1..=max_count)).collect();
        let supply: f64 = unit_precisions
            .iter()
            .zip(&max_counts)
            .map(|(&w, &m)| w * m as f64)
            .sum();
        let fill = rng.random_range(0.1..0.9);
        BoundedInstance {
            unit_precisions,
            unit_costs,
            max_counts,
            demand: fill * supply,
        }
    }

    pub fn bounded_problem(inst: &BoundedInstance) -> AllocationProblem {
        let prior = PriorModel::from_precision(0.5).unwrap();
        let costs: Vec<EffortCostModel> = inst
            .unit_precisions
            .iter()
            .zip(&inst.unit_costs)
            .zip(&inst.max_counts)
            .map(|((&w, &c), &m)| EffortCostModel::discrete_linear(1.0 / w, c, m).unwrap())
            .collect();
        let mse_target = 1.0 / (0.5 + inst.demand);
        AllocationProblem::new(prior, costs, mse_target).unwrap()
    }

    #[derive(Debug, Clone)]
    pub struct GriddedInstance {
        pub models: Vec<EffortCostModel>,
        pub grids: Vec<Vec<f64>>,
        pub demand: f64,
    }

    /// Random instance with per-agent effort grids (zero included), for the
    /// joint-versus-effort-only selection tie check.
    pub fn gridded(rng: &mut ChaCha8Rng, max_agents: usize, levels: usize) -> GriddedInstance {
        let n = rng.random_range(2..=max_agents);
        let mut models = Vec::with_capacity(n);
        let mut grids = Vec::with_capacity(n);
        for _ in 0..n {
            let cap = rng.random_range(0.5..2.0);
            let coeff = dyadic(rng, 0.5, 4.0);
            models.push(EffortCostModel::quadratic(coeff, cap).unwrap());
            grids.push(
                (0..levels)
                    .map(|k| cap * k as f64 / (levels - 1) as f64)
                    .collect(),
            );
        }
        let supply: f64 = models.iter().map(|m| m.max_effort()).sum();
        let fill = rng.random_range(0.1..0.8);
        GriddedInstance {
            models,
            grids,
            demand: fill * supply,
        }
    }
}
