//! Shared randomized setups for the integration suites.

use rand::Rng;

use sensor_incentives::allocation::{
    solve_binary_knapsack, solve_bounded_knapsack, solve_quadratic, AllocationPlan,
    AllocationProblem, SolverOptions,
};
use sensor_incentives::effort::EffortCostModel;
use sensor_incentives::estimation::PriorModel;
use sensor_incentives::rng;

pub fn prior(xi_x: f64) -> PriorModel {
    PriorModel::from_precision(xi_x).unwrap()
}

/// A mechanism test setup: prior, fleet, and a plan with >= 2 selected agents.
pub struct Setup {
    pub prior: PriorModel,
    pub costs: Vec<EffortCostModel>,
    pub plan: AllocationPlan,
}

/// Common-coefficient quadratic fleet, prior precision log-uniform in
/// [1e-3, 1], feasible demand at a random fill fraction.
pub fn random_quadratic_setup(seed: u64) -> Setup {
    let mut r = rng::substream(seed, &[0x9a4d]);
    let xi_x = 10f64.powf(r.random_range(-3.0..0.0));
    let n = r.random_range(2..=4);
    let coeff = r.random_range(0.5..3.0);
    let costs: Vec<EffortCostModel> = (0..n)
        .map(|_| EffortCostModel::quadratic(coeff, r.random_range(0.5..2.0)).unwrap())
        .collect();
    let supply: f64 = costs.iter().map(|c| c.max_effort()).sum();
    let demand = r.random_range(0.3..0.8) * supply;
    let problem =
        AllocationProblem::new(prior(xi_x), costs.clone(), 1.0 / (xi_x + demand)).unwrap();
    let plan = solve_quadratic(&problem).unwrap();
    Setup {
        prior: problem.prior,
        costs,
        plan,
    }
}

/// Discrete measurement-count fleet solved by the exact bounded knapsack.
pub fn random_discrete_setup(seed: u64) -> Setup {
    let mut attempt = 0u64;
    loop {
        let mut r = rng::substream(seed, &[0xd15c, attempt]);
        let xi_x = r.random_range(0.001..0.05);
        let n = r.random_range(2..=4);
        let costs: Vec<EffortCostModel> = (0..n)
            .map(|_| {
                EffortCostModel::discrete_linear(
                    r.random_range(20.0..200.0),
                    r.random_range(0.5..4.0),
                    r.random_range(2..=5),
                )
                .unwrap()
            })
            .collect();
        let supply: f64 = costs.iter().map(|c| c.max_effort()).sum();
        let demand = r.random_range(0.3..0.8) * supply;
        let problem =
            AllocationProblem::new(prior(xi_x), costs.clone(), 1.0 / (xi_x + demand)).unwrap();
        let plan = solve_bounded_knapsack(&problem, &SolverOptions::default()).unwrap();
        if plan.selected_count() >= 2 {
            return Setup {
                prior: problem.prior,
                costs,
                plan,
            };
        }
        attempt += 1;
    }
}

/// Concave (square-root shaped) tabulated fleet that fails the curvature
/// condition at high prior precision; plan from the binary fallback.
pub fn concave_fallback_setup(seed: u64) -> Setup {
    let mut attempt = 0u64;
    loop {
        let mut r = rng::substream(seed, &[0xc0c4, attempt]);
        let xi_x = r.random_range(5.0..20.0);
        let n = r.random_range(2..=4);
        let costs: Vec<EffortCostModel> = (0..n)
            .map(|_| {
                let cap = r.random_range(0.6..1.4);
                let max_cost = r.random_range(1.0..3.0);
                let power = r.random_range(0.35..0.65);
                let points: Vec<(f64, f64)> = (0..=400)
                    .map(|j| {
                        let xi = cap * j as f64 / 400.0;
                        (xi, max_cost * (xi / cap).powf(power))
                    })
                    .collect();
                EffortCostModel::tabulated(&points).unwrap()
            })
            .collect();
        assert!(
            costs.iter().any(|c| !c.realizability(xi_x, 2_000).holds),
            "setup must fail the curvature condition"
        );
        let supply: f64 = costs.iter().map(|c| c.max_effort()).sum();
        let demand = r.random_range(0.4..0.8) * supply;
        let problem =
            AllocationProblem::new(prior(xi_x), costs.clone(), 1.0 / (xi_x + demand)).unwrap();
        let plan = solve_binary_knapsack(&problem, &SolverOptions::default()).unwrap();
        if plan.selected_count() >= 2 {
            return Setup {
                prior: problem.prior,
                costs,
                plan,
            };
        }
        attempt += 1;
    }
}
