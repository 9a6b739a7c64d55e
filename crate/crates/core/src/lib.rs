//! Incentive mechanisms for distributed Gaussian estimation with strategic
//! sensors.
//!
//! An estimator wants a scalar value measured to a target accuracy by agents
//! who choose how much measurement effort to exert and may misreport what
//! they saw. The crate covers the full loop:
//!
//! * [`estimation`]: local MMSE estimates and precision-weighted fusion;
//! * [`effort`]: effort-cost curves and the curvature condition separating
//!   the two payment regimes;
//! * [`allocation`]: minimum-payment selection and effort targets (closed
//!   form, exact knapsack DP, projected descent);
//! * [`mechanism`]: peer-anchored quadratic payment rules calibrated so the
//!   planned behavior is an equilibrium with expected payment equal to cost;
//! * [`game`]: Monte Carlo utilities and unilateral-deviation falsification
//!   of the equilibrium claims;
//! * [`experiment`]: population generation, threshold sweeps, CSV/record
//!   output, and the configuration format behind the CLI;
//! * [`oracle`]: independent brute-force cross-checks for small instances.

pub mod allocation;
pub mod effort;
pub mod estimation;
pub mod experiment;
pub mod game;
pub mod mechanism;
pub mod oracle;
pub mod rng;

pub use allocation::{
    plan_from_efforts, solve, solve_binary_knapsack, solve_bounded_knapsack, solve_descent,
    solve_quadratic, AllocationError, AllocationPlan, AllocationProblem, Regime, SolveOutcome,
    SolverOptions,
};
pub use effort::{CostKind, EffortCostModel, EffortError, RealizabilityReport};
pub use estimation::{
    fuse, local_estimate, sample_world, EstimationError, GlobalEstimate, LocalEstimate,
    Measurement, PriorModel, World,
};
pub use game::{
    expected_payment, expected_utility, realized_global_error, verify_dominance,
    verify_equilibrium, DeviationOptions, DeviationReport, MonteCarloStats, ReportPolicy, Strategy,
    StrategyProfile, Verdict,
};
pub use mechanism::{
    calibrate_max_effort, calibrate_target_effort, expected_peer_gap, HonestAgent, MechanismError,
    Pairing, PaymentRule, PaymentTerms, Peer, ReportProfile,
};
