use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use sensor_incentives::allocation::{solve, AllocationError, AllocationProblem};
use sensor_incentives::experiment::{
    csv_string, format_sig9, sweep, ConfigError, ExperimentConfig, ExperimentError, RuleDump,
};
use sensor_incentives::game::{
    expected_payment, expected_utility, realized_global_error, verify_dominance,
    verify_equilibrium, ReportPolicy, StrategyProfile, Verdict,
};
use sensor_incentives::mechanism::{
    calibrate_max_effort, calibrate_target_effort, MechanismError, Pairing,
};
use sensor_incentives::oracle;
use sensor_incentives::rng;
use sensor_incentives::Regime;

const EXIT_INFEASIBLE: i32 = 2;
const EXIT_CONFIG: i32 = 3;
const EXIT_VERIFICATION: i32 = 4;

#[derive(Parser)]
#[command(
    name = "sensor-incentives",
    about = "Payment-minimizing sensor selection and incentive mechanisms \
             for distributed Gaussian estimation",
    version
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (CSV or rule dump depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's Monte Carlo trial count.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker thread count (results are identical for any value).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one allocation problem and print the plan and payment.
    Solve {
        /// Target global MSE (defaults to the tightest configured threshold).
        #[arg(long)]
        sigma_t: Option<f64>,
    },
    /// Solve and calibrate, writing the payment-rule dump.
    Calibrate {
        #[arg(long)]
        sigma_t: Option<f64>,
    },
    /// Re-simulate a dumped payment rule: expected payments, utilities, MSE.
    Simulate {
        /// Payment-rule dump produced by `calibrate` (or a sweep record).
        #[arg(long)]
        rule: PathBuf,
    },
    /// Run the unilateral-deviation search against the calibrated rule.
    Verify {
        #[arg(long)]
        sigma_t: Option<f64>,
    },
    /// Run the configured threshold sweep and emit CSV rows.
    Sweep {
        /// Also persist the full run record (TOML) here.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Cross-check the solvers against brute-force oracles on small instances.
    Oracle,
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<AllocationError> for CliError {
    fn from(e: AllocationError) -> Self {
        let code = match e {
            AllocationError::Infeasible { .. } => EXIT_INFEASIBLE,
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Allocation(a) => a.into(),
            ExperimentError::Mechanism(m) => m.into(),
            ExperimentError::Io(io) => CliError::new(1, io.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(1, e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("thread pool is built once at startup");
    }
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    };
    std::process::exit(code);
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::new(EXIT_CONFIG, "--config <path> is required"))?;
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.run.trials = trials;
    }
    config.validate()?;
    Ok(config)
}

fn build_problem(
    config: &ExperimentConfig,
    sigma_t: Option<f64>,
) -> Result<AllocationProblem, CliError> {
    let sigma_t = sigma_t.unwrap_or_else(|| config.thresholds()[0]);
    let (costs, clipped) = config.build_costs()?;
    if clipped > 0 {
        eprintln!("note: {clipped} generated max costs clipped at the floor");
    }
    Ok(AllocationProblem::new(config.prior(), costs, sigma_t)?)
}

fn pairing_for(config: &ExperimentConfig) -> Pairing {
    match config.honest_agent() {
        Some(honest) => Pairing::Honest(honest),
        None => Pairing::Cycle,
    }
}

fn write_or_stdout(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Solve { sigma_t } => {
            let config = load_config(cli)?;
            let problem = build_problem(&config, *sigma_t)?;
            let outcome = solve(&problem, &config.solver_options())?;
            let plan = &outcome.plan;
            println!("regime: {}", outcome.regime.as_str());
            println!("total_payment: {}", format_sig9(plan.total_cost));
            println!("selected: {}", plan.selected_count());
            println!(
                "achieved_mse: {}",
                format_sig9(plan.achieved_mse(&problem.prior))
            );
            if outcome.regime == Regime::Suboptimal {
                // Fixed-point rounding can only miss selections this close to
                // the precision boundary.
                let slack = sensor_incentives::allocation::binary_quantization_slack(
                    &problem,
                    &config.solver_options(),
                );
                println!("quantization_slack: {}", format_sig9(slack));
            }
            println!("agent,selected,effort,cost");
            for i in 0..plan.efforts.len() {
                let cost = problem.costs[i]
                    .cost(plan.efforts[i])
                    .map_err(|e| CliError::new(1, e.to_string()))?;
                println!(
                    "{},{},{},{}",
                    i,
                    u8::from(plan.selected[i]),
                    format_sig9(plan.efforts[i]),
                    format_sig9(cost)
                );
            }
            Ok(0)
        }
        Command::Calibrate { sigma_t } => {
            let config = load_config(cli)?;
            let problem = build_problem(&config, *sigma_t)?;
            let outcome = solve(&problem, &config.solver_options())?;
            let pairing = pairing_for(&config);
            let rule = match outcome.regime {
                Regime::Optimal => calibrate_target_effort(
                    &problem.prior,
                    &problem.costs,
                    &outcome.plan,
                    &pairing,
                )?,
                Regime::Suboptimal => calibrate_max_effort(
                    &problem.prior,
                    &problem.costs,
                    &outcome.plan,
                    &pairing,
                    config.solver.slack,
                    config.solver.realizability_grid,
                )?,
            };
            let dump = RuleDump::from_rule(&rule, &outcome.plan);
            write_or_stdout(&cli.out, &dump.to_toml())?;
            Ok(0)
        }
        Command::Simulate { rule } => {
            let config = load_config(cli)?;
            let (costs, _) = config.build_costs()?;
            let dump = RuleDump::from_toml(&fs::read_to_string(rule)?)?;
            let (rule, mut plan) = dump.to_parts()?;
            if rule.n_agents() != costs.len() {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!(
                        "rule covers {} agents but the config builds {}",
                        rule.n_agents(),
                        costs.len()
                    ),
                ));
            }
            plan.total_cost = plan
                .efforts
                .iter()
                .zip(&costs)
                .map(|(&xi, m)| m.envelope_cost(xi))
                .sum();
            let prior = config.prior();
            let profile = StrategyProfile::equilibrium(&plan);
            let trials = config.run.trials;
            println!("agent,expected_payment,payment_se,effort_cost,expected_utility,utility_se");
            for agent in 0..rule.n_agents() {
                if !rule.selected(agent) {
                    continue;
                }
                let seed = rng::derive_seed(config.run.seed, &[0x51b, agent as u64]);
                let pay = expected_payment(&profile, &rule, &prior, agent, trials, seed);
                let util = expected_utility(&profile, &rule, &costs, &prior, agent, trials, seed);
                let cost = costs[agent].envelope_cost(plan.efforts[agent]);
                println!(
                    "{},{},{},{},{},{}",
                    agent,
                    format_sig9(pay.mean),
                    format_sig9(pay.standard_error),
                    format_sig9(cost),
                    format_sig9(util.mean),
                    format_sig9(util.standard_error)
                );
            }
            let mse_seed = rng::derive_seed(config.run.seed, &[0x51b, u64::MAX]);
            let mse = realized_global_error(&profile, &plan, &prior, trials, mse_seed);
            println!(
                "empirical_mse,{},se,{}",
                format_sig9(mse.mean),
                format_sig9(mse.standard_error)
            );
            Ok(0)
        }
        Command::Verify { sigma_t } => {
            let config = load_config(cli)?;
            let problem = build_problem(&config, *sigma_t)?;
            let outcome = solve(&problem, &config.solver_options())?;
            let pairing = pairing_for(&config);
            let rule = match outcome.regime {
                Regime::Optimal => calibrate_target_effort(
                    &problem.prior,
                    &problem.costs,
                    &outcome.plan,
                    &pairing,
                )?,
                Regime::Suboptimal => calibrate_max_effort(
                    &problem.prior,
                    &problem.costs,
                    &outcome.plan,
                    &pairing,
                    config.solver.slack,
                    config.solver.realizability_grid,
                )?,
            };
            let profile = StrategyProfile::equilibrium(&outcome.plan);
            let seed = rng::derive_seed(config.run.seed, &[0xf1ed]);
            let reports = verify_equilibrium(
                &problem.prior,
                &problem.costs,
                &rule,
                &profile,
                &config.deviation_options(seed),
            );
            let mut csv =
                String::from("agent,best_gain,standard_error,verdict,best_effort,best_policy\n");
            let mut failed = false;
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.agent,
                    format_sig9(r.best_gain),
                    format_sig9(r.standard_error),
                    r.verdict.as_str(),
                    format_sig9(r.best_effort),
                    r.best_policy.describe()
                ));
                if r.verdict == Verdict::ProfitableDeviationFound {
                    failed = true;
                }
                eprintln!(
                    "agent {}: {} (best gain {:.3e} +- {:.3e})",
                    r.agent,
                    r.verdict.as_str(),
                    r.best_gain,
                    r.standard_error
                );
            }
            // With an honest anchor the equilibrium claim strengthens to
            // dominance; check it against a small adversarial battery.
            if config.honest_agent().is_some() {
                let mut hostile_reports = profile.clone();
                for s in &mut hostile_reports.strategies {
                    s.estimate_policy = ReportPolicy::Constant(0.0);
                    s.measurement_policy = ReportPolicy::Constant(0.0);
                }
                let mut hostile_idle = profile.clone();
                for s in &mut hostile_idle.strategies {
                    s.effort = 0.0;
                    s.measurement_policy = ReportPolicy::Affine {
                        scale: 2.0,
                        shift: 1.0,
                    };
                }
                let battery = vec![profile.clone(), hostile_reports, hostile_idle];
                let dominant = verify_dominance(
                    &problem.prior,
                    &problem.costs,
                    &rule,
                    &profile,
                    &battery,
                    &config.deviation_options(rng::derive_seed(config.run.seed, &[0xd0a])),
                )
                .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
                for (agent, ok) in dominant.iter().enumerate() {
                    csv.push_str(&format!(
                        "{agent},na,na,{},na,na\n",
                        if *ok { "dominant" } else { "dominated" }
                    ));
                    eprintln!(
                        "agent {agent}: {}",
                        if *ok {
                            "dominant against battery"
                        } else {
                            "dominated in battery"
                        }
                    );
                    if !*ok {
                        failed = true;
                    }
                }
            }
            if let Some(path) = &cli.out {
                fs::write(path, csv)?;
            }
            Ok(if failed { EXIT_VERIFICATION } else { 0 })
        }
        Command::Sweep { record } => {
            let config = load_config(cli)?;
            let (_, clipped) = config.build_costs()?;
            if clipped > 0 {
                eprintln!("note: {clipped} generated max costs clipped at the floor");
            }
            let run_record = sweep(&config)?;
            let csv = csv_string(&run_record);
            let out = cli
                .out
                .clone()
                .or_else(|| config.run.output.as_ref().map(PathBuf::from));
            write_or_stdout(&out, &csv)?;
            if let Some(path) = record {
                fs::write(path, run_record.to_toml())?;
            }
            Ok(0)
        }
        Command::Oracle => {
            let seed = cli.seed.unwrap_or(0xacce55);
            Ok(run_oracle_battery(seed)?)
        }
    }
}

// The `oracle` subcommand: brute-force cross-checks on seeded small
// instances, one PASS/FAIL line each.
fn run_oracle_battery(seed: u64) -> Result<i32, CliError> {
    use sensor_incentives::allocation::{
        solve_binary_knapsack, solve_bounded_knapsack, solve_quadratic, SolverOptions,
    };
    use sensor_incentives::estimation::{fuse, local_estimate, sample_world, PriorModel};
    use sensor_incentives::mechanism::expected_peer_gap;

    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {detail}");
        all_ok &= ok;
    };
    let opts = SolverOptions::default();

    // Binary knapsack DP vs exhaustive enumeration.
    {
        let mut rng = rng::substream(seed, &[1]);
        let mut mismatches = 0;
        let runs = 40;
        for _ in 0..runs {
            let inst = oracle::instances::binary(&mut rng, 12);
            let problem = oracle::instances::binary_problem(&inst);
            let plan = solve_binary_knapsack(&problem, &opts).map_err(CliError::from)?;
            let (oracle_cost, _) =
                oracle::enumerate_binary_cover(&inst.weights, &inst.values, inst.demand)
                    .expect("instances are feasible");
            if plan.total_cost != oracle_cost {
                mismatches += 1;
            }
        }
        check(
            "binary knapsack vs enumeration",
            mismatches == 0,
            format!("{runs} instances, {mismatches} mismatches"),
        );
    }

    // Bounded knapsack DP vs exhaustive enumeration.
    {
        let mut rng = rng::substream(seed, &[2]);
        let mut mismatches = 0;
        let runs = 25;
        for _ in 0..runs {
            let inst = oracle::instances::bounded(&mut rng, 4, 4);
            let problem = oracle::instances::bounded_problem(&inst);
            let plan = solve_bounded_knapsack(&problem, &opts).map_err(CliError::from)?;
            let (oracle_cost, _) = oracle::enumerate_bounded_cover(
                &inst.unit_precisions,
                &inst.unit_costs,
                &inst.max_counts,
                inst.demand,
            )
            .expect("instances are feasible");
            if plan.total_cost != oracle_cost {
                mismatches += 1;
            }
        }
        check(
            "bounded knapsack vs enumeration",
            mismatches == 0,
            format!("{runs} instances, {mismatches} mismatches"),
        );
    }

    // Joint (selection, effort) brute force vs effort-only brute force.
    {
        let mut rng = rng::substream(seed, &[3]);
        let mut mismatches = 0;
        let runs = 25;
        for _ in 0..runs {
            let inst = oracle::instances::gridded(&mut rng, 4, 5);
            let joint = oracle::enumerate_joint_allocation(&inst.models, &inst.grids, inst.demand);
            let effort_only =
                oracle::enumerate_effort_allocation(&inst.models, &inst.grids, inst.demand);
            if joint != effort_only {
                mismatches += 1;
            }
        }
        check(
            "joint vs effort-only selection",
            mismatches == 0,
            format!("{runs} instances, {mismatches} mismatches"),
        );
    }

    // Quadratic closed form vs pairwise-transfer minimizer.
    {
        let mut rng = rng::substream(seed, &[4]);
        let mut worst: f64 = 0.0;
        for _ in 0..4 {
            use rand::Rng;
            let n = rng.random_range(3..=8);
            let caps: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let costs: Vec<_> = caps
                .iter()
                .map(|&u| sensor_incentives::EffortCostModel::quadratic(1.0, u).unwrap())
                .collect();
            let demand = 0.6 * caps.iter().sum::<f64>();
            let prior = PriorModel::from_precision(0.5).unwrap();
            let problem = AllocationProblem::new(prior, costs.clone(), 1.0 / (0.5 + demand))
                .map_err(CliError::from)?;
            let plan = solve_quadratic(&problem).map_err(CliError::from)?;
            let x = oracle::pairwise_transfer_minimize(&costs, demand, 80).unwrap();
            let oracle_cost: f64 = x
                .iter()
                .zip(&costs)
                .map(|(&xi, m)| m.envelope_cost(xi))
                .sum();
            worst = worst.max((plan.total_cost - oracle_cost).abs() / oracle_cost);
        }
        check(
            "quadratic closed form vs transfer oracle",
            worst < 1e-6,
            format!("worst relative gap {worst:.3e}"),
        );
    }

    // Fusion vs the exact joint-Gaussian conditional mean.
    {
        let mut rng = rng::substream(seed, &[5]);
        let mut worst: f64 = 0.0;
        for case in 0..20u64 {
            use rand::Rng;
            let xi_x = rng.random_range(0.01..2.0);
            let prior = PriorModel::from_precision(xi_x).unwrap();
            let n = rng.random_range(1..=3);
            let efforts: Vec<f64> = (0..n)
                .map(|i| {
                    if i == 0 && n > 1 {
                        0.0
                    } else {
                        rng.random_range(0.1..3.0)
                    }
                })
                .collect();
            let world = sample_world(&prior, &efforts, rng::derive_seed(seed, &[6, case]));
            let locals: Vec<_> = world
                .measurements
                .iter()
                .map(|m| local_estimate(&prior, m).unwrap())
                .collect();
            let fused = fuse(&prior, &locals).unwrap();
            let exact = oracle::exact_mmse_mean(&prior, &world.measurements);
            let scale = exact.abs().max(1e-9);
            worst = worst.max((fused.mean - exact).abs() / scale);
        }
        check(
            "fusion vs exact conditional mean",
            worst < 1e-10,
            format!("worst relative gap {worst:.3e}"),
        );
    }

    // Expected peer gap formula vs Monte Carlo.
    {
        let mut rng = rng::substream(seed, &[7]);
        let mut ok = true;
        for case in 0..5u64 {
            use rand::Rng;
            let xi_x = rng.random_range(0.01..2.0);
            let xi_i = rng.random_range(0.0..3.0);
            let xi_j = rng.random_range(0.1..3.0);
            let prior = PriorModel::from_precision(xi_x).unwrap();
            let formula = expected_peer_gap(&prior, xi_i, xi_j).map_err(CliError::from)?;
            let mc = oracle::expected_gap_monte_carlo(
                &prior,
                xi_i,
                xi_j,
                200_000,
                rng::derive_seed(seed, &[8, case]),
            );
            if (formula - mc.mean).abs() > 3.0 * mc.standard_error {
                ok = false;
            }
        }
        check(
            "peer gap formula vs Monte Carlo",
            ok,
            "5 random triples".into(),
        );
    }

    std::io::stdout().flush().ok();
    Ok(if all_ok { 0 } else { EXIT_VERIFICATION })
}
