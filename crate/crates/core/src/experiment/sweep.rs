//! Threshold sweeps: solve, calibrate, simulate, and verify per target MSE,
//! emitting sorted rows for the payment-vs-threshold curves.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::{
    solve, solve_binary_knapsack, AllocationError, AllocationPlan, AllocationProblem, Regime,
};
use crate::effort::EffortCostModel;
use crate::estimation::PriorModel;
use crate::game::{realized_global_error, verify_equilibrium, StrategyProfile, Verdict};
use crate::mechanism::{calibrate_max_effort, calibrate_target_effort, Pairing, PaymentRule};
use crate::rng;

use super::config::{ConfigError, ExperimentConfig};
use super::record::{RuleDump, RunRecord, SweepRow};

const TAG_ROW_MSE: u64 = 0x6d73_65;
const TAG_ROW_VERIFY: u64 = 0x7665_72;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("mechanism: {0}")]
    Mechanism(#[from] crate::mechanism::MechanismError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fixed-width scientific formatting (9 significant digits) for CSV cells,
/// byte-identical across platforms.
pub fn format_sig9(x: f64) -> String {
    format!("{:.8e}", x)
}

fn optional_cell(value: &Option<f64>) -> String {
    match value {
        Some(v) => format_sig9(*v),
        None => "na".into(),
    }
}

/// Run the configured sweep. Infeasible thresholds become `infeasible` rows
/// rather than errors; genuine configuration problems abort the run.
pub fn sweep(config: &ExperimentConfig) -> Result<RunRecord, ExperimentError> {
    config.validate()?;
    let prior = config.prior();
    let (costs, _clipped) = config.build_costs()?;
    let thresholds = config.thresholds();

    let results: Vec<Result<Vec<SweepRow>, ExperimentError>> = thresholds
        .par_iter()
        .enumerate()
        .map(|(row_index, &sigma_t)| {
            let mut rows = Vec::with_capacity(2);
            rows.push(compute_row(
                config,
                &prior,
                &costs,
                sigma_t,
                row_index,
                RowKind::Dispatch,
            )?);
            if config.run.compare_suboptimal {
                rows.push(compute_row(
                    config,
                    &prior,
                    &costs,
                    sigma_t,
                    row_index,
                    RowKind::ForcedBinary,
                )?);
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(RunRecord {
        config: config.clone(),
        rows,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    /// Regime chosen by the realizability dispatch.
    Dispatch,
    /// Max-effort binary selection regardless of realizability (the paired
    /// comparison curve).
    ForcedBinary,
}

fn compute_row(
    config: &ExperimentConfig,
    prior: &PriorModel,
    costs: &[EffortCostModel],
    sigma_t: f64,
    row_index: usize,
    kind: RowKind,
) -> Result<SweepRow, ExperimentError> {
    let problem = AllocationProblem::new(*prior, costs.to_vec(), sigma_t)?;
    let opts = config.solver_options();
    let solved = match kind {
        RowKind::Dispatch => solve(&problem, &opts),
        RowKind::ForcedBinary => {
            solve_binary_knapsack(&problem, &opts).map(|plan| crate::allocation::SolveOutcome {
                plan,
                regime: Regime::Suboptimal,
            })
        }
    };
    let outcome = match solved {
        Ok(outcome) => outcome,
        Err(AllocationError::Infeasible { .. }) => {
            return Ok(SweepRow {
                sigma_t,
                regime: "infeasible".into(),
                total_payment: None,
                selected: None,
                empirical_mse: None,
                verdict: "na".into(),
                rule: None,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let plan = &outcome.plan;

    let rule = calibrate_for(config, prior, costs, plan, outcome.regime);
    let kind_tag = match kind {
        RowKind::Dispatch => 0,
        RowKind::ForcedBinary => 1,
    };

    let empirical_mse = if config.run.simulate {
        let seed = rng::derive_seed(config.run.seed, &[TAG_ROW_MSE, row_index as u64, kind_tag]);
        let profile = StrategyProfile::equilibrium(plan);
        Some(realized_global_error(&profile, plan, prior, config.run.trials, seed).mean)
    } else {
        None
    };

    let verdict = if config.run.verify {
        match &rule {
            Some(rule) => {
                let seed = rng::derive_seed(
                    config.run.seed,
                    &[TAG_ROW_VERIFY, row_index as u64, kind_tag],
                );
                let profile = StrategyProfile::equilibrium(plan);
                let reports = verify_equilibrium(
                    prior,
                    costs,
                    rule,
                    &profile,
                    &config.deviation_options(seed),
                );
                if reports
                    .iter()
                    .all(|r| r.verdict == Verdict::NoProfitableDeviation)
                {
                    "ok".into()
                } else {
                    "deviation".into()
                }
            }
            None => "na".into(),
        }
    } else {
        "na".into()
    };

    Ok(SweepRow {
        sigma_t,
        regime: outcome.regime.as_str().into(),
        total_payment: Some(plan.total_cost),
        selected: Some(plan.selected_count()),
        empirical_mse,
        verdict,
        rule: rule.map(|r| RuleDump::from_rule(&r, plan)),
    })
}

// Calibration is skipped (not an error) when the plan pays nobody or pairing
// is impossible; the row then records payments without a rule dump.
fn calibrate_for(
    config: &ExperimentConfig,
    prior: &PriorModel,
    costs: &[EffortCostModel],
    plan: &AllocationPlan,
    regime: Regime,
) -> Option<PaymentRule> {
    if plan.selected_count() == 0 {
        return None;
    }
    let pairing = match config.honest_agent() {
        Some(honest) => Pairing::Honest(honest),
        None => Pairing::Cycle,
    };
    match regime {
        Regime::Optimal => calibrate_target_effort(prior, costs, plan, &pairing).ok(),
        Regime::Suboptimal => calibrate_max_effort(
            prior,
            costs,
            plan,
            &pairing,
            config.solver.slack,
            config.solver.realizability_grid,
        )
        .ok(),
    }
}

/// Write the sweep rows as CSV with the fixed header
/// `sigma_t,regime,total_payment,selected,empirical_mse,verdict`.
pub fn write_csv<W: Write>(record: &RunRecord, writer: &mut W) -> std::io::Result<()> {
    writeln!(
        writer,
        "sigma_t,regime,total_payment,selected,empirical_mse,verdict"
    )?;
    for row in &record.rows {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            format_sig9(row.sigma_t),
            row.regime,
            optional_cell(&row.total_payment),
            row.selected.map_or("na".into(), |s| s.to_string()),
            optional_cell(&row.empirical_mse),
            row.verdict,
        )?;
    }
    Ok(())
}

/// Render the CSV to a string (handy for byte-identity checks).
pub fn csv_string(record: &RunRecord) -> String {
    let mut buf = Vec::new();
    write_csv(record, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is UTF-8")
}
