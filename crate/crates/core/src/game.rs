//! Monte Carlo simulation of the induced game and falsification of the
//! equilibrium claims.
//!
//! Expected utilities are estimated over seeded trial substreams. Deviation
//! checks hold everyone else at the candidate profile and sweep one agent's
//! effort and report policy over a grid, replaying the identical world draws
//! in every cell. Gains are therefore paired differences against the
//! candidate cell, which keeps their standard errors small, and a deviation
//! only counts as profitable when its mean gain clears `z` standard errors.
//!
//! All accumulation happens in fixed-size trial blocks combined in index
//! order, so results are byte-identical no matter how many worker threads
//! run.

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::AllocationPlan;
use crate::effort::EffortCostModel;
use crate::estimation::PriorModel;
use crate::mechanism::{PaymentRule, Peer, ReportProfile};
use crate::rng;

const BLOCK: u64 = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("dominance verification requires a rule paired against an honest agent")]
    NoHonestAgent,
}

/// How an agent maps a privately observed value to the value it reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReportPolicy {
    Truthful,
    Affine { scale: f64, shift: f64 },
    Constant(f64),
}

impl ReportPolicy {
    pub fn apply(&self, value: f64) -> f64 {
        match *self {
            ReportPolicy::Truthful => value,
            ReportPolicy::Affine { scale, shift } => scale * value + shift,
            ReportPolicy::Constant(v) => v,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            ReportPolicy::Truthful => "truthful".into(),
            ReportPolicy::Affine { scale, shift } => format!("affine({scale};{shift})"),
            ReportPolicy::Constant(v) => format!("constant({v})"),
        }
    }
}

/// One agent's full strategy: hidden effort plus report policies for the
/// local estimate and the raw measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub effort: f64,
    pub estimate_policy: ReportPolicy,
    pub measurement_policy: ReportPolicy,
}

impl Strategy {
    pub fn truthful(effort: f64) -> Self {
        Self {
            effort,
            estimate_policy: ReportPolicy::Truthful,
            measurement_policy: ReportPolicy::Truthful,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    pub strategies: Vec<Strategy>,
}

impl StrategyProfile {
    /// The candidate equilibrium: everyone truthful at the planned efforts.
    pub fn equilibrium(plan: &AllocationPlan) -> Self {
        Self {
            strategies: plan
                .efforts
                .iter()
                .map(|&xi| Strategy::truthful(xi))
                .collect(),
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloStats {
    pub mean: f64,
    pub standard_error: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NoProfitableDeviation,
    ProfitableDeviationFound,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::NoProfitableDeviation => "no_profitable_deviation",
            Verdict::ProfitableDeviationFound => "profitable_deviation_found",
        }
    }
}

/// Outcome of the unilateral-deviation search for one agent.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub agent: usize,
    pub best_gain: f64,
    pub standard_error: f64,
    pub verdict: Verdict,
    pub best_effort: f64,
    pub best_policy: ReportPolicy,
}

/// Settings for the deviation search.
#[derive(Debug, Clone, Copy)]
pub struct DeviationOptions {
    /// Effort grid points per agent (discrete agents use their lattice).
    pub effort_points: usize,
    pub trials: u64,
    /// Gains above `z_threshold` standard errors count as profitable.
    pub z_threshold: f64,
    pub seed: u64,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        Self {
            effort_points: 41,
            trials: 200_000,
            z_threshold: 3.0,
            seed: 0x0dd5,
        }
    }
}

// (sum, sum of squares, count) accumulated per fixed-size block and combined
// in block order; the combination is independent of the thread schedule.
fn block_stats<F: Fn(u64) -> f64 + Sync>(trials: u64, f: F) -> MonteCarloStats {
    let n_blocks = trials.div_ceil(BLOCK);
    let partials: Vec<(f64, f64)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(trials);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for t in lo..hi {
                let v = f(t);
                sum += v;
                sumsq += v * v;
            }
            (sum, sumsq)
        })
        .collect();
    let (sum, sumsq) = partials
        .iter()
        .fold((0.0, 0.0), |(s, q), &(bs, bq)| (s + bs, q + bq));
    let n = trials as f64;
    let mean = sum / n;
    let variance = ((sumsq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
    MonteCarloStats {
        mean,
        standard_error: (variance / n).sqrt(),
        trials,
    }
}

fn measurement_value(x: f64, noise: f64, xi: f64) -> f64 {
    if xi > 0.0 {
        x + noise / xi.sqrt()
    } else {
        x
    }
}

fn local_mean(prior: &PriorModel, y: f64, xi: f64) -> f64 {
    xi / (prior.precision() + xi) * y
}

// Build every agent's reports for one trial under the profile.
fn reports_for_trial(
    prior: &PriorModel,
    profile: &StrategyProfile,
    rule: &PaymentRule,
    seed: u64,
    trial: u64,
) -> ReportProfile {
    let n = profile.strategies.len();
    let x = {
        let sigma_x = prior.variance().sqrt();
        rng::normal_draw(seed, &[trial, rng::TAG_WORLD]) * sigma_x
    };
    let mut estimates = Vec::with_capacity(n);
    let mut measurements = Vec::with_capacity(n);
    for (i, s) in profile.strategies.iter().enumerate() {
        let z = rng::normal_draw(seed, &[trial, rng::TAG_AGENT_BASE + i as u64]);
        let y = measurement_value(x, z, s.effort);
        estimates.push(s.estimate_policy.apply(local_mean(prior, y, s.effort)));
        measurements.push(s.measurement_policy.apply(y));
    }
    let honest_measurement = rule.honest.map(|h| {
        let z = rng::normal_draw(seed, &[trial, rng::TAG_HONEST]);
        measurement_value(x, z, h.precision)
    });
    ReportProfile {
        estimates,
        measurements,
        honest_measurement,
    }
}

/// Monte Carlo expected utility (payment minus effort cost) of one agent
/// under the full strategy profile.
pub fn expected_utility(
    profile: &StrategyProfile,
    rule: &PaymentRule,
    costs: &[EffortCostModel],
    prior: &PriorModel,
    agent: usize,
    trials: u64,
    seed: u64,
) -> MonteCarloStats {
    assert!(trials >= 1, "at least one trial required");
    let effort_cost = costs[agent].envelope_cost(profile.strategies[agent].effort);
    block_stats(trials, |t| {
        let reports = reports_for_trial(prior, profile, rule, seed, t);
        rule.payment(&reports, agent) - effort_cost
    })
}

/// Monte Carlo expected payment to one agent under the profile.
pub fn expected_payment(
    profile: &StrategyProfile,
    rule: &PaymentRule,
    prior: &PriorModel,
    agent: usize,
    trials: u64,
    seed: u64,
) -> MonteCarloStats {
    block_stats(trials, |t| {
        let reports = reports_for_trial(prior, profile, rule, seed, t);
        rule.payment(&reports, agent)
    })
}

// The effort grid an agent may deviate over: its lattice for discrete
// models (subsampled if huge), a uniform grid plus the candidate otherwise.
fn effort_grid(model: &EffortCostModel, candidate: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let mut grid = match model.effort_lattice() {
        Some(lattice) if lattice.len() <= points => lattice,
        Some(lattice) => {
            let stride = lattice.len().div_ceil(points);
            let mut g: Vec<f64> = lattice.iter().step_by(stride).cloned().collect();
            g.push(*lattice.last().unwrap());
            g.push(candidate);
            g
        }
        None => {
            let max = model.max_effort();
            let mut g: Vec<f64> = (0..points)
                .map(|k| max * k as f64 / (points - 1) as f64)
                .collect();
            g.push(candidate);
            g
        }
    };
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

fn deviation_policies() -> Vec<ReportPolicy> {
    let mut policies = Vec::with_capacity(10);
    for &scale in &[0.5, 1.0, 2.0] {
        for &shift in &[-1.0, 0.0, 1.0] {
            policies.push(ReportPolicy::Affine { scale, shift });
        }
    }
    policies.push(ReportPolicy::Constant(0.0));
    policies
}

// Cached per-trial draws for one agent's deviation sweep: the latent value,
// the agent's unit noise, and the peer's reported measurement (fixed because
// everyone else stays on the background profile).
struct SweepCache {
    latent: Vec<f64>,
    own_noise: Vec<f64>,
    anchor: Vec<f64>,
}

fn build_sweep_cache(
    prior: &PriorModel,
    background: &StrategyProfile,
    rule: &PaymentRule,
    agent: usize,
    trials: u64,
    seed: u64,
) -> SweepCache {
    let sigma_x = prior.variance().sqrt();
    let peer = rule.entries[agent].map(|t| t.peer);
    let n_blocks = trials.div_ceil(BLOCK);
    let rows: Vec<Vec<(f64, f64, f64)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(trials);
            (lo..hi)
                .map(|t| {
                    let x = rng::normal_draw(seed, &[t, rng::TAG_WORLD]) * sigma_x;
                    let z_own = rng::normal_draw(seed, &[t, rng::TAG_AGENT_BASE + agent as u64]);
                    let anchor = match peer {
                        None => 0.0,
                        Some(Peer::Honest) => {
                            let h = rule.honest.expect("honest peer without honest agent");
                            let z = rng::normal_draw(seed, &[t, rng::TAG_HONEST]);
                            measurement_value(x, z, h.precision)
                        }
                        Some(Peer::Agent(j)) => {
                            let s = &background.strategies[j];
                            let z = rng::normal_draw(seed, &[t, rng::TAG_AGENT_BASE + j as u64]);
                            s.measurement_policy
                                .apply(measurement_value(x, z, s.effort))
                        }
                    };
                    (x, z_own, anchor)
                })
                .collect()
        })
        .collect();
    let mut cache = SweepCache {
        latent: Vec::with_capacity(trials as usize),
        own_noise: Vec::with_capacity(trials as usize),
        anchor: Vec::with_capacity(trials as usize),
    };
    for row in rows {
        for (x, z, a) in row {
            cache.latent.push(x);
            cache.own_noise.push(z);
            cache.anchor.push(a);
        }
    }
    cache
}

// Per-trial utility of the deviating agent at (effort, policy), given cache.
#[inline]
fn cell_utility(
    prior: &PriorModel,
    rule_terms: Option<&crate::mechanism::PaymentTerms>,
    cost: f64,
    effort: f64,
    policy: ReportPolicy,
    x: f64,
    z: f64,
    anchor: f64,
) -> f64 {
    match rule_terms {
        None => -cost,
        Some(terms) => {
            let y = measurement_value(x, z, effort);
            let report = policy.apply(local_mean(prior, y, effort));
            let gap = report - anchor;
            terms.gamma - terms.beta * gap * gap - cost
        }
    }
}

fn sweep_agent(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    rule: &PaymentRule,
    candidate: &StrategyProfile,
    agent: usize,
    opts: &DeviationOptions,
) -> DeviationReport {
    let cache = build_sweep_cache(prior, candidate, rule, agent, opts.trials, opts.seed);
    let terms = rule.entries[agent].as_ref();
    let cand = &candidate.strategies[agent];
    let n = opts.trials as usize;

    // Baseline utilities at the candidate cell.
    let cand_cost = costs[agent].envelope_cost(cand.effort);
    let baseline: Vec<f64> = (0..n)
        .map(|t| {
            cell_utility(
                prior,
                terms,
                cand_cost,
                cand.effort,
                cand.estimate_policy,
                cache.latent[t],
                cache.own_noise[t],
                cache.anchor[t],
            )
        })
        .collect();

    let grid = effort_grid(&costs[agent], cand.effort, opts.effort_points);
    let policies = deviation_policies();
    let cells: Vec<(f64, ReportPolicy)> = grid
        .iter()
        .flat_map(|&e| policies.iter().map(move |&p| (e, p)))
        .collect();

    let stats: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(effort, policy)| {
            let cost = costs[agent].envelope_cost(effort);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for t in 0..n {
                let u = cell_utility(
                    prior,
                    terms,
                    cost,
                    effort,
                    policy,
                    cache.latent[t],
                    cache.own_noise[t],
                    cache.anchor[t],
                );
                let d = u - baseline[t];
                sum += d;
                sumsq += d * d;
            }
            let nf = n as f64;
            let mean = sum / nf;
            let var = ((sumsq - sum * sum / nf) / (nf - 1.0).max(1.0)).max(0.0);
            (mean, (var / nf).sqrt())
        })
        .collect();

    let mut best_idx = 0;
    for (idx, s) in stats.iter().enumerate() {
        if s.0 > stats[best_idx].0 {
            best_idx = idx;
        }
    }
    let (best_gain, standard_error) = stats[best_idx];
    let verdict = if best_gain <= opts.z_threshold * standard_error {
        Verdict::NoProfitableDeviation
    } else {
        Verdict::ProfitableDeviationFound
    };
    DeviationReport {
        agent,
        best_gain,
        standard_error,
        verdict,
        best_effort: cells[best_idx].0,
        best_policy: cells[best_idx].1,
    }
}

/// Unilateral-deviation search: for each agent in turn, hold the others at
/// the candidate profile and sweep effort and report policies, replaying
/// identical worlds in every cell.
pub fn verify_equilibrium(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    rule: &PaymentRule,
    candidate: &StrategyProfile,
    opts: &DeviationOptions,
) -> Vec<DeviationReport> {
    (0..candidate.strategies.len())
        .map(|agent| sweep_agent(prior, costs, rule, candidate, agent, opts))
        .collect()
}

/// Falsification-style dominance check: the candidate strategy must beat
/// every grid deviation against each adversarial opponent profile. Requires
/// honest-agent pairing, since only then is the claim made.
pub fn verify_dominance(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    rule: &PaymentRule,
    candidate: &StrategyProfile,
    adversarial: &[StrategyProfile],
    opts: &DeviationOptions,
) -> Result<Vec<bool>, GameError> {
    if rule.honest.is_none() {
        return Err(GameError::NoHonestAgent);
    }
    let n = candidate.strategies.len();
    let mut dominant = vec![true; n];
    for agent in 0..n {
        for opponents in adversarial {
            // The agent keeps its candidate strategy; everyone else follows
            // the adversarial profile.
            let mut background = opponents.clone();
            background.strategies[agent] = candidate.strategies[agent];
            let report = sweep_agent(prior, costs, rule, &background, agent, opts);
            if report.verdict == Verdict::ProfitableDeviationFound {
                dominant[agent] = false;
                break;
            }
        }
    }
    Ok(dominant)
}

/// Empirical MSE of the fused estimate when reports follow `profile` and the
/// estimator fuses selected agents' reports at the planned precisions.
pub fn realized_global_error(
    profile: &StrategyProfile,
    plan: &AllocationPlan,
    prior: &PriorModel,
    trials: u64,
    seed: u64,
) -> MonteCarloStats {
    let xi_x = prior.precision();
    let sigma_x = prior.variance().sqrt();
    block_stats(trials, |t| {
        let x = rng::normal_draw(seed, &[t, rng::TAG_WORLD]) * sigma_x;
        let mut precision = xi_x;
        let mut weighted = 0.0;
        for (i, s) in profile.strategies.iter().enumerate() {
            if !plan.selected[i] {
                continue;
            }
            let z = rng::normal_draw(seed, &[t, rng::TAG_AGENT_BASE + i as u64]);
            let y = measurement_value(x, z, s.effort);
            let report = s.estimate_policy.apply(local_mean(prior, y, s.effort));
            let planned_precision = xi_x + plan.efforts[i];
            precision += plan.efforts[i];
            weighted += planned_precision * report;
        }
        let fused = weighted / precision;
        let err = fused - x;
        err * err
    })
}
