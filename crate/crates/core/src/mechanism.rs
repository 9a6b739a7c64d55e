//! Payment rules that make the planned behavior a Nash equilibrium.
//!
//! Each selected agent is paid against a peer's reported raw measurement:
//!
//! ```text
//! p_i = gamma_i - beta_i * (reported estimate_i - reported measurement_j)^2
//! ```
//!
//! Two calibrations exist. The target-effort rule sets `beta_i` from the cost
//! derivative at the planned effort, which places the agent's best response
//! exactly at that effort, and `gamma_i` so the expected payment equals the
//! effort cost (expected utility zero). The max-effort fallback inflates
//! `beta_i` above the derivative bound over the whole effort range, so utility
//! strictly increases in effort and the agent runs at its cap.
//!
//! Payments can go negative for outlier reports; no floor is applied, because
//! a floor would break the expected-payment identities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationPlan, Regime};
use crate::effort::EffortCostModel;
use crate::estimation::PriorModel;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("pairing needs at least two selected agents or an honest agent")]
    NotEnoughPeers,
    #[error("agent {0} is paired with a zero-effort peer")]
    ZeroEffortPeer(usize),
    #[error("peer precision must be positive for a finite expected gap")]
    InfiniteGap,
    #[error("calibration requires {0}")]
    Invalid(String),
}

/// Which reported measurement anchors an agent's quadratic penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Peer {
    Agent(usize),
    Honest,
}

/// Per-agent payment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentTerms {
    pub beta: f64,
    pub gamma: f64,
    pub peer: Peer,
}

/// A non-strategic participant with known measurement precision. Its
/// truthful report can anchor every strategic agent's penalty, which turns
/// the Nash equilibrium into a dominant-strategy one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HonestAgent {
    pub precision: f64,
}

/// How selected agents are matched to the peers that anchor their penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pairing {
    /// Each selected agent's peer is the next selected index, wrapping.
    Cycle,
    /// Every agent is scored against the honest agent's report.
    Honest(HonestAgent),
}

/// Calibrated payment rule: entries for selected agents, `None` elsewhere
/// (unselected agents are paid exactly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentRule {
    pub regime: Regime,
    pub entries: Vec<Option<PaymentTerms>>,
    pub honest: Option<HonestAgent>,
}

/// All agents' submitted reports for one realized world.
#[derive(Debug, Clone)]
pub struct ReportProfile {
    pub estimates: Vec<f64>,
    pub measurements: Vec<f64>,
    pub honest_measurement: Option<f64>,
}

impl PaymentRule {
    pub fn n_agents(&self) -> usize {
        self.entries.len()
    }

    pub fn selected(&self, agent: usize) -> bool {
        self.entries[agent].is_some()
    }

    /// Payment to `agent` under the submitted reports.
    pub fn payment(&self, reports: &ReportProfile, agent: usize) -> f64 {
        match &self.entries[agent] {
            None => 0.0,
            Some(terms) => {
                let anchor = match terms.peer {
                    Peer::Agent(j) => reports.measurements[j],
                    Peer::Honest => reports
                        .honest_measurement
                        .expect("rule pairs against an honest agent but no honest report given"),
                };
                let gap = reports.estimates[agent] - anchor;
                terms.gamma - terms.beta * gap * gap
            }
        }
    }
}

fn cycle_peers(selected: &[bool]) -> Vec<Option<usize>> {
    let chosen: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i)
        .collect();
    let mut peers = vec![None; selected.len()];
    for (pos, &i) in chosen.iter().enumerate() {
        peers[i] = Some(chosen[(pos + 1) % chosen.len()]);
    }
    peers
}

fn peer_assignment(
    plan: &AllocationPlan,
    pairing: &Pairing,
) -> Result<(Vec<Option<Peer>>, Option<HonestAgent>), MechanismError> {
    match pairing {
        Pairing::Honest(honest) => {
            if !(honest.precision > 0.0) {
                return Err(MechanismError::Invalid(
                    "honest agent precision must be positive".into(),
                ));
            }
            let peers = plan
                .selected
                .iter()
                .map(|&s| if s { Some(Peer::Honest) } else { None })
                .collect();
            Ok((peers, Some(*honest)))
        }
        Pairing::Cycle => {
            if plan.selected_count() < 2 {
                return Err(MechanismError::NotEnoughPeers);
            }
            let peers = cycle_peers(&plan.selected)
                .into_iter()
                .map(|p| p.map(Peer::Agent))
                .collect();
            Ok((peers, None))
        }
    }
}

// Precision of the peer's planned report: the paired agent's target effort,
// or the honest agent's known precision.
fn peer_precision(
    peer: Peer,
    plan: &AllocationPlan,
    honest: Option<&HonestAgent>,
    agent: usize,
) -> Result<f64, MechanismError> {
    match peer {
        Peer::Honest => Ok(honest.expect("honest peer without honest agent").precision),
        Peer::Agent(j) => {
            let xi_j = plan.efforts[j];
            if xi_j <= 0.0 {
                return Err(MechanismError::ZeroEffortPeer(agent));
            }
            Ok(xi_j)
        }
    }
}

/// Calibrate the target-effort rule for a realizable fleet: the planned
/// efforts plus truthful reporting become a Nash equilibrium, and each
/// selected agent's expected payment equals its effort cost.
pub fn calibrate_target_effort(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    plan: &AllocationPlan,
    pairing: &Pairing,
) -> Result<PaymentRule, MechanismError> {
    build_rule(
        prior,
        costs,
        plan,
        pairing,
        Regime::Optimal,
        |model, xi_target, _| {
            let t = prior.precision() + xi_target;
            model.derivative(xi_target) * t * t
        },
    )
}

/// Calibrate the max-effort fallback rule: `beta` exceeds the derivative
/// bound over the whole effort range by the `slack` factor, so every selected
/// agent strictly prefers maximum effort.
pub fn calibrate_max_effort(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    plan: &AllocationPlan,
    pairing: &Pairing,
    slack: f64,
    grid_points: usize,
) -> Result<PaymentRule, MechanismError> {
    if !(slack > 1.0) {
        return Err(MechanismError::Invalid(format!(
            "slack multiplier must exceed 1, got {slack}"
        )));
    }
    for (i, (&s, model)) in plan.selected.iter().zip(costs).enumerate() {
        if s && plan.efforts[i] != model.max_effort() {
            return Err(MechanismError::Invalid(format!(
                "max-effort calibration expects selected agents at their caps; \
                 agent {i} targets {} of {}",
                plan.efforts[i],
                model.max_effort()
            )));
        }
    }
    build_rule(
        prior,
        costs,
        plan,
        pairing,
        Regime::Suboptimal,
        |model, _, _| slack * model.derivative_bound(prior.precision(), grid_points),
    )
}

fn build_rule(
    prior: &PriorModel,
    costs: &[EffortCostModel],
    plan: &AllocationPlan,
    pairing: &Pairing,
    regime: Regime,
    beta_of: impl Fn(&EffortCostModel, f64, usize) -> f64,
) -> Result<PaymentRule, MechanismError> {
    assert_eq!(
        costs.len(),
        plan.selected.len(),
        "plan/cost length mismatch"
    );
    let (peers, honest) = peer_assignment(plan, pairing)?;
    let xi_x = prior.precision();
    let mut entries = Vec::with_capacity(costs.len());
    for (i, model) in costs.iter().enumerate() {
        let Some(peer) = peers[i] else {
            entries.push(None);
            continue;
        };
        let xi_target = plan.efforts[i];
        let xi_peer = peer_precision(peer, plan, honest.as_ref(), i)?;
        let beta = beta_of(model, xi_target, i);
        if !(beta > 0.0) {
            return Err(MechanismError::Invalid(format!(
                "agent {i} calibrated a non-positive beta ({beta}); \
                 cost derivative must be positive at the target"
            )));
        }
        let cost_at_target = model
            .cost(xi_target)
            .map_err(|e| MechanismError::Invalid(format!("agent {i}: {e}")))?;
        let gamma = beta * (1.0 / (xi_x + xi_target) + 1.0 / xi_peer) + cost_at_target;
        entries.push(Some(PaymentTerms { beta, gamma, peer }));
    }
    Ok(PaymentRule {
        regime,
        entries,
        honest,
    })
}

/// Closed-form expected squared gap between agent `i`'s local estimate at
/// effort `xi_i` and a peer's raw measurement at effort `xi_j`:
/// `1/(xi_i + xi_x) + 1/xi_j`.
pub fn expected_peer_gap(prior: &PriorModel, xi_i: f64, xi_j: f64) -> Result<f64, MechanismError> {
    if xi_j <= 0.0 {
        return Err(MechanismError::InfiniteGap);
    }
    if xi_i < 0.0 {
        return Err(MechanismError::Invalid(format!(
            "own effort must be non-negative, got {xi_i}"
        )));
    }
    Ok(1.0 / (xi_i + prior.precision()) + 1.0 / xi_j)
}

/// Expected utility of a selected agent at effort `xi`, holding its peer at
/// the rule's planned precision and reporting truthfully.
pub fn expected_utility_closed_form(
    prior: &PriorModel,
    terms: &PaymentTerms,
    model: &EffortCostModel,
    xi: f64,
    xi_peer: f64,
) -> f64 {
    let gap = 1.0 / (xi + prior.precision()) + 1.0 / xi_peer;
    terms.gamma - terms.beta * gap - model.envelope_cost(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::AllocationPlan;

    fn prior(xi_x: f64) -> PriorModel {
        PriorModel::from_precision(xi_x).unwrap()
    }

    fn plan(selected: Vec<bool>, efforts: Vec<f64>, total_cost: f64) -> AllocationPlan {
        AllocationPlan {
            selected,
            efforts,
            total_cost,
        }
    }

    #[test]
    fn target_effort_calibration_matches_hand_computation() {
        // Quadratic cost l = 1, xi_x = 1, both targets 1:
        // beta = 2 * (2)^2 = 8, gamma = 8 * (1/2 + 1) + 1 = 13.
        let p = prior(1.0);
        let costs = vec![
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
        ];
        let plan = plan(vec![true, true], vec![1.0, 1.0], 2.0);
        let rule = calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap();
        let terms = rule.entries[0].unwrap();
        assert!((terms.beta - 8.0).abs() < 1e-12);
        assert!((terms.gamma - 13.0).abs() < 1e-12);
        assert_eq!(terms.peer, Peer::Agent(1));
        assert_eq!(rule.entries[1].unwrap().peer, Peer::Agent(0));
    }

    #[test]
    fn linear_envelope_calibration() {
        // c' = 200 everywhere, xi_x = 0.001, targets (0.03, 0.02):
        // beta_0 = 200 * 0.031^2 = 0.19220.
        let p = prior(0.001);
        let costs = vec![
            EffortCostModel::discrete_linear(100.0, 2.0, 5).unwrap(),
            EffortCostModel::discrete_linear(100.0, 2.0, 5).unwrap(),
        ];
        let plan = plan(vec![true, true], vec![0.03, 0.02], 10.0);
        let rule = calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap();
        let terms = rule.entries[0].unwrap();
        assert!((terms.beta - 0.19220).abs() < 1e-9);
        let expect_gamma = 0.1922 * (1.0 / 0.031 + 50.0) + 6.0;
        assert!((terms.gamma - expect_gamma).abs() < 1e-9);
    }

    #[test]
    fn unselected_agents_have_no_entry_and_zero_payment() {
        let p = prior(1.0);
        let costs = vec![
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
        ];
        let plan = plan(vec![true, false, true], vec![1.0, 0.0, 1.0], 2.0);
        let rule = calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap();
        assert!(rule.entries[1].is_none());
        let reports = ReportProfile {
            estimates: vec![0.4, 9.9, 0.6],
            measurements: vec![0.5, -3.0, 0.7],
            honest_measurement: None,
        };
        assert_eq!(rule.payment(&reports, 1), 0.0);
    }

    #[test]
    fn single_selected_agent_needs_honest_peer() {
        let p = prior(1.0);
        let costs = vec![EffortCostModel::quadratic(1.0, 2.0).unwrap()];
        let plan = plan(vec![true], vec![1.0], 1.0);
        assert_eq!(
            calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap_err(),
            MechanismError::NotEnoughPeers
        );
        let rule = calibrate_target_effort(
            &p,
            &costs,
            &plan,
            &Pairing::Honest(HonestAgent { precision: 0.5 }),
        )
        .unwrap();
        let terms = rule.entries[0].unwrap();
        assert_eq!(terms.peer, Peer::Honest);
        // gamma uses the honest precision in place of the peer target.
        assert!((terms.gamma - (8.0 * (0.5 + 2.0) + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn payment_is_gamma_when_reports_agree() {
        let p = prior(1.0);
        let costs = vec![
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
        ];
        let plan = plan(vec![true, true], vec![1.0, 1.0], 2.0);
        let rule = calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap();
        let reports = ReportProfile {
            estimates: vec![0.75, 0.2],
            measurements: vec![0.4, 0.75],
            honest_measurement: None,
        };
        assert_eq!(rule.payment(&reports, 0), rule.entries[0].unwrap().gamma);
    }

    #[test]
    fn payment_arithmetic() {
        let rule = PaymentRule {
            regime: Regime::Optimal,
            entries: vec![
                Some(PaymentTerms {
                    beta: 8.0,
                    gamma: 13.0,
                    peer: Peer::Agent(1),
                }),
                Some(PaymentTerms {
                    beta: 8.0,
                    gamma: 13.0,
                    peer: Peer::Agent(0),
                }),
            ],
            honest: None,
        };
        let reports = ReportProfile {
            estimates: vec![0.5, 0.0],
            measurements: vec![0.0, 1.5],
            honest_measurement: None,
        };
        assert_eq!(rule.payment(&reports, 0), 13.0 - 8.0);
    }

    #[test]
    fn max_effort_beta_exceeds_derivative_bound() {
        // Linear envelope: the bound is K * (xi_x + xi_u)^2, attained at the
        // cap; slack lifts beta strictly above it.
        let p = prior(0.5);
        let costs = vec![
            EffortCostModel::discrete_linear(10.0, 2.0, 3).unwrap(),
            EffortCostModel::discrete_linear(10.0, 2.0, 3).unwrap(),
        ];
        let caps: Vec<f64> = costs.iter().map(|c| c.max_effort()).collect();
        let plan = plan(vec![true, true], caps.clone(), 12.0);
        let rule = calibrate_max_effort(&p, &costs, &plan, &Pairing::Cycle, 1.05, 2_000).unwrap();
        let terms = rule.entries[0].unwrap();
        let bound = 20.0 * (0.5 + caps[0]).powi(2);
        assert!((terms.beta - 1.05 * bound).abs() < 1e-9);
        // Utility derivative beta/(xi+xi_x)^2 - c' stays positive everywhere.
        for k in 0..=100 {
            let xi = caps[0] * k as f64 / 100.0;
            let d = terms.beta / (xi + 0.5_f64).powi(2) - costs[0].derivative(xi);
            assert!(d > 0.0, "derivative non-positive at {xi}");
        }
    }

    #[test]
    fn max_effort_rejects_plans_below_cap() {
        let p = prior(0.5);
        let costs = vec![
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
            EffortCostModel::quadratic(1.0, 2.0).unwrap(),
        ];
        let plan = plan(vec![true, true], vec![1.0, 2.0], 5.0);
        assert!(matches!(
            calibrate_max_effort(&p, &costs, &plan, &Pairing::Cycle, 1.05, 100),
            Err(MechanismError::Invalid(_))
        ));
    }

    #[test]
    fn expected_gap_formula() {
        let p = prior(1.0);
        assert_eq!(expected_peer_gap(&p, 1.0, 1.0).unwrap(), 1.5);
        // Zero own effort: prior variance plus peer variance.
        assert_eq!(expected_peer_gap(&p, 0.0, 0.5).unwrap(), 1.0 + 2.0);
        assert_eq!(
            expected_peer_gap(&p, 0.0, 0.0).unwrap_err(),
            MechanismError::InfiniteGap
        );
        // Large own effort: gap approaches the peer variance from above.
        let gap = expected_peer_gap(&p, 1e12, 2.0).unwrap();
        assert!(gap > 0.5 && gap - 0.5 < 1e-9);
    }

    #[test]
    fn first_order_condition_vanishes_at_target() {
        let p = prior(1.0);
        let model = EffortCostModel::quadratic(1.0, 2.0).unwrap();
        let costs = vec![model.clone(), model.clone()];
        let plan = plan(vec![true, true], vec![1.0, 1.0], 2.0);
        let rule = calibrate_target_effort(&p, &costs, &plan, &Pairing::Cycle).unwrap();
        let beta = rule.entries[0].unwrap().beta;
        let foc = |xi: f64| beta / (xi + 1.0_f64).powi(2) - model.derivative(xi);
        assert!(foc(1.0).abs() < 1e-12);
        assert!(foc(0.5) > 0.0);
        assert!(foc(1.5) < 0.0);
    }
}
