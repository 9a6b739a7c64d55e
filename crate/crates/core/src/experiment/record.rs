//! Persisted run artifacts: the payment-rule dump and the full run record.
//!
//! A rule dump is a TOML document carrying the regime, the honest-agent
//! precision if any, and per-agent `(selected, effort, beta, gamma, peer)`.
//! Reloading one reconstructs the rule and the plan it was calibrated for,
//! so a recorded simulation can be replayed from its artifact alone.

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationPlan, Regime};
use crate::mechanism::{HonestAgent, PaymentRule, PaymentTerms, Peer};

use super::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleDump {
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest_precision: Option<f64>,
    #[serde(rename = "agent")]
    pub agents: Vec<RuleAgentDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleAgentDump {
    pub index: usize,
    pub selected: bool,
    pub effort: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `"agent:<index>"` or `"honest"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
}

fn regime_from_str(s: &str) -> Result<Regime, ConfigError> {
    match s {
        "optimal" => Ok(Regime::Optimal),
        "suboptimal" => Ok(Regime::Suboptimal),
        other => Err(ConfigError::Invalid(format!("unknown regime {other:?}"))),
    }
}

impl RuleDump {
    pub fn from_rule(rule: &PaymentRule, plan: &AllocationPlan) -> Self {
        let agents = rule
            .entries
            .iter()
            .enumerate()
            .map(|(index, entry)| match entry {
                None => RuleAgentDump {
                    index,
                    selected: false,
                    effort: 0.0,
                    beta: None,
                    gamma: None,
                    peer: None,
                },
                Some(terms) => RuleAgentDump {
                    index,
                    selected: true,
                    effort: plan.efforts[index],
                    beta: Some(terms.beta),
                    gamma: Some(terms.gamma),
                    peer: Some(match terms.peer {
                        Peer::Agent(j) => format!("agent:{j}"),
                        Peer::Honest => "honest".into(),
                    }),
                },
            })
            .collect();
        Self {
            regime: rule.regime.as_str().into(),
            honest_precision: rule.honest.map(|h| h.precision),
            agents,
        }
    }

    /// Rebuild the payment rule and the plan it encodes.
    pub fn to_parts(&self) -> Result<(PaymentRule, AllocationPlan), ConfigError> {
        let regime = regime_from_str(&self.regime)?;
        let n = self.agents.len();
        let mut entries = vec![None; n];
        let mut selected = vec![false; n];
        let mut efforts = vec![0.0; n];
        for a in &self.agents {
            if a.index >= n {
                return Err(ConfigError::Invalid(format!(
                    "agent index {} out of range ({n} agents)",
                    a.index
                )));
            }
            selected[a.index] = a.selected;
            efforts[a.index] = a.effort;
            if a.selected {
                let beta = a.beta.ok_or_else(|| {
                    ConfigError::Invalid(format!("selected agent {} missing beta", a.index))
                })?;
                let gamma = a.gamma.ok_or_else(|| {
                    ConfigError::Invalid(format!("selected agent {} missing gamma", a.index))
                })?;
                let peer = match a.peer.as_deref() {
                    Some("honest") => {
                        if self.honest_precision.is_none() {
                            return Err(ConfigError::Invalid(format!(
                                "agent {} pairs against an honest agent but no \
                                 honest_precision is recorded",
                                a.index
                            )));
                        }
                        Peer::Honest
                    }
                    Some(text) => {
                        let j = text
                            .strip_prefix("agent:")
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| {
                                ConfigError::Invalid(format!("unrecognized peer {text:?}"))
                            })?;
                        if j >= n || j == a.index {
                            return Err(ConfigError::Invalid(format!(
                                "agent {} has invalid peer index {j}",
                                a.index
                            )));
                        }
                        Peer::Agent(j)
                    }
                    None => {
                        return Err(ConfigError::Invalid(format!(
                            "selected agent {} missing peer",
                            a.index
                        )))
                    }
                };
                entries[a.index] = Some(PaymentTerms { beta, gamma, peer });
            }
        }
        let honest = self
            .honest_precision
            .map(|precision| HonestAgent { precision });
        let rule = PaymentRule {
            regime,
            entries,
            honest,
        };
        let plan = AllocationPlan {
            selected,
            efforts,
            total_cost: f64::NAN,
        };
        Ok((rule, plan))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rule dump serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }
}

/// One sweep row as persisted. Optional fields are absent when the row was
/// infeasible or the corresponding stage was skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_t: f64,
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_payment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_mse: Option<f64>,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleDump>,
}

/// A full run: the configuration snapshot plus every sweep row (sorted by
/// threshold) with the calibrated rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    #[serde(rename = "row")]
    pub rows: Vec<SweepRow>,
}

impl RunRecord {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }
}
