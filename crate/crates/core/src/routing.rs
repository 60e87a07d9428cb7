//! Reward functions and the argmax routing policy.
//!
//! The user's willingness to pay `λ` only enters here, at decision time;
//! predictors are trained without it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardFamily {
    /// `R₁ = s − c/λ`
    #[serde(rename = "r1", alias = "linear")]
    Linear,
    /// `R₂ = s · exp(−c/λ)`
    #[serde(rename = "r2", alias = "exponential")]
    Exponential,
}

impl RewardFamily {
    pub fn tag(self) -> &'static str {
        match self {
            RewardFamily::Linear => "r1",
            RewardFamily::Exponential => "r2",
        }
    }
}

impl fmt::Display for RewardFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RewardFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r1" | "linear" => Ok(RewardFamily::Linear),
            "r2" | "exponential" | "exp" => Ok(RewardFamily::Exponential),
            other => Err(Error::Config(format!("unknown reward family `{other}` (use r1 or r2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub family: RewardFamily,
    pub lambda: f64,
}

impl RewardSpec {
    pub fn new(family: RewardFamily, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("λ must be finite and positive, got {lambda}")));
        }
        Ok(Self { family, lambda })
    }
}

pub fn reward(quality: f64, cost: f64, spec: &RewardSpec) -> f64 {
    match spec.family {
        RewardFamily::Linear => quality - cost / spec.lambda,
        RewardFamily::Exponential => quality * (-cost / spec.lambda).exp(),
    }
}

/// Index of the chosen model and the reward of every model.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub index: usize,
    pub rewards: Vec<f64>,
}

/// Pick the model maximizing the reward of the estimates. Exact ties go to
/// the lower estimated cost, then to the lower index.
pub fn route(quality: &[f64], cost: &[f64], spec: &RewardSpec) -> Result<Choice> {
    if quality.is_empty() || quality.len() != cost.len() {
        return Err(Error::Shape(format!(
            "routing needs equal, non-empty quality and cost vectors ({} vs {})",
            quality.len(),
            cost.len()
        )));
    }
    if quality.iter().chain(cost).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("routing inputs".into()));
    }
    let rewards: Vec<f64> = quality.iter().zip(cost).map(|(&s, &c)| reward(s, c, spec)).collect();
    let mut best = 0;
    for i in 1..rewards.len() {
        if rewards[i] > rewards[best] || (rewards[i] == rewards[best] && cost[i] < cost[best]) {
            best = i;
        }
    }
    Ok(Choice { index: best, rewards })
}

/// One routed query. Serializes to a single trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    pub lambda: f64,
    pub family: RewardFamily,
    pub model: String,
    pub model_index: usize,
    pub predicted_quality: f64,
    pub predicted_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_cost: Option<f64>,
    #[serde(skip)]
    pub rewards: Vec<f64>,
}

impl RoutingDecision {
    pub fn to_trace_line(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }

    pub fn from_trace_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Invalid(format!("bad trace line: {e}")))
    }
}

/// Route on estimates and attach the realized outcome from `record`, if given.
pub fn decide(
    query_id: &str,
    pool: &[String],
    quality: &[f64],
    cost: &[f64],
    spec: &RewardSpec,
    record: Option<&QueryRecord>,
) -> Result<RoutingDecision> {
    if pool.len() != quality.len() {
        return Err(Error::Shape(format!("{} estimates for a pool of {}", quality.len(), pool.len())));
    }
    let Choice { index, rewards } = route(quality, cost, spec)?;
    Ok(RoutingDecision {
        query_id: query_id.to_string(),
        lambda: spec.lambda,
        family: spec.family,
        model: pool[index].clone(),
        model_index: index,
        predicted_quality: quality[index],
        predicted_cost: cost[index],
        realized_quality: record.map(|r| r.quality[index]),
        realized_cost: record.map(|r| r.cost[index]),
        rewards,
    })
}

/// Route on ground truth: the per-query reward maximizer.
pub fn oracle_route(record: &QueryRecord, pool: &[String], spec: &RewardSpec) -> Result<RoutingDecision> {
    decide(&record.id, pool, &record.quality, &record.cost, spec, Some(record))
}
