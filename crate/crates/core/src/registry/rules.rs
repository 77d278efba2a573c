//! Prioritized context rules that turn a profile plus site facts into a
//! sensing plan.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::SensorProfile;
use super::strategy::{Acquisition, Delivery, Mode, Schedule, SensingPlan};

/// Site context: `season`, `time`, `companion.<phenomenon>`, and whatever
/// else rules test for.
pub type ContextFacts = BTreeMap<String, String>;

/// The condition key that tests the profile's capabilities rather than a fact.
pub const PHENOMENON: &str = "phenomenon";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultSampling {
    Midpoint,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub sampling: DefaultSampling,
    pub commfreq_factor: u32,
    pub acquisition: Acquisition,
    pub delivery: Delivery,
    pub mode: Mode,
    pub schedule: Schedule,
}

/// A fact value or a set of accepted values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    One(String),
    AnyOf(Vec<String>),
}

impl Condition {
    fn accepts(&self, value: &str) -> bool {
        match self {
            Condition::One(v) => v == value,
            Condition::AnyOf(vs) => vs.iter().any(|v| v == value),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commfreq_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commfreq_factor: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<Acquisition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery: Option<Delivery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

impl Effect {
    /// Fields set in `other` override ours.
    fn overlay(&mut self, other: &Effect) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(sampling_ms, commfreq_ms, commfreq_factor, acquisition, delivery, mode, schedule);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRule {
    pub id: String,
    pub priority: i32,
    #[serde(default)]
    pub when: BTreeMap<String, Condition>,
    pub set: Effect,
}

impl ContextRule {
    pub fn applies(&self, profile: &SensorProfile, facts: &ContextFacts) -> bool {
        self.when.iter().all(|(key, cond)| {
            if key == PHENOMENON {
                profile.capabilities.iter().any(|c| cond.accepts(&c.phenomenon))
            } else {
                facts.get(key).is_some_and(|v| cond.accepts(v))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    pub defaults: Defaults,
    pub rules: Vec<ContextRule>,
}

#[derive(Debug, Error)]
pub enum RuleTableError {
    #[error("cannot read rule table {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid rule table {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("rule table: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rules {rules:?} force sampling {sampling:?} outside {min:?}..={max:?}")]
pub struct StrategyInfeasible {
    pub rules: Vec<String>,
    pub sampling: Duration,
    pub min: Duration,
    pub max: Duration,
}

/// The rule table shipped in `data/rules.json`.
pub const REFERENCE_RULES: &str = include_str!("../../data/rules.json");

impl RuleTable {
    pub fn reference() -> RuleTable {
        Self::from_json(REFERENCE_RULES, "data/rules.json").expect("shipped rule table parses")
    }

    pub fn from_json(text: &str, path: &str) -> Result<RuleTable, RuleTableError> {
        let table: RuleTable =
            serde_json::from_str(text).map_err(|source| RuleTableError::Parse { path: path.into(), source })?;
        table.check()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<RuleTable, RuleTableError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| RuleTableError::Read { path: p.clone(), source })?;
        Self::from_json(&text, &p)
    }

    fn check(&self) -> Result<(), RuleTableError> {
        if self.defaults.commfreq_factor == 0 {
            return Err(RuleTableError::Invalid("commfreq_factor must be at least 1".into()));
        }
        for (i, r) in self.rules.iter().enumerate() {
            if self.rules[..i].iter().any(|o| o.id == r.id) {
                return Err(RuleTableError::Invalid(format!("duplicate rule id {:?}", r.id)));
            }
            if r.set.commfreq_factor == Some(0) {
                return Err(RuleTableError::Invalid(format!("rule {:?}: commfreq_factor must be at least 1", r.id)));
            }
        }
        Ok(())
    }

    /// Rules that apply, in application order: ascending priority, and for
    /// equal priority later-listed first, so the earliest-listed wins.
    pub fn matching<'a>(&'a self, profile: &SensorProfile, facts: &ContextFacts) -> Vec<&'a ContextRule> {
        let mut hits: Vec<(usize, &ContextRule)> =
            self.rules.iter().enumerate().filter(|(_, r)| r.applies(profile, facts)).collect();
        hits.sort_by(|(ia, a), (ib, b)| a.priority.cmp(&b.priority).then(ib.cmp(ia)));
        hits.into_iter().map(|(_, r)| r).collect()
    }

    /// Evaluates the table over the default plan for `profile`.
    pub fn reason(&self, profile: &SensorProfile, facts: &ContextFacts) -> Result<SensingPlan, StrategyInfeasible> {
        let hits = self.matching(profile, facts);
        let mut effect = Effect::default();
        for rule in &hits {
            effect.overlay(&rule.set);
        }

        let d = &self.defaults;
        let range = profile.sampling;
        let mode = effect.mode.unwrap_or(d.mode);
        let mut sampling = match effect.sampling_ms {
            Some(ms) => Duration::from_millis(ms),
            None => match d.sampling {
                DefaultSampling::Midpoint => range.midpoint(),
                DefaultSampling::Min => range.min,
                DefaultSampling::Max => range.max,
            },
        };
        if !range.contains(sampling) {
            if mode == Mode::Active {
                return Err(StrategyInfeasible {
                    rules: hits.iter().filter(|r| r.set.sampling_ms.is_some()).map(|r| r.id.clone()).collect(),
                    sampling,
                    min: range.min,
                    max: range.max,
                });
            }
            // a sleeping sensor still needs a storable interval
            sampling = range.clamp(sampling);
        }

        let commfreq = match effect.commfreq_ms {
            Some(ms) => Duration::from_millis(ms).max(sampling),
            None => sampling * effect.commfreq_factor.unwrap_or(d.commfreq_factor),
        };
        let schedule = if profile.supports_schedules {
            effect.schedule.unwrap_or_else(|| d.schedule.clone())
        } else {
            Schedule::always()
        };

        Ok(SensingPlan {
            sampling,
            schedule,
            commfreq,
            acquisition: effect.acquisition.unwrap_or(d.acquisition),
            delivery: effect.delivery.unwrap_or(d.delivery),
            mode,
        })
    }
}
