use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::SensorIdentity;
use crate::wire::TransportKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Float,
    Int,
    Bool,
    Blob,
}

impl ValueType {
    fn as_str(self) -> &'static str {
        match self {
            ValueType::Float => "float",
            ValueType::Int => "int",
            ValueType::Bool => "bool",
            ValueType::Blob => "blob",
        }
    }
}

impl FromStr for ValueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(ValueType::Float),
            "int" => Ok(ValueType::Int),
            "bool" => Ok(ValueType::Bool),
            "blob" => Ok(ValueType::Blob),
            _ => Err(format!("unknown value type {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capability {
    pub phenomenon: String,
    pub unit: String,
    pub value_type: ValueType,
}

impl Capability {
    pub fn new(phenomenon: &str, unit: &str, value_type: ValueType) -> Self {
        Capability { phenomenon: phenomenon.into(), unit: unit.into(), value_type }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.phenomenon, self.unit, self.value_type.as_str())
    }
}

/// Wire form of a capability list: `temperature:celsius:float,humidity:percent:float`.
pub fn format_capabilities(caps: &[Capability]) -> String {
    caps.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_capabilities(s: &str) -> Result<Vec<Capability>, String> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|part| {
            let mut it = part.split(':');
            match (it.next(), it.next(), it.next(), it.next()) {
                (Some(p), Some(u), Some(t), None) if !p.is_empty() && !u.is_empty() => {
                    Ok(Capability { phenomenon: p.into(), unit: u.into(), value_type: t.parse()? })
                }
                _ => Err(format!("bad capability {part:?}")),
            }
        })
        .collect()
}

/// Inclusive range of sampling intervals a sensor supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingRange {
    #[serde(rename = "min_ms", with = "crate::registry::millis")]
    pub min: Duration,
    #[serde(rename = "max_ms", with = "crate::registry::millis")]
    pub max: Duration,
}

impl SamplingRange {
    pub fn new(min: Duration, max: Duration) -> Self {
        SamplingRange { min, max }
    }

    pub fn contains(&self, d: Duration) -> bool {
        self.min <= d && d <= self.max
    }

    pub fn clamp(&self, d: Duration) -> Duration {
        d.clamp(self.min, self.max)
    }

    /// Midpoint, rounded down to the millisecond.
    pub fn midpoint(&self) -> Duration {
        let (a, b) = (self.min.as_millis() as u64, self.max.as_millis() as u64);
        Duration::from_millis(a + (b - a) / 2)
    }
}

/// Everything a sensor reports about itself once its plugin is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub identity: SensorIdentity,
    pub capabilities: Vec<Capability>,
    pub sampling: SamplingRange,
    pub supports_schedules: bool,
    pub transports: Vec<TransportKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("sampling min {min:?} exceeds max {max:?}")]
    SamplingRange { min: Duration, max: Duration },
    #[error("profile lists no capabilities")]
    NoCapabilities,
    #[error("invalid identity: {0}")]
    Identity(#[from] crate::gateway::IdentityError),
}

impl SensorProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        self.identity.validate()?;
        if self.sampling.min > self.sampling.max {
            return Err(ProfileError::SamplingRange { min: self.sampling.min, max: self.sampling.max });
        }
        if self.capabilities.is_empty() {
            return Err(ProfileError::NoCapabilities);
        }
        Ok(())
    }

    pub fn has_phenomenon(&self, phenomenon: &str) -> bool {
        self.capabilities.iter().any(|c| c.phenomenon == phenomenon)
    }
}
