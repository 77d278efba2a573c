use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::plugin::Bindings;
use crate::wire::format_interval;

use super::profile::SensorProfile;

const DAYS: [&str; 7] = ["MO", "TU", "WE", "TH", "FR", "SA", "SU"];

/// A weekly window: a day range and a local time span, e.g. `MO-FR:08:00-17:00`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub first_day: u8,
    pub last_day: u8,
    /// Minutes after midnight.
    pub start: u16,
    /// Minutes after midnight, up to 24:00.
    pub end: u16,
}

/// Weekly sensing time table; comma-separated windows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule(pub Vec<Window>);

impl Schedule {
    pub fn always() -> Self {
        Schedule(vec![Window { first_day: 0, last_day: 6, start: 0, end: 24 * 60 }])
    }

    pub fn is_always(&self) -> bool {
        *self == Self::always()
    }
}

fn parse_day(s: &str) -> Option<u8> {
    DAYS.iter().position(|d| *d == s).map(|i| i as u8)
}

fn parse_clock(s: &str) -> Option<u16> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let (h, m): (u16, u16) = (h.parse().ok()?, m.parse().ok()?);
    (m < 60 && (h < 24 || (h == 24 && m == 0))).then_some(h * 60 + m)
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad schedule window {s:?}");
        let (days, times) = s.split_once(':').ok_or_else(bad)?;
        let (first_day, last_day) = match days.split_once('-') {
            Some((a, b)) => (parse_day(a).ok_or_else(bad)?, parse_day(b).ok_or_else(bad)?),
            None => {
                let d = parse_day(days).ok_or_else(bad)?;
                (d, d)
            }
        };
        let (start, end) = times.split_once('-').ok_or_else(bad)?;
        let (start, end) = (parse_clock(start).ok_or_else(bad)?, parse_clock(end).ok_or_else(bad)?);
        if first_day > last_day || start >= end {
            return Err(bad());
        }
        Ok(Window { first_day, last_day, start, end })
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = (DAYS[self.first_day as usize], DAYS[self.last_day as usize]);
        if a == b {
            write!(f, "{a}")?;
        } else {
            write!(f, "{a}-{b}")?;
        }
        write!(f, ":{:02}:{:02}-{:02}:{:02}", self.start / 60, self.start % 60, self.end / 60, self.end % 60)
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let windows: Vec<Window> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
        if windows.is_empty() {
            return Err("empty schedule".into());
        }
        Ok(Schedule(windows))
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

impl Serialize for Schedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! wire_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(concat!("invalid ", stringify!($name), " {:?}"), s)),
                }
            }
        }
    };
}

wire_enum!(Acquisition { Push => "push", Pull => "pull" });
wire_enum!(Delivery { Instant => "instant", Interval => "interval" });
wire_enum!(Mode { Active => "active", Sleep => "sleep" });

/// Where and how a configured sensor joins the secure network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Credentials {
    pub host: String,
    pub port: u16,
    pub token: String,
}

/// The reasoned part of a strategy, before credentials are issued.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensingPlan {
    #[serde(rename = "sampling_ms", with = "crate::registry::millis")]
    pub sampling: Duration,
    pub schedule: Schedule,
    #[serde(rename = "commfreq_ms", with = "crate::registry::millis")]
    pub commfreq: Duration,
    /// Delivery responsibility.
    pub acquisition: Acquisition,
    /// Delivery frequency.
    pub delivery: Delivery,
    pub mode: Mode,
}

impl SensingPlan {
    /// Sampling within range when active, and never reporting faster than
    /// sensing.
    pub fn is_feasible_for(&self, profile: &SensorProfile) -> bool {
        (self.mode == Mode::Sleep || profile.sampling.contains(self.sampling)) && self.commfreq >= self.sampling
    }
}

/// The full per-sensor plan pushed during configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensingStrategy {
    pub uid: String,
    #[serde(flatten)]
    pub plan: SensingPlan,
    pub credentials: Credentials,
}

impl SensingStrategy {
    /// Plugin parameters for the configuration sequences.
    pub fn params(&self) -> Bindings {
        let p = &self.plan;
        [
            ("sampling", format_interval(p.sampling)),
            ("mode", p.mode.to_string()),
            ("commfreq", format_interval(p.commfreq)),
            ("acq", p.acquisition.to_string()),
            ("freq", p.delivery.to_string()),
            ("schedule", p.schedule.to_string()),
            ("host", self.credentials.host.clone()),
            ("port", self.credentials.port.to_string()),
            ("token", self.credentials.token.clone()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Names of the configuration fields a sensor stores, matching
/// [`SensingStrategy::params`].
pub const CONFIG_FIELDS: [&str; 9] =
    ["sampling", "mode", "commfreq", "acq", "freq", "schedule", "host", "port", "token"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_text_round_trips() {
        for s in ["MO-FR:08:00-17:00", "SA:00:00-24:00", "MO-SU:00:00-24:00", "MO-WE:06:30-07:45,FR:20:00-23:59"] {
            let parsed: Schedule = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("MO-SU:00:00-24:00".parse::<Schedule>().unwrap().is_always());
        for bad in ["", "XX:08:00-17:00", "FR-MO:08:00-17:00", "MO:17:00-08:00", "MO:8:00-17:00", "MO:24:30-24:45", "MO"] {
            assert!(bad.parse::<Schedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn enums_parse() {
        assert_eq!("push".parse::<Acquisition>(), Ok(Acquisition::Push));
        assert_eq!("interval".parse::<Delivery>(), Ok(Delivery::Interval));
        assert_eq!("sleep".parse::<Mode>(), Ok(Mode::Sleep));
        assert!("Sleep".parse::<Mode>().is_err());
        assert_eq!(serde_json::to_string(&Mode::Active).unwrap(), "\"active\"");
    }

    #[test]
    fn strategy_json_and_params() {
        let s = SensingStrategy {
            uid: "a1b2c3d4e5f60708".into(),
            plan: SensingPlan {
                sampling: Duration::from_secs(10),
                schedule: "MO-FR:08:00-17:00".parse().unwrap(),
                commfreq: Duration::from_secs(60),
                acquisition: Acquisition::Push,
                delivery: Delivery::Interval,
                mode: Mode::Active,
            },
            credentials: Credentials { host: "127.0.0.1".into(), port: 7801, token: "ab".repeat(16) },
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["sampling_ms"], 10_000);
        assert_eq!(v["schedule"], "MO-FR:08:00-17:00");
        assert_eq!(v["credentials"]["port"], 7801);
        assert_eq!(serde_json::from_value::<SensingStrategy>(v).unwrap(), s);

        let params = s.params();
        assert_eq!(params["sampling"], "10s");
        assert_eq!(params["commfreq"], "60s");
        assert_eq!(params["port"], "7801");
        assert_eq!(params.len(), CONFIG_FIELDS.len());
        assert!(CONFIG_FIELDS.iter().all(|f| params.contains_key(*f)));
    }
}
