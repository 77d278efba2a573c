//! The shipped 52-model catalog: for every model a dialect, the plugin that
//! drives it (its mirror image), a catalog entry and a fleet spec.
//!
//! Dialects come from four base templates. Dialect `n` uses template
//! `n % 4` and variant `n / 4`; the variant picks verb suffixes, preamble
//! steps, the ack style and the order of the final report.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::sensor::SensorSpec;
use crate::plugin::document::{write_document, HeaderValue, StepText};
use crate::plugin::CanonicalOp;
use crate::registry::{Capability, CatalogEntry, SamplingRange, ValueType, CONFIG_FIELDS};
use crate::wire::TransportKind;

pub const MODEL_COUNT: usize = 52;
pub const MANUFACTURER: &str = "libelium";

struct Phenomenon {
    name: &'static str,
    short: &'static str,
    unit: &'static str,
    value_type: ValueType,
    min_ms: u64,
    max_ms: u64,
}

const fn ph(name: &'static str, short: &'static str, unit: &'static str, value_type: ValueType, min_ms: u64, max_ms: u64) -> Phenomenon {
    Phenomenon { name, short, unit, value_type, min_ms, max_ms }
}

use ValueType::{Blob, Bool, Float};

const PHENOMENA: [Phenomenon; 26] = [
    ph("temperature", "Temp", "celsius", Float, 1_000, 3_600_000),
    ph("humidity", "Hum", "percent", Float, 2_000, 3_600_000),
    ph("air_temperature", "AirTemp", "celsius", Float, 1_000, 3_600_000),
    ph("soil_temperature", "SoilTemp", "celsius", Float, 5_000, 7_200_000),
    ph("pressure", "Press", "hpa", Float, 1_000, 3_600_000),
    ph("luminosity", "Lux", "lux", Float, 500, 1_800_000),
    ph("motion", "PIR", "event", Bool, 100, 600_000),
    ph("co2", "CO2", "ppm", Float, 5_000, 3_600_000),
    ph("no2", "NO2", "ppm", Float, 5_000, 3_600_000),
    ph("o3", "O3", "ppm", Float, 5_000, 3_600_000),
    ph("co", "CO", "ppm", Float, 5_000, 3_600_000),
    ph("noise", "Noise", "dba", Float, 1_000, 900_000),
    ph("dust_pm10", "Dust", "ugm3", Float, 10_000, 3_600_000),
    ph("leaf_wetness", "Leaf", "percent", Float, 2_000, 3_600_000),
    ph("soil_moisture", "SoilMoist", "cbar", Float, 5_000, 7_200_000),
    ph("solar_radiation", "Solar", "wm2", Float, 1_000, 3_600_000),
    ph("uv_index", "UV", "index", Float, 1_000, 3_600_000),
    ph("wind_speed", "Anemo", "ms", Float, 1_000, 1_800_000),
    ph("rainfall", "Pluvio", "mm", Float, 10_000, 7_200_000),
    ph("ph", "PH", "ph", Float, 5_000, 3_600_000),
    ph("orp", "ORP", "mv", Float, 5_000, 3_600_000),
    ph("dissolved_oxygen", "DO", "mgl", Float, 5_000, 3_600_000),
    ph("conductivity", "Cond", "uscm", Float, 5_000, 3_600_000),
    ph("turbidity", "Turb", "ntu", Float, 5_000, 3_600_000),
    ph("presence", "Presence", "event", Bool, 200, 600_000),
    ph("vibration", "Vibe", "g", Blob, 100, 600_000),
];

/// Static description of one cataloged model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInfo {
    pub index: usize,
    pub model: String,
    pub manufacturer: String,
    pub capabilities: Vec<Capability>,
    pub sampling: SamplingRange,
    pub supports_schedules: bool,
    pub epc: Option<String>,
}

impl ModelInfo {
    pub fn plugin_id(&self) -> String {
        format!("{}.{}.v1", self.manufacturer, self.model.to_ascii_lowercase())
    }

    pub fn dialect_id(&self) -> String {
        dialect_id(self.index)
    }

    pub fn catalog_entry(&self) -> CatalogEntry {
        CatalogEntry {
            model: self.model.clone(),
            manufacturer: self.manufacturer.clone(),
            plugin_id: self.plugin_id(),
            capabilities: self.capabilities.iter().map(|c| c.phenomenon.clone()).collect(),
        }
    }
}

pub fn dialect_id(n: usize) -> String {
    format!("d{n:02}")
}

/// Model `i`: phenomenon `i / 2`, on the Waspmote line for even `i` and
/// Plug & Sense for odd. Model 1 is a three-capability ambient node.
pub fn model(i: usize) -> ModelInfo {
    assert!(i < MODEL_COUNT, "model index {i} out of range");
    let p = &PHENOMENA[i / 2];
    let cap = |p: &Phenomenon| Capability::new(p.name, p.unit, p.value_type);
    let (name, capabilities) = match i {
        0 => ("WaspTemp3".to_string(), vec![cap(p)]),
        1 => ("PlugAmbient".to_string(), vec![cap(&PHENOMENA[0]), cap(&PHENOMENA[1]), cap(&PHENOMENA[6])]),
        _ if i.is_multiple_of(2) => (format!("Wasp{}", p.short), vec![cap(p)]),
        _ => (format!("Plug{}", p.short), vec![cap(p)]),
    };
    ModelInfo {
        index: i,
        model: name,
        manufacturer: MANUFACTURER.to_string(),
        capabilities,
        sampling: SamplingRange::new(Duration::from_millis(p.min_ms), Duration::from_millis(p.max_ms)),
        supports_schedules: i % 7 != 6,
        epc: (i % 5 == 3).then(|| format!("urn:epc:id:sgtin:0614141.{:05}.1", i)),
    }
}

pub fn models() -> Vec<ModelInfo> {
    (0..MODEL_COUNT).map(model).collect()
}

/// One request/reply exchange, written once and mirrored into both the
/// plugin (send request, expect reply) and the dialect (expect request,
/// send reply).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub request: String,
    pub reply: String,
}

fn ex(request: impl Into<String>, reply: impl Into<String>) -> Exchange {
    Exchange { request: request.into(), reply: reply.into() }
}

fn vars(keys: &[&str]) -> String {
    keys.iter().map(|k| format!("|{k}=${{{k}}}")).collect()
}

/// The exchanges of dialect `n`, per op.
pub fn exchanges(n: usize) -> Vec<(CanonicalOp, Vec<Exchange>)> {
    let (template, variant) = (n % 4, n / 4);
    let s = if n == 0 { String::new() } else { format!("{n:02}") };
    let echo_acks = (variant / 3) % 2 == 1;

    let mut preamble = Vec::new();
    if variant % 3 >= 1 {
        preamble.push(ex(format!("WAKE{s}"), format!("AWAKE{s}")));
    }
    if variant % 3 == 2 {
        preamble.push(ex(format!("SYNC{s}|uid=${{uid}}"), format!("SYNCED{s}")));
    }

    let mut report: Vec<&str> = CONFIG_FIELDS.to_vec();
    report.rotate_left(variant % CONFIG_FIELDS.len());
    let report = format!("{}|joined=yes", vars(&report));
    let profile = vars(&["caps", "smin", "smax", "sched", "epc"]);

    let groups: [(&str, &[&str]); 4] = [
        ("sampling", &["sampling", "mode"]),
        ("commfreq", &["commfreq", "acq", "freq"]),
        ("schedule", &["schedule"]),
        ("network", &["host", "port", "token"]),
    ];
    let ack = |verb: &str, prefix: &str, field: &str, keys: &[&str]| {
        if echo_acks {
            format!("{verb}{s}{prefix}{}", vars(keys))
        } else {
            format!("{verb}{s}{prefix}|key={field}")
        }
    };

    let (mut handshake, retrieve, config, finalize): (Vec<Exchange>, Vec<Exchange>, Vec<Vec<Exchange>>, Exchange) =
        match template {
            // plain ack style
            0 => (
                vec![ex(format!("HELLO{s}"), format!("OLLEH{s}|uid=${{uid}}"))],
                vec![ex(format!("GETPROF{s}"), format!("PROF{s}{profile}"))],
                groups
                    .iter()
                    .map(|(f, keys)| vec![ex(format!("SET{s}{}", vars(keys)), ack("ACK", "", f, keys))])
                    .collect(),
                ex(format!("COMMIT{s}"), format!("DONE{s}{report}")),
            ),
            // session nonce echoed in every later request
            1 => (
                vec![ex(format!("SYN{s}|uid=${{uid}}"), format!("SYNACK{s}|nonce=${{nonce}}"))],
                vec![ex(format!("DESC{s}|nonce=${{nonce}}"), format!("DESCR{s}{profile}"))],
                groups
                    .iter()
                    .map(|(f, keys)| {
                        vec![ex(
                            format!("CFG{s}|nonce=${{nonce}}|key={f}{}", vars(keys)),
                            ack("CFGOK", "|nonce=${nonce}", f, keys),
                        )]
                    })
                    .collect(),
                ex(format!("FIN{s}|nonce=${{nonce}}"), format!("FINACK{s}{report}")),
            ),
            // register writes, profile in three parts
            2 => (
                vec![ex(format!("IDENT{s}|uid=${{uid}}"), format!("READY{s}"))],
                vec![
                    ex(format!("CAPS{s}"), format!("CAPS{s}|caps=${{caps}}")),
                    ex(format!("RANGE{s}"), format!("RANGE{s}|smin=${{smin}}|smax=${{smax}}")),
                    ex(format!("META{s}"), format!("META{s}|sched=${{sched}}|epc=${{epc}}")),
                ],
                groups
                    .iter()
                    .map(|(_, keys)| {
                        keys.iter()
                            .map(|k| {
                                let reply = if echo_acks {
                                    format!("WROTE{s}|reg={k}|val=${{{k}}}")
                                } else {
                                    format!("WROTE{s}|reg={k}")
                                };
                                ex(format!("WRITE{s}|reg={k}|val=${{{k}}}"), reply)
                            })
                            .collect()
                    })
                    .collect(),
                ex(format!("SAVE{s}"), format!("SAVED{s}{report}")),
            ),
            // authenticated session, staged writes applied at the end
            _ => (
                vec![
                    ex(format!("PING{s}"), format!("PONG{s}|uid=${{uid}}")),
                    ex(format!("AUTH{s}|uid=${{uid}}"), format!("AUTHOK{s}|session=${{nonce}}")),
                ],
                vec![ex(format!("INFO{s}|session=${{nonce}}"), format!("INFO{s}{profile}"))],
                groups
                    .iter()
                    .map(|(f, keys)| {
                        vec![ex(format!("PUT{s}|session=${{nonce}}{}", vars(keys)), ack("STAGED", "", f, keys))]
                    })
                    .collect(),
                ex(format!("APPLY{s}|session=${{nonce}}"), format!("COMMITTED{s}{report}")),
            ),
        };
    preamble.append(&mut handshake);

    let mut ops = vec![(CanonicalOp::Handshake, preamble), (CanonicalOp::RetrieveProfile, retrieve)];
    let config_ops = [CanonicalOp::SetSampling, CanonicalOp::SetCommfreq, CanonicalOp::SetSchedule, CanonicalOp::SetNetwork];
    ops.extend(config_ops.into_iter().zip(config));
    ops.push((CanonicalOp::Finalize, vec![finalize]));
    ops
}

fn header<'a>(id: &'a str, m: &'a ModelInfo) -> Vec<(&'static str, HeaderValue)> {
    vec![
        ("id", HeaderValue::Str(id.to_string())),
        ("model", HeaderValue::Str(m.model.clone())),
        ("manufacturer", HeaderValue::Str(m.manufacturer.clone())),
        ("schema", HeaderValue::Int(1)),
    ]
}

fn render(n: usize, id: &str, mirror: bool) -> String {
    let m = model(n);
    let sections: Vec<(&str, Vec<StepText>)> = exchanges(n)
        .into_iter()
        .map(|(op, xs)| {
            let steps = xs
                .into_iter()
                .map(|x| if mirror { StepText::new(x.reply, x.request) } else { StepText::new(x.request, x.reply) })
                .collect();
            (op.as_str(), steps)
        })
        .collect();
    write_document(&header(id, &m), &sections)
}

pub fn plugin_text(n: usize) -> String {
    render(n, &model(n).plugin_id(), false)
}

pub fn dialect_text(n: usize) -> String {
    render(n, &dialect_id(n), true)
}

fn hash(seed: &str) -> [u8; 32] {
    Sha256::digest(seed.as_bytes()).into()
}

/// The 52-sensor fleet: one sensor per model, transports rotating through
/// tcp, udp and bt-sim, boot delays spread over [5 s, 15 s].
pub fn fleet_specs() -> Vec<SensorSpec> {
    models()
        .into_iter()
        .map(|m| {
            let h = hash(&format!("fleet52/{}", m.index));
            let uid = if m.index == 0 { "a1b2c3d4e5f60708".to_string() } else { hex::encode(&h[..8]) };
            let boot_ms = 5_000 + u64::from_be_bytes(h[8..16].try_into().unwrap()) % 10_001;
            SensorSpec {
                uid,
                model: m.model.clone(),
                manufacturer: m.manufacturer.clone(),
                dialect: m.dialect_id(),
                transport: TransportKind::ALL[m.index % 3],
                boot_delay_ms: boot_ms,
                capabilities: m.capabilities.clone(),
                sampling: m.sampling,
                supports_schedules: m.supports_schedules,
                epc: m.epc.clone(),
                fault: None,
            }
        })
        .collect()
}

pub const DEFAULT_THRESHOLDS: &str = "\
# Benchmark pass/fail limits, in milliseconds.

# Mean of each configuration step, steps 4 to 9.
step_mean_max_ms = 1000
steps = [4, 5, 6, 7, 8, 9]

# Steps 2 to 10 of every single run.
end_to_end_max_ms = 12000

# Reported boot time, when the fleet boots with delays.
boot_min_ms = 5000
boot_max_ms = 15500
";

/// Every generated file, keyed by path relative to the data directory.
pub fn generated_files() -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for m in models() {
        let entry = m.catalog_entry();
        files.insert(
            format!("catalog/{}--{}.json", entry.manufacturer, entry.model),
            crate::registry::to_json_bytes(&entry),
        );
        files.insert(format!("plugins/{}.plugin", m.plugin_id()), plugin_text(m.index).into_bytes());
        files.insert(format!("dialects/{}.dialect", m.dialect_id()), dialect_text(m.index).into_bytes());
    }
    files.insert("fleet52.json".into(), crate::registry::to_json_bytes(&fleet_specs()));
    files.insert("thresholds.toml".into(), DEFAULT_THRESHOLDS.as_bytes().to_vec());
    files
}

/// Writes the generated files below `dir`; returns how many.
pub fn write_data(dir: &Path) -> io::Result<usize> {
    let files = generated_files();
    for (rel, bytes) in &files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
    }
    Ok(files.len())
}
