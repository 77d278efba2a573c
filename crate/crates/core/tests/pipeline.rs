mod common;

use std::fs;
use std::time::Duration;

use caddot::gateway::{configure, extract_identity, retrieve_profile, GatewayStatus, OutcomeKind, PipelineError, Phase};
use caddot::plugin::CanonicalOp;
use caddot::registry::{RegistrationStatus, CONFIG_FIELDS};
use caddot::simsensor::{Fault, Lifecycle};
use caddot::testbed::{Testbed, TestbedConfig};
use caddot::wire::{Message, TransportKind, TransportProfile};
use common::{device_link, fixed_strategy, open_sink, plugin, spec, spec_uid};

const WAIT: Duration = Duration::from_secs(20);

async fn bed() -> Testbed {
    Testbed::start(TestbedConfig::default()).await.unwrap()
}

fn tcp_only() -> TestbedConfig {
    TestbedConfig { profiles: vec![TransportProfile::tcp()], ..TestbedConfig::default() }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reference_sensor_is_configured_end_to_end() {
    let bed = bed().await;
    let s = spec(0, TransportKind::Tcp);
    let uid = s.uid.clone();
    let (fleet, errors) = bed.spawn(vec![s]);
    assert!(errors.is_empty());
    assert!(bed.wait_configured(std::slice::from_ref(&uid), WAIT).await);

    let report = bed.reports_for(std::slice::from_ref(&uid)).pop().unwrap();
    assert_eq!(report.outcome, OutcomeKind::Configured);
    assert_eq!(report.plugin_id.as_deref(), Some("libelium.wasptemp3.v1"));
    assert_eq!(report.history, Phase::ALL);
    assert!(report.timings.is_complete());
    assert_eq!(report.last_acknowledged, Some(CanonicalOp::Finalize));

    // what the sensor holds is exactly what was pushed and acknowledged
    let strategy = report.strategy.clone().unwrap();
    let params = strategy.params();
    assert!(fleet.wait_for(WAIT, |s| s[0].lifecycle == Lifecycle::Reporting).await);
    let state = fleet.state(&uid).unwrap();
    assert_eq!(state.applied, params);
    for f in CONFIG_FIELDS {
        assert_eq!(report.receipt.get(f), params.get(f), "{f}");
    }
    assert_eq!(state.joined_token.as_deref(), Some(strategy.credentials.token.as_str()));

    let record = bed.registry().record(&uid).unwrap();
    assert_eq!(record.status, RegistrationStatus::Configured);
    assert_eq!(record.strategy.as_ref(), Some(&strategy));
    let samples = bed.registry().samples();
    assert_eq!(samples.iter().filter(|s| s.uid == uid).count(), 1);
    assert_eq!(samples[0].phenomenon, "temperature");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn every_transport_configures() {
    let bed = bed().await;
    let specs: Vec<_> = TransportKind::ALL.iter().enumerate().map(|(i, &k)| spec(i + 2, k)).collect();
    let uids: Vec<String> = specs.iter().map(|s| s.uid.clone()).collect();
    let (_fleet, _) = bed.spawn(specs);
    assert!(bed.wait_configured(&uids, WAIT).await, "{:#?}", bed.gateway.reports());
    let kinds: Vec<_> = bed.reports_for(&uids).iter().map(|r| r.transport).collect();
    for k in TransportKind::ALL {
        assert!(kinds.contains(&k));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reconfiguring_after_a_reboot_is_idempotent() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let s = spec(4, TransportKind::Tcp);
    let uid = s.uid.clone();
    let (fleet, _) = bed.spawn(vec![s]);
    assert!(bed.wait_configured(std::slice::from_ref(&uid), WAIT).await);
    assert!(fleet.wait_for(WAIT, |s| s[0].lifecycle == Lifecycle::Reporting).await);
    let first = fleet.state(&uid).unwrap();

    fleet.restart(&uid);
    let again = |r: &[caddot::gateway::SessionReport]| r.iter().filter(|r| r.outcome == OutcomeKind::Configured).count();
    let deadline = tokio::time::Instant::now() + WAIT;
    while again(&bed.reports_for(std::slice::from_ref(&uid))) < 2 {
        assert!(tokio::time::Instant::now() < deadline, "second configuration never finished");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(fleet.wait_for(WAIT, |s| s[0].lifecycle == Lifecycle::Reporting).await);
    let second = fleet.state(&uid).unwrap();
    assert_eq!(second.boots, 2);

    // same plan both times; only the single-use token differs
    let without_token = |s: &caddot::simsensor::SensorState| {
        let mut a = s.applied.clone();
        a.remove("token");
        a
    };
    assert_eq!(without_token(&first), without_token(&second));
    assert_ne!(first.applied["token"], second.applied["token"]);
    assert_eq!(bed.registry().records().len(), 1);
    assert_eq!(bed.registry().samples().len(), 2);
}

#[tokio::test]
async fn out_of_range_sampling_fails_at_set_sampling() {
    let (sink, _s) = open_sink().await;
    let mut link = device_link(spec(0, TransportKind::Tcp), 0).await;
    let (identity, _) = extract_identity(&mut link.session, Duration::from_secs(2)).await.unwrap();
    let p = plugin(0);
    let (_, captures) = retrieve_profile(&mut link.session, &p, &identity).await.unwrap();
    let mut strategy = fixed_strategy(&identity.uid, sink);
    strategy.plan.sampling = Duration::from_millis(500);

    let err = configure(&mut link.session, &p, &identity, &strategy, &captures).await.unwrap_err();
    assert_eq!(err.last_acknowledged, None);
    match &err.source {
        PipelineError::Sequence { op, source } => {
            assert_eq!(*op, CanonicalOp::SetSampling);
            assert!(source.is_mismatch(), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
    let state = link.state();
    assert!(state.applied.is_empty());
    assert_eq!(state.lifecycle, Lifecycle::Discoverable);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn tampered_plugin_is_rejected_by_digest() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let path = bed.registry().store().plugin_path("libelium.wasptemp3.v1").unwrap();
    let text = fs::read_to_string(&path).unwrap().replace("GETPROF", "GETPROX");
    fs::write(&path, text).unwrap();

    let s = spec(0, TransportKind::Tcp);
    let uid = s.uid.clone();
    let (_fleet, _) = bed.spawn(vec![s]);
    let r = bed.wait_reports(std::slice::from_ref(&uid), WAIT).await.unwrap().pop().unwrap();
    assert_eq!(r.outcome, OutcomeKind::Failed);
    assert_eq!(r.failed_in, Some(Phase::Find));
    assert!(r.error.as_deref().unwrap().contains("digest"), "{r:?}");
    assert!(bed.gateway.cached_plugin("libelium.wasptemp3.v1").is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn corrupt_plugin_does_not_pollute_the_cache() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    // a consistent digest over bytes that do not parse
    let store = bed.registry().store();
    store.put_plugin("libelium.wasptemp3.v1", b"id = \"libelium.wasptemp3.v1\"\n[seq.handshake\n").unwrap();

    let s = spec(0, TransportKind::Tcp);
    let uid = s.uid.clone();
    let (_fleet, _) = bed.spawn(vec![s]);
    let r = bed.wait_reports(std::slice::from_ref(&uid), WAIT).await.unwrap().pop().unwrap();
    assert_eq!(r.outcome, OutcomeKind::Failed);
    assert_eq!(r.failed_in, Some(Phase::Find));
    assert_eq!(bed.gateway.status().cache_size, 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cached_plugin_is_fetched_once() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let uids: Vec<String> = (0..3).map(|i| format!("c0ffee00000000{i:02}")).collect();
    for uid in &uids {
        let (_fleet, _) = bed.spawn(vec![spec_uid(0, TransportKind::Tcp, uid)]);
        assert!(bed.wait_configured(std::slice::from_ref(uid), WAIT).await);
    }
    let status = bed.gateway.status();
    assert_eq!((status.plugin_fetches, status.cache_size, status.completed), (1, 1, 3));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unknown_model_ends_the_session_without_error() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let mut s = spec(0, TransportKind::Tcp);
    s.model = "Mystery9000".into();
    // keep the dialect consistent with the claimed model
    let mut dialects = bed.dialects.clone();
    let mut d = (*dialects["d00"]).clone();
    d.model = s.model.clone();
    dialects.insert("d00".into(), std::sync::Arc::new(d));
    let uid = s.uid.clone();
    let (_fleet, errors) = caddot::simsensor::spawn_fleet(vec![s], &bed.targets(), &dialects);
    assert!(errors.is_empty());
    let r = bed.wait_reports(std::slice::from_ref(&uid), WAIT).await.unwrap().pop().unwrap();
    assert_eq!(r.outcome, OutcomeKind::Unknown);
    assert!(r.error.is_none());
    assert_eq!(bed.gateway.status().unknown, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn malformed_identity_fails_extraction() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let mut s = spec(0, TransportKind::Tcp);
    s.fault = Some(Fault::MalformedIam);
    let (_fleet, _) = bed.spawn(vec![s]);
    assert!(bed.gateway.wait_for(WAIT, |st| st.failed == 1).await);
    let r = bed.gateway.reports().pop().unwrap();
    assert_eq!(r.failed_in, Some(Phase::Extract));
    assert!(r.identity.is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn disconnect_mid_phase_frees_the_session() {
    let bed = bed().await;
    for (i, kind) in TransportKind::ALL.into_iter().enumerate() {
        let mut s = spec(i, kind);
        // WHO, handshake and one profile request, then silence
        s.fault = Some(Fault::DropAfter { messages: 3 });
        let uid = s.uid.clone();
        let (_fleet, _) = bed.spawn(vec![s]);
        let r = bed.wait_reports(std::slice::from_ref(&uid), WAIT).await.unwrap().pop().unwrap();
        assert_eq!(r.outcome, OutcomeKind::Failed, "{kind}");
        assert!(r.failed_in.is_some_and(|p| p >= Phase::Retrieve), "{kind}: {r:?}");
    }
    assert!(bed.gateway.wait_for(WAIT, |s| s.live_sessions == 0).await, "{:?}", bed.gateway.status());
    assert_eq!(bed.gateway.status().failed, 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn max_sessions_caps_concurrency() {
    let config = TestbedConfig {
        profiles: vec![TransportProfile::bt_sim()],
        max_sessions: 20,
        status_endpoint: true,
        ..TestbedConfig::default()
    };
    let bed = Testbed::start(config).await.unwrap();
    let specs: Vec<_> = (0..40).map(|i| spec_uid(i % 52, TransportKind::BtSim, &format!("cafe0000000000{i:02}"))).collect();
    let uids: Vec<String> = specs.iter().map(|s| s.uid.clone()).collect();
    let (_fleet, _) = bed.spawn(specs);

    let url = format!("http://{}/status", bed.gateway.status_addr().unwrap());
    let client = reqwest::Client::new();
    let mut observed_max = 0;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(60);
    loop {
        let st: GatewayStatus = client.get(&url).send().await.unwrap().json().await.unwrap();
        observed_max = observed_max.max(st.live_sessions);
        assert!(st.live_sessions <= 20, "{st:?}");
        if st.completed == 40 {
            assert!(st.peak_sessions <= 20 && st.peak_sessions >= 2, "{st:?}");
            break;
        }
        assert!(tokio::time::Instant::now() < deadline, "{st:?}");
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    assert!(observed_max > 1);
    assert!(bed.wait_configured(&uids, WAIT).await);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn replayed_or_forged_tokens_are_refused_at_the_sink() {
    let bed = Testbed::start(tcp_only()).await.unwrap();
    let s = spec(0, TransportKind::Tcp);
    let uid = s.uid.clone();
    let (_fleet, _) = bed.spawn(vec![s]);
    assert!(bed.wait_configured(std::slice::from_ref(&uid), WAIT).await);
    let used = bed.registry().record(&uid).unwrap().strategy.unwrap().credentials;

    let mut conn = caddot::wire::Connection::connect_stream(bed.registry.sink_addr()).await.unwrap();
    let t = Duration::from_secs(2);
    for (u, token) in [(uid.as_str(), used.token.as_str()), ("ffffffffffffffff", used.token.as_str())] {
        let reply = conn.request(&Message::new("JOIN").arg("uid", u).arg("token", token), t).await.unwrap();
        assert!(reply.is("DENIED"), "{reply}");
    }
    assert!(!bed.registry().validate_join(&uid, &used.token));
}
