use std::time::Duration;

use vermillion::loadgen::{run_load, LoadProfile, ThroughputReport};
use vermillion::router::RoutingMode;

fn small(mode: RoutingMode, nodes: usize) -> LoadProfile {
    LoadProfile {
        producers: 6,
        messages_per_producer: 25,
        consumers: 6,
        mode,
        node_count: nodes,
        warmup: Duration::ZERO,
        ..LoadProfile::default()
    }
}

fn assert_conserved(r: &ThroughputReport) {
    let total = r.profile.total_messages();
    assert_eq!(r.requests_ok, total, "{}", r.to_text());
    assert_eq!(r.requests_failed, 0);
    assert_eq!(r.messages_received, total, "{}", r.to_text());
    let published: u64 = r.bucket_occupancy.iter().filter_map(|n| n.published).sum();
    assert_eq!(published, total);
}

#[tokio::test]
async fn federated_run_conserves_messages_and_matches_bucket_prediction() {
    let r = run_load(&small(RoutingMode::Federated, 3)).await.unwrap();
    assert_conserved(&r);
    let m = r.profile.messages_per_producer as u64;
    for n in &r.bucket_occupancy {
        let predicted = n.predicted_producers.expect("federated runs predict occupancy") as u64;
        assert_eq!(n.published, Some(predicted * m), "{}", n.node_id);
    }
    assert!(!r.concurrency.is_empty());
    assert_eq!(r.concurrency.last().unwrap().active_producers, 0);
}

#[tokio::test]
async fn clustered_run_conserves_messages() {
    let r = run_load(&small(RoutingMode::Clustered, 3)).await.unwrap();
    assert_conserved(&r);
    assert!(r.bucket_occupancy.iter().all(|n| n.predicted_producers.is_none()));
}

#[tokio::test]
async fn report_schema_is_stable() {
    let a = run_load(&LoadProfile { consumers: 0, ..small(RoutingMode::Single, 1) }).await.unwrap();
    let b = run_load(&LoadProfile { consumers: 0, seed: 9, ..small(RoutingMode::Single, 1) }).await.unwrap();
    let keys = |r: &ThroughputReport| -> Vec<String> {
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        v.as_object().unwrap().keys().cloned().collect()
    };
    assert_eq!(keys(&a), keys(&b));
    let back: ThroughputReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(a.table_row().split('\t').count(), ThroughputReport::TABLE_HEADER.split('\t').count());
}

#[tokio::test]
async fn invalid_profiles_are_rejected() {
    let too_many_consumers = LoadProfile { producers: 2, consumers: 5, ..LoadProfile::default() };
    assert!(run_load(&too_many_consumers).await.is_err());
    let no_producers = LoadProfile { producers: 0, ..LoadProfile::default() };
    assert!(run_load(&no_producers).await.is_err());
}
