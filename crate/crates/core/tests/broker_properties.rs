use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use vermillion::auth::backend::AuthBackend;
use vermillion::auth::{AuthStore, Principal};
use vermillion::broker::protocol::{Request, Response};
use vermillion::broker::{Binding, BrokerNode, Message, NodeConfig};
use vermillion::clock::{ManualClock, SharedClock};
use vermillion::router::RoutingMode;

fn node() -> BrokerNode {
    let clock: SharedClock = Arc::new(ManualClock::new(1_000));
    let store: Arc<dyn AuthBackend> = Arc::new(AuthStore::in_memory("sys", clock.clone()));
    BrokerNode::new(NodeConfig::new("rabbit1", RoutingMode::Single, "sys"), store, clock)
}

fn run<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(f)
}

async fn ok(n: &BrokerNode, req: Request) {
    assert_eq!(n.execute(&Principal::Admin, req).await, Response::Ok);
}

async fn consume(n: &BrokerNode, queue: &str, max: u32) -> Vec<Message> {
    match n.execute(&Principal::Admin, Request::Consume { queue: queue.into(), max }).await {
        Response::Messages(m) => m,
        other => panic!("{other:?}"),
    }
}

fn bind(queue: &str, pattern: &str) -> Request {
    Request::Bind(Binding { exchange: "x".into(), queue: queue.into(), pattern: pattern.into(), expires_at: None })
}

fn unbind(queue: &str, pattern: &str) -> Request {
    Request::Unbind { exchange: "x".into(), queue: queue.into(), pattern: pattern.into() }
}

/// Reference matcher: segment-wise equality, trailing `#` takes the rest.
fn reference_match(pattern: &str, key: &str) -> bool {
    let p: Vec<&str> = pattern.split('.').collect();
    let k: Vec<&str> = key.split('.').collect();
    match p.split_last() {
        Some((&"#", prefix)) => k.len() >= prefix.len() && prefix.iter().zip(&k).all(|(a, b)| a == b),
        _ => p == k,
    }
}

fn key_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 1..4).prop_map(|s| s.join("."))
}

fn pattern_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        (key_strategy(), any::<bool>()).prop_map(|(k, hash)| if hash { format!("{k}.#") } else { k }),
        Just("#".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queue_preserves_publish_order(count in 1usize..200, chunks in prop::collection::vec(1u32..40, 1..20)) {
        let got = run(async {
            let n = node();
            ok(&n, Request::DeclareExchange { name: "x".into() }).await;
            ok(&n, Request::DeclareQueue { name: "q".into(), depth_limit: 0 }).await;
            ok(&n, bind("q", "#")).await;
            for i in 0..count {
                let m = Message::new("x", "k", i.to_string().into_bytes(), 0, "p");
                ok(&n, Request::Publish { message: m, archive: false }).await;
            }
            let mut got = Vec::new();
            for max in chunks.iter().cycle() {
                let batch = consume(&n, "q", *max).await;
                if batch.is_empty() {
                    break;
                }
                got.extend(batch.into_iter().map(|m| String::from_utf8(m.payload.to_vec()).unwrap().parse::<usize>().unwrap()));
            }
            got
        });
        prop_assert_eq!(got, (0..count).collect::<Vec<_>>());
    }

    /// Each binding is applied twice and some are removed twice; delivery
    /// must match a model holding each binding at most once.
    #[test]
    fn fan_out_matches_binding_model(
        bindings in prop::collection::vec((0usize..4, pattern_strategy()), 0..10),
        removals in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
        keys in prop::collection::vec(key_strategy(), 1..20),
    ) {
        let mut model: BTreeSet<(usize, String)> = bindings.iter().cloned().collect();
        let removed: Vec<(usize, String)> = if bindings.is_empty() {
            Vec::new()
        } else {
            removals.iter().map(|i| bindings[i.index(bindings.len())].clone()).collect()
        };
        for r in &removed {
            model.remove(r);
        }
        let (counts, enqueued) = run(async {
            let n = node();
            ok(&n, Request::DeclareExchange { name: "x".into() }).await;
            ok(&n, Request::DeclareExchange { name: "x".into() }).await;
            for q in 0..4 {
                ok(&n, Request::DeclareQueue { name: format!("q{q}"), depth_limit: 0 }).await;
                ok(&n, Request::DeclareQueue { name: format!("q{q}"), depth_limit: 0 }).await;
            }
            for (q, p) in &bindings {
                ok(&n, bind(&format!("q{q}"), p)).await;
                ok(&n, bind(&format!("q{q}"), p)).await;
            }
            for (q, p) in &removed {
                ok(&n, unbind(&format!("q{q}"), p)).await;
                ok(&n, unbind(&format!("q{q}"), p)).await;
            }
            for k in &keys {
                let m = Message::new("x", k.clone(), b"x".to_vec(), 0, "p");
                ok(&n, Request::Publish { message: m, archive: false }).await;
            }
            let mut counts = Vec::new();
            for q in 0..4 {
                counts.push(consume(&n, &format!("q{q}"), 10_000).await.len());
            }
            (counts, n.stats().enqueued)
        });
        let expected: Vec<usize> = (0..4)
            .map(|q| {
                keys.iter()
                    .filter(|k| model.iter().any(|(mq, p)| *mq == q && reference_match(p, k)))
                    .count()
            })
            .collect();
        prop_assert_eq!(&counts, &expected);
        prop_assert_eq!(enqueued, expected.iter().sum::<usize>() as u64);
    }
}
