mod common;

use std::time::{Duration, Instant};

use common::ADMIN;
use vermillion::broker::protocol::{Request, Response};
use vermillion::broker::{Binding, BrokerClient, BrokerError, Message, ShovelSpec};
use vermillion::deploy::Deployment;
use vermillion::router::RoutingMode;

async fn admin(d: &Deployment, i: usize) -> BrokerClient {
    BrokerClient::connect(&d.node_address(i), ADMIN).await.unwrap()
}

fn bind(exchange: &str, queue: &str, pattern: &str) -> Binding {
    Binding { exchange: exchange.into(), queue: queue.into(), pattern: pattern.into(), expires_at: None }
}

fn msg(exchange: &str, seq: u64) -> Message {
    Message::new(exchange, "seq", seq.to_string().into_bytes(), 0, "tester")
}

async fn drain_until(c: &mut BrokerClient, queue: &str, want: usize) -> Vec<u64> {
    let until = Instant::now() + Duration::from_secs(10);
    let mut got = Vec::new();
    while got.len() < want && Instant::now() < until {
        let batch = c.consume(None, queue, 1000).await.unwrap();
        if batch.is_empty() {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        got.extend(batch.iter().map(|m| std::str::from_utf8(&m.payload).unwrap().parse::<u64>().unwrap()));
    }
    got
}

#[tokio::test]
async fn shovel_relays_in_order_and_rejects_duplicates() {
    let (d, _) = common::deploy(RoutingMode::Federated, 2).await;
    let mut a = admin(&d, 0).await;
    let mut b = admin(&d, 1).await;

    a.declare_exchange(None, "src-x").await.unwrap();
    a.declare_queue(None, "src-q", 0).await.unwrap();
    a.bind(None, bind("src-x", "src-q", "#")).await.unwrap();
    b.declare_exchange(None, "dst-x").await.unwrap();
    b.declare_queue(None, "dst-q", 0).await.unwrap();
    b.bind(None, bind("dst-x", "dst-q", "#")).await.unwrap();

    let spec = ShovelSpec {
        source_queue: "src-q".into(),
        dest_node: "rabbit2".into(),
        dest_address: d.node_address(1),
        dest_exchange: "dst-x".into(),
    };
    let id = a.create_shovel(spec.clone()).await.unwrap();
    assert!(matches!(a.create_shovel(spec).await, Err(BrokerError::Conflict(_))));

    for s in 0..100 {
        a.publish(None, msg("src-x", s)).await.unwrap();
    }
    let got = drain_until(&mut b, "dst-q", 100).await;
    assert_eq!(got, (0..100).collect::<Vec<_>>());

    let shovels = a.list_shovels().await.unwrap();
    assert_eq!(shovels.len(), 1);
    assert_eq!(shovels[0].relayed, 100);
    assert!(shovels[0].active);

    a.delete_shovel(&id).await.unwrap();
    assert!(a.list_shovels().await.unwrap().is_empty());
    a.publish(None, msg("src-x", 100)).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(a.queue_info("src-q").await.unwrap().depth, 1);
    assert!(b.consume(None, "dst-q", 10).await.unwrap().is_empty());
    a.delete_shovel(&id).await.unwrap();
    d.shutdown().await;
}

#[tokio::test]
async fn clustered_metadata_replicates_to_every_node() {
    let (d, _) = common::deploy(RoutingMode::Clustered, 4).await;
    let mut clients = Vec::new();
    for i in 0..4 {
        clients.push(admin(&d, i).await);
    }
    clients[0].declare_exchange(None, "city-x").await.unwrap();
    clients[1].declare_queue(None, "city-q", 0).await.unwrap();
    clients[2].bind(None, bind("city-x", "city-q", "air.#")).await.unwrap();
    for c in clients.iter_mut() {
        assert!(c.list_exchanges().await.unwrap().contains(&"city-x".to_string()));
        assert_eq!(c.queue_info("city-q").await.unwrap().name, "city-q");
    }

    let mut m = msg("city-x", 7);
    m.routing_key = "air.pm25".into();
    clients[3].publish(None, m.clone()).await.unwrap();
    m.routing_key = "water.level".into();
    clients[3].publish(None, m).await.unwrap();
    let got = clients[0].consume(None, "city-q", 10).await.unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].routing_key, "air.pm25");

    clients[3].unbind(None, "city-x", "city-q", "air.#").await.unwrap();
    clients[2].publish(None, msg("city-x", 8)).await.unwrap();
    assert!(clients[1].consume(None, "city-q", 10).await.unwrap().is_empty());
    d.shutdown().await;
}

#[tokio::test]
async fn clustered_write_fails_and_rolls_back_when_a_peer_is_down() {
    let (mut d, _) = common::deploy(RoutingMode::Clustered, 4).await;
    d.stop_node(2).await;
    let mut a = admin(&d, 0).await;
    let started = Instant::now();
    let r = a.declare_exchange(None, "orphan-x").await;
    assert!(matches!(r, Err(BrokerError::PeerTimeout(_))), "{r:?}");
    assert!(started.elapsed() < Duration::from_secs(10));
    for i in [0, 1, 3] {
        let names = admin(&d, i).await.list_exchanges().await.unwrap();
        assert!(!names.contains(&"orphan-x".to_string()), "node {i} kept {names:?}");
    }
    let pong = a.call(None, Request::Ping).await.unwrap();
    assert_eq!(pong, Response::Ok);
    d.shutdown().await;
}

#[tokio::test]
async fn non_admin_cannot_act_for_others_or_touch_admin_verbs() {
    let (d, api) = common::deploy(RoutingMode::Single, 1).await;
    let pkey = common::provider(&api, "xprov").await;
    let ekey = common::entity(&api, &pkey, "xprov-dev", "publisher").await;
    let mut c = BrokerClient::connect(&d.node_address(0), &ekey).await.unwrap();
    let spec = ShovelSpec {
        source_queue: "archive".into(),
        dest_node: "rabbit1".into(),
        dest_address: d.node_address(0),
        dest_exchange: "xprov-dev".into(),
    };
    assert!(matches!(c.create_shovel(spec).await, Err(BrokerError::AccessDenied(_))));
    assert!(matches!(c.consume(None, "archive", 10).await, Err(BrokerError::AccessDenied(_))));
    assert!(matches!(c.declare_exchange(None, "someone-else").await, Err(BrokerError::AccessDenied(_))));
    c.publish(None, msg("xprov-dev", 1)).await.unwrap();
    assert!(matches!(BrokerClient::connect(&d.node_address(0), "wrong").await, Err(BrokerError::Unauthenticated(_))));
    d.shutdown().await;
}
