use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;
use vermillion::auth::{Action, AuthConfig, AuthStore, EntityKind, FollowStatus, Principal, Resource};
use vermillion::clock::{Clock, ManualClock, SharedClock};

const T0: u64 = 1_700_000_000_000;

struct World {
    clock: Arc<ManualClock>,
    store: AuthStore,
    owner: Principal,
    subscriber: Principal,
}

fn world() -> World {
    let clock = Arc::new(ManualClock::new(T0));
    let mut config = AuthConfig::new("adm");
    config.key_iterations = 1;
    let store = AuthStore::open(config, clock.clone() as SharedClock).unwrap();
    store.register_provider(&Principal::Admin, "owner").unwrap();
    let owner = Principal::Provider { id: "owner".into() };
    store.register_entity(&owner, "owner-pub", EntityKind::Publisher, json!({})).unwrap();
    let key = store.register_entity(&owner, "owner-sub", EntityKind::Subscriber, json!({})).unwrap();
    let subscriber = store.authenticate(&key).unwrap();
    World { clock, store, owner, subscriber }
}

fn rank(s: FollowStatus) -> u8 {
    match s {
        FollowStatus::Pending => 0,
        FollowStatus::Approved | FollowStatus::Rejected => 1,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Approve(u64),
    Reject,
    Advance(u64),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (1u64..100).prop_map(Op::Approve),
        Just(Op::Reject),
        (1u64..50).prop_map(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn status_never_moves_backwards(ops in prop::collection::vec(op_strategy(), 1..12)) {
        let w = world();
        let id = w.store.create_follow(&w.subscriber, "owner-pub", "#").unwrap();
        let mut last = w.store.follow_status(&w.subscriber, &id).unwrap();
        prop_assert_eq!(last, FollowStatus::Pending);
        for op in ops {
            let result = match op {
                Op::Approve(v) => w.store.approve_follow(&w.owner, &id, Some(v)).map(|_| ()),
                Op::Reject => w.store.reject_follow(&w.owner, &id),
                Op::Advance(s) => {
                    w.clock.advance_secs(s);
                    Ok(())
                }
            };
            let now = w.store.follow_status(&w.subscriber, &id).unwrap();
            prop_assert!(rank(now) >= rank(last));
            if rank(last) == 1 {
                prop_assert_eq!(now, last);
                prop_assert!(result.is_ok() || matches!(result, Err(vermillion::auth::AuthError::Conflict(_))));
            }
            last = now;
        }
    }

    #[test]
    fn issued_keys_authenticate_their_owner(names in prop::collection::hash_set("[a-z][a-z0-9]{2,10}", 1..6)) {
        let w = world();
        let mut seen = HashSet::new();
        for name in &names {
            let pid = format!("p{name}");
            let pkey = w.store.register_provider(&Principal::Admin, &pid).unwrap();
            prop_assert_eq!(w.store.authenticate(&pkey), Some(Principal::Provider { id: pid.clone() }));
            let provider = Principal::Provider { id: pid.clone() };
            let eid = format!("{pid}-dev");
            let ekey = w.store.register_entity(&provider, &eid, EntityKind::Publisher, json!({})).unwrap();
            prop_assert_eq!(
                w.store.authenticate(&ekey),
                Some(Principal::Entity { id: eid, owner: pid, kind: EntityKind::Publisher })
            );
            prop_assert!(seen.insert(pkey));
            prop_assert!(seen.insert(ekey));
        }
        prop_assert_eq!(w.store.authenticate("not-a-key"), None);
    }

    /// Bind flips to Allow exactly at approval and back to Deny exactly at
    /// expiry.
    #[test]
    fn bind_permission_window(wait_before in 0u64..20, validity in 1u64..100, probe in 0u64..200) {
        let w = world();
        let resource = Resource::Binding { exchange: "owner-pub".into(), queue: "owner-sub".into(), pattern: "#".into() };
        let id = w.store.create_follow(&w.subscriber, "owner-pub", "#").unwrap();
        w.clock.advance_secs(wait_before);
        prop_assert!(!w.store.check_permission(&w.subscriber, &resource, Action::Bind).is_allow());
        let approved_at = w.clock.now_ms();
        w.store.approve_follow(&w.owner, &id, Some(validity)).unwrap();
        prop_assert!(w.store.check_permission(&w.subscriber, &resource, Action::Bind).is_allow());
        w.clock.set_ms(approved_at + probe * 1000);
        let allowed = w.store.check_permission(&w.subscriber, &resource, Action::Bind).is_allow();
        prop_assert_eq!(allowed, probe < validity);
    }
}
