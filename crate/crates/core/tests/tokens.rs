use std::collections::BTreeMap;

use icp_core::audit::AuditLog;
use icp_core::broker::{validate_token, Broker, KeyPair, RevocationList, Scope, TokenError};
use icp_core::federation::{BundleStore, TrustBundle};
use icp_core::identity::normalize_spiffe;
use icp_core::policy::parse_policy_set;
use proptest::prelude::*;

const T0: i64 = 1_760_000_000;

fn domain(td: &str, seed: u8) -> (Broker, BundleStore) {
    let broker = Broker::new(td, KeyPair::from_seed([seed; 32]));
    let store = BundleStore::new(TrustBundle::from_keys(td, 1, 300, broker.keys())).unwrap();
    (broker, store)
}

#[test]
fn single_byte_flips_never_validate() {
    let (broker, store) = domain("a.example", 1);
    let ps = parse_policy_set("permit all when true;").unwrap();
    let subject = normalize_spiffe("spiffe://a.example/svc").unwrap();
    let tok = broker
        .issue_token(&subject, Scope::new("r", &["x"]), BTreeMap::new(), 60, &ps, &AuditLog::in_memory(), T0)
        .unwrap();
    let compact = tok.to_compact().into_bytes();
    let rl = RevocationList::new();
    assert!(validate_token(std::str::from_utf8(&compact).unwrap(), &store, T0, &rl, 30).is_ok());
    let mut tried = 0usize;
    for i in 0..compact.len() {
        for delta in 1..=255u8 {
            let mut bytes = compact.clone();
            bytes[i] = bytes[i].wrapping_add(delta);
            let Ok(text) = std::str::from_utf8(&bytes) else { continue };
            tried += 1;
            let result = validate_token(text, &store, T0, &rl, 30);
            assert!(result.is_err(), "flip at {i} by {delta} validated");
        }
    }
    assert!(tried > compact.len() * 100);
}

#[test]
fn cross_domain_requires_import() {
    let (broker_a, store_a) = domain("a.example", 1);
    let (_, mut store_b) = domain("b.example", 2);
    let ps = parse_policy_set("permit all when true;").unwrap();
    let subject = normalize_spiffe("spiffe://a.example/svc").unwrap();
    let tok = broker_a
        .issue_token(&subject, Scope::new("r", &["x"]), BTreeMap::new(), 60, &ps, &AuditLog::in_memory(), T0)
        .unwrap()
        .to_compact();
    let rl = RevocationList::new();
    assert_eq!(
        validate_token(&tok, &store_b, T0, &rl, 30),
        Err(TokenError::UnknownTrustDomain("a.example".into()))
    );
    store_b.import_bundle(store_a.export_bundle()).unwrap();
    assert!(validate_token(&tok, &store_b, T0, &rl, 30).is_ok());
    store_b.remove_federation("a.example").unwrap();
    assert!(matches!(
        validate_token(&tok, &store_b, T0, &rl, 30),
        Err(TokenError::UnknownTrustDomain(_))
    ));
    // A re-export after rotation carries a higher sequence and restores trust.
    let mut bundle = store_a.export_bundle();
    bundle.sequence += 1;
    store_b.import_bundle(bundle).unwrap();
    assert!(validate_token(&tok, &store_b, T0, &rl, 30).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn issued_tokens_round_trip(
        ttl in 1i64..=3600,
        actions in prop::collection::vec("[a-z.]{1,8}", 1..4),
        ctx in prop::collection::btree_map("[a-z.]{1,8}", "[ -~]{0,12}", 0..5),
        resource in "[a-z/]{1,16}",
    ) {
        let (broker, store) = domain("a.example", 3);
        let ps = parse_policy_set("permit all when true;").unwrap();
        let subject = normalize_spiffe("spiffe://a.example/svc").unwrap();
        let actions: Vec<&str> = actions.iter().map(String::as_str).collect();
        let tok = broker
            .issue_token(&subject, Scope::new(resource, &actions), ctx, ttl, &ps, &AuditLog::in_memory(), T0)
            .unwrap();
        let claims = validate_token(&tok.to_compact(), &store, T0 + ttl / 2, &RevocationList::new(), 30).unwrap();
        prop_assert_eq!(claims, tok.claims);
    }

    #[test]
    fn other_keys_never_validate(seed_a in 1u8..128, seed_b in 128u8..=255) {
        let (broker_a, _) = domain("a.example", seed_a);
        let (_, store_b_as_a) = domain("a.example", seed_b);
        let ps = parse_policy_set("permit all when true;").unwrap();
        let subject = normalize_spiffe("spiffe://a.example/svc").unwrap();
        let tok = broker_a
            .issue_token(&subject, Scope::new("r", &["x"]), BTreeMap::new(), 60, &ps, &AuditLog::in_memory(), T0)
            .unwrap();
        prop_assert!(validate_token(&tok.to_compact(), &store_b_as_a, T0, &RevocationList::new(), 30).is_err());
    }
}
