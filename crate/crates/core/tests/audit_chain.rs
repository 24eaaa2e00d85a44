use icp_core::audit::{verify_bytes, verify_bytes_sequential, AuditEvent, AuditLog, RecordKind, GENESIS_HASH};
use icp_core::identity::normalize_spiffe;
use icp_core::policy::{evaluate, parse_policy_set, RequestContext};
use sha2::{Digest, Sha256};

fn build_log(path: &std::path::Path, n: usize) {
    let ps = parse_policy_set(r#"permit p when context.env == "staging";"#).unwrap();
    let log = AuditLog::open(path).unwrap();
    let subject = normalize_spiffe("spiffe://a.example/svc").unwrap();
    for i in 0..n {
        let req = RequestContext::new(subject.clone(), "deploy", format!("svc-{i}"))
            .with_context("env", if i % 3 == 0 { "prod" } else { "staging" });
        let d = evaluate(&ps, &req);
        log.append(
            AuditEvent::new(RecordKind::Decision, 1_000 + i as i64, ps.version())
                .with_request(req)
                .with_decision(d),
        )
        .unwrap();
    }
}

/// Independent recomputation over raw lines: parse as generic JSON, drop
/// `hash`, re-serialize with sorted keys (serde_json's default map), hash.
fn independent_check(bytes: &[u8]) -> bool {
    let mut prev = GENESIS_HASH.to_owned();
    for line in std::str::from_utf8(bytes).unwrap().lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        let stored = v.as_object_mut().unwrap().remove("hash").unwrap();
        assert_eq!(v["prev_hash"], serde_json::Value::String(prev.clone()));
        let mut h = Sha256::new();
        h.update(hex::decode(&prev).unwrap());
        h.update(serde_json::to_string(&v).unwrap().as_bytes());
        let computed = hex::encode(h.finalize());
        if serde_json::Value::String(computed.clone()) != stored {
            return false;
        }
        prev = computed;
    }
    true
}

#[test]
fn hundred_record_log_verifies_and_matches_independent_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    build_log(&path, 100);
    let bytes = std::fs::read(&path).unwrap();
    let status = verify_bytes(&bytes);
    assert!(status.ok);
    assert_eq!(status.records, 100);
    assert!(independent_check(&bytes));
}

/// Line index (1-based) containing byte `offset`; the `\n` terminator
/// belongs to the record it ends.
fn record_of(bytes: &[u8], offset: usize) -> u64 {
    bytes[..offset].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

#[test]
fn every_single_bit_flip_is_detected_at_or_before_its_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    build_log(&path, 6);
    let bytes = std::fs::read(&path).unwrap();
    for offset in 0..bytes.len() {
        for bit in 0..8 {
            let mut m = bytes.clone();
            m[offset] ^= 1 << bit;
            let status = verify_bytes(&m);
            let bad = status.first_bad_seq.unwrap_or_else(|| panic!("flip {offset}:{bit} undetected"));
            assert!(bad <= record_of(&bytes, offset), "flip {offset}:{bit} reported {bad}");
            assert_eq!(verify_bytes_sequential(&m), status);
        }
    }
}

#[test]
fn append_only_growth() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    build_log(&path, 3);
    let before = std::fs::read(&path).unwrap();
    build_log(&path, 2);
    let after = std::fs::read(&path).unwrap();
    assert!(after.len() > before.len());
    assert_eq!(&after[..before.len()], &before[..]);
    assert_eq!(verify_bytes(&after).records, 5);
}
