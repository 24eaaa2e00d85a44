//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use icp_core::audit::{verify_bytes, verify_bytes_sequential, verify_file, AuditEvent, AuditLog, RecordKind, GENESIS_HASH};
use icp_core::broker::{KeyPair, Scope, TokenError};
use icp_core::canonical;
use icp_core::clock::ManualClock;
use icp_core::identity::{Assertion, AutomationAssertion, UnifiedIdentity};
use icp_core::policy::{evaluate, parse_policy_set, Outcome, RequestContext};
use icp_service::api::{DecisionRequest, IssueRequest, TokenDecisionRequest};
use icp_service::http::{spawn, DaemonHandle};
use icp_service::{bench, ControlPlane};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::blocking::Client;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn in_memory(td: &str, policies: &str, clock: Arc<ManualClock>) -> ControlPlane {
    ControlPlane::in_memory(td, vec![KeyPair::generate()], parse_policy_set(policies).unwrap(), clock).unwrap()
}

fn serve(plane: ControlPlane) -> DaemonHandle {
    spawn(Arc::new(plane), "127.0.0.1:0".parse().unwrap()).unwrap()
}

struct Api {
    base: String,
    client: Client,
}

impl Api {
    fn new(d: &DaemonHandle) -> Api {
        Api { base: d.url(), client: Client::new() }
    }

    fn call(&self, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
        let url = format!("{}{path}", self.base);
        let req = match method {
            "GET" => self.client.get(url),
            "POST" => self.client.post(url),
            "PUT" => self.client.put(url),
            "DELETE" => self.client.delete(url),
            m => panic!("method {m}"),
        };
        let req = match body {
            Some(b) => req.body(b.to_string()),
            None => req,
        };
        let resp = req.send().expect("daemon reachable");
        let status = resp.status().as_u16();
        (status, serde_json::from_str(&resp.text().unwrap()).unwrap())
    }
}

fn workload(path: &str) -> UnifiedIdentity {
    icp_core::identity::normalize_spiffe(&format!("spiffe://a.example{path}")).unwrap()
}

// 1. Latency

fn latency() -> Result<String, String> {
    let r = bench::run(1000, 100).map_err(|e| e.to_string())?;
    let summary = format!(
        "decision p95 {:.3} ms, issuance p95 {:.3} ms over {} iterations with {} policies",
        r.decision_p95_ms, r.issuance_p95_ms, r.iterations, r.policy_count
    );
    ensure!(r.iterations >= 1000 && r.policy_count >= 100, "under-sized run: {summary}");
    ensure!(r.decision_p95_ms < 10.0, "decision too slow: {summary}");
    ensure!(r.issuance_p95_ms <= 100.0, "issuance too slow: {summary}");
    Ok(summary)
}

// 2. Deny-overrides against a brute-force oracle

const KEYS: [&str; 3] = ["a", "b", "c"];
const VALUES: [&str; 6] = ["1", "2", "10", "x", "y", "xy"];
const PATTERNS: [&str; 5] = ["x*", "?", "1*", "*y", "*"];

#[derive(Debug, Clone)]
enum Atom {
    Cmp(&'static str, &'static str, String, bool),
    In(&'static str, Vec<&'static str>),
    Glob(&'static str, &'static str),
    Lit(bool),
}

#[derive(Debug, Clone)]
enum Tree {
    Atom(Atom),
    Not(Box<Tree>),
    All(Vec<Tree>),
    Any(Vec<Tree>),
}

fn gen_atom(rng: &mut StdRng) -> Atom {
    let key = KEYS[rng.gen_range(0..KEYS.len())];
    match rng.gen_range(0..10) {
        0 => Atom::Lit(rng.gen()),
        1 | 2 => {
            let n = rng.gen_range(0..3);
            Atom::In(key, (0..n).map(|_| VALUES[rng.gen_range(0..VALUES.len())]).collect())
        }
        3 => Atom::Glob(key, PATTERNS[rng.gen_range(0..PATTERNS.len())]),
        _ => {
            let op = ["==", "!=", "<", "<=", ">", ">="][rng.gen_range(0..6)];
            // Bare integers exercise the numeric branch from the literal side.
            if rng.gen_bool(0.3) {
                Atom::Cmp(key, op, rng.gen_range(0..12).to_string(), true)
            } else {
                Atom::Cmp(key, op, VALUES[rng.gen_range(0..VALUES.len())].to_owned(), false)
            }
        }
    }
}

fn gen_tree(rng: &mut StdRng, depth: u32) -> Tree {
    if depth == 0 || rng.gen_bool(0.4) {
        return Tree::Atom(gen_atom(rng));
    }
    match rng.gen_range(0..3) {
        0 => Tree::Not(Box::new(gen_tree(rng, depth - 1))),
        1 => Tree::All((0..rng.gen_range(2..4)).map(|_| gen_tree(rng, depth - 1)).collect()),
        _ => Tree::Any((0..rng.gen_range(2..4)).map(|_| gen_tree(rng, depth - 1)).collect()),
    }
}

fn render(t: &Tree) -> String {
    match t {
        Tree::Atom(Atom::Lit(b)) => b.to_string(),
        Tree::Atom(Atom::Cmp(k, op, v, int)) => {
            if *int {
                format!("context.{k} {op} {v}")
            } else {
                format!("context.{k} {op} \"{v}\"")
            }
        }
        Tree::Atom(Atom::In(k, set)) => {
            let items: Vec<String> = set.iter().map(|v| format!("\"{v}\"")).collect();
            format!("context.{k} in [{}]", items.join(", "))
        }
        Tree::Atom(Atom::Glob(k, p)) => format!("context.{k} matches \"{p}\""),
        Tree::Not(inner) => format!("not ({})", render(inner)),
        Tree::All(ts) => ts.iter().map(|t| format!("({})", render(t))).collect::<Vec<_>>().join(" and "),
        Tree::Any(ts) => ts.iter().map(|t| format!("({})", render(t))).collect::<Vec<_>>().join(" or "),
    }
}

fn oracle_glob(p: &[u8], s: &[u8]) -> bool {
    match (p.first(), s.first()) {
        (None, None) => true,
        (Some(b'*'), _) => oracle_glob(&p[1..], s) || (!s.is_empty() && oracle_glob(p, &s[1..])),
        (Some(b'?'), Some(_)) => oracle_glob(&p[1..], &s[1..]),
        (Some(a), Some(b)) if a == b => oracle_glob(&p[1..], &s[1..]),
        _ => false,
    }
}

fn oracle_cmp(lhs: &str, op: &str, rhs: &str) -> bool {
    let ord = match (lhs.parse::<i64>(), rhs.parse::<i64>()) {
        (Ok(a), Ok(b)) => a.cmp(&b),
        _ => lhs.cmp(rhs),
    };
    match op {
        "==" => ord.is_eq(),
        "!=" => ord.is_ne(),
        "<" => ord.is_lt(),
        "<=" => ord.is_le(),
        ">" => ord.is_gt(),
        _ => ord.is_ge(),
    }
}

fn oracle_eval(t: &Tree, ctx: &BTreeMap<String, String>) -> bool {
    match t {
        Tree::Atom(Atom::Lit(b)) => *b,
        // A missing attribute makes every comparison false.
        Tree::Atom(Atom::Cmp(k, op, v, _)) => ctx.get(*k).is_some_and(|a| oracle_cmp(a, op, v)),
        Tree::Atom(Atom::In(k, set)) => ctx.get(*k).is_some_and(|a| set.contains(&a.as_str())),
        Tree::Atom(Atom::Glob(k, p)) => ctx.get(*k).is_some_and(|a| oracle_glob(p.as_bytes(), a.as_bytes())),
        Tree::Not(inner) => !oracle_eval(inner, ctx),
        Tree::All(ts) => ts.iter().all(|t| oracle_eval(t, ctx)),
        Tree::Any(ts) => ts.iter().any(|t| oracle_eval(t, ctx)),
    }
}

fn oracle_equivalence() -> Result<String, String> {
    const PAIRS: usize = 10_000;
    let mut rng = StdRng::seed_from_u64(0x1c9);
    let subject = workload("/svc");
    let (mut permits, mut denies) = (0, 0);
    for case in 0..PAIRS {
        let n = rng.gen_range(0..=8);
        let policies: Vec<(bool, Tree)> = (0..n).map(|_| (rng.gen_bool(0.6), gen_tree(&mut rng, 3))).collect();
        let src: String = policies
            .iter()
            .enumerate()
            .map(|(i, (permit, t))| format!("{} p{i} when {};\n", if *permit { "permit" } else { "deny" }, render(t)))
            .collect();
        let ps = parse_policy_set(&src).map_err(|e| format!("case {case}: {e}\n{src}"))?;
        let mut req = RequestContext::new(subject.clone(), "act", "res");
        for k in KEYS {
            if rng.gen_bool(0.8) {
                req.context.insert(k.to_owned(), VALUES[rng.gen_range(0..VALUES.len())].to_owned());
            }
        }
        let mut matched_permit = BTreeSet::new();
        let mut matched_deny = BTreeSet::new();
        for (i, (permit, t)) in policies.iter().enumerate() {
            if oracle_eval(t, &req.context) {
                if *permit { &mut matched_permit } else { &mut matched_deny }.insert(format!("p{i}"));
            }
        }
        let expected = if !matched_deny.is_empty() || matched_permit.is_empty() {
            Outcome::Deny
        } else {
            Outcome::Permit
        };
        let d = evaluate(&ps, &req);
        let got: BTreeSet<String> = d.trace.iter().filter(|t| t.matched).map(|t| t.policy_id.clone()).collect();
        let want: BTreeSet<String> = matched_permit.union(&matched_deny).cloned().collect();
        ensure!(
            d.outcome == expected && got == want,
            "case {case}: got {:?} {got:?}, oracle {expected:?} {want:?}\ncontext {:?}\n{src}",
            d.outcome,
            req.context
        );
        match expected {
            Outcome::Permit => permits += 1,
            Outcome::Deny => denies += 1,
        }
    }
    Ok(format!("{PAIRS} pairs, 0 divergences ({permits} permit, {denies} deny)"))
}

// 3. Token round-trip and tamper

fn token_suite() -> Result<String, String> {
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let plane = in_memory("a.example", r#"permit issue when action == "token.issue";"#, clock);
    let mut tokens = Vec::new();
    for i in 0..100 {
        let subject = if i % 2 == 0 {
            Assertion::Spiffe(format!("spiffe://a.example/svc/{i}"))
        } else {
            Assertion::Automation(AutomationAssertion {
                platform: "github".into(),
                pipeline: format!("deploy-{i}"),
                run_id: i.to_string(),
                claims: BTreeMap::new(),
            })
        };
        let token = plane
            .issue(IssueRequest {
                subject,
                scope: Scope::new(format!("res/{i}"), &["read", "write"]),
                context: [("ticket".to_owned(), format!("CHG-{i}"))].into(),
                ttl_seconds: 120,
            })
            .map_err(|e| e.to_string())?;
        let (_, claims) = plane.validate(&token).map_err(|e| format!("token {i}: {e}"))?;
        let payload = token.split('.').nth(1).unwrap();
        let original = canonical::b64url_decode(payload).unwrap();
        ensure!(canonical::to_vec(&claims).unwrap() == original, "token {i}: claims differ after validation");
        tokens.push(token);
    }

    let target = tokens[0].as_bytes().to_vec();
    let (mut tried, mut escapes) = (0usize, 0usize);
    for pos in 0..target.len() {
        for b in 0..=255u8 {
            if b == target[pos] {
                continue;
            }
            tried += 1;
            let mut m = target.clone();
            m[pos] = b;
            // Bytes that are not UTF-8 cannot even be submitted as a token.
            if let Ok(s) = std::str::from_utf8(&m) {
                if plane.validate(s).is_ok() {
                    escapes += 1;
                }
            }
        }
    }
    ensure!(escapes == 0, "{escapes} of {tried} single-byte mutations validated");
    Ok(format!("100 tokens round-trip byte-identical; {tried} single-byte mutations, 0 escapes"))
}

// 4. Audit tamper evidence

fn independent_chain(bytes: &[u8]) -> Result<usize, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let mut prev = GENESIS_HASH.to_owned();
    let mut n = 0;
    for line in text.lines() {
        let mut v: serde_json::Map<String, Value> = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let stored = v.remove("hash").and_then(|h| h.as_str().map(str::to_owned)).ok_or("no hash")?;
        ensure!(v["prev_hash"] == prev, "line {n}: prev_hash does not link");
        // serde_json's default map is ordered by key, so this is the canonical body.
        let body = serde_json::to_string(&v).map_err(|e| e.to_string())?;
        let mut h = Sha256::new();
        h.update(hex::decode(&prev).map_err(|e| e.to_string())?);
        h.update(body.as_bytes());
        let computed = hex::encode(h.finalize());
        ensure!(computed == stored, "line {n}: recomputed {computed}, stored {stored}");
        prev = stored;
        n += 1;
    }
    Ok(n)
}

fn audit_tamper() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("audit.log");
    let log = AuditLog::open(&path).map_err(|e| e.to_string())?;
    let ps = parse_policy_set(r#"permit p when context.env == "dev";"#).unwrap();
    for i in 0..50i64 {
        let event = match i % 3 {
            0 => {
                let req = RequestContext::new(workload("/svc"), "read", format!("r{i}"))
                    .with_context("env", if i % 2 == 0 { "dev" } else { "prod" });
                let d = evaluate(&ps, &req);
                AuditEvent::new(RecordKind::Decision, i, ps.version()).with_request(req).with_decision(d)
            }
            1 => AuditEvent::new(RecordKind::Revocation, i, ps.version()).with_txn(format!("txn-{i}")),
            _ => AuditEvent::new(RecordKind::BundleSync, i, ps.version()).with_note(format!("import b{i} sequence=1")),
        };
        log.append(event).map_err(|e| e.to_string())?;
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let status = verify_file(&path).map_err(|e| e.to_string())?;
    ensure!(status.ok && status.records == 50, "untampered log failed: {status:?}");
    let n = independent_chain(&bytes)?;
    ensure!(n == 50, "independent recomputation saw {n} records");

    // Record (1-based seq) that owns each byte; a line's newline belongs to it.
    let mut owner = Vec::with_capacity(bytes.len());
    let mut seq = 1u64;
    for &b in &bytes {
        owner.push(seq);
        if b == b'\n' {
            seq += 1;
        }
    }
    let mut mutated = bytes.clone();
    let mut flips = 0usize;
    for pos in 0..bytes.len() {
        for bit in 0..8 {
            mutated[pos] ^= 1 << bit;
            let s = verify_bytes_sequential(&mutated);
            // The data-parallel verifier must agree; sampled to bound runtime.
            if pos % 8 == bit && verify_bytes(&mutated) != s {
                return Err(format!("flip byte {pos} bit {bit}: parallel and sequential verifiers disagree"));
            }
            mutated[pos] ^= 1 << bit;
            flips += 1;
            match s.first_bad_seq {
                Some(bad) if !s.ok && bad <= owner[pos] => {}
                _ => return Err(format!("flip byte {pos} bit {bit} (record {}): {s:?}", owner[pos])),
            }
        }
    }
    Ok(format!(
        "50 records verify and match independent SHA-256; {flips} single-bit flips all detected at or before the mutated record"
    ))
}

// 5. Replay exactness

const REPLAY_BASE: &str = r#"permit deploy when action == "deploy" and context.tier != "frozen";"#;
const REPLAY_DENY: &str = r#"deny prod when context.environment == "prod";"#;

fn replay_exactness() -> Result<String, String> {
    let d = serve(in_memory("a.example", REPLAY_BASE, Arc::new(ManualClock::new(0))));
    let api = Api::new(&d);
    let envs = ["dev", "staging", "prod"];
    let tiers = ["web", "frozen", "batch", "db"];
    let mut requests = Vec::new();
    for i in 0..20 {
        let req = RequestContext::new(workload("/deployer"), "deploy", format!("svc-{i}"))
            .with_context("environment", envs[i % 3])
            .with_context("tier", tiers[i % 4]);
        let (status, v) = api.call("POST", "/v1/decide", Some(&serde_json::to_value(&req).unwrap()));
        ensure!(status == 200, "decide failed: {v}");
        requests.push(req);
    }
    // Prediction from the contexts alone: previously permitted (tier not
    // frozen) prod deploys flip.
    let predicted: Vec<u64> = (0..20)
        .filter(|&i| envs[i % 3] == "prod" && tiers[i % 4] != "frozen")
        .map(|i| i as u64 + 1)
        .collect();

    let old = parse_policy_set(REPLAY_BASE).unwrap();
    let new_src = format!("{REPLAY_BASE}\n{REPLAY_DENY}");
    let new = parse_policy_set(&new_src).unwrap();
    let direct: Vec<u64> = requests
        .iter()
        .enumerate()
        .filter(|(_, r)| evaluate(&old, r).outcome != evaluate(&new, r).outcome)
        .map(|(i, _)| i as u64 + 1)
        .collect();
    ensure!(direct == predicted, "direct evaluation {direct:?} disagrees with prediction {predicted:?}");

    let (_, report) = api.call("POST", "/v1/audit/replay", Some(&json!({"source": new_src})));
    let entries = report["entries"].as_array().ok_or(format!("bad report {report}"))?;
    let flipped: Vec<u64> = entries.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    ensure!(flipped == predicted, "replay flipped {flipped:?}, predicted {predicted:?}");
    for e in entries {
        ensure!(
            e["old_outcome"] == "permit" && e["new_outcome"] == "deny" && e["differing_policy_ids"] == json!(["prod"]),
            "unexpected entry {e}"
        );
    }
    ensure!(report["old_version"] == old.version() && report["new_version"] == new.version(), "versions {report}");

    let (_, same) = api.call("POST", "/v1/audit/replay", Some(&json!({"policy_version": old.version()})));
    ensure!(same["entries"] == json!([]), "self-replay not empty: {same}");
    Ok(format!("20 decisions, exactly seqs {predicted:?} flip; self-replay empty"))
}

// 6. Federation

fn federation() -> Result<String, String> {
    let clock = Arc::new(ManualClock::new(1_000));
    let a = serve(in_memory("a.example", r#"permit issue when action == "token.issue";"#, clock.clone()));
    let b = serve(in_memory(
        "b.example",
        r#"permit cross when action == "read" and subject.trust_domain == "a.example";"#,
        clock,
    ));
    let (api_a, api_b) = (Api::new(&a), Api::new(&b));
    let issue = json!({
        "subject": {"spiffe": "spiffe://a.example/analytics"},
        "scope": {"resource": "b/dataset", "actions": ["read"]},
        "context": {"purpose": "report"},
        "ttl_seconds": 300
    });
    let (_, t) = api_a.call("POST", "/v1/tokens", Some(&issue));
    let req = json!({"token": t["token"], "action": "read", "resource": "b/dataset"});
    let decide = || api_b.call("POST", "/v1/decide", Some(&req));

    let (status, v) = decide();
    ensure!(status == 401 && v["detail"]["code"] == "unknown_trust_domain", "before import: {status} {v}");
    let (_, bundle1) = api_a.call("GET", "/v1/trust-bundle", None);
    let (status, v) = api_b.call("PUT", "/v1/federation/bundles", Some(&bundle1));
    ensure!(status == 200, "import: {v}");
    let (status, v) = decide();
    ensure!(status == 200 && v["outcome"] == "permit", "after import: {status} {v}");

    let (status, _) = api_b.call("DELETE", "/v1/federation/bundles/a.example", None);
    ensure!(status == 200, "remove failed");
    let (status, v) = decide();
    ensure!(status == 401 && v["detail"]["code"] == "unknown_trust_domain", "after removal: {status} {v}");

    let (status, v) = api_b.call("PUT", "/v1/federation/bundles", Some(&bundle1));
    ensure!(status == 409 && v["error"] == "stale_bundle", "stale re-import accepted: {status} {v}");

    // A fresh sequence from A is accepted again.
    a.plane().rotate_key().map_err(|e| e.to_string())?;
    let (_, bundle2) = api_a.call("GET", "/v1/trust-bundle", None);
    let (status, v) = api_b.call("PUT", "/v1/federation/bundles", Some(&bundle2));
    ensure!(status == 200, "newer bundle rejected: {v}");
    let (status, v) = decide();
    ensure!(status == 200 && v["outcome"] == "permit", "after re-import: {status} {v}");
    let (status, v) = api_b.call("PUT", "/v1/federation/bundles", Some(&bundle1));
    ensure!(status == 409, "older sequence accepted after newer: {v}");
    Ok("reject before import, permit after, reject after removal, stale sequences rejected".into())
}

// 7. Mode equivalence

const MODE_POLICIES: &str = r#"
permit issue when action == "token.issue";
permit read when action == "read" and context.clearance >= 2;
permit write when action == "write" and subject.path matches "/team/*" and context.env in ["dev", "staging"];
deny night when context.hour < 6;
deny frozen when resource.id matches "*-frozen";
"#;

fn mode_equivalence() -> Result<String, String> {
    let d = serve(in_memory("a.example", MODE_POLICIES, Arc::new(ManualClock::new(50_000))));
    let api = Api::new(&d);
    let mut rng = StdRng::seed_from_u64(7);
    let mut tokens = Vec::new();
    for i in 0..5 {
        let (status, t) = api.call(
            "POST",
            "/v1/tokens",
            Some(&json!({
                "subject": {"spiffe": format!("spiffe://a.example/team/{i}")},
                "scope": {"resource": "doc", "actions": ["read", "write"]},
                "context": {"clearance": (i % 4).to_string()},
                "ttl_seconds": 600
            })),
        );
        ensure!(status == 200, "issue failed: {t}");
        tokens.push(t["token"].as_str().unwrap().to_owned());
    }
    let mut permits = 0;
    for i in 0..100 {
        let action = ["read", "write", "delete"][rng.gen_range(0..3)];
        let resource = ["doc", "doc-frozen", "other"][rng.gen_range(0..3)];
        let mut ctx = BTreeMap::new();
        ctx.insert("hour".to_owned(), rng.gen_range(0..24).to_string());
        ctx.insert("env".to_owned(), ["dev", "staging", "prod"][rng.gen_range(0..3)].to_owned());
        let body: Value = if i % 2 == 0 {
            let t = &tokens[rng.gen_range(0..tokens.len())];
            serde_json::to_value(DecisionRequest::Token(TokenDecisionRequest {
                token: t.clone(),
                action: action.into(),
                resource: resource.into(),
                context: ctx,
            }))
            .unwrap()
        } else {
            let path = ["/team/a", "/ops/b"][rng.gen_range(0..2)];
            let mut req = RequestContext::new(workload(path), action, resource);
            req.context = ctx;
            req.context.insert("clearance".into(), rng.gen_range(0..4).to_string());
            serde_json::to_value(req).unwrap()
        };
        let (s1, sim) = api.call("POST", "/v1/simulate", Some(&body));
        let (s2, dec) = api.call("POST", "/v1/decide", Some(&body));
        ensure!(s1 == 200 && s2 == 200, "request {i}: {sim} / {dec}");
        ensure!(sim == dec, "request {i}: simulate {sim} != decide {dec}");
        if dec["outcome"] == "permit" {
            permits += 1;
        }
    }
    let records = d.plane().audit_log().records();
    let count = |k: RecordKind| records.iter().filter(|r| r.kind == k).count();
    let (sims, decs) = (count(RecordKind::Simulation), count(RecordKind::Decision));
    ensure!(sims == 100 && decs == 100, "{sims} simulation vs {decs} decision records");

    // Denying everything flips exactly the permitted decisions, never a simulation.
    let (_, report) = api.call("POST", "/v1/audit/replay", Some(&json!({"source": "deny all when true;"})));
    let seqs: Vec<u64> = report["entries"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    ensure!(seqs.len() == permits, "replay reported {} entries, {permits} permitted decisions", seqs.len());
    for s in &seqs {
        let kind = records.iter().find(|r| r.seq == *s).map(|r| r.kind);
        ensure!(kind == Some(RecordKind::Decision), "replay touched seq {s} of kind {kind:?}");
    }
    Ok(format!("100 requests identical in both modes ({permits} permit); 100/100 records; replay saw decisions only"))
}

// 8. Expiry and skew

fn expiry_boundaries() -> Result<String, String> {
    let iat = 1_800_000_000;
    let clock = Arc::new(ManualClock::new(iat));
    let plane = in_memory("a.example", r#"permit issue when action == "token.issue";"#, clock.clone());
    let skew = plane.clock_skew();
    let token = plane
        .issue(IssueRequest {
            subject: Assertion::Spiffe("spiffe://a.example/job".into()),
            scope: Scope::new("r", &["x"]),
            context: BTreeMap::new(),
            ttl_seconds: 60,
        })
        .map_err(|e| e.to_string())?;
    let exp = iat + 60;
    let at = |t: i64| {
        clock.set(t);
        plane.validate(&token).map(|_| ())
    };
    ensure!(at(exp + skew).is_ok(), "rejected at exp + skew");
    ensure!(at(exp + skew + 1) == Err(TokenError::Expired), "not Expired at exp + skew + 1");
    ensure!(at(iat - skew).is_ok(), "rejected at iat - skew");
    ensure!(at(iat - skew - 1) == Err(TokenError::NotYetValid), "not NotYetValid at iat - skew - 1");
    Ok(format!("skew {skew}s: ok at exp+skew, Expired at exp+skew+1, ok at iat-skew, NotYetValid at iat-skew-1"))
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("latency", latency),
        ("deny-overrides oracle equivalence", oracle_equivalence),
        ("token round-trip and tamper", token_suite),
        ("audit tamper evidence", audit_tamper),
        ("replay divergence exactness", replay_exactness),
        ("federation", federation),
        ("mode equivalence", mode_equivalence),
        ("expiry and skew boundaries", expiry_boundaries),
    ];
    // Optional criterion numbers on the command line select a subset.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: {name}: FAIL ({e}) [{secs:.1}s]", i + 1);
            }
        }
    }
    let ran = if only.is_empty() { checks.len() } else { only.len() };
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
