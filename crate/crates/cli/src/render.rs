//! Plain-text renderings. `--json` output bypasses all of this.

use std::fmt::Write;

use icp_core::audit::{AuditRecord, ChainStatus, DivergenceReport};
use icp_core::broker::TokenClaims;
use icp_core::identity::UnifiedIdentity;
use icp_core::policy::{Decision, LintWarning, Outcome};
use icp_service::bench::BenchReport;

pub fn outcome(o: Outcome) -> &'static str {
    match o {
        Outcome::Permit => "permit",
        Outcome::Deny => "deny",
    }
}

pub fn identity(id: &UnifiedIdentity) -> String {
    let mut s = format!("kind: {}\ntrust_domain: {}\nuri: {}\n", id.kind, id.trust_domain, id.canonical_uri);
    if !id.attributes.is_empty() {
        s.push_str("attributes:\n");
        for (k, v) in &id.attributes {
            let _ = writeln!(s, "  {k} = {v}");
        }
    }
    s
}

pub fn decision(d: &Decision) -> String {
    let mut s = format!("outcome: {}\n", outcome(d.outcome));
    if let Some(r) = &d.reason {
        let _ = writeln!(s, "reason: {r}");
    }
    let _ = writeln!(s, "policy_version: {}", d.policy_version);
    if !d.trace.is_empty() {
        s.push_str("trace:\n");
        for t in &d.trace {
            let mark = if t.matched { '+' } else { '.' };
            let _ = writeln!(s, "  {mark} {} {}", t.effect, t.policy_id);
        }
    }
    s
}

pub fn lint(policies: usize, warnings: &[LintWarning]) -> String {
    let mut s = String::new();
    for w in warnings {
        let code = serde_json::to_value(w.code).ok();
        let code = code.as_ref().and_then(|c| c.as_str()).unwrap_or("lint");
        let _ = writeln!(s, "warning[{code}] {}: {}", w.policy_id, w.message);
    }
    let _ = writeln!(s, "{policies} policies, {} warnings", warnings.len());
    s
}

pub fn claims(td: &str, c: &TokenClaims) -> String {
    let mut s = format!(
        "txn: {}\nsub: {}\nkind: {}\ntrust_domain: {td}\nscope: {}:{}\niat: {}\nexp: {}\n",
        c.txn,
        c.sub,
        c.kind,
        c.scope.resource,
        c.scope.actions.join(","),
        c.iat,
        c.exp
    );
    for (k, v) in &c.context {
        let _ = writeln!(s, "context.{k}: {v}");
    }
    s
}

pub fn chain(status: &ChainStatus) -> String {
    match status.first_bad_seq {
        None => format!("ok: {} records, chain intact\n", status.records),
        Some(seq) => format!("chain invalid at seq {seq} ({} records)\n", status.records),
    }
}

pub fn replay(r: &DivergenceReport) -> String {
    let old = if r.old_version.is_empty() { "(no decisions)" } else { &r.old_version };
    let mut s = format!("replay {old} -> {}: {} divergent decisions\n", r.new_version, r.entries.len());
    for e in &r.entries {
        let _ = write!(s, "  seq {}: {} -> {}", e.seq, outcome(e.old_outcome), outcome(e.new_outcome));
        if !e.differing_policy_ids.is_empty() {
            let _ = write!(s, " ({})", e.differing_policy_ids.join(", "));
        }
        s.push('\n');
    }
    s
}

pub fn records(records: &[AuditRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let kind = serde_json::to_value(r.kind).ok();
        let _ = write!(s, "{:>6} {} {}", r.seq, r.timestamp, kind.as_ref().and_then(|k| k.as_str()).unwrap_or("?"));
        if let Some(d) = &r.decision {
            let _ = write!(s, " {}", outcome(d.outcome));
        }
        if let Some(q) = &r.request {
            let res = q.resource.get("id").map(String::as_str).unwrap_or("-");
            let _ = write!(s, " {} {} {}", q.subject.canonical_uri, q.action, res);
        }
        if let Some(t) = &r.txn {
            let _ = write!(s, " txn={t}");
        }
        if r.simulated_subject {
            s.push_str(" simulated");
        }
        if let Some(n) = &r.note {
            let _ = write!(s, " ({n})");
        }
        s.push('\n');
    }
    s
}

pub fn bench(r: &BenchReport) -> String {
    format!(
        "{} iterations, {} policies\nissuance  p50 {:.3} ms  p95 {:.3} ms\ndecision  p50 {:.3} ms  p95 {:.3} ms\n",
        r.iterations, r.policy_count, r.issuance_p50_ms, r.issuance_p95_ms, r.decision_p50_ms, r.decision_p95_ms
    )
}
