//! Latency benchmark over the full issuance and decision paths, including
//! signing, validation and durable audit appends.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use icp_core::broker::Scope;
use icp_core::clock::SystemClock;
use icp_core::identity::Assertion;
use serde::{Deserialize, Serialize};

use crate::api::{DecisionRequest, IssueRequest, TokenDecisionRequest};
use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::plane::ControlPlane;

pub const BENCH_TRUST_DOMAIN: &str = "bench.example";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub policy_count: usize,
    pub issuance_p50_ms: f64,
    pub issuance_p95_ms: f64,
    pub decision_p50_ms: f64,
    pub decision_p95_ms: f64,
}

/// `n` policies: one issuance rule, the rest a mix of permits and denies over
/// subject, resource and context attributes.
pub fn synthetic_policies(n: usize) -> String {
    let mut src = String::from("permit issue when action == \"token.issue\" and subject.kind == \"workload\";\n");
    for i in 1..n {
        let line = match i % 5 {
            0 => format!("deny d{i} when context.environment == \"env{i}\" and subject.path matches \"/blocked/*\";\n"),
            1 => format!("permit p{i} when action == \"deploy\" and resource.id matches \"svc-{}*\";\n", i % 7),
            2 => format!("permit p{i} when subject.path in [\"/ci/builder\", \"/ci/n{i}\"] and context.branch == \"main\";\n"),
            3 => format!("permit p{i} when context.change_ticket >= \"{i}\" or context.tier == \"t{i}\";\n"),
            _ => format!("deny d{i} when not (context.environment matches \"env*\") and resource.id == \"x{i}\";\n"),
        };
        src.push_str(&line);
    }
    src
}

/// Nearest-rank percentile of sorted milliseconds.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Reported to the microsecond.
fn summarize(mut samples: Vec<f64>) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let us = |ms: f64| (ms * 1000.0).round() / 1000.0;
    (us(percentile(&samples, 50.0)), us(percentile(&samples, 95.0)))
}

/// Runs `iterations` issuances and `iterations` token-form decisions against
/// a scratch daemon state with a file-backed audit log.
pub fn run(iterations: usize, policy_count: usize) -> Result<BenchReport, ServiceError> {
    let storage = |e: std::io::Error| ServiceError::Storage(e.to_string());
    let dir = tempfile::tempdir().map_err(storage)?;
    let cfg = ServiceConfig::new(BENCH_TRUST_DOMAIN, dir.path());
    std::fs::create_dir_all(&cfg.policy_dir).map_err(storage)?;
    let src = synthetic_policies(policy_count.max(1));
    std::fs::write(cfg.policy_dir.join("bench.ipl"), &src).map_err(storage)?;
    let plane = ControlPlane::from_config(&cfg, Arc::new(SystemClock))?;
    let policy_count = plane.current_policies().len();

    let request = IssueRequest {
        subject: Assertion::Spiffe(format!("spiffe://{BENCH_TRUST_DOMAIN}/ci/builder")),
        scope: Scope::new("svc-3-api", &["deploy"]),
        context: [("branch".to_owned(), "main".to_owned())].into(),
        ttl_seconds: 600,
    };
    let mut issuance = Vec::with_capacity(iterations);
    let mut decision = Vec::with_capacity(iterations);
    let mut extra = BTreeMap::new();
    extra.insert("environment".to_owned(), "env-staging".to_owned());
    for _ in 0..iterations {
        let t = Instant::now();
        let token = plane.issue(request.clone())?;
        issuance.push(t.elapsed().as_secs_f64() * 1e3);

        let t = Instant::now();
        plane.decide(DecisionRequest::Token(TokenDecisionRequest {
            token,
            action: "deploy".into(),
            resource: "svc-3-api".into(),
            context: extra.clone(),
        }))?;
        decision.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (issuance_p50_ms, issuance_p95_ms) = summarize(issuance);
    let (decision_p50_ms, decision_p95_ms) = summarize(decision);
    Ok(BenchReport {
        iterations,
        policy_count,
        issuance_p50_ms,
        issuance_p95_ms,
        decision_p50_ms,
        decision_p95_ms,
    })
}
