//! Executable end-to-end scenarios. Each one starts in-process daemons on
//! loopback ports, drives them over HTTP with a shared manual clock and
//! checks every step's outcome. Every decision a daemon returns is also
//! re-evaluated locally from the audited request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use icp_core::audit::{AuditRecord, ChainStatus, RecordKind};
use icp_core::broker::{decode_unverified, KeyPair};
use icp_core::clock::ManualClock;
use icp_core::policy::{self, parse_policy_set, Decision, Outcome, PolicySet};
use icp_service::http::{self, DaemonHandle};
use icp_service::ControlPlane;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{segment, ClientError, DaemonClient};

pub struct Embedded {
    pub name: &'static str,
    pub script: &'static str,
    pub files: &'static [(&'static str, &'static str)],
}

macro_rules! scenario {
    ($name:literal, [$($file:literal),*]) => {
        Embedded {
            name: $name,
            script: include_str!(concat!("../scenarios/", $name, "/scenario.json")),
            files: &[$(($file, include_str!(concat!("../scenarios/", $name, "/", $file)))),*],
        }
    };
}

pub static SCENARIOS: &[Embedded] = &[
    scenario!("onboarding", ["workloads.ipl"]),
    scenario!("cicd-deploy", ["pipeline.ipl"]),
    scenario!("ephemeral-access", ["access.ipl"]),
    scenario!("cross-domain", ["corp-a.ipl", "partner-b.ipl"]),
];

pub fn find(name: &str) -> Option<&'static Embedded> {
    SCENARIOS.iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub name: String,
    pub description: String,
    pub start_time: i64,
    pub daemons: Vec<DaemonSpec>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaemonSpec {
    pub name: String,
    pub trust_domain: String,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Issue,
    Decide,
    Simulate,
    Revoke,
    Advance,
    ExportBundle,
    ImportBundle,
    RemoveBundle,
    AuditCount,
    AuditVerify,
}

impl Op {
    fn needs_daemon(self) -> bool {
        self != Op::Advance
    }
}

/// One step. Which fields apply depends on `op`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub name: String,
    pub op: Op,
    #[serde(default)]
    pub daemon: Option<String>,
    #[serde(default)]
    pub request: Option<Value>,
    #[serde(default)]
    pub subject: Option<Value>,
    #[serde(default)]
    pub scope: Option<Value>,
    #[serde(default)]
    pub context: Option<Value>,
    #[serde(default)]
    pub ttl_seconds: Option<i64>,
    #[serde(default)]
    pub seconds: Option<i64>,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub bundle: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub kind: Option<RecordKind>,
    #[serde(default)]
    pub save_as: Option<String>,
    #[serde(default)]
    pub expect: Expect,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub outcome: Option<Outcome>,
    pub reason: Option<String>,
    /// Policy ids that must appear as matched in the trace.
    #[serde(default)]
    pub matched: Vec<String>,
    /// Wire error code; the step must fail with it.
    pub error: Option<String>,
    /// `detail.code` of that error.
    pub code: Option<String>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub description: String,
    pub passed: bool,
    pub steps: Vec<StepReport>,
}

impl ScenarioReport {
    pub fn render(&self) -> String {
        let ok = self.steps.iter().filter(|s| s.passed).count();
        let mut out = format!(
            "scenario {}: {} ({ok}/{} steps)\n",
            self.scenario,
            if self.passed { "PASS" } else { "FAIL" },
            self.steps.len()
        );
        for s in &self.steps {
            let mark = if s.passed { "ok  " } else { "FAIL" };
            out.push_str(&format!("  [{mark}] {:>2} {}: {}\n", s.index, s.name, s.detail));
        }
        out
    }
}

struct Daemon {
    // Keeps the server alive for the run.
    _handle: DaemonHandle,
    client: DaemonClient,
    policies: PolicySet,
}

pub fn parse_script(e: &Embedded) -> Result<Script, String> {
    serde_json::from_str(e.script).map_err(|err| format!("{}/scenario.json: {err}", e.name))
}

fn policies_for(e: &Embedded, spec: &DaemonSpec) -> Result<PolicySet, String> {
    let mut source = String::new();
    for name in &spec.policies {
        let (_, text) = e
            .files
            .iter()
            .find(|(f, _)| f == name)
            .ok_or_else(|| format!("{}: no policy file {name}", e.name))?;
        source.push_str(text);
        source.push('\n');
    }
    parse_policy_set(&source).map_err(|err| format!("{}: {err}", e.name))
}

/// Runs a scenario. `Err` means the scenario itself is broken or the
/// daemons could not start; step failures land in the report.
pub fn run(e: &Embedded) -> Result<ScenarioReport, String> {
    let script = parse_script(e)?;
    let clock = Arc::new(ManualClock::new(script.start_time));
    let loopback: SocketAddr = "127.0.0.1:0".parse().expect("literal address");
    let mut daemons = BTreeMap::new();
    for spec in &script.daemons {
        let policies = policies_for(e, spec)?;
        let plane = ControlPlane::in_memory(&spec.trust_domain, vec![KeyPair::generate()], policies.clone(), clock.clone())
            .map_err(|err| format!("daemon {}: {err}", spec.name))?;
        let handle = http::spawn(Arc::new(plane), loopback).map_err(|err| format!("daemon {}: {err}", spec.name))?;
        let client = DaemonClient::new(&handle.url());
        daemons.insert(spec.name.clone(), Daemon { _handle: handle, client, policies });
    }

    let mut runner = Runner { daemons, clock, vars: BTreeMap::new() };
    let steps: Vec<StepReport> = script
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let (passed, detail) = match runner.step(step) {
                Ok(detail) => (true, detail),
                Err(detail) => (false, detail),
            };
            StepReport { index: i + 1, name: step.name.clone(), passed, detail }
        })
        .collect();
    Ok(ScenarioReport {
        scenario: script.name,
        description: script.description,
        passed: steps.iter().all(|s| s.passed),
        steps,
    })
}

struct Runner {
    daemons: BTreeMap<String, Daemon>,
    clock: Arc<ManualClock>,
    vars: BTreeMap<String, Value>,
}

fn need<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T, String> {
    field.as_ref().ok_or_else(|| format!("step is missing `{name}`"))
}

impl Runner {
    fn daemon(&self, step: &Step) -> Result<&Daemon, String> {
        let name = need(&step.daemon, "daemon")?;
        self.daemons.get(name).ok_or_else(|| format!("no daemon named {name}"))
    }

    fn substitute(&self, v: &Value) -> Result<Value, String> {
        Ok(match v {
            Value::String(s) if s.starts_with('$') => {
                self.vars.get(&s[1..]).cloned().ok_or_else(|| format!("undefined variable {s}"))?
            }
            Value::Array(items) => Value::Array(items.iter().map(|x| self.substitute(x)).collect::<Result<_, _>>()?),
            Value::Object(map) => Value::Object(
                map.iter()
                    .map(|(k, x)| Ok((k.clone(), self.substitute(x)?)))
                    .collect::<Result<_, String>>()?,
            ),
            other => other.clone(),
        })
    }

    fn var_string(&self, raw: &str) -> Result<String, String> {
        match self.substitute(&Value::String(raw.to_owned()))? {
            Value::String(s) => Ok(s),
            other => Ok(other.to_string()),
        }
    }

    fn step(&mut self, step: &Step) -> Result<String, String> {
        if step.op.needs_daemon() {
            self.daemon(step)?;
        }
        let result = self.execute(step)?;
        let value = match (result, &step.expect.error) {
            (Err(e), Some(want)) => {
                if e.code() != want {
                    return Err(format!("expected {want}, got {e}"));
                }
                if let Some(code) = &step.expect.code {
                    if e.sub_code() != Some(code.as_str()) {
                        return Err(format!("expected {want}/{code}, got {e}"));
                    }
                }
                return Ok(match e.sub_code() {
                    Some(sub) => format!("{want} ({sub}) as expected"),
                    None => format!("{want} as expected"),
                });
            }
            (Err(e), None) => return Err(e.to_string()),
            (Ok(_), Some(want)) => return Err(format!("expected {want}, but the call succeeded")),
            (Ok(v), None) => v,
        };
        let detail = self.check(step, &value)?;
        if let Some(name) = &step.save_as {
            self.vars.insert(name.clone(), value);
        }
        Ok(detail)
    }

    fn execute(&self, step: &Step) -> Result<Result<Value, ClientError>, String> {
        if step.op == Op::Advance {
            let secs = *need(&step.seconds, "seconds")?;
            self.clock.advance(secs);
            return Ok(Ok(Value::Null));
        }
        let client = &self.daemon(step)?.client;
        Ok(match step.op {
            Op::Issue => {
                let mut body = json!({
                    "subject": self.substitute(need(&step.subject, "subject")?)?,
                    "scope": self.substitute(need(&step.scope, "scope")?)?,
                    "ttl_seconds": need(&step.ttl_seconds, "ttl_seconds")?,
                });
                if let Some(ctx) = &step.context {
                    body["context"] = self.substitute(ctx)?;
                }
                client.post("/v1/tokens", &body).map(|r| r["token"].clone())
            }
            Op::Decide => client.post("/v1/decide", &self.substitute(need(&step.request, "request")?)?),
            Op::Simulate => client.post("/v1/simulate", &self.substitute(need(&step.request, "request")?)?),
            Op::Revoke => {
                let compact = self.var_string(need(&step.token, "token")?)?;
                let token = decode_unverified(&compact).map_err(|e| format!("cannot read token: {e}"))?;
                client.post("/v1/tokens/revoke", &json!({"txn": token.claims.txn}))
            }
            Op::ExportBundle => client.get("/v1/trust-bundle"),
            Op::ImportBundle => {
                let bundle = self.substitute(&Value::String(need(&step.bundle, "bundle")?.clone()))?;
                let body = icp_core::canonical::value_to_string(&bundle);
                client.put_raw("/v1/federation/bundles", body)
            }
            Op::RemoveBundle => {
                let domain = self.var_string(need(&step.domain, "domain")?)?;
                client.delete(&format!("/v1/federation/bundles/{}", segment(&domain)))
            }
            Op::AuditCount => {
                let kind = *need(&step.kind, "kind")?;
                client.get("/v1/audit/records").and_then(|v| {
                    let records: Vec<AuditRecord> =
                        serde_json::from_value(v).map_err(|e| ClientError::Transport(e.to_string()))?;
                    Ok(json!(records.iter().filter(|r| r.kind == kind).count()))
                })
            }
            Op::AuditVerify => client.post_empty("/v1/audit/verify"),
            Op::Advance => unreachable!("handled above"),
        })
    }

    fn check(&self, step: &Step, value: &Value) -> Result<String, String> {
        let want = &step.expect;
        match step.op {
            Op::Decide | Op::Simulate => {
                let decision: Decision =
                    serde_json::from_value(value.clone()).map_err(|e| format!("not a decision: {e}"))?;
                if let Some(o) = want.outcome {
                    if decision.outcome != o {
                        return Err(format!("expected {}, got {}", outcome_str(o), describe(&decision)));
                    }
                }
                if want.reason.is_some() && want.reason != decision.reason {
                    return Err(format!("expected reason {:?}, got {}", want.reason, describe(&decision)));
                }
                for id in &want.matched {
                    if !decision.trace.iter().any(|t| t.matched && &t.policy_id == id) {
                        return Err(format!("policy {id} did not match: {}", describe(&decision)));
                    }
                }
                self.cross_check(step, &decision)?;
                Ok(describe(&decision))
            }
            Op::AuditCount => {
                let n = value.as_u64().unwrap_or_default() as usize;
                match want.count {
                    Some(c) if c != n => Err(format!("expected {c} records, got {n}")),
                    _ => Ok(format!("count {n}")),
                }
            }
            Op::AuditVerify => {
                let status: ChainStatus =
                    serde_json::from_value(value.clone()).map_err(|e| format!("not a chain status: {e}"))?;
                if status.ok {
                    Ok(format!("chain intact, {} records", status.records))
                } else {
                    Err(format!("chain broken at seq {}", status.first_bad_seq.unwrap_or_default()))
                }
            }
            Op::Issue => Ok(format!("issued txn {}", txn_of(value).unwrap_or_default())),
            Op::Revoke => Ok("revoked".into()),
            Op::Advance => Ok(format!("clock at {}", icp_core::clock::Clock::now(&*self.clock))),
            Op::ExportBundle => Ok(format!("bundle sequence {}", value["sequence"])),
            Op::ImportBundle => Ok("imported".into()),
            Op::RemoveBundle => Ok("removed".into()),
        }
    }

    /// The newest audit record must hold this decision, and evaluating its
    /// request locally must give the same answer.
    fn cross_check(&self, step: &Step, decision: &Decision) -> Result<(), String> {
        let d = self.daemon(step)?;
        let records: Vec<AuditRecord> = d
            .client
            .get("/v1/audit/records")
            .map_err(|e| e.to_string())
            .and_then(|v| serde_json::from_value(v).map_err(|e| e.to_string()))?;
        let last = records.last().ok_or("decision was not audited")?;
        if last.decision.as_ref() != Some(decision) {
            return Err(format!("audit record {} does not hold the returned decision", last.seq));
        }
        if decision.reason.is_some() {
            return Ok(());
        }
        let request = last.request.as_ref().ok_or("audited decision has no request")?;
        let local = policy::evaluate(&d.policies, request);
        if &local != decision {
            return Err(format!("local evaluation disagrees: {}", describe(&local)));
        }
        Ok(())
    }
}

fn txn_of(token: &Value) -> Option<String> {
    decode_unverified(token.as_str()?).ok().map(|t| t.claims.txn)
}

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Permit => "permit",
        Outcome::Deny => "deny",
    }
}

fn describe(d: &Decision) -> String {
    let matched: Vec<&str> = d.trace.iter().filter(|t| t.matched).map(|t| t.policy_id.as_str()).collect();
    match (&d.reason, matched.is_empty()) {
        (Some(r), _) => format!("{} ({r})", outcome_str(d.outcome)),
        (None, true) => format!("{} (no policy matched)", outcome_str(d.outcome)),
        (None, false) => format!("{} (matched {})", outcome_str(d.outcome), matched.join(", ")),
    }
}
