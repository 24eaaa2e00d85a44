//! `icpctl`: talks to `icpd` over HTTP, and runs lint, evaluation, token
//! validation, audit verification and replay offline against local files.
//!
//! Exit status: 0 success, 1 operation failed or a check came out negative
//! (lint warnings, broken chain, `--expect` mismatch, failed scenario),
//! 2 usage error.

pub mod client;
mod render;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use icp_core::audit::{self, AuditRecord, ChainStatus, DivergenceReport};
use icp_core::broker::{decode_unverified, validate_token, RevocationList, Scope, DEFAULT_SKEW_SECONDS};
use icp_core::canonical;
use icp_core::federation::{BundleStore, TrustBundle};
use icp_core::identity::Assertion;
use icp_core::policy::{self, load_policy_path, Decision, Outcome, PolicySet};
use icp_service::api::{
    DecisionRequest, IssueRequest, PoliciesResponse, ReplayRequest, SimulationRequest, TokenDecisionRequest,
};
use icp_service::config::{ServiceConfig, DEFAULT_LISTEN};
use icp_service::plane::evaluate_claims;
use icp_service::ServiceError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::client::{segment, ClientError, DaemonClient};

pub const DAEMON_ENV: &str = "ICPCTL_DAEMON";

#[derive(Debug, Parser)]
#[command(name = "icpctl", version, about = "Identity control plane client")]
pub struct Cli {
    /// Daemon address, `host:port` or URL. Defaults to `listen` from
    /// --config, then 127.0.0.1:7400.
    #[arg(long, global = true, env = DAEMON_ENV)]
    daemon: Option<String>,
    /// Print canonical JSON, errors included, on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Unix time to validate tokens at. Offline commands only.
    #[arg(long, global = true)]
    now: Option<i64>,
    /// icpd configuration file to take defaults from.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize identity assertions.
    #[command(subcommand)]
    Identity(IdentityCmd),
    /// Lint, evaluate, simulate, show and reload policies.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Issue, validate, decode and revoke transaction tokens.
    #[command(subcommand)]
    Token(TokenCmd),
    /// Export, import and remove federation trust bundles.
    #[command(subcommand)]
    Bundle(BundleCmd),
    /// Verify, replay and read the audit log.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Run the built-in end-to-end scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Measure issuance and decision latency on a scratch daemon state.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
enum IdentityCmd {
    /// Print the unified identity for a SPIFFE ID or assertion.
    Normalize {
        /// A `spiffe://` URI.
        uri: Option<String>,
        /// Assertion JSON, or @file: `{"human": {...}}`, `{"automation": {...}}`.
        #[arg(long, conflicts_with = "uri")]
        assertion: Option<String>,
        /// Trust domain for human and automation assertions.
        #[arg(long)]
        trust_domain: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum PolicyCmd {
    /// Parse and lint IPL files or directories. Warnings exit 1.
    Lint {
        /// Files or directories. Defaults to `policy_dir` from --config.
        paths: Vec<PathBuf>,
    },
    /// Evaluate a request. Offline with --policies, otherwise via the daemon.
    Eval(EvalArgs),
    /// Dry-run a request, also from unsigned claims. Offline with --policies.
    Simulate(EvalArgs),
    /// Print the daemon's active policy set.
    Show,
    /// Make the daemon reload its policy directory.
    Reload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExpectOutcome {
    Permit,
    Deny,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Policy file or directory to evaluate against locally.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Full request body as JSON, or @file.
    #[arg(long, conflicts_with_all = ["token", "action", "resource"])]
    request: Option<String>,
    #[arg(long)]
    token: Option<String>,
    #[arg(long)]
    action: Option<String>,
    #[arg(long)]
    resource: Option<String>,
    /// Extra context, `key=value`. Repeatable.
    #[arg(long = "context", value_parser = parse_kv)]
    context: Vec<(String, String)>,
    /// Exit 1 unless the outcome is this.
    #[arg(long)]
    expect: Option<ExpectOutcome>,
}

#[derive(Debug, Subcommand)]
enum TokenCmd {
    /// Ask the daemon for a token.
    Issue {
        /// A `spiffe://` URI, or assertion JSON / @file.
        #[arg(long)]
        subject: String,
        /// `resource:action[,action...]`
        #[arg(long)]
        scope: String,
        #[arg(long, default_value_t = 300)]
        ttl: i64,
        /// Context bound into the token, `key=value`. Repeatable.
        #[arg(long = "context", value_parser = parse_kv)]
        context: Vec<(String, String)>,
    },
    /// Verify a token's signature and validity window. Uses the given bundle
    /// files, or the daemon's own bundle when none are given. Revocation is
    /// not checked.
    Validate {
        token: String,
        #[arg(long = "bundle")]
        bundles: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SKEW_SECONDS)]
        skew: i64,
    },
    /// Print header and claims without verifying anything.
    Decode { token: String },
    /// Revoke a token by transaction id.
    Revoke {
        txn: String,
        /// Expiry of the token, when the daemon did not issue it.
        #[arg(long)]
        exp: Option<i64>,
    },
}

#[derive(Debug, Subcommand)]
enum BundleCmd {
    /// Fetch the daemon's trust bundle.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Federate with the domain in a bundle file.
    Import { file: PathBuf },
    /// End federation with a trust domain.
    Remove { domain: String },
}

#[derive(Debug, Subcommand)]
enum AuditCmd {
    /// Check the hash chain. Exit 1 when broken.
    Verify {
        /// Verify this log file instead of asking the daemon.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-evaluate recorded decisions under another policy set.
    Replay {
        /// Replay this log file locally; needs --policies.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Candidate policy file or directory.
        #[arg(long, conflicts_with = "policy_version")]
        policies: Option<PathBuf>,
        /// A version the daemon has served.
        #[arg(long)]
        policy_version: Option<String>,
    },
    /// Print records.
    Tail {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Only the last N of the selected records.
        #[arg(long)]
        last: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCmd {
    List,
    /// Run the named scenarios, or all of them.
    Run { names: Vec<String> },
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    policies: usize,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

/// A command's result: the JSON form, the text form and the exit status.
struct Output {
    value: Value,
    text: String,
    exit: i32,
}

impl Output {
    fn new(value: Value, text: String) -> Output {
        Output { value, text, exit: 0 }
    }

    fn of<T: Serialize>(value: &T, text: String) -> Output {
        Output::new(serde_json::to_value(value).unwrap_or(Value::Null), text)
    }

    fn failing_if(mut self, failed: bool) -> Output {
        if failed {
            self.exit = 1;
        }
        self
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Op { code: String, detail: Value, message: String },
}

impl Failure {
    fn op(code: &str, message: impl Into<String>) -> Failure {
        let message = message.into();
        Failure::Op { code: code.to_owned(), detail: Value::String(message.clone()), message }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Op { code: e.code().to_owned(), detail: e.detail(), message: e.to_string() }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure::Op { code: e.code().to_owned(), detail: e.detail(), message: e.to_string() }
    }
}

impl From<policy::PolicyError> for Failure {
    fn from(e: policy::PolicyError) -> Self {
        ServiceError::from(e).into()
    }
}

impl From<audit::AuditError> for Failure {
    fn from(e: audit::AuditError) -> Self {
        ServiceError::from(e).into()
    }
}

type CmdResult = Result<Output, Failure>;

/// Reads `@path` as a file, anything else as itself.
fn read_arg(arg: &str) -> Result<String, Failure> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Failure::op("io_error", format!("{path}: {e}"))),
        None => Ok(arg.to_owned()),
    }
}

fn parse_json<T: DeserializeOwned>(arg: &str, what: &str) -> Result<T, Failure> {
    let text = read_arg(arg)?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{what}: {e}")))
}

fn decode<T: DeserializeOwned>(v: Value) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure::op("unexpected_response", e.to_string()))
}

fn system_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

struct Ctx {
    daemon: Option<String>,
    now: Option<i64>,
    config: Option<ServiceConfig>,
}

impl Ctx {
    fn client(&self) -> Result<DaemonClient, Failure> {
        if self.now.is_some() {
            return Err(Failure::Usage("--now only applies to offline commands".into()));
        }
        let addr = match (&self.daemon, &self.config) {
            (Some(d), _) => d.clone(),
            (None, Some(cfg)) => cfg.listen.to_string(),
            (None, None) => DEFAULT_LISTEN.to_owned(),
        };
        Ok(DaemonClient::new(&addr))
    }

    fn now(&self) -> i64 {
        self.now.unwrap_or_else(system_now)
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status. Output goes to `out`, diagnostics to `err`.
pub fn run<I, T, W, E>(args: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return e.exit_code();
        }
    };
    let json = cli.json;
    let result = Ctx::load(&cli).and_then(|ctx| dispatch(&ctx, cli.command));
    match result {
        Ok(o) => {
            let _ = if json {
                writeln!(out, "{}", canonical::value_to_string(&o.value))
            } else {
                write!(out, "{}", o.text)
            };
            o.exit
        }
        Err(f) => {
            let (exit, code, detail, message) = match f {
                Failure::Usage(m) => (2, "usage".to_owned(), Value::String(m.clone()), m),
                Failure::Op { code, detail, message } => (1, code, detail, message),
            };
            if json {
                let _ = writeln!(out, "{}", canonical::value_to_string(&json!({"error": code, "detail": detail})));
            }
            let _ = writeln!(err, "icpctl: {message}");
            exit
        }
    }
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Ctx, Failure> {
        let config = match &cli.config {
            Some(path) => Some(ServiceConfig::load(path)?),
            None => None,
        };
        Ok(Ctx { daemon: cli.daemon.clone(), now: cli.now, config })
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> CmdResult {
    match command {
        Command::Identity(IdentityCmd::Normalize { uri, assertion, trust_domain }) => {
            identity_normalize(ctx, uri, assertion, trust_domain)
        }
        Command::Policy(cmd) => match cmd {
            PolicyCmd::Lint { paths } => policy_lint(ctx, paths),
            PolicyCmd::Eval(args) => policy_eval(ctx, args, false),
            PolicyCmd::Simulate(args) => policy_eval(ctx, args, true),
            PolicyCmd::Show => {
                let r: PoliciesResponse = decode(ctx.client()?.get("/v1/policies")?)?;
                let text = format!("# version {}\n{}", r.version, r.source);
                Ok(Output::of(&r, text))
            }
            PolicyCmd::Reload => {
                let v = ctx.client()?.post_empty("/v1/policies/reload")?;
                let text = format!("policy version {}\n", v["version"].as_str().unwrap_or_default());
                Ok(Output::new(v, text))
            }
        },
        Command::Token(cmd) => token(ctx, cmd),
        Command::Bundle(cmd) => bundle(ctx, cmd),
        Command::Audit(cmd) => audit_cmd(ctx, cmd),
        Command::Scenario(cmd) => scenario_cmd(cmd),
        Command::Bench(args) => {
            let r = icp_service::bench::run(args.iterations, args.policies)?;
            Ok(Output::of(&r, render::bench(&r)))
        }
    }
}

fn identity_normalize(ctx: &Ctx, uri: Option<String>, assertion: Option<String>, td: Option<String>) -> CmdResult {
    let assertion = match (uri, assertion) {
        (Some(uri), None) => Assertion::Spiffe(uri),
        (None, Some(a)) => parse_json(&a, "assertion")?,
        _ => return Err(Failure::Usage("give a spiffe:// URI or --assertion".into())),
    };
    let td = td.or_else(|| ctx.config.as_ref().map(|c| c.trust_domain.clone()));
    let td = match (&assertion, td) {
        (Assertion::Spiffe(_), td) => td.unwrap_or_default(),
        (_, Some(td)) => td,
        (_, None) => {
            return Err(Failure::Usage("--trust-domain is required for human and automation assertions".into()))
        }
    };
    let id = assertion.normalize(&td).map_err(ServiceError::from)?;
    Ok(Output::of(&id, render::identity(&id)))
}

fn load_policies(paths: &[PathBuf]) -> Result<PolicySet, Failure> {
    if let [one] = paths {
        return Ok(load_policy_path(one)?);
    }
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_policy_path(p)?.policies().iter().cloned());
    }
    Ok(PolicySet::new(all)?)
}

fn policy_lint(ctx: &Ctx, mut paths: Vec<PathBuf>) -> CmdResult {
    if paths.is_empty() {
        match &ctx.config {
            Some(cfg) => paths.push(cfg.policy_dir.clone()),
            None => return Err(Failure::Usage("no policy paths given".into())),
        }
    }
    let ps = load_policies(&paths)?;
    let warnings = policy::lint(&ps);
    let value = json!({"policies": ps.len(), "version": ps.version(), "warnings": warnings});
    Ok(Output::new(value, render::lint(ps.len(), &warnings)).failing_if(!warnings.is_empty()))
}

fn eval_request(args: &EvalArgs) -> Result<Value, Failure> {
    if let Some(r) = &args.request {
        let mut v: Value = parse_json(r, "request")?;
        if !args.context.is_empty() {
            let ctx = v
                .as_object_mut()
                .ok_or_else(|| Failure::Usage("request must be a JSON object".into()))?
                .entry("context")
                .or_insert_with(|| json!({}));
            for (k, val) in &args.context {
                ctx[k] = Value::String(val.clone());
            }
        }
        return Ok(v);
    }
    let (Some(token), Some(action), Some(resource)) = (&args.token, &args.action, &args.resource) else {
        return Err(Failure::Usage("give --request, or --token with --action and --resource".into()));
    };
    let req = TokenDecisionRequest {
        token: read_arg(token)?.trim().to_owned(),
        action: action.clone(),
        resource: resource.clone(),
        context: args.context.iter().cloned().collect(),
    };
    Ok(serde_json::to_value(req).expect("plain struct"))
}

fn offline_token() -> Failure {
    Failure::Usage("token requests need a daemon; drop --policies or use a claims/direct request".into())
}

fn policy_eval(ctx: &Ctx, args: EvalArgs, simulate: bool) -> CmdResult {
    let body = eval_request(&args)?;
    let decision: Decision = match &args.policies {
        Some(path) => {
            let ps = load_policy_path(path)?;
            let req: SimulationRequest = serde_json::from_value(body)
                .map_err(|e| Failure::Usage(format!("request: {e}")))?;
            match req {
                SimulationRequest::Token(_) => return Err(offline_token()),
                SimulationRequest::Claims(_) if !simulate => {
                    return Err(Failure::Usage("unsigned claims are only accepted by simulate".into()))
                }
                SimulationRequest::Claims(c) => evaluate_claims(&ps, &c)?.1,
                SimulationRequest::Direct(r) => {
                    r.validate().map_err(|m| Failure::from(ServiceError::MalformedRequest(m)))?;
                    policy::evaluate(&ps, &r)
                }
            }
        }
        None => {
            let client = ctx.client()?;
            let path = if simulate { "/v1/simulate" } else { "/v1/decide" };
            if !simulate {
                // Catch shape errors before the round trip.
                serde_json::from_value::<DecisionRequest>(body.clone())
                    .map_err(|e| Failure::Usage(format!("request: {e}")))?;
            }
            decode(client.post(path, &body)?)?
        }
    };
    let mut out = Output::of(&decision, render::decision(&decision));
    if let Some(want) = args.expect {
        let want = match want {
            ExpectOutcome::Permit => Outcome::Permit,
            ExpectOutcome::Deny => Outcome::Deny,
        };
        if decision.outcome != want {
            out.text.push_str(&format!("expected {}\n", render::outcome(want)));
            out.exit = 1;
        }
    }
    Ok(out)
}

fn parse_scope(s: &str) -> Result<Scope, Failure> {
    let (resource, actions) = s
        .rsplit_once(':')
        .ok_or_else(|| Failure::Usage(format!("scope `{s}` is not resource:action[,action...]")))?;
    Ok(Scope { resource: resource.to_owned(), actions: actions.split(',').map(str::to_owned).collect() })
}

fn parse_subject(s: &str) -> Result<Assertion, Failure> {
    if s.starts_with("spiffe://") {
        Ok(Assertion::Spiffe(s.to_owned()))
    } else {
        parse_json(s, "subject")
    }
}

fn token(ctx: &Ctx, cmd: TokenCmd) -> CmdResult {
    match cmd {
        TokenCmd::Issue { subject, scope, ttl, context } => {
            let req = IssueRequest {
                subject: parse_subject(&subject)?,
                scope: parse_scope(&scope)?,
                context: context.into_iter().collect(),
                ttl_seconds: ttl,
            };
            let v = ctx.client()?.post("/v1/tokens", &req)?;
            let text = format!("{}\n", v["token"].as_str().unwrap_or_default());
            Ok(Output::new(v, text))
        }
        TokenCmd::Validate { token, bundles, skew } => {
            let token = read_arg(&token)?.trim().to_owned();
            let bundles = if bundles.is_empty() {
                let b = ctx.client()?.get("/v1/trust-bundle")?;
                vec![decode::<TrustBundle>(b)?]
            } else {
                bundles
                    .iter()
                    .map(|p| {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| Failure::op("io_error", format!("{}: {e}", p.display())))?;
                        TrustBundle::from_json(&text).map_err(|e| ServiceError::from(e).into())
                    })
                    .collect::<Result<Vec<_>, Failure>>()?
            };
            let store = BundleStore::from_bundles(bundles).map_err(ServiceError::from)?;
            let claims = validate_token(&token, &store, ctx.now(), &RevocationList::new(), skew)
                .map_err(ServiceError::from)?;
            let td = decode_unverified(&token).map_err(ServiceError::from)?.header.td;
            let text = render::claims(&td, &claims);
            Ok(Output::new(json!({"valid": true, "trust_domain": td, "claims": claims}), text))
        }
        TokenCmd::Decode { token } => {
            let token = read_arg(&token)?.trim().to_owned();
            let t = decode_unverified(&token).map_err(ServiceError::from)?;
            let text = render::claims(&t.header.td, &t.claims);
            Ok(Output::new(json!({"header": t.header, "claims": t.claims}), text))
        }
        TokenCmd::Revoke { txn, exp } => {
            let mut body = json!({"txn": txn});
            if let Some(exp) = exp {
                body["exp"] = json!(exp);
            }
            let v = ctx.client()?.post("/v1/tokens/revoke", &body)?;
            Ok(Output::new(v, format!("revoked {txn}\n")))
        }
    }
}

fn bundle(ctx: &Ctx, cmd: BundleCmd) -> CmdResult {
    let client = ctx.client()?;
    match cmd {
        BundleCmd::Export { out } => {
            let v = client.get("/v1/trust-bundle")?;
            let body = canonical::value_to_string(&v);
            let text = match out {
                Some(path) => {
                    std::fs::write(&path, format!("{body}\n"))
                        .map_err(|e| Failure::op("io_error", format!("{}: {e}", path.display())))?;
                    format!(
                        "wrote {} sequence {} to {}\n",
                        v["trust_domain"].as_str().unwrap_or_default(),
                        v["sequence"],
                        path.display()
                    )
                }
                None => format!("{body}\n"),
            };
            Ok(Output::new(v, text))
        }
        BundleCmd::Import { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::op("io_error", format!("{}: {e}", file.display())))?;
            client.put_raw("/v1/federation/bundles", text.trim().to_owned())?;
            // The daemon accepted it, so it parses.
            let b = TrustBundle::from_json(text.trim()).map_err(ServiceError::from)?;
            let value = json!({"trust_domain": b.trust_domain, "sequence": b.sequence});
            Ok(Output::new(value, format!("federated with {} (sequence {})\n", b.trust_domain, b.sequence)))
        }
        BundleCmd::Remove { domain } => {
            client.delete(&format!("/v1/federation/bundles/{}", segment(&domain)))?;
            Ok(Output::new(json!({"removed": domain}), format!("removed {domain}\n")))
        }
    }
}

fn chain_output(status: ChainStatus) -> Output {
    Output::of(&status, render::chain(&status)).failing_if(!status.ok)
}

fn audit_cmd(ctx: &Ctx, cmd: AuditCmd) -> CmdResult {
    match cmd {
        AuditCmd::Verify { log: Some(path) } => Ok(chain_output(audit::verify_file(&path)?)),
        AuditCmd::Verify { log: None } => {
            Ok(chain_output(decode(ctx.client()?.post_empty("/v1/audit/verify")?)?))
        }
        AuditCmd::Replay { log, policies, policy_version } => {
            let report: DivergenceReport = match (log, policies, policy_version) {
                (Some(_), _, Some(_)) => {
                    return Err(Failure::Usage("--policy-version needs the daemon; use --policies with --log".into()))
                }
                (Some(log), Some(p), None) => audit::replay_file(&log, &load_policy_path(&p)?)?,
                (Some(_), None, None) => return Err(Failure::Usage("--log needs --policies".into())),
                (None, policies, policy_version) => {
                    let source = policies.map(|p| load_policy_path(&p).map(|ps| ps.canonical_source().to_owned()));
                    let req = ReplayRequest { policy_version, source: source.transpose()? };
                    if req.policy_version.is_none() && req.source.is_none() {
                        return Err(Failure::Usage("give --policies or --policy-version".into()));
                    }
                    decode(ctx.client()?.post("/v1/audit/replay", &req)?)?
                }
            };
            Ok(Output::of(&report, render::replay(&report)))
        }
        AuditCmd::Tail { log, from, to, last } => {
            let mut records: Vec<AuditRecord> = match log {
                Some(path) => audit::read_records(&path)?
                    .into_iter()
                    .filter(|r| from.is_none_or(|f| r.seq >= f) && to.is_none_or(|t| r.seq <= t))
                    .collect(),
                None => {
                    let mut q = Vec::new();
                    if let Some(f) = from {
                        q.push(format!("from_seq={f}"));
                    }
                    if let Some(t) = to {
                        q.push(format!("to_seq={t}"));
                    }
                    let path = if q.is_empty() { "/v1/audit/records".to_owned() } else { format!("/v1/audit/records?{}", q.join("&")) };
                    decode(ctx.client()?.get(&path)?)?
                }
            };
            if let Some(n) = last {
                records.drain(..records.len().saturating_sub(n));
            }
            Ok(Output::of(&records, render::records(&records)))
        }
    }
}

fn scenario_cmd(cmd: ScenarioCmd) -> CmdResult {
    match cmd {
        ScenarioCmd::List => {
            let mut list = Vec::new();
            let mut text = String::new();
            for e in scenario::SCENARIOS {
                let s = scenario::parse_script(e).map_err(|m| Failure::op("scenario_invalid", m))?;
                text.push_str(&format!("{:<18} {}\n", s.name, s.description));
                list.push(json!({"name": s.name, "description": s.description, "steps": s.steps.len()}));
            }
            Ok(Output::new(Value::Array(list), text))
        }
        ScenarioCmd::Run { names } => {
            let selected: Vec<&scenario::Embedded> = if names.is_empty() {
                scenario::SCENARIOS.iter().collect()
            } else {
                names
                    .iter()
                    .map(|n| scenario::find(n).ok_or_else(|| Failure::Usage(format!("no scenario named {n}"))))
                    .collect::<Result<_, _>>()?
            };
            let mut reports = Vec::new();
            for e in &selected {
                reports.push(scenario::run(e).map_err(|m| Failure::op("scenario_invalid", m))?);
            }
            let failed = reports.iter().any(|r| !r.passed);
            let text: String = reports.iter().map(|r| r.render()).collect();
            let out = if let [one] = reports.as_slice() { Output::of(one, text) } else { Output::of(&reports, text) };
            Ok(out.failing_if(failed))
        }
    }
}
