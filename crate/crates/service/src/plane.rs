//! The daemon's state and every operation the HTTP layer exposes.
//!
//! Policy sets and bundles are shared immutable snapshots swapped under short
//! write locks; the audit log and the revocation list are the only places
//! requests serialize.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use icp_core::audit::{self, AuditEvent, AuditLog, AuditRecord, ChainStatus, DivergenceReport, RecordKind};
use icp_core::broker::{self, Broker, KeyPair, RevocationList, TokenClaims, TokenError, TtlLimits};
use icp_core::clock::Clock;
use icp_core::federation::{BundleKey, BundleStore, TrustBundle};
use icp_core::identity::{normalize_spiffe, IdentityKind, UnifiedIdentity};
use icp_core::policy::{self, load_policy_dir, parse_policy_set, Decision, PolicySet, RequestContext};

use crate::api::{
    ClaimsDecisionRequest, DecisionRequest, IssueRequest, PoliciesResponse, ReplayRequest, SimulationRequest,
    TokenDecisionRequest,
};
use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::keys;

/// Current policy set plus every version ever installed, keyed by digest.
#[derive(Debug)]
pub struct PolicyStore {
    current: Arc<PolicySet>,
    history: BTreeMap<String, Arc<PolicySet>>,
}

impl PolicyStore {
    pub fn new(ps: PolicySet) -> PolicyStore {
        let current = Arc::new(ps);
        let mut history = BTreeMap::new();
        history.insert(current.version().to_owned(), current.clone());
        PolicyStore { current, history }
    }

    pub fn current(&self) -> Arc<PolicySet> {
        self.current.clone()
    }

    pub fn get(&self, version: &str) -> Option<Arc<PolicySet>> {
        self.history.get(version).cloned()
    }

    pub fn versions(&self) -> impl Iterator<Item = &str> {
        self.history.keys().map(String::as_str)
    }

    /// Returns false when `ps` is already current.
    fn install(&mut self, ps: PolicySet) -> bool {
        if ps.version() == self.current.version() {
            return false;
        }
        let ps = self
            .history
            .entry(ps.version().to_owned())
            .or_insert_with(|| Arc::new(ps))
            .clone();
        self.current = ps;
        true
    }
}

pub struct ControlPlane {
    trust_domain: String,
    skew: i64,
    refresh_hint: u64,
    key_file: Option<PathBuf>,
    policy_dir: Option<PathBuf>,
    broker: RwLock<Broker>,
    bundles: RwLock<BundleStore>,
    policies: RwLock<PolicyStore>,
    revocations: RwLock<RevocationList>,
    // Expiry of every token this daemon issued, so revoke needs only the txn.
    issued: RwLock<BTreeMap<String, i64>>,
    audit: AuditLog,
    clock: Arc<dyn Clock>,
}

fn read<T>(lock: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

/// Rebuilds the request subject from validated claims. Workload attributes
/// come back from the SPIFFE path and automation attributes from the URI
/// template; anything else a policy needs travels in the token context.
pub fn subject_from_claims(claims: &TokenClaims, trust_domain: &str) -> UnifiedIdentity {
    let plain = || UnifiedIdentity {
        kind: claims.kind,
        trust_domain: trust_domain.to_owned(),
        canonical_uri: claims.sub.clone(),
        attributes: BTreeMap::new(),
    };
    match claims.kind {
        IdentityKind::Workload => normalize_spiffe(&claims.sub)
            .ok()
            .filter(|id| id.trust_domain == trust_domain)
            .unwrap_or_else(plain),
        IdentityKind::Automation => {
            let mut id = plain();
            let fields: Vec<&str> = claims.sub.splitn(5, ':').collect();
            if let ["icp", "auto", platform, pipeline, run_id] = fields.as_slice() {
                for (k, v) in [("platform", platform), ("pipeline", pipeline), ("run_id", run_id)] {
                    id.attributes.insert(k.to_owned(), (*v).to_owned());
                }
            }
            id
        }
        IdentityKind::Human => plain(),
    }
}

/// The request a token-bearing call is evaluated as, and whether the token's
/// scope covers it. Token context overrides caller context.
fn token_request(
    claims: &TokenClaims,
    trust_domain: &str,
    action: &str,
    resource: &str,
    extra: &BTreeMap<String, String>,
) -> (RequestContext, bool) {
    let mut req = RequestContext::new(subject_from_claims(claims, trust_domain), action, resource);
    req.context = extra.clone();
    req.context.extend(claims.context.clone());
    req.context.insert("txn".into(), claims.txn.clone());
    (req, claims.scope.permits(action, resource))
}

/// Evaluates an unsigned claim set exactly as a token carrying those claims
/// would be, scope gate included. Needs no daemon state.
pub fn evaluate_claims(ps: &PolicySet, c: &ClaimsDecisionRequest) -> Result<(RequestContext, Decision), ServiceError> {
    check_target(&c.action, &c.resource)?;
    let claims = TokenClaims {
        txn: String::new(),
        sub: c.claims.sub.clone(),
        kind: c.claims.kind,
        scope: c.claims.scope.clone(),
        context: c.claims.context.clone(),
        iat: 0,
        exp: 0,
    };
    let (mut req, in_scope) = token_request(&claims, &c.claims.td, &c.action, &c.resource, &c.context);
    req.context.remove("txn");
    let decision = if in_scope {
        policy::evaluate(ps, &req)
    } else {
        Decision::out_of_scope(ps.version())
    };
    Ok((req, decision))
}

fn check_request(req: &RequestContext) -> Result<(), ServiceError> {
    req.validate().map_err(ServiceError::MalformedRequest)
}

fn check_target(action: &str, resource: &str) -> Result<(), ServiceError> {
    if action.is_empty() || resource.is_empty() {
        return Err(ServiceError::MalformedRequest("action and resource must be non-empty".into()));
    }
    Ok(())
}

impl ControlPlane {
    /// A daemon with no backing files: in-memory audit log, no key file, no
    /// policy directory to reload from.
    pub fn in_memory(
        trust_domain: &str,
        keys: Vec<KeyPair>,
        policies: PolicySet,
        clock: Arc<dyn Clock>,
    ) -> Result<ControlPlane, ServiceError> {
        let cfg = ServiceConfig::new(trust_domain, std::path::Path::new("."));
        cfg.validate()?;
        ControlPlane::assemble(&cfg, keys, policies, AuditLog::in_memory(), clock, false)
    }

    /// Loads keys (generating one if the key file is absent), the policy
    /// directory and the audit log, refusing to start over a broken chain.
    pub fn from_config(cfg: &ServiceConfig, clock: Arc<dyn Clock>) -> Result<ControlPlane, ServiceError> {
        cfg.validate()?;
        let keys = keys::load_or_generate(&cfg.key_file, &cfg.trust_domain)?;
        let policies = load_policy_dir(&cfg.policy_dir)?;
        let audit = AuditLog::open(&cfg.audit_log)?;
        ControlPlane::assemble(cfg, keys, policies, audit, clock, true)
    }

    fn assemble(
        cfg: &ServiceConfig,
        keys: Vec<KeyPair>,
        policies: PolicySet,
        audit: AuditLog,
        clock: Arc<dyn Clock>,
        files: bool,
    ) -> Result<ControlPlane, ServiceError> {
        if keys.is_empty() {
            return Err(ServiceError::Config("at least one signing key is required".into()));
        }
        let own = TrustBundle::from_keys(&cfg.trust_domain, 1, cfg.bundle_refresh_hint_seconds, &keys);
        let bundles = BundleStore::new(own)?;
        let mut broker = Broker::with_keys(cfg.trust_domain.clone(), keys);
        broker.ttl_limits = cfg.ttl_limits;
        Ok(ControlPlane {
            trust_domain: cfg.trust_domain.clone(),
            skew: cfg.clock_skew_seconds,
            refresh_hint: cfg.bundle_refresh_hint_seconds,
            key_file: files.then(|| cfg.key_file.clone()),
            policy_dir: files.then(|| cfg.policy_dir.clone()),
            broker: RwLock::new(broker),
            bundles: RwLock::new(bundles),
            policies: RwLock::new(PolicyStore::new(policies)),
            revocations: RwLock::new(RevocationList::new()),
            issued: RwLock::new(BTreeMap::new()),
            audit,
            clock,
        })
    }

    pub fn set_ttl_limits(&self, limits: TtlLimits) {
        write(&self.broker).ttl_limits = limits;
    }

    pub fn set_clock_skew(&mut self, skew: i64) {
        self.skew = skew;
    }

    pub fn trust_domain(&self) -> &str {
        &self.trust_domain
    }

    pub fn clock_skew(&self) -> i64 {
        self.skew
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn current_policies(&self) -> Arc<PolicySet> {
        read(&self.policies).current()
    }

    pub fn issue(&self, req: IssueRequest) -> Result<String, ServiceError> {
        let subject = req.subject.normalize(&self.trust_domain)?;
        let ps = self.current_policies();
        let now = self.now();
        let token = read(&self.broker).issue_token(
            &subject,
            req.scope,
            req.context,
            req.ttl_seconds,
            &ps,
            &self.audit,
            now,
        )?;
        write(&self.issued).insert(token.claims.txn.clone(), token.claims.exp);
        Ok(token.to_compact())
    }

    /// Full validation against the local and federated bundles.
    pub fn validate(&self, compact: &str) -> Result<(String, TokenClaims), TokenError> {
        let now = self.now();
        let claims = {
            let bundles = read(&self.bundles);
            let revocations = read(&self.revocations);
            broker::validate_token(compact, &bundles, now, &revocations, self.skew)?
        };
        // Already verified; this only recovers the header's trust domain.
        let td = broker::decode_unverified(compact)?.header.td;
        Ok((td, claims))
    }

    fn token_decision(&self, t: &TokenDecisionRequest, ps: &PolicySet) -> Result<(RequestContext, Decision, String), ServiceError> {
        check_target(&t.action, &t.resource)?;
        let (td, claims) = self.validate(&t.token)?;
        let (req, in_scope) = token_request(&claims, &td, &t.action, &t.resource, &t.context);
        let decision = if in_scope {
            policy::evaluate(ps, &req)
        } else {
            Decision::out_of_scope(ps.version())
        };
        Ok((req, decision, claims.txn))
    }

    fn record(&self, kind: RecordKind, req: RequestContext, decision: &Decision, txn: Option<String>, simulated: bool) -> Result<(), ServiceError> {
        let mut event = AuditEvent::new(kind, self.now(), decision.policy_version.clone())
            .with_request(req)
            .with_decision(decision.clone())
            .simulated(simulated);
        if let Some(txn) = txn {
            event = event.with_txn(txn);
        }
        self.audit.append(event)?;
        Ok(())
    }

    /// Enforcement-mode decision. Exactly one `decision` record per call that
    /// reaches a decision.
    pub fn decide(&self, req: DecisionRequest) -> Result<Decision, ServiceError> {
        let ps = self.current_policies();
        let (request, decision, txn) = match req {
            DecisionRequest::Token(t) => {
                let (r, d, txn) = self.token_decision(&t, &ps)?;
                (r, d, Some(txn))
            }
            DecisionRequest::Direct(r) => {
                check_request(&r)?;
                let d = policy::evaluate(&ps, &r);
                (r, d, None)
            }
        };
        self.record(RecordKind::Decision, request, &decision, txn, false)?;
        Ok(decision)
    }

    /// Same evaluation as [`decide`](Self::decide), recorded as a simulation.
    /// Unsigned claim sets are accepted and marked `simulated_subject`.
    pub fn simulate(&self, req: SimulationRequest) -> Result<Decision, ServiceError> {
        let ps = self.current_policies();
        let (request, decision, txn, simulated) = match req {
            SimulationRequest::Token(t) => {
                let (r, d, txn) = self.token_decision(&t, &ps)?;
                (r, d, Some(txn), false)
            }
            SimulationRequest::Claims(c) => {
                let (r, d) = evaluate_claims(&ps, &c)?;
                (r, d, None, true)
            }
            SimulationRequest::Direct(r) => {
                check_request(&r)?;
                let d = policy::evaluate(&ps, &r);
                (r, d, None, false)
            }
        };
        self.record(RecordKind::Simulation, request, &decision, txn, simulated)?;
        Ok(decision)
    }

    /// `exp` defaults to the recorded expiry of a locally issued token, else
    /// to the longest expiry any token could have.
    pub fn revoke(&self, txn: &str, exp: Option<i64>) -> Result<(), ServiceError> {
        if txn.is_empty() {
            return Err(ServiceError::MalformedRequest("txn must be non-empty".into()));
        }
        let now = self.now();
        let exp = exp
            .or_else(|| read(&self.issued).get(txn).copied())
            .unwrap_or_else(|| now + read(&self.broker).ttl_limits.max());
        let version = self.current_policies().version().to_owned();
        let mut revocations = write(&self.revocations);
        revocations.gc(now, self.skew);
        broker::revoke_token(txn, exp, &mut revocations, &self.audit, &version, now)?;
        drop(revocations);
        write(&self.issued).retain(|_, e| now <= *e + self.skew);
        Ok(())
    }

    pub fn trust_bundle(&self) -> TrustBundle {
        read(&self.bundles).export_bundle()
    }

    fn bundle_sync(&self, note: String) -> Result<(), ServiceError> {
        let version = self.current_policies().version().to_owned();
        self.audit
            .append(AuditEvent::new(RecordKind::BundleSync, self.now(), version).with_note(note))?;
        Ok(())
    }

    pub fn import_bundle(&self, bundle: TrustBundle) -> Result<(), ServiceError> {
        let note = format!("import {} sequence={}", bundle.trust_domain, bundle.sequence);
        write(&self.bundles).import_bundle(bundle)?;
        self.bundle_sync(note)
    }

    pub fn remove_federation(&self, trust_domain: &str) -> Result<(), ServiceError> {
        let removed = write(&self.bundles).remove_federation(trust_domain)?;
        self.bundle_sync(format!("remove {} sequence={}", removed.trust_domain, removed.sequence))
    }

    /// Adds a fresh active signing key, keeping the old ones verifiable, and
    /// republishes the bundle. Returns the new kid.
    pub fn rotate_key(&self) -> Result<String, ServiceError> {
        let key = KeyPair::generate();
        let kid = key.kid().to_owned();
        let mut broker = write(&self.broker);
        let mut all = broker.keys().to_vec();
        all.push(key.clone());
        if let Some(path) = &self.key_file {
            keys::save(path, &self.trust_domain, &all)?;
        }
        broker.rotate(key);
        let seq = write(&self.bundles).set_own_keys(all.iter().map(BundleKey::from_keypair).collect())?;
        drop(broker);
        self.bundle_sync(format!("rotate {} sequence={seq} kid={kid}", self.trust_domain))?;
        Ok(kid)
    }

    pub fn refresh_hint_seconds(&self) -> u64 {
        self.refresh_hint
    }

    pub fn policies(&self) -> PoliciesResponse {
        let ps = self.current_policies();
        PoliciesResponse {
            version: ps.version().to_owned(),
            source: ps.canonical_source().to_owned(),
        }
    }

    /// Atomically installs `ps`. Identical content is a no-op and writes no
    /// record.
    pub fn install_policies(&self, ps: PolicySet) -> Result<String, ServiceError> {
        let version = ps.version().to_owned();
        let changed = write(&self.policies).install(ps);
        if changed {
            self.audit.append(
                AuditEvent::new(RecordKind::PolicyReload, self.now(), version.clone()).with_note("reload"),
            )?;
        }
        Ok(version)
    }

    /// Re-reads the policy directory. Any parse error rejects the whole
    /// reload and leaves the current set in place.
    pub fn reload_policies(&self) -> Result<String, ServiceError> {
        let dir = self
            .policy_dir
            .as_ref()
            .ok_or_else(|| ServiceError::Config("no policy directory configured".into()))?;
        let ps = load_policy_dir(dir)?;
        self.install_policies(ps)
    }

    pub fn policy_version(&self, version: &str) -> Option<Arc<PolicySet>> {
        read(&self.policies).get(version)
    }

    pub fn audit_records(&self, from: Option<u64>, to: Option<u64>) -> Vec<AuditRecord> {
        self.audit.range(from, to)
    }

    pub fn audit_verify(&self) -> Result<ChainStatus, ServiceError> {
        Ok(self.audit.verify()?)
    }

    pub fn audit_replay(&self, req: ReplayRequest) -> Result<DivergenceReport, ServiceError> {
        let ps = match (req.policy_version, req.source) {
            (Some(v), None) => self.policy_version(&v).ok_or(ServiceError::UnknownPolicyVersion(v))?,
            (None, Some(src)) => Arc::new(parse_policy_set(&src)?),
            _ => {
                return Err(ServiceError::MalformedRequest(
                    "exactly one of policy_version or source is required".into(),
                ))
            }
        };
        Ok(audit::replay(&self.audit.records(), &ps)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use icp_core::broker::Scope;
    use icp_core::clock::ManualClock;
    use icp_core::identity::Assertion;
    use icp_core::policy::{Outcome, REASON_OUT_OF_SCOPE};

    const POLICIES: &str = r#"
        permit issue when action == "token.issue";
        permit deploy when action == "deploy" and subject.path == "/ci/builder";
        deny prod when context.environment == "prod";
    "#;

    fn plane(clock: Arc<ManualClock>) -> ControlPlane {
        let ps = parse_policy_set(POLICIES).unwrap();
        ControlPlane::in_memory("a.example", vec![KeyPair::generate()], ps, clock).unwrap()
    }

    fn issue(p: &ControlPlane, ttl: i64) -> String {
        p.issue(IssueRequest {
            subject: Assertion::Spiffe("spiffe://a.example/ci/builder".into()),
            scope: Scope::new("payments", &["deploy"]),
            context: BTreeMap::new(),
            ttl_seconds: ttl,
        })
        .unwrap()
    }

    fn token_req(token: &str, action: &str, env: &str) -> TokenDecisionRequest {
        TokenDecisionRequest {
            token: token.to_owned(),
            action: action.to_owned(),
            resource: "payments".to_owned(),
            context: [("environment".to_owned(), env.to_owned())].into(),
        }
    }

    #[test]
    fn token_decide_and_scope_gate() {
        let clock = Arc::new(ManualClock::new(1_000));
        let p = plane(clock);
        let token = issue(&p, 300);
        let d = p.decide(DecisionRequest::Token(token_req(&token, "deploy", "staging"))).unwrap();
        assert_eq!(d.outcome, Outcome::Permit);
        let d = p.decide(DecisionRequest::Token(token_req(&token, "deploy", "prod"))).unwrap();
        assert_eq!(d.outcome, Outcome::Deny);
        let d = p.decide(DecisionRequest::Token(token_req(&token, "delete", "staging"))).unwrap();
        assert_eq!(d.reason.as_deref(), Some(REASON_OUT_OF_SCOPE));
        assert!(d.trace.is_empty());
        let kinds: Vec<RecordKind> = p.audit_records(None, None).iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            [RecordKind::Issuance, RecordKind::Decision, RecordKind::Decision, RecordKind::Decision]
        );
    }

    #[test]
    fn expired_and_revoked_tokens() {
        let clock = Arc::new(ManualClock::new(1_000));
        let p = plane(clock.clone());
        let token = issue(&p, 60);
        clock.set(1_000 + 60 + 30 + 1);
        let err = p.decide(DecisionRequest::Token(token_req(&token, "deploy", "dev"))).unwrap_err();
        assert!(matches!(err, ServiceError::TokenInvalid(TokenError::Expired)));

        clock.set(1_000);
        let (_, claims) = p.validate(&token).unwrap();
        p.revoke(&claims.txn, None).unwrap();
        let err = p.simulate(DecisionRequest::Token(token_req(&token, "deploy", "dev")).into()).unwrap_err();
        assert!(matches!(err, ServiceError::TokenInvalid(TokenError::Revoked)));
    }

    #[test]
    fn reload_is_versioned_and_idempotent() {
        let p = plane(Arc::new(ManualClock::new(0)));
        let old = p.policies().version;
        assert_eq!(p.install_policies(parse_policy_set(POLICIES).unwrap()).unwrap(), old);
        assert!(p.audit_log().is_empty());
        let new = p.install_policies(parse_policy_set("permit all when true;").unwrap()).unwrap();
        assert_ne!(old, new);
        assert!(p.policy_version(&old).is_some());
        assert_eq!(p.audit_records(None, None)[0].kind, RecordKind::PolicyReload);
        assert!(p.reload_policies().is_err());
    }

    #[test]
    fn unsigned_claims_simulation_is_flagged() {
        let p = plane(Arc::new(ManualClock::new(0)));
        let req = SimulationRequest::Claims(ClaimsDecisionRequest {
            claims: crate::api::SimulatedClaims {
                sub: "spiffe://a.example/ci/builder".into(),
                kind: IdentityKind::Workload,
                td: "a.example".into(),
                scope: Scope::new("payments", &["deploy"]),
                context: BTreeMap::new(),
            },
            action: "deploy".into(),
            resource: "payments".into(),
            context: [("environment".to_owned(), "prod".to_owned())].into(),
        });
        let d = p.simulate(req).unwrap();
        assert_eq!(d.outcome, Outcome::Deny);
        assert!(d.trace.iter().any(|t| t.policy_id == "prod" && t.matched));
        let rec = &p.audit_records(None, None)[0];
        assert_eq!(rec.kind, RecordKind::Simulation);
        assert!(rec.simulated_subject);
    }

    #[test]
    fn automation_subject_round_trips_through_claims() {
        let claims = TokenClaims {
            txn: "t".into(),
            sub: "icp:auto:github:deploy:42".into(),
            kind: IdentityKind::Automation,
            scope: Scope::new("r", &["a"]),
            context: BTreeMap::new(),
            iat: 0,
            exp: 1,
        };
        let id = subject_from_claims(&claims, "a.example");
        assert_eq!(id.attributes["pipeline"], "deploy");
        assert_eq!(id.attributes["run_id"], "42");
    }
}
