//! Credential broker: mints, validates and revokes signed, short-lived,
//! intent-bound transaction tokens.
//!
//! Compact form is `b64url(header) "." b64url(payload) "." b64url(sig)`
//! (unpadded), where header and payload are canonical JSON and the Ed25519
//! signature covers the ASCII text of the first two segments.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditError, AuditEvent, AuditLog, RecordKind};
use crate::canonical;
use crate::federation::BundleStore;
use crate::identity::{IdentityKind, UnifiedIdentity};
use crate::policy::{evaluate, Decision, PolicySet, RequestContext};

pub const TOKEN_ALG: &str = "EdDSA";
pub const ISSUE_ACTION: &str = "token.issue";
pub const DEFAULT_SKEW_SECONDS: i64 = 30;

/// `hex(SHA-256(public_key)[..8])`.
pub fn kid_for(public_key: &[u8]) -> String {
    hex::encode(&canonical::sha256(public_key)[..8])
}

/// An Ed25519 signing key with its derived key id.
#[derive(Clone)]
pub struct KeyPair {
    kid: String,
    signing: SigningKey,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("kid", &self.kid).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate() -> KeyPair {
        KeyPair::from_signing(SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_seed(seed: [u8; 32]) -> KeyPair {
        KeyPair::from_signing(SigningKey::from_bytes(&seed))
    }

    fn from_signing(signing: SigningKey) -> KeyPair {
        let kid = kid_for(signing.verifying_key().as_bytes());
        KeyPair { kid, signing }
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn public_key_bytes(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scope {
    pub resource: String,
    pub actions: Vec<String>,
}

impl Scope {
    pub fn new(resource: impl Into<String>, actions: &[&str]) -> Scope {
        Scope {
            resource: resource.into(),
            actions: actions.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.resource.is_empty() {
            return Err(BrokerError::MalformedScope("resource must be non-empty".into()));
        }
        if self.actions.is_empty() || self.actions.iter().any(String::is_empty) {
            return Err(BrokerError::MalformedScope("actions must be a non-empty list of non-empty names".into()));
        }
        Ok(())
    }

    pub fn permits(&self, action: &str, resource: &str) -> bool {
        self.resource == resource && self.actions.iter().any(|a| a == action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenHeader {
    pub alg: String,
    pub kid: String,
    pub td: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenClaims {
    pub txn: String,
    pub sub: String,
    pub kind: IdentityKind,
    pub scope: Scope,
    pub context: BTreeMap<String, String>,
    pub iat: i64,
    pub exp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionToken {
    pub header: TokenHeader,
    pub claims: TokenClaims,
    pub signature: Vec<u8>,
}

fn signing_input(header: &TokenHeader, claims: &TokenClaims) -> String {
    let h = canonical::to_vec(header).expect("header serializes");
    let p = canonical::to_vec(claims).expect("claims serialize");
    format!("{}.{}", canonical::b64url_encode(&h), canonical::b64url_encode(&p))
}

impl TransactionToken {
    pub fn to_compact(&self) -> String {
        format!(
            "{}.{}",
            signing_input(&self.header, &self.claims),
            canonical::b64url_encode(&self.signature)
        )
    }

    pub fn txn(&self) -> &str {
        &self.claims.txn
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("unknown trust domain {0}")]
    UnknownTrustDomain(String),
    #[error("unknown key {kid} in trust domain {trust_domain}")]
    UnknownKey { trust_domain: String, kid: String },
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("token expired")]
    Expired,
    #[error("token not yet valid")]
    NotYetValid,
    #[error("token revoked")]
    Revoked,
}

impl TokenError {
    /// Stable snake_case sub-code for wire errors.
    pub fn code(&self) -> &'static str {
        match self {
            TokenError::Malformed(_) => "malformed_token",
            TokenError::UnknownTrustDomain(_) => "unknown_trust_domain",
            TokenError::UnknownKey { .. } => "unknown_key",
            TokenError::SignatureInvalid => "signature_invalid",
            TokenError::Expired => "expired",
            TokenError::NotYetValid => "not_yet_valid",
            TokenError::Revoked => "revoked",
        }
    }
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("issuance denied by policy")]
    PolicyDenied(Box<Decision>),
    #[error("ttl {requested}s outside 1..={max}s for this identity kind")]
    TtlExceeded { requested: i64, max: i64 },
    #[error("malformed scope: {0}")]
    MalformedScope(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// Maximum token lifetime per identity kind, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtlLimits {
    pub automation: i64,
    pub workload: i64,
    pub human: i64,
}

impl Default for TtlLimits {
    fn default() -> Self {
        TtlLimits { automation: 300, workload: 3600, human: 3600 }
    }
}

impl TtlLimits {
    pub fn for_kind(&self, kind: IdentityKind) -> i64 {
        match kind {
            IdentityKind::Automation => self.automation,
            IdentityKind::Workload => self.workload,
            IdentityKind::Human => self.human,
        }
    }

    pub fn max(&self) -> i64 {
        self.automation.max(self.workload).max(self.human)
    }
}

/// Signing side of one trust domain. The last key is the active signer;
/// earlier keys remain published until retired.
#[derive(Debug, Clone)]
pub struct Broker {
    trust_domain: String,
    keys: Vec<KeyPair>,
    pub ttl_limits: TtlLimits,
}

impl Broker {
    pub fn new(trust_domain: impl Into<String>, key: KeyPair) -> Broker {
        Broker {
            trust_domain: trust_domain.into(),
            keys: vec![key],
            ttl_limits: TtlLimits::default(),
        }
    }

    pub fn with_keys(trust_domain: impl Into<String>, keys: Vec<KeyPair>) -> Broker {
        assert!(!keys.is_empty(), "broker needs at least one key");
        Broker {
            trust_domain: trust_domain.into(),
            keys,
            ttl_limits: TtlLimits::default(),
        }
    }

    pub fn trust_domain(&self) -> &str {
        &self.trust_domain
    }

    pub fn keys(&self) -> &[KeyPair] {
        &self.keys
    }

    pub fn active_key(&self) -> &KeyPair {
        self.keys.last().expect("broker has a key")
    }

    /// Adds a new signing key; it becomes active.
    pub fn rotate(&mut self, key: KeyPair) {
        self.keys.push(key);
    }

    /// Drops a key from the published set. The active key cannot be retired.
    pub fn retire(&mut self, kid: &str) -> bool {
        if self.active_key().kid() == kid {
            return false;
        }
        let before = self.keys.len();
        self.keys.retain(|k| k.kid() != kid);
        before != self.keys.len()
    }

    /// The request the issuance policy sees: action `token.issue`, the scoped
    /// resource, and the caller context plus `requested_actions`.
    pub fn issuance_request(
        subject: &UnifiedIdentity,
        scope: &Scope,
        context: &BTreeMap<String, String>,
    ) -> RequestContext {
        let mut ctx = context.clone();
        ctx.insert("requested_actions".into(), scope.actions.join(","));
        let mut resource = BTreeMap::new();
        resource.insert("id".into(), scope.resource.clone());
        RequestContext {
            subject: subject.clone(),
            action: ISSUE_ACTION.into(),
            resource,
            context: ctx,
        }
    }

    /// Mints a token after the issuance request is permitted by `ps`. The
    /// issuance audit record is durable before the token is returned.
    #[allow(clippy::too_many_arguments)]
    pub fn issue_token(
        &self,
        subject: &UnifiedIdentity,
        scope: Scope,
        context: BTreeMap<String, String>,
        ttl_seconds: i64,
        ps: &PolicySet,
        audit: &AuditLog,
        now: i64,
    ) -> Result<TransactionToken, BrokerError> {
        let max = self.ttl_limits.for_kind(subject.kind);
        if ttl_seconds < 1 || ttl_seconds > max {
            return Err(BrokerError::TtlExceeded { requested: ttl_seconds, max });
        }
        scope.validate()?;
        let request = Broker::issuance_request(subject, &scope, &context);
        let decision = evaluate(ps, &request);
        if !decision.is_permit() {
            return Err(BrokerError::PolicyDenied(Box::new(decision)));
        }
        let key = self.active_key();
        let header = TokenHeader {
            alg: TOKEN_ALG.into(),
            kid: key.kid().to_owned(),
            td: self.trust_domain.clone(),
        };
        let claims = TokenClaims {
            txn: uuid::Uuid::new_v4().to_string(),
            sub: subject.canonical_uri.clone(),
            kind: subject.kind,
            scope,
            context,
            iat: now,
            exp: now + ttl_seconds,
        };
        let signature = key.sign(signing_input(&header, &claims).as_bytes()).to_vec();
        audit.append(
            AuditEvent::new(RecordKind::Issuance, now, ps.version())
                .with_request(request)
                .with_decision(decision)
                .with_txn(claims.txn.clone()),
        )?;
        Ok(TransactionToken { header, claims, signature })
    }
}

fn decode_json<T: serde::de::DeserializeOwned>(segment: &str, what: &str) -> Result<T, TokenError> {
    let bytes = canonical::b64url_decode(segment)
        .map_err(|_| TokenError::Malformed(format!("{what} is not base64url")))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| TokenError::Malformed(format!("{what} is not UTF-8")))?;
    if !canonical::is_canonical(text) {
        return Err(TokenError::Malformed(format!("{what} is not canonical JSON")));
    }
    serde_json::from_str(text).map_err(|e| TokenError::Malformed(format!("{what}: {e}")))
}

/// Splits and decodes a compact token without verifying anything.
pub fn decode_unverified(compact: &str) -> Result<TransactionToken, TokenError> {
    let parts: Vec<&str> = compact.split('.').collect();
    let [h, p, s] = parts.as_slice() else {
        return Err(TokenError::Malformed("expected three segments".into()));
    };
    let header: TokenHeader = decode_json(h, "header")?;
    let claims: TokenClaims = decode_json(p, "payload")?;
    let signature = canonical::b64url_decode(s)
        .map_err(|_| TokenError::Malformed("signature is not base64url".into()))?;
    Ok(TransactionToken { header, claims, signature })
}

/// Full validation: structure, key resolution across local and federated
/// bundles, signature, validity window `[iat - skew, exp + skew]`, and
/// revocation.
pub fn validate_token(
    compact: &str,
    bundles: &BundleStore,
    now: i64,
    revocations: &RevocationList,
    skew: i64,
) -> Result<TokenClaims, TokenError> {
    let parts: Vec<&str> = compact.split('.').collect();
    let [h, p, s] = parts.as_slice() else {
        return Err(TokenError::Malformed("expected three segments".into()));
    };
    let header: TokenHeader = decode_json(h, "header")?;
    if header.alg != TOKEN_ALG {
        return Err(TokenError::Malformed(format!("unsupported alg {}", header.alg)));
    }
    let key = bundles.resolve_key(&header.td, &header.kid)?;
    let sig_bytes = canonical::b64url_decode(s)
        .map_err(|_| TokenError::Malformed("signature is not base64url".into()))?;
    let signature = Signature::from_slice(&sig_bytes).map_err(|_| TokenError::SignatureInvalid)?;
    let input_len = h.len() + 1 + p.len();
    key.verify(&compact.as_bytes()[..input_len], &signature)
        .map_err(|_| TokenError::SignatureInvalid)?;
    let claims: TokenClaims = decode_json(p, "payload")?;
    if claims.exp <= claims.iat {
        return Err(TokenError::Malformed("exp must be after iat".into()));
    }
    if now < claims.iat - skew {
        return Err(TokenError::NotYetValid);
    }
    if now > claims.exp + skew {
        return Err(TokenError::Expired);
    }
    if revocations.contains(&claims.txn) {
        return Err(TokenError::Revoked);
    }
    Ok(claims)
}

/// Local denylist of token ids, each kept until its token can no longer
/// validate anyway.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    entries: BTreeMap<String, i64>,
}

impl RevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, txn: &str) -> bool {
        self.entries.contains_key(txn)
    }

    /// Idempotent; re-revoking keeps the later expiry.
    pub fn insert(&mut self, txn: impl Into<String>, exp: i64) {
        let slot = self.entries.entry(txn.into()).or_insert(exp);
        *slot = (*slot).max(exp);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops entries whose token is past `exp + skew`, i.e. already rejected
    /// as expired.
    pub fn gc(&mut self, now: i64, skew: i64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, exp| now <= *exp + skew);
        before - self.entries.len()
    }
}

/// Adds `txn` to the list and appends a `revocation` audit record. The entry
/// is visible to validators sharing `revocations` once this returns.
pub fn revoke_token(
    txn: &str,
    exp: i64,
    revocations: &mut RevocationList,
    audit: &AuditLog,
    policy_version: &str,
    now: i64,
) -> Result<(), AuditError> {
    revocations.insert(txn, exp);
    audit.append(
        AuditEvent::new(RecordKind::Revocation, now, policy_version)
            .with_txn(txn)
            .with_note(format!("exp={exp}")),
    )?;
    Ok(())
}
