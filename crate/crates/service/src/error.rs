use icp_core::audit::AuditError;
use icp_core::broker::{BrokerError, TokenError};
use icp_core::federation::FederationError;
use icp_core::identity::MalformedIdentity;
use icp_core::policy::{Decision, PolicyError};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error(transparent)]
    MalformedIdentity(#[from] MalformedIdentity),
    #[error("token invalid: {0}")]
    TokenInvalid(#[from] TokenError),
    #[error("denied by policy")]
    PolicyDenied(Box<Decision>),
    #[error("ttl {requested}s outside 1..={max}s")]
    TtlExceeded { requested: i64, max: i64 },
    #[error("malformed scope: {0}")]
    MalformedScope(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("unknown policy version {0}")]
    UnknownPolicyVersion(String),
    #[error("audit chain invalid at seq {0}")]
    ChainInvalid(u64),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<BrokerError> for ServiceError {
    fn from(e: BrokerError) -> Self {
        match e {
            BrokerError::PolicyDenied(d) => ServiceError::PolicyDenied(d),
            BrokerError::TtlExceeded { requested, max } => ServiceError::TtlExceeded { requested, max },
            BrokerError::MalformedScope(m) => ServiceError::MalformedScope(m),
            BrokerError::Audit(a) => a.into(),
        }
    }
}

impl From<AuditError> for ServiceError {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::ChainInvalid(seq) => ServiceError::ChainInvalid(seq),
            AuditError::StorageFailure(m) => ServiceError::Storage(m),
        }
    }
}

impl ServiceError {
    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::MalformedRequest(_) => "malformed_request",
            ServiceError::MalformedIdentity(_) => "malformed_identity",
            ServiceError::TokenInvalid(_) => "token_invalid",
            ServiceError::PolicyDenied(_) => "policy_denied",
            ServiceError::TtlExceeded { .. } => "ttl_exceeded",
            ServiceError::MalformedScope(_) => "malformed_scope",
            ServiceError::Federation(FederationError::StaleBundle { .. }) => "stale_bundle",
            ServiceError::Federation(FederationError::MalformedBundle(_)) => "malformed_bundle",
            ServiceError::Federation(FederationError::SelfImport(_)) => "self_import",
            ServiceError::Federation(FederationError::UnknownTrustDomain(_)) => "unknown_trust_domain",
            ServiceError::Policy(PolicyError::Parse { .. }) => "parse_error",
            ServiceError::Policy(PolicyError::DuplicatePolicyId(_)) => "duplicate_policy_id",
            ServiceError::Policy(PolicyError::Io { .. }) => "policy_io",
            ServiceError::UnknownPolicyVersion(_) => "unknown_policy_version",
            ServiceError::ChainInvalid(_) => "chain_invalid",
            ServiceError::Storage(_) => "storage_failure",
            ServiceError::Config(_) => "config_error",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::MalformedRequest(_)
            | ServiceError::MalformedIdentity(_)
            | ServiceError::TtlExceeded { .. }
            | ServiceError::MalformedScope(_)
            | ServiceError::Federation(FederationError::MalformedBundle(_)) => 400,
            ServiceError::TokenInvalid(_) => 401,
            ServiceError::PolicyDenied(_) => 403,
            ServiceError::Federation(FederationError::UnknownTrustDomain(_))
            | ServiceError::UnknownPolicyVersion(_) => 404,
            ServiceError::Federation(_) | ServiceError::ChainInvalid(_) => 409,
            ServiceError::Policy(PolicyError::Parse { .. } | PolicyError::DuplicatePolicyId(_)) => 422,
            ServiceError::Policy(PolicyError::Io { .. }) | ServiceError::Storage(_) | ServiceError::Config(_) => 500,
        }
    }

    pub fn detail(&self) -> Value {
        match self {
            ServiceError::TokenInvalid(t) => json!({"code": t.code(), "message": t.to_string()}),
            ServiceError::PolicyDenied(d) => serde_json::to_value(d).unwrap_or(Value::Null),
            ServiceError::Policy(PolicyError::Parse { line, column, message }) => {
                json!({"line": line, "column": column, "message": message})
            }
            ServiceError::ChainInvalid(seq) => json!({"first_bad_seq": seq}),
            ServiceError::TtlExceeded { requested, max } => json!({"requested": requested, "max": max}),
            other => Value::String(other.to_string()),
        }
    }

    /// `{"error": code, "detail": ...}`
    pub fn body(&self) -> Value {
        json!({"error": self.code(), "detail": self.detail()})
    }
}
