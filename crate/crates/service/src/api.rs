//! Request and response bodies of the HTTP API.

use std::collections::BTreeMap;

use icp_core::broker::Scope;
use icp_core::identity::{Assertion, IdentityKind};
use icp_core::policy::RequestContext;
use serde::{Deserialize, Serialize};

/// `{token, action, resource}` with optional extra context. Claims in the
/// token's own context win over caller-supplied keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDecisionRequest {
    pub token: String,
    pub action: String,
    pub resource: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context: BTreeMap<String, String>,
}

/// Body of `POST /v1/decide`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecisionRequest {
    Token(TokenDecisionRequest),
    Direct(RequestContext),
}

/// An unsigned claim set for dry runs before any token exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedClaims {
    pub sub: String,
    pub kind: IdentityKind,
    pub td: String,
    pub scope: Scope,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimsDecisionRequest {
    pub claims: SimulatedClaims,
    pub action: String,
    pub resource: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context: BTreeMap<String, String>,
}

/// Body of `POST /v1/simulate`: everything `decide` accepts, plus unsigned
/// claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimulationRequest {
    Token(TokenDecisionRequest),
    Claims(ClaimsDecisionRequest),
    Direct(RequestContext),
}

impl From<DecisionRequest> for SimulationRequest {
    fn from(r: DecisionRequest) -> Self {
        match r {
            DecisionRequest::Token(t) => SimulationRequest::Token(t),
            DecisionRequest::Direct(d) => SimulationRequest::Direct(d),
        }
    }
}

/// Body of `POST /v1/tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueRequest {
    pub subject: Assertion,
    pub scope: Scope,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    pub ttl_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueResponse {
    pub token: String,
}

/// Body of `POST /v1/tokens/revoke`. `exp` is optional; the daemon knows it
/// for tokens it issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokeRequest {
    pub txn: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoliciesResponse {
    pub version: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReloadResponse {
    pub version: String,
}

/// Body of `POST /v1/audit/replay`: a stored version or inline IPL source.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordsQuery {
    pub from_seq: Option<u64>,
    pub to_seq: Option<u64>,
}

/// Every route the daemon serves, as `(method, path)`.
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("POST", "/v1/decide"),
    ("POST", "/v1/simulate"),
    ("POST", "/v1/tokens"),
    ("POST", "/v1/tokens/revoke"),
    ("GET", "/v1/trust-bundle"),
    ("PUT", "/v1/federation/bundles"),
    ("DELETE", "/v1/federation/bundles/{domain}"),
    ("GET", "/v1/policies"),
    ("POST", "/v1/policies/reload"),
    ("GET", "/v1/audit/records"),
    ("POST", "/v1/audit/verify"),
    ("POST", "/v1/audit/replay"),
];
