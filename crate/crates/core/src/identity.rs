//! Identity abstraction: SPIFFE workload IDs, upstream-verified human
//! assertions and CI/CD automation assertions all normalize into one
//! [`UnifiedIdentity`] that policies address uniformly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed identity: {0}")]
pub struct MalformedIdentity(pub String);

fn malformed(msg: impl Into<String>) -> MalformedIdentity {
    MalformedIdentity(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityKind {
    Human,
    Workload,
    Automation,
}

impl IdentityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentityKind::Human => "human",
            IdentityKind::Workload => "workload",
            IdentityKind::Automation => "automation",
        }
    }
}

impl fmt::Display for IdentityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IdentityKind {
    type Err = MalformedIdentity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(IdentityKind::Human),
            "workload" => Ok(IdentityKind::Workload),
            "automation" => Ok(IdentityKind::Automation),
            other => Err(malformed(format!("unknown identity kind `{other}`"))),
        }
    }
}

/// Canonical, policy-addressable actor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedIdentity {
    pub kind: IdentityKind,
    pub trust_domain: String,
    pub canonical_uri: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// An OIDC/SAML subject whose claims were already verified upstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanAssertion {
    pub issuer: String,
    pub subject: String,
    #[serde(default)]
    pub verified_claims: BTreeMap<String, String>,
}

/// A pipeline run (commit SHA, branch and pipeline actor go in `claims`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutomationAssertion {
    pub platform: String,
    pub pipeline: String,
    pub run_id: String,
    #[serde(default)]
    pub claims: BTreeMap<String, String>,
}

/// Any of the three accepted assertion forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assertion {
    Spiffe(String),
    Human(HumanAssertion),
    Automation(AutomationAssertion),
}

impl Assertion {
    /// `trust_domain` is only consulted for human and automation assertions;
    /// SPIFFE IDs carry their own.
    pub fn normalize(&self, trust_domain: &str) -> Result<UnifiedIdentity, MalformedIdentity> {
        match self {
            Assertion::Spiffe(uri) => normalize_spiffe(uri),
            Assertion::Human(a) => normalize_human(a, trust_domain),
            Assertion::Automation(a) => normalize_automation(a, trust_domain),
        }
    }
}

pub fn validate_trust_domain(td: &str) -> Result<(), MalformedIdentity> {
    if td.is_empty() || td.len() > 255 {
        return Err(malformed("trust domain must be 1-255 characters"));
    }
    if !td
        .bytes()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-'))
    {
        return Err(malformed(format!("trust domain `{td}` outside [a-z0-9._-]")));
    }
    Ok(())
}

pub fn is_valid_attribute_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'.')
}

fn insert_attribute(
    attrs: &mut BTreeMap<String, String>,
    key: String,
    value: &str,
) -> Result<(), MalformedIdentity> {
    if !is_valid_attribute_key(&key) {
        return Err(malformed(format!("attribute key `{key}` outside [a-z0-9_.]")));
    }
    if attrs.insert(key.clone(), value.to_owned()).is_some() {
        return Err(malformed(format!("duplicate attribute key `{key}`")));
    }
    Ok(())
}

pub fn normalize_spiffe(uri: &str) -> Result<UnifiedIdentity, MalformedIdentity> {
    let (scheme, rest) = uri
        .split_once("://")
        .ok_or_else(|| malformed("missing scheme separator"))?;
    if !scheme.eq_ignore_ascii_case("spiffe") {
        return Err(malformed(format!("scheme `{scheme}` is not spiffe")));
    }
    let (authority, path) = match rest.find('/') {
        Some(i) => rest.split_at(i),
        None => return Err(malformed("empty path")),
    };
    let trust_domain = authority.to_ascii_lowercase();
    validate_trust_domain(&trust_domain)?;
    if path == "/" {
        return Err(malformed("empty path"));
    }
    for segment in path[1..].split('/') {
        match segment {
            "" => return Err(malformed("empty path segment")),
            "." | ".." => return Err(malformed("dot segment in path")),
            s if !s
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-')) =>
            {
                return Err(malformed(format!("path segment `{s}` outside [a-zA-Z0-9._-]")))
            }
            _ => {}
        }
    }
    let mut attributes = BTreeMap::new();
    attributes.insert("path".to_owned(), path.to_owned());
    Ok(UnifiedIdentity {
        kind: IdentityKind::Workload,
        canonical_uri: format!("spiffe://{trust_domain}{path}"),
        trust_domain,
        attributes,
    })
}

pub fn normalize_human(
    a: &HumanAssertion,
    trust_domain: &str,
) -> Result<UnifiedIdentity, MalformedIdentity> {
    if a.issuer.is_empty() || a.subject.is_empty() {
        return Err(malformed("issuer and subject must be non-empty"));
    }
    validate_trust_domain(trust_domain)?;
    let issuer = url::Url::parse(&a.issuer)
        .map_err(|e| malformed(format!("issuer `{}` is not a URI: {e}", a.issuer)))?;
    let host = issuer
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| malformed(format!("issuer `{}` has no host", a.issuer)))?
        .to_ascii_lowercase();
    let mut attributes = BTreeMap::new();
    attributes.insert("issuer".to_owned(), a.issuer.clone());
    for (k, v) in &a.verified_claims {
        insert_attribute(&mut attributes, format!("claim.{k}"), v)?;
    }
    Ok(UnifiedIdentity {
        kind: IdentityKind::Human,
        trust_domain: trust_domain.to_owned(),
        canonical_uri: format!("icp:human:{host}:{}", a.subject),
        attributes,
    })
}

pub fn normalize_automation(
    a: &AutomationAssertion,
    trust_domain: &str,
) -> Result<UnifiedIdentity, MalformedIdentity> {
    if a.platform.is_empty() || a.pipeline.is_empty() || a.run_id.is_empty() {
        return Err(malformed("platform, pipeline and run_id must be non-empty"));
    }
    // `:` separates template fields, so it cannot appear inside one.
    if [&a.platform, &a.pipeline, &a.run_id].iter().any(|f| f.contains(':')) {
        return Err(malformed("automation fields may not contain `:`"));
    }
    validate_trust_domain(trust_domain)?;
    let mut attributes = BTreeMap::new();
    attributes.insert("platform".to_owned(), a.platform.clone());
    attributes.insert("pipeline".to_owned(), a.pipeline.clone());
    attributes.insert("run_id".to_owned(), a.run_id.clone());
    for (k, v) in &a.claims {
        insert_attribute(&mut attributes, k.clone(), v)?;
    }
    Ok(UnifiedIdentity {
        kind: IdentityKind::Automation,
        trust_domain: trust_domain.to_owned(),
        canonical_uri: format!("icp:auto:{}:{}:{}", a.platform, a.pipeline, a.run_id),
        attributes,
    })
}
