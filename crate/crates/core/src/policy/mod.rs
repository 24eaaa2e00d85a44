//! IPL: a small deny-overrides ABAC language over `subject`, `action`,
//! `resource` and `context` attributes.
//!
//! ```text
//! # only staging deploys, and only with a deploy purpose
//! permit staging when subject.kind == "workload" and context.environment == "staging";
//! deny   off-purpose when context.purpose != "deploy";
//! ```
//!
//! Combining rule: any matched deny wins; otherwise at least one matched
//! permit is required; otherwise deny.

mod ast;
mod eval;
mod lint;
mod parser;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::identity::UnifiedIdentity;

pub use ast::{AttrPath, CmpOp, Effect, Expr, Operand, Policy, Root};
pub use eval::{glob_match, matches, resolve, Value};
pub use lint::{lint, LintWarning};
pub use parser::parse_expr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate policy id `{0}`")]
    DuplicatePolicyId(String),
    #[error("cannot read policy source {path}: {message}")]
    Io { path: String, message: String },
}

/// Immutable, content-addressed collection of policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySet {
    policies: Vec<Policy>,
    version: String,
    source: String,
}

impl PolicySet {
    pub fn new(policies: Vec<Policy>) -> Result<PolicySet, PolicyError> {
        let mut seen = HashSet::new();
        for p in &policies {
            if !seen.insert(p.id.as_str()) {
                return Err(PolicyError::DuplicatePolicyId(p.id.clone()));
            }
        }
        let mut source = String::new();
        for p in &policies {
            writeln!(source, "{p}").expect("writing to a String cannot fail");
        }
        let version = canonical::sha256_hex(source.as_bytes());
        Ok(PolicySet { policies, version, source })
    }

    pub fn empty() -> PolicySet {
        PolicySet::new(Vec::new()).expect("empty set has no duplicates")
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// Hex SHA-256 of [`canonical_source`](Self::canonical_source).
    pub fn version(&self) -> &str {
        &self.version
    }

    /// One canonical line per policy, in file order. Re-parses to the same set.
    pub fn canonical_source(&self) -> &str {
        &self.source
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }

    /// New set with `extra` appended.
    pub fn with_policies(&self, extra: Vec<Policy>) -> Result<PolicySet, PolicyError> {
        let mut all = self.policies.clone();
        all.extend(extra);
        PolicySet::new(all)
    }
}

pub fn parse_policy_set(source: &str) -> Result<PolicySet, PolicyError> {
    PolicySet::new(parser::parse_policies(source)?)
}

/// Parses every `.ipl` file in `dir`, in file-name order, as one set.
pub fn load_policy_dir(dir: &Path) -> Result<PolicySet, PolicyError> {
    let io = |e: std::io::Error| PolicyError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "ipl"))
        .collect();
    files.sort();
    let mut policies = Vec::new();
    for file in files {
        policies.extend(parse_policy_file_inner(&file)?);
    }
    PolicySet::new(policies)
}

/// A single `.ipl` file, or a directory of them.
pub fn load_policy_path(path: &Path) -> Result<PolicySet, PolicyError> {
    if path.is_dir() {
        load_policy_dir(path)
    } else {
        PolicySet::new(parse_policy_file_inner(path)?)
    }
}

fn parse_policy_file_inner(file: &Path) -> Result<Vec<Policy>, PolicyError> {
    let text = std::fs::read_to_string(file).map_err(|e| PolicyError::Io {
        path: file.display().to_string(),
        message: e.to_string(),
    })?;
    parser::parse_policies(&text).map_err(|e| match e {
        // Prefix the file so multi-file reloads point at the culprit.
        PolicyError::Parse { line, column, message } => PolicyError::Parse {
            line,
            column,
            message: format!("{}: {message}", file.display()),
        },
        other => other,
    })
}

/// Everything a decision is computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestContext {
    pub subject: UnifiedIdentity,
    pub action: String,
    pub resource: BTreeMap<String, String>,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
}

impl RequestContext {
    pub fn new(subject: UnifiedIdentity, action: impl Into<String>, resource_id: impl Into<String>) -> Self {
        let mut resource = BTreeMap::new();
        resource.insert("id".to_owned(), resource_id.into());
        RequestContext {
            subject,
            action: action.into(),
            resource,
            context: BTreeMap::new(),
        }
    }

    pub fn with_context(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.context.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.action.is_empty() {
            return Err("action must be non-empty".into());
        }
        if !self.resource.contains_key("id") {
            return Err("resource.id is required".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Permit,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub policy_id: String,
    pub matched: bool,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub trace: Vec<TraceEntry>,
    pub policy_version: String,
    /// Set when the decision was made without consulting policy, e.g.
    /// `out_of_scope` for a token whose scope excludes the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

pub const REASON_OUT_OF_SCOPE: &str = "out_of_scope";

impl Decision {
    pub fn out_of_scope(policy_version: &str) -> Decision {
        Decision {
            outcome: Outcome::Deny,
            trace: Vec::new(),
            policy_version: policy_version.to_owned(),
            reason: Some(REASON_OUT_OF_SCOPE.to_owned()),
        }
    }

    pub fn is_permit(&self) -> bool {
        self.outcome == Outcome::Permit
    }
}

/// Deny-overrides with default deny.
pub fn combine<I: IntoIterator<Item = (bool, Effect)>>(entries: I) -> Outcome {
    let mut any_permit = false;
    for (matched, effect) in entries {
        if matched {
            match effect {
                Effect::Deny => return Outcome::Deny,
                Effect::Permit => any_permit = true,
            }
        }
    }
    if any_permit {
        Outcome::Permit
    } else {
        Outcome::Deny
    }
}

pub fn evaluate(ps: &PolicySet, req: &RequestContext) -> Decision {
    let trace: Vec<TraceEntry> = ps
        .policies()
        .iter()
        .map(|p| TraceEntry {
            policy_id: p.id.clone(),
            matched: eval::eval_expr(&p.condition, req),
            effect: p.effect,
        })
        .collect();
    let outcome = combine(trace.iter().map(|t| (t.matched, t.effect)));
    Decision {
        outcome,
        trace,
        policy_version: ps.version().to_owned(),
        reason: None,
    }
}

/// Evaluates many requests against one set. Runs on the rayon pool when the
/// `parallel` feature is enabled.
pub fn evaluate_batch(ps: &PolicySet, reqs: &[RequestContext]) -> Vec<Decision> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        reqs.par_iter().map(|r| evaluate(ps, r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_batch_sequential(ps, reqs)
    }
}

pub fn evaluate_batch_sequential(ps: &PolicySet, reqs: &[RequestContext]) -> Vec<Decision> {
    reqs.iter().map(|r| evaluate(ps, r)).collect()
}
