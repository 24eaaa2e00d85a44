//! Trust bundles: versioned sets of verification keys, one per trust domain.
//! A [`BundleStore`] holds the local domain's bundle plus every peer bundle
//! imported so far; token validation resolves keys only through it, so a
//! domain that was never imported cannot validate (default-closed).

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{kid_for, KeyPair, TokenError};
use crate::canonical;
use crate::identity::validate_trust_domain;

pub const KEY_ALGORITHM: &str = "Ed25519";
pub const DEFAULT_REFRESH_HINT_SECONDS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FederationError {
    #[error("stale bundle for {trust_domain}: sequence {offered} <= current {current}")]
    StaleBundle {
        trust_domain: String,
        offered: u64,
        current: u64,
    },
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("refusing to federate with own trust domain {0}")]
    SelfImport(String),
    #[error("trust domain {0} is not federated")]
    UnknownTrustDomain(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleKey {
    pub kid: String,
    pub algorithm: String,
    /// base64url, unpadded.
    pub public_key: String,
}

impl BundleKey {
    pub fn from_keypair(key: &KeyPair) -> BundleKey {
        BundleKey {
            kid: key.kid().to_owned(),
            algorithm: KEY_ALGORITHM.to_owned(),
            public_key: canonical::b64url_encode(&key.public_key_bytes()),
        }
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, FederationError> {
        let bad = |m: &str| FederationError::MalformedBundle(format!("key {}: {m}", self.kid));
        if self.algorithm != KEY_ALGORITHM {
            return Err(bad("unsupported algorithm"));
        }
        let raw = canonical::b64url_decode(&self.public_key).map_err(|_| bad("public_key is not base64url"))?;
        let bytes: [u8; 32] = raw.as_slice().try_into().map_err(|_| bad("public_key must be 32 bytes"))?;
        if kid_for(&bytes) != self.kid {
            return Err(bad("kid does not match public key"));
        }
        VerifyingKey::from_bytes(&bytes).map_err(|_| bad("not a valid Ed25519 point"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustBundle {
    pub trust_domain: String,
    pub sequence: u64,
    pub refresh_hint_seconds: u64,
    pub keys: Vec<BundleKey>,
}

impl TrustBundle {
    pub fn from_keys(trust_domain: &str, sequence: u64, refresh_hint_seconds: u64, keys: &[KeyPair]) -> Self {
        TrustBundle {
            trust_domain: trust_domain.to_owned(),
            sequence,
            refresh_hint_seconds,
            keys: keys.iter().map(BundleKey::from_keypair).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        validate_trust_domain(&self.trust_domain)
            .map_err(|e| FederationError::MalformedBundle(e.to_string()))?;
        if self.sequence == 0 {
            return Err(FederationError::MalformedBundle("sequence must be >= 1".into()));
        }
        if self.keys.is_empty() {
            return Err(FederationError::MalformedBundle("keys must be non-empty".into()));
        }
        let mut kids = HashSet::new();
        for k in &self.keys {
            if !kids.insert(k.kid.as_str()) {
                return Err(FederationError::MalformedBundle(format!("duplicate kid {}", k.kid)));
            }
            k.verifying_key()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        canonical::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<TrustBundle, FederationError> {
        let b: TrustBundle =
            serde_json::from_str(text).map_err(|e| FederationError::MalformedBundle(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }

    pub fn key(&self, kid: &str) -> Option<&BundleKey> {
        self.keys.iter().find(|k| k.kid == kid)
    }
}

/// Own bundle plus imported peers. Each domain's bundle is replaced whole,
/// so a reader holding an `Arc` never sees a partial update.
#[derive(Debug, Clone)]
pub struct BundleStore {
    own_domain: String,
    bundles: BTreeMap<String, Arc<TrustBundle>>,
    /// Highest sequence ever accepted per removed domain, so a re-import
    /// after removal must still move forward.
    removed_high_water: BTreeMap<String, u64>,
}

impl BundleStore {
    pub fn new(own: TrustBundle) -> Result<BundleStore, FederationError> {
        own.validate()?;
        let own_domain = own.trust_domain.clone();
        let mut bundles = BTreeMap::new();
        bundles.insert(own_domain.clone(), Arc::new(own));
        Ok(BundleStore { own_domain, bundles, removed_high_water: BTreeMap::new() })
    }

    /// A store holding only peer bundles, e.g. for offline validation with
    /// bundle files. Every bundle is treated as imported.
    pub fn from_bundles(bundles: Vec<TrustBundle>) -> Result<BundleStore, FederationError> {
        let mut map = BTreeMap::new();
        for b in bundles {
            b.validate()?;
            map.insert(b.trust_domain.clone(), Arc::new(b));
        }
        Ok(BundleStore {
            own_domain: String::new(),
            bundles: map,
            removed_high_water: BTreeMap::new(),
        })
    }

    pub fn own_domain(&self) -> &str {
        &self.own_domain
    }

    pub fn export_bundle(&self) -> TrustBundle {
        self.bundles
            .get(&self.own_domain)
            .map(|b| (**b).clone())
            .expect("own bundle always present")
    }

    pub fn get(&self, trust_domain: &str) -> Option<Arc<TrustBundle>> {
        self.bundles.get(trust_domain).cloned()
    }

    pub fn peers(&self) -> impl Iterator<Item = &TrustBundle> {
        self.bundles
            .iter()
            .filter(|(td, _)| **td != self.own_domain)
            .map(|(_, b)| &**b)
    }

    pub fn import_bundle(&mut self, bundle: TrustBundle) -> Result<(), FederationError> {
        bundle.validate()?;
        if bundle.trust_domain == self.own_domain {
            return Err(FederationError::SelfImport(bundle.trust_domain));
        }
        let current = self
            .bundles
            .get(&bundle.trust_domain)
            .map(|b| b.sequence)
            .or_else(|| self.removed_high_water.get(&bundle.trust_domain).copied());
        if let Some(current) = current {
            if bundle.sequence <= current {
                return Err(FederationError::StaleBundle {
                    trust_domain: bundle.trust_domain,
                    offered: bundle.sequence,
                    current,
                });
            }
        }
        self.removed_high_water.remove(&bundle.trust_domain);
        self.bundles.insert(bundle.trust_domain.clone(), Arc::new(bundle));
        Ok(())
    }

    pub fn remove_federation(&mut self, trust_domain: &str) -> Result<TrustBundle, FederationError> {
        if trust_domain == self.own_domain {
            return Err(FederationError::SelfImport(trust_domain.to_owned()));
        }
        let removed = self
            .bundles
            .remove(trust_domain)
            .ok_or_else(|| FederationError::UnknownTrustDomain(trust_domain.to_owned()))?;
        self.removed_high_water.insert(trust_domain.to_owned(), removed.sequence);
        Ok((*removed).clone())
    }

    /// Replaces the local key set (rotation) and bumps the own sequence.
    pub fn set_own_keys(&mut self, keys: Vec<BundleKey>) -> Result<u64, FederationError> {
        let current = self.export_bundle();
        let next = TrustBundle {
            sequence: current.sequence + 1,
            keys,
            ..current
        };
        next.validate()?;
        let seq = next.sequence;
        self.bundles.insert(self.own_domain.clone(), Arc::new(next));
        Ok(seq)
    }

    pub fn resolve_key(&self, trust_domain: &str, kid: &str) -> Result<VerifyingKey, TokenError> {
        let bundle = self
            .bundles
            .get(trust_domain)
            .ok_or_else(|| TokenError::UnknownTrustDomain(trust_domain.to_owned()))?;
        let key = bundle.key(kid).ok_or_else(|| TokenError::UnknownKey {
            trust_domain: trust_domain.to_owned(),
            kid: kid.to_owned(),
        })?;
        // Keys were validated on import.
        key.verifying_key()
            .map_err(|e| TokenError::Malformed(e.to_string()))
    }
}
