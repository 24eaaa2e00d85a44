//! Private key file. Seeds live only here; bundles carry public keys.
//!
//! `{"keys":[{"kid":"...","seed":"<base64url>"}],"trust_domain":"..."}`
//! The last key is the active signer.

use std::path::Path;

use icp_core::broker::KeyPair;
use icp_core::canonical;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Serialize, Deserialize)]
struct KeyEntry {
    kid: String,
    seed: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyFile {
    trust_domain: String,
    keys: Vec<KeyEntry>,
}

pub fn save(path: &Path, trust_domain: &str, keys: &[KeyPair]) -> Result<(), ServiceError> {
    let file = KeyFile {
        trust_domain: trust_domain.to_owned(),
        keys: keys
            .iter()
            .map(|k| KeyEntry {
                kid: k.kid().to_owned(),
                seed: canonical::b64url_encode(&k.seed()),
            })
            .collect(),
    };
    let text = canonical::to_string(&file).map_err(|e| ServiceError::Storage(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::Storage(e.to_string()))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path, trust_domain: &str) -> Result<Vec<KeyPair>, ServiceError> {
    let bad = |m: String| ServiceError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let file: KeyFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.trust_domain != trust_domain {
        return Err(bad(format!(
            "key file is for {}, daemon is {trust_domain}",
            file.trust_domain
        )));
    }
    if file.keys.is_empty() {
        return Err(bad("no keys".into()));
    }
    file.keys
        .iter()
        .map(|e| {
            let seed: [u8; 32] = canonical::b64url_decode(&e.seed)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| bad(format!("key {}: seed must be 32 bytes base64url", e.kid)))?;
            let key = KeyPair::from_seed(seed);
            if key.kid() != e.kid {
                return Err(bad(format!("key {}: kid does not match seed", e.kid)));
            }
            Ok(key)
        })
        .collect()
}

/// Loads the key file, generating a single fresh key when it is absent.
pub fn load_or_generate(path: &Path, trust_domain: &str) -> Result<Vec<KeyPair>, ServiceError> {
    if path.exists() {
        return load(path, trust_domain);
    }
    let keys = vec![KeyPair::generate()];
    save(path, trust_domain, &keys)?;
    Ok(keys)
}
