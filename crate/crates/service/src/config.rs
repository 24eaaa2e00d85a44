//! `key = value` daemon configuration.
//!
//! ```text
//! listen = 127.0.0.1:7400
//! trust_domain = prod.example.org
//! key_file = keys.json
//! policy_dir = policies
//! audit_log = audit.log
//! clock_skew_seconds = 30
//! max_ttl_automation = 300
//! max_ttl_workload = 3600
//! max_ttl_human = 3600
//! bundle_refresh_hint_seconds = 300
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use icp_core::broker::{TtlLimits, DEFAULT_SKEW_SECONDS};
use icp_core::federation::DEFAULT_REFRESH_HINT_SECONDS;
use icp_core::identity::validate_trust_domain;

use crate::error::ServiceError;

pub const CONFIG_ENV: &str = "ICPD_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7400";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub trust_domain: String,
    pub key_file: PathBuf,
    pub policy_dir: PathBuf,
    pub audit_log: PathBuf,
    pub clock_skew_seconds: i64,
    pub ttl_limits: TtlLimits,
    pub bundle_refresh_hint_seconds: u64,
}

impl ServiceConfig {
    /// Defaults rooted in `dir`: `keys.json`, `policies/`, `audit.log`.
    pub fn new(trust_domain: impl Into<String>, dir: &Path) -> ServiceConfig {
        ServiceConfig {
            listen: DEFAULT_LISTEN.parse().expect("valid default"),
            trust_domain: trust_domain.into(),
            key_file: dir.join("keys.json"),
            policy_dir: dir.join("policies"),
            audit_log: dir.join("audit.log"),
            clock_skew_seconds: DEFAULT_SKEW_SECONDS,
            ttl_limits: TtlLimits::default(),
            bundle_refresh_hint_seconds: DEFAULT_REFRESH_HINT_SECONDS,
        }
    }

    pub fn load(path: &Path) -> Result<ServiceConfig, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ServiceConfig::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<ServiceConfig, ServiceError> {
        let mut cfg = ServiceConfig::new(String::new(), base);
        let err = |line: usize, msg: String| ServiceError::Config(format!("line {line}: {msg}"));
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| v.parse::<i64>().map_err(|_| err(i + 1, format!("`{key}` must be an integer")));
            match key {
                "listen" => {
                    cfg.listen = value.parse().map_err(|_| err(i + 1, format!("bad listen address `{value}`")))?
                }
                "trust_domain" => cfg.trust_domain = value.to_owned(),
                "key_file" => cfg.key_file = base.join(value),
                "policy_dir" => cfg.policy_dir = base.join(value),
                "audit_log" => cfg.audit_log = base.join(value),
                "clock_skew_seconds" => cfg.clock_skew_seconds = int(value)?,
                "max_ttl_automation" => cfg.ttl_limits.automation = int(value)?,
                "max_ttl_workload" => cfg.ttl_limits.workload = int(value)?,
                "max_ttl_human" => cfg.ttl_limits.human = int(value)?,
                "bundle_refresh_hint_seconds" => {
                    cfg.bundle_refresh_hint_seconds =
                        u64::try_from(int(value)?).map_err(|_| err(i + 1, "must be >= 0".into()))?
                }
                other => return Err(err(i + 1, format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        validate_trust_domain(&self.trust_domain).map_err(|e| ServiceError::Config(e.to_string()))?;
        if self.clock_skew_seconds < 0 {
            return Err(ServiceError::Config("clock_skew_seconds must be >= 0".into()));
        }
        let t = self.ttl_limits;
        if t.automation < 1 || t.workload < 1 || t.human < 1 {
            return Err(ServiceError::Config("max TTLs must be >= 1".into()));
        }
        Ok(())
    }

    /// `--config` wins over `ICPD_CONFIG`.
    pub fn resolve_path(flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let text = "# daemon A\nlisten = 127.0.0.1:9000\ntrust_domain = a.example\nkey_file = k.json\n\
                    policy_dir = p\naudit_log = a.log\nclock_skew_seconds = 5\nmax_ttl_automation = 60\n\
                    max_ttl_workload = 120\nmax_ttl_human = 180\nbundle_refresh_hint_seconds = 10\n";
        let cfg = ServiceConfig::parse(text, Path::new("/etc/icp")).unwrap();
        assert_eq!(cfg.listen.port(), 9000);
        assert_eq!(cfg.key_file, Path::new("/etc/icp/k.json"));
        assert_eq!(cfg.clock_skew_seconds, 5);
        assert_eq!(cfg.ttl_limits, TtlLimits { automation: 60, workload: 120, human: 180 });
        assert_eq!(cfg.bundle_refresh_hint_seconds, 10);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(ServiceConfig::parse("trust_domain = A B", base).is_err());
        assert!(ServiceConfig::parse("trust_domain = a\nclock_skew_seconds = -1", base).is_err());
        assert!(ServiceConfig::parse("trust_domain = a\nbogus = 1", base).is_err());
        assert!(ServiceConfig::parse("trust_domain a", base).is_err());
        assert!(ServiceConfig::parse("", base).is_err());
    }
}
