use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::PolicyRule;
use crate::hash::Hash;
use crate::identity::PartyId;
use crate::net::{Endpoint, EndpointParseError};

pub const CONFIG_FILE: &str = "agent.toml";
pub const ENV_LISTEN: &str = "CONET_LISTEN";
pub const ENV_ADMIN_TOKEN: &str = "CONET_ADMIN_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{ENV_LISTEN}: {0}")]
    Listen(#[from] EndpointParseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionDefaults {
    /// How long an offer this agent makes stays open.
    pub offer_validity_secs: u64,
    /// Send public referenced documents along with every offer.
    pub push_referenced: bool,
    /// Trace the references of every received offer from its sender.
    pub auto_trace: bool,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        Self {
            offer_validity_secs: 3600,
            push_referenced: false,
            auto_trace: false,
        }
    }
}

impl SessionDefaults {
    pub fn offer_validity(&self) -> Duration {
        Duration::from_secs(self.offer_validity_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    /// `host:port` for the HTTP admin API.
    pub listen: String,
    pub token: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StcConfig {
    /// Templates of original contracts for which this agent is the observer
    /// and therefore initiates state transition contracts.
    pub observe: Vec<Hash>,
}

/// Contents of `agent.toml`. Paths are relative to the state directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Key file stem under `keys/`.
    pub identity: String,
    pub listen: Endpoint,
    #[serde(default = "default_registry")]
    pub registry: PathBuf,
    #[serde(default = "default_documents")]
    pub documents: PathBuf,
    #[serde(default)]
    pub peers: BTreeMap<PartyId, Endpoint>,
    #[serde(default)]
    pub session: SessionDefaults,
    #[serde(default)]
    pub policies: Vec<PolicyRule>,
    #[serde(default)]
    pub stc: StcConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admin: Option<AdminConfig>,
    /// Seeds session and request identifiers.
    #[serde(default)]
    pub seed: u64,
}

fn default_registry() -> PathBuf {
    PathBuf::from("registry.json")
}

fn default_documents() -> PathBuf {
    PathBuf::from("documents")
}

impl AgentConfig {
    pub fn new(identity: impl Into<String>, listen: Endpoint) -> Self {
        Self {
            identity: identity.into(),
            listen,
            registry: default_registry(),
            documents: default_documents(),
            peers: BTreeMap::new(),
            session: SessionDefaults::default(),
            policies: Vec::new(),
            stc: StcConfig::default(),
            admin: None,
            seed: 0,
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `<state_dir>/agent.toml` and applies environment overrides.
    pub fn load(state_dir: &Path) -> Result<Self, ConfigError> {
        let path = state_dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        let mut config = Self::parse(&text, &path)?;
        config.apply_overrides(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(listen) = var(ENV_LISTEN) {
            self.listen = listen.parse()?;
        }
        if let Some(token) = var(ENV_ADMIN_TOKEN) {
            match &mut self.admin {
                Some(admin) => admin.token = token,
                None => {
                    self.admin = Some(AdminConfig {
                        listen: "127.0.0.1:7701".into(),
                        token,
                    })
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn keys_dir(state_dir: &Path) -> PathBuf {
        state_dir.join("keys")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_overrides() {
        let party = PartyId::from_public_key(&[7; 32]);
        let text = format!(
            r#"
identity = "alice"
listen = "tcp://127.0.0.1:7700"
seed = 3

[peers]
"{party}" = "tcp://10.0.0.2:7700"

[session]
offer_validity_secs = 60

[[policies]]
template = "{t}"
action = "accept"
when = {{ price = {{ range = {{ lo = {{ integer = 0 }}, hi = {{ integer = 100 }} }} }} }}

[admin]
listen = "127.0.0.1:9000"
token = "from-file"
"#,
            t = Hash::of_bytes(b"t")
        );
        let mut c = AgentConfig::parse(&text, Path::new("agent.toml")).unwrap();
        assert_eq!(c.peers[&party], Endpoint::tcp("10.0.0.2:7700"));
        assert_eq!(c.session.offer_validity(), Duration::from_secs(60));
        assert!(!c.session.auto_trace);
        assert_eq!(c.policies.len(), 1);
        assert_eq!(c.registry, PathBuf::from("registry.json"));

        c.apply_overrides(|k| match k {
            ENV_LISTEN => Some("tcp://0.0.0.0:8800".into()),
            ENV_ADMIN_TOKEN => Some("from-env".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.listen, Endpoint::tcp("0.0.0.0:8800"));
        assert_eq!(c.admin.as_ref().unwrap().token, "from-env");
        assert_eq!(AgentConfig::parse(&c.to_toml(), Path::new("x")).unwrap(), c);
    }
}
