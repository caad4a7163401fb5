use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Sim,
    Tcp,
}

/// Where an agent can be reached: `sim://<agent name>` or `tcp://<host:port>`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    scheme: Scheme,
    address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointParseError {
    #[error("endpoint `{0}` has no `sim://` or `tcp://` scheme")]
    Scheme(String),
    #[error("endpoint `{0}` has an empty address")]
    Empty(String),
    #[error("tcp endpoint `{0}` is not host:port")]
    HostPort(String),
}

impl Endpoint {
    pub fn sim(name: impl Into<String>) -> Self {
        Endpoint {
            scheme: Scheme::Sim,
            address: name.into(),
        }
    }

    pub fn tcp(host_port: impl Into<String>) -> Self {
        Endpoint {
            scheme: Scheme::Tcp,
            address: host_port.into(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn address(&self) -> &str {
        &self.address
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scheme = match self.scheme {
            Scheme::Sim => "sim",
            Scheme::Tcp => "tcp",
        };
        write!(f, "{scheme}://{}", self.address)
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Endpoint({self})")
    }
}

impl FromStr for Endpoint {
    type Err = EndpointParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, address) = if let Some(a) = s.strip_prefix("sim://") {
            (Scheme::Sim, a)
        } else if let Some(a) = s.strip_prefix("tcp://") {
            (Scheme::Tcp, a)
        } else {
            return Err(EndpointParseError::Scheme(s.to_string()));
        };
        if address.is_empty() {
            return Err(EndpointParseError::Empty(s.to_string()));
        }
        if scheme == Scheme::Tcp {
            let ok = address
                .rsplit_once(':')
                .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
            if !ok {
                return Err(EndpointParseError::HostPort(s.to_string()));
            }
        }
        Ok(Endpoint {
            scheme,
            address: address.to_string(),
        })
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let e: Endpoint = "tcp://127.0.0.1:7700".parse().unwrap();
        assert_eq!(e.scheme(), Scheme::Tcp);
        assert_eq!(e.to_string(), "tcp://127.0.0.1:7700");
        assert_eq!("sim://a_s".parse::<Endpoint>().unwrap(), Endpoint::sim("a_s"));
        for bad in ["a_s", "sim://", "tcp://host", "tcp://:80", "http://x:1"] {
            assert!(bad.parse::<Endpoint>().is_err(), "{bad}");
        }
    }
}
