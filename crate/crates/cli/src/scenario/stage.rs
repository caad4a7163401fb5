use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use conet_core::agent::admin::{self, Method};
use conet_core::agent::store::FaultyBackend;
use conet_core::agent::{Agent, AgentError, AgentParts, MemoryBackend, MessageStore, Outgoing, Quarantine};
use conet_core::identity::{Identity, PartyId, SignedEnvelope, TrustRegistry};
use conet_core::net::{Cluster, Deliver, Delivery, Endpoint, SimNetwork};
use conet_core::negotiation::{Acceptance, Offer, Rejection, SessionId};
use conet_core::{Document, Hash, Timestamp};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

/// Scenario clocks start here so rendered timestamps stay readable.
pub const START: Timestamp = Timestamp::from_millis(1_767_225_600_000);

const ADMIN_TOKEN: &str = "scenario";

/// Idle limit for [`Stage::settle`]; every scripted exchange finishes well
/// inside it.
const SETTLE_LIMIT: Duration = Duration::from_secs(7 * 24 * 3600);

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{agent}: {source}")]
    Agent { agent: String, source: AgentError },
    #[error("{0} stopped after a store failure")]
    Crashed(String),
    #[error("{0}")]
    Script(String),
}

/// Routes a store failure on one agent's message log, for crash testing.
#[derive(Debug, Clone)]
pub struct Fault {
    pub agent: String,
    pub budget: usize,
    pub torn_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Step {
    /// Virtual milliseconds since the scenario started.
    pub t: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hop {
    pub from: String,
    pub to: String,
    pub kind: String,
}

pub struct Stage {
    pub net: SimNetwork,
    pub cluster: Cluster,
    pub registry: Arc<TrustRegistry>,
    ids: BTreeMap<String, Identity>,
    /// Parts each agent started from, for rebuilding it from its log.
    initial: BTreeMap<String, AgentParts>,
    labels: BTreeMap<Hash, String>,
    /// Time, text and the delivered envelope, labelled when reported.
    steps: Vec<(i64, String, Option<Hash>)>,
    hops: Vec<Hop>,
    fault: Option<Fault>,
    /// Bytes of the faulted agent's log.
    pub fault_log: Option<MemoryBackend>,
    seed: u64,
}

/// Fixture randomness for `purpose` under scenario seed `seed`.
pub fn fixture_rng(seed: u64, purpose: &str) -> ChaCha20Rng {
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(Hash::of_bytes(format!("{seed}/{purpose}").as_bytes()).digest());
    ChaCha20Rng::from_seed(bytes)
}

/// Small session ids in decimal, random ones by their first hex digits.
pub fn short_session(id: SessionId) -> String {
    if id.0 < 10_000 {
        id.0.to_string()
    } else {
        id.to_string()[..8].to_string()
    }
}

/// Short node name behind a sim endpoint.
pub fn node_name(e: &Endpoint) -> String {
    e.address().to_string()
}

impl Stage {
    pub fn new(seed: u64, fault: Option<Fault>) -> Self {
        Self {
            net: SimNetwork::new(START, seed),
            cluster: Cluster::new(),
            registry: Arc::new(TrustRegistry::new()),
            ids: BTreeMap::new(),
            initial: BTreeMap::new(),
            labels: BTreeMap::new(),
            steps: Vec::new(),
            hops: Vec::new(),
            fault,
            fault_log: None,
            seed,
        }
    }

    /// Generates one identity per name from the seed and registers them
    /// all. Call once, before any agent joins.
    pub fn cast(&mut self, names: &[&str]) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let mut registry = TrustRegistry::new();
        for name in names {
            let id = Identity::generate(*name, &mut rng);
            registry
                .register(
                    &id,
                    START.saturating_sub(Duration::from_secs(86_400)),
                    START.saturating_add(Duration::from_secs(365 * 86_400)),
                )
                .expect("window is non-empty");
            self.ids.insert(name.to_string(), id);
        }
        self.registry = Arc::new(registry);
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fixture randomness for `purpose`, independent of every other stream.
    pub fn rng(&self, purpose: &str) -> ChaCha20Rng {
        fixture_rng(self.seed, purpose)
    }

    pub fn identity(&self, name: &str) -> &Identity {
        &self.ids[name]
    }

    pub fn party(&self, name: &str) -> PartyId {
        self.ids[name].party_id().clone()
    }

    pub fn endpoint(name: &str) -> Endpoint {
        Endpoint::sim(name)
    }

    pub fn now(&self) -> Timestamp {
        self.net.now()
    }

    /// Parts for agent `name` that know every other `peers` entry.
    pub fn parts(&self, name: &str, peers: &[&str]) -> AgentParts {
        let mut p = AgentParts::new(self.ids[name].clone(), Endpoint::sim(name), self.registry.clone());
        for peer in peers.iter().filter(|p| **p != name) {
            p.peers.insert(self.party(peer), Endpoint::sim(*peer));
        }
        p.seed = self.seed ^ Hash::of_bytes(name.as_bytes()).digest()[0] as u64;
        p
    }

    pub fn add_agent(&mut self, name: &str, parts: AgentParts) -> Result<(), ScenarioError> {
        self.initial.insert(name.to_string(), parts.clone());
        let quarantine = Quarantine::new(Box::new(MemoryBackend::new()));
        let agent = match &self.fault {
            Some(f) if f.agent == name => {
                let bytes = MemoryBackend::new();
                self.fault_log = Some(bytes.clone());
                let log = MessageStore::new(Box::new(FaultyBackend::new(bytes, f.budget, f.torn_bytes)));
                Agent::start(parts, log, quarantine)
            }
            _ => Agent::start(parts, MessageStore::new(Box::new(MemoryBackend::new())), quarantine),
        }
        .map_err(|source| ScenarioError::Agent {
            agent: name.into(),
            source,
        })?;
        self.cluster.add_agent(&mut self.net, agent);
        Ok(())
    }

    /// Names of the full agents on stage, excluding scripted nodes.
    pub fn negotiators(&self) -> Vec<String> {
        self.initial.keys().cloned().collect()
    }

    pub fn initial_parts(&self, name: &str) -> Option<AgentParts> {
        self.initial.get(name).cloned()
    }

    pub fn add_scripted(&mut self, name: &str, node: Box<dyn Deliver>) {
        self.cluster.add_scripted(&mut self.net, Endpoint::sim(name), node);
    }

    pub fn agent(&self, name: &str) -> &Agent {
        self.cluster.agent(name)
    }

    /// Runs `f` on agent `name`, mapping its error.
    pub fn with_agent<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Agent, Timestamp) -> Result<T, AgentError>,
    ) -> Result<T, ScenarioError> {
        let now = self.now();
        let agent = self.cluster.agent_mut(name);
        f(agent, now).map_err(|source| match source {
            AgentError::Crashed | AgentError::Store(_) => ScenarioError::Crashed(name.into()),
            source => ScenarioError::Agent {
                agent: name.into(),
                source,
            },
        })
    }

    /// Sends what `from` produced.
    pub fn send(&mut self, from: &str, out: Vec<Outgoing>) -> Result<(), ScenarioError> {
        self.net
            .send_all(&Endpoint::sim(from), out)
            .map_err(|e| ScenarioError::Script(e.to_string()))?;
        Ok(())
    }

    /// Runs `f` on agent `name` and sends its outgoing envelopes.
    pub fn act(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Agent, Timestamp) -> Result<Vec<Outgoing>, AgentError>,
    ) -> Result<(), ScenarioError> {
        let out = self.with_agent(name, f)?;
        self.send(name, out)
    }

    /// Calls agent `name`'s admin API on behalf of `caller` and sends what
    /// the call produced. Anything but a 200 is a script error.
    pub fn admin(
        &mut self,
        caller: &str,
        name: &str,
        method: Method,
        path: &str,
        body: serde_json::Value,
    ) -> Result<serde_json::Value, ScenarioError> {
        let kind = match method {
            Method::Get => format!("GET {path}"),
            Method::Post => format!("POST {path}"),
        };
        self.local_hop(caller, name, &kind);
        let now = self.now();
        let agent = self.cluster.agent_mut(name);
        let resp = admin::handle(agent, ADMIN_TOKEN, method, path, Some(ADMIN_TOKEN), body.to_string().as_bytes(), now);
        if agent.is_crashed() {
            return Err(ScenarioError::Crashed(name.into()));
        }
        if resp.status != 200 {
            return Err(ScenarioError::Script(format!("{name} answered {kind} with {}: {}", resp.status, resp.body)));
        }
        self.send(name, resp.outgoing)?;
        Ok(resp.body)
    }

    /// Sends a signed envelope from a scripted node.
    pub fn send_raw(&mut self, from: &str, to: &str, envelope: SignedEnvelope) -> Result<(), ScenarioError> {
        self.send(
            from,
            vec![Outgoing {
                to: Endpoint::sim(to),
                envelope,
            }],
        )
    }

    pub fn label(&mut self, hash: &Hash, label: impl Into<String>) {
        self.labels.insert(hash.clone(), label.into());
    }

    /// Labels every negotiation message `name` holds as o(i,j), a(i,j) or
    /// r(i,j).
    pub fn label_sessions(&mut self, name: &str) {
        let mut labels = Vec::new();
        for s in self.agent(name).engine().sessions() {
            let i = short_session(s.id());
            for env in s.transcript() {
                let label = match env.payload_kind() {
                    Offer::KIND => env.open::<Offer>().ok().map(|o| format!("o({i},{})", o.offer_index)),
                    Acceptance::KIND => env.open::<Acceptance>().ok().map(|a| format!("a({i},{})", a.offer_index)),
                    Rejection::KIND => env.open::<Rejection>().ok().map(|r| format!("r({i},{})", r.offer_index)),
                    _ => None,
                };
                labels.extend(label.map(|l| (env.envelope_hash().clone(), l)));
            }
        }
        self.labels.extend(labels);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        let t = self.now().as_millis() - START.as_millis();
        self.steps.push((t, text.into(), None));
    }

    /// Records an exchange that travels outside the agent network, such as
    /// an event-stream notification or an admin API call.
    pub fn local_hop(&mut self, from: &str, to: &str, kind: &str) {
        let t = self.now().as_millis() - START.as_millis();
        self.steps.push((t, format!("{from} -> {to}: {kind}"), None));
        self.hops.push(Hop {
            from: from.into(),
            to: to.into(),
            kind: kind.into(),
        });
    }

    fn record(&mut self, deliveries: Vec<Delivery>) -> Result<(), ScenarioError> {
        for d in deliveries {
            let kind = d.envelope.payload_kind().to_string();
            let (from, to) = (node_name(&d.from), node_name(&d.to));
            self.steps.push((
                d.at.as_millis() - START.as_millis(),
                format!("{from} -> {to}: {kind}"),
                Some(d.envelope.envelope_hash().clone()),
            ));
            self.hops.push(Hop { from, to, kind });
        }
        for (endpoint, agent) in &self.cluster.agents {
            if agent.is_crashed() {
                return Err(ScenarioError::Crashed(node_name(endpoint)));
            }
        }
        if let Some((d, e)) = self.cluster.errors.first() {
            return Err(ScenarioError::Script(format!("{} rejected a delivery: {e}", node_name(&d.to))));
        }
        Ok(())
    }

    /// Delivers until the network is idle.
    pub fn settle(&mut self) -> Result<(), ScenarioError> {
        let delivered = self.net.run_until_idle(SETTLE_LIMIT, &mut self.cluster);
        self.record(delivered)
    }

    /// Moves virtual time forward, delivering what falls due.
    pub fn advance(&mut self, delta: Duration) -> Result<(), ScenarioError> {
        let delivered = self.net.advance(delta, &mut self.cluster);
        self.record(delivered)
    }

    pub fn steps(&self) -> Vec<Step> {
        self.steps
            .iter()
            .map(|(t, text, hash)| {
                let label = hash.as_ref().and_then(|h| self.labels.get(h));
                Step {
                    t: *t,
                    text: match label {
                        Some(l) => format!("{text} {l}"),
                        None => text.clone(),
                    },
                }
            })
            .collect()
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    /// Digest of the delivery trace plus every agent's message log.
    pub fn transcript_hash(&self) -> Hash {
        let mut text = format!("network {}\n", self.net.trace_hash());
        for (endpoint, agent) in &self.cluster.agents {
            text.push_str(&format!("agent {endpoint}\n"));
            for r in agent.log().records() {
                let hash = r.entry.envelope().map(|e| e.envelope_hash().to_string()).unwrap_or_default();
                text.push_str(&format!("{} {} {}\n", r.seq, r.entry.at().as_millis(), hash));
            }
        }
        Hash::of_bytes(text.as_bytes())
    }
}
