//! A deterministic in-process network. Time is virtual and moves only
//! through [`SimNetwork::advance`]; deliveries are ordered by
//! (delivery time, send sequence), which with per-link monotone delivery
//! times makes every ordered link FIFO.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Endpoint;
use crate::agent::{Agent, Outgoing};
use crate::hash::Hash;
use crate::identity::SignedEnvelope;
use crate::time::{Clock, Timestamp, VirtualClock};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error("{0} is not registered with the simulator")]
    Unreachable(Endpoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receipt {
    Queued { deliver_at: Timestamp },
    /// The link is partitioned; the message waits for [`SimNetwork::heal`].
    Held,
    /// Dropped by loss injection.
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub at: Timestamp,
    pub seq: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub envelope: SignedEnvelope,
}

/// Whatever sits behind the registered endpoints.
pub trait Deliver {
    /// Handles one delivery at `delivery.at` and returns what the recipient
    /// sends in response.
    fn deliver(&mut self, delivery: &Delivery) -> Vec<Outgoing>;
}

type Link = (Endpoint, Endpoint);

struct InFlight {
    from: Endpoint,
    to: Endpoint,
    envelope: SignedEnvelope,
}

pub struct SimNetwork {
    clock: VirtualClock,
    endpoints: BTreeSet<Endpoint>,
    default_latency: Duration,
    latency: BTreeMap<Link, Duration>,
    partitioned: BTreeSet<Link>,
    held: BTreeMap<Link, VecDeque<InFlight>>,
    loss: BTreeMap<Link, f64>,
    rng: ChaCha20Rng,
    /// Latest scheduled delivery per link; later sends never arrive earlier.
    last_delivery: BTreeMap<Link, Timestamp>,
    queue: BinaryHeap<Reverse<(Timestamp, u64)>>,
    in_flight: BTreeMap<u64, InFlight>,
    next_seq: u64,
    trace: Sha256,
    delivered: u64,
}

impl SimNetwork {
    pub fn new(start: Timestamp, seed: u64) -> Self {
        Self {
            clock: VirtualClock::new(start),
            endpoints: BTreeSet::new(),
            default_latency: Duration::from_millis(10),
            latency: BTreeMap::new(),
            partitioned: BTreeSet::new(),
            held: BTreeMap::new(),
            loss: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            last_delivery: BTreeMap::new(),
            queue: BinaryHeap::new(),
            in_flight: BTreeMap::new(),
            next_seq: 0,
            trace: Sha256::new(),
            delivered: 0,
        }
    }

    /// The shared clock; agents driven by this network read it.
    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn register(&mut self, endpoint: Endpoint) {
        self.endpoints.insert(endpoint);
    }

    pub fn set_default_latency(&mut self, latency: Duration) {
        self.default_latency = latency;
    }

    pub fn set_latency(&mut self, from: &Endpoint, to: &Endpoint, latency: Duration) {
        self.latency.insert((from.clone(), to.clone()), latency);
    }

    /// Cuts both directions between `a` and `b`.
    pub fn partition(&mut self, a: &Endpoint, b: &Endpoint) {
        self.partitioned.insert((a.clone(), b.clone()));
        self.partitioned.insert((b.clone(), a.clone()));
    }

    /// Restores both directions and schedules held messages in send order.
    pub fn heal(&mut self, a: &Endpoint, b: &Endpoint) {
        for link in [(a.clone(), b.clone()), (b.clone(), a.clone())] {
            self.partitioned.remove(&link);
            for m in self.held.remove(&link).unwrap_or_default() {
                self.schedule(m);
            }
        }
    }

    /// Drops each message on `from -> to` with probability `p`. Off unless set.
    pub fn set_loss(&mut self, from: &Endpoint, to: &Endpoint, p: f64) {
        self.loss.insert((from.clone(), to.clone()), p);
    }

    pub fn send(&mut self, from: &Endpoint, to: &Endpoint, envelope: SignedEnvelope) -> Result<Receipt, SendError> {
        if !self.endpoints.contains(to) {
            return Err(SendError::Unreachable(to.clone()));
        }
        let link = (from.clone(), to.clone());
        if let Some(p) = self.loss.get(&link) {
            if self.rng.gen_bool(p.clamp(0.0, 1.0)) {
                return Ok(Receipt::Lost);
            }
        }
        let m = InFlight {
            from: from.clone(),
            to: to.clone(),
            envelope,
        };
        if self.partitioned.contains(&link) {
            self.held.entry(link).or_default().push_back(m);
            return Ok(Receipt::Held);
        }
        Ok(Receipt::Queued {
            deliver_at: self.schedule(m),
        })
    }

    pub fn send_all(&mut self, from: &Endpoint, outgoing: Vec<Outgoing>) -> Result<Vec<Receipt>, SendError> {
        outgoing.into_iter().map(|o| self.send(from, &o.to, o.envelope)).collect()
    }

    fn schedule(&mut self, m: InFlight) -> Timestamp {
        let link = (m.from.clone(), m.to.clone());
        let latency = self.latency.get(&link).copied().unwrap_or(self.default_latency);
        let mut at = self.now().saturating_add(latency);
        if let Some(last) = self.last_delivery.get(&link) {
            at = at.max(*last);
        }
        self.last_delivery.insert(link, at);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at, seq)));
        self.in_flight.insert(seq, m);
        at
    }

    /// Messages queued and not yet delivered, excluding held ones.
    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn held(&self) -> usize {
        self.held.values().map(VecDeque::len).sum()
    }

    pub fn next_delivery_at(&self) -> Option<Timestamp> {
        self.queue.peek().map(|Reverse((at, _))| *at)
    }

    /// Moves the clock forward by `delta`, delivering everything due on the
    /// way. Responses sent during delivery are scheduled from the delivery
    /// time and delivered too if they fall inside the window.
    pub fn advance(&mut self, delta: Duration, nodes: &mut dyn Deliver) -> Vec<Delivery> {
        let until = self.now().saturating_add(delta);
        let mut out = Vec::new();
        while let Some(Reverse((at, seq))) = self.queue.peek().copied() {
            if at > until {
                break;
            }
            self.queue.pop();
            self.clock.set(at);
            let m = self.in_flight.remove(&seq).expect("queued messages are in flight");
            let delivery = Delivery {
                at,
                seq,
                from: m.from,
                to: m.to,
                envelope: m.envelope,
            };
            self.record(&delivery);
            let responses = nodes.deliver(&delivery);
            for o in responses {
                // Responses to unregistered endpoints vanish; the sender's log
                // still records them as sent.
                let _ = self.send(&delivery.to, &o.to, o.envelope);
            }
            out.push(delivery);
        }
        self.clock.set(until);
        out
    }

    /// Delivers until nothing is in flight or `limit` virtual time passes.
    pub fn run_until_idle(&mut self, limit: Duration, nodes: &mut dyn Deliver) -> Vec<Delivery> {
        let deadline = self.now().saturating_add(limit);
        let mut out = Vec::new();
        while let Some(at) = self.next_delivery_at() {
            if at > deadline {
                break;
            }
            let delta = Duration::from_millis((at.as_millis() - self.now().as_millis()).max(0) as u64);
            out.extend(self.advance(delta, nodes));
        }
        out
    }

    fn record(&mut self, d: &Delivery) {
        self.delivered += 1;
        self.trace.update(
            format!("{} {} {} {} {}\n", d.at.as_millis(), d.seq, d.from, d.to, d.envelope.envelope_hash()).as_bytes(),
        );
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// A digest of every delivery so far: time, sequence, link and envelope.
    pub fn trace_hash(&self) -> Hash {
        Hash::new(crate::hash::HashAlgorithm::Sha256, self.trace.clone().finalize().to_vec())
            .expect("sha-256 digests are 32 bytes")
    }
}

/// Agents and scripted nodes behind their sim endpoints.
#[derive(Default)]
pub struct Cluster {
    pub agents: BTreeMap<Endpoint, Agent>,
    pub scripted: BTreeMap<Endpoint, Box<dyn Deliver>>,
    /// Dispatch errors, in delivery order.
    pub errors: Vec<(Delivery, String)>,
}

impl Cluster {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `agent` under its own endpoint and registers it with `net`.
    pub fn add_agent(&mut self, net: &mut SimNetwork, agent: Agent) {
        net.register(agent.endpoint().clone());
        self.agents.insert(agent.endpoint().clone(), agent);
    }

    pub fn add_scripted(&mut self, net: &mut SimNetwork, endpoint: Endpoint, node: Box<dyn Deliver>) {
        net.register(endpoint.clone());
        self.scripted.insert(endpoint, node);
    }

    pub fn agent(&self, name: &str) -> &Agent {
        &self.agents[&Endpoint::sim(name)]
    }

    pub fn agent_mut(&mut self, name: &str) -> &mut Agent {
        self.agents.get_mut(&Endpoint::sim(name)).expect("agent is in the cluster")
    }
}

impl Deliver for Cluster {
    fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
        if let Some(agent) = self.agents.get_mut(&d.to) {
            return match agent.dispatch(&d.envelope, Some(&d.from), d.at) {
                Ok(done) => done.outgoing,
                Err(e) => {
                    self.errors.push((d.clone(), e.to_string()));
                    Vec::new()
                }
            };
        }
        match self.scripted.get_mut(&d.to) {
            Some(node) => node.deliver(d),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;

    struct Sink(Vec<Delivery>);

    impl Deliver for Sink {
        fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
            self.0.push(d.clone());
            Vec::new()
        }
    }

    fn env(id: &Identity, n: u8) -> SignedEnvelope {
        id.sign("test-note", vec![n]).unwrap()
    }

    fn net() -> (SimNetwork, Endpoint, Endpoint, Identity) {
        let mut n = SimNetwork::new(Timestamp::from_millis(0), 1);
        let (a, b) = (Endpoint::sim("a"), Endpoint::sim("b"));
        n.register(a.clone());
        n.register(b.clone());
        (n, a, b, Identity::from_secret_bytes("a", [5; 32]))
    }

    #[test]
    fn latency_and_fifo() {
        let (mut n, a, b, id) = net();
        assert_eq!(
            n.send(&a, &b, env(&id, 1)).unwrap(),
            Receipt::Queued {
                deliver_at: Timestamp::from_millis(10)
            }
        );
        n.set_latency(&a, &b, Duration::from_millis(1));
        n.send(&a, &b, env(&id, 2)).unwrap();
        let mut sink = Sink(vec![]);
        assert!(n.advance(Duration::ZERO, &mut sink).is_empty());
        let got = n.advance(Duration::from_millis(10), &mut sink);
        assert_eq!(got.iter().map(|d| d.envelope.payload()[0]).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(got[0].at, Timestamp::from_millis(10));
        assert_eq!(n.now(), Timestamp::from_millis(10));
    }

    #[test]
    fn partition_holds_until_heal() {
        let (mut n, a, b, id) = net();
        n.partition(&a, &b);
        assert_eq!(n.send(&a, &b, env(&id, 1)).unwrap(), Receipt::Held);
        n.send(&a, &b, env(&id, 2)).unwrap();
        let mut sink = Sink(vec![]);
        assert!(n.advance(Duration::from_secs(1), &mut sink).is_empty());
        n.heal(&a, &b);
        let got = n.advance(Duration::from_millis(10), &mut sink);
        assert_eq!(got.iter().map(|d| d.envelope.payload()[0]).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(
            n.send(&a, &Endpoint::sim("nobody"), env(&id, 3)),
            Err(SendError::Unreachable(Endpoint::sim("nobody")))
        );
    }

    #[test]
    fn loss_is_seeded() {
        let run = || {
            let (mut n, a, b, id) = net();
            n.set_loss(&a, &b, 0.5);
            (0..32).map(|i| n.send(&a, &b, env(&id, i)).unwrap() == Receipt::Lost).collect::<Vec<_>>()
        };
        let first = run();
        assert_eq!(first, run());
        assert!(first.iter().any(|l| *l) && first.iter().any(|l| !*l));
    }
}
