//! A sells device D to B. The sale names the certificates of D and of both
//! key managers, A_K and B_K. Once D arrives at B and reports in, A_K sends
//! it to B_K for a new certificate, and D then deregisters from A_K.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use conet_core::agent::{OfferSpec, Outgoing, Policy};
use conet_core::identity::{Identity, PartyId, TrustRegistry};
use conet_core::negotiation::{Acceptance, OfferItem, SessionState};
use conet_core::net::{Deliver, Delivery, Endpoint};
use conet_core::trace::DocumentPush;
use conet_core::{canonical, Contract, Document, Hash, Offer, SignedEnvelope, Value};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::device_sale;
use super::{hops, Check, Outcome, ScenarioError, Stage};

pub const AGENTS: &[&str] = &["A", "B", "D", "A_K", "B_K"];

pub const CERTIFICATE: &str = "certificate";
pub const LOCATION_REPORT: &str = "location-report";
pub const REREGISTER: &str = "reregister";
pub const REGISTRATION_REQUEST: &str = "registration-request";
pub const DEREGISTRATION_REQUEST: &str = "deregistration-request";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Certificate {
    pub subject: PartyId,
    pub issuer: PartyId,
    pub role: String,
}

fn certify(issuer: &Identity, subject: &PartyId, role: &str) -> SignedEnvelope {
    let cert = Certificate {
        subject: subject.clone(),
        issuer: issuer.party_id().clone(),
        role: role.into(),
    };
    issuer
        .sign(CERTIFICATE, serde_json::to_vec(&cert).expect("certificate encodes"))
        .expect("issuer holds its key")
}

fn message(from: &Identity, to: &str, kind: &str, body: serde_json::Value) -> Outgoing {
    Outgoing {
        to: Endpoint::sim(to),
        envelope: from.sign(kind, body.to_string().into_bytes()).expect("node holds its key"),
    }
}

fn body(env: &SignedEnvelope) -> serde_json::Value {
    serde_json::from_slice(env.payload()).unwrap_or_default()
}

/// What a key manager learns from a notified sale of a device it manages
/// or is to manage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub device: PartyId,
    pub acceptance: Hash,
    pub from_manager: Hash,
    pub to_manager: Hash,
}

/// Reads a device sale out of pushed offer and acceptance envelopes.
fn transfer_from_push(push: &DocumentPush, sale: &Hash, registry: &TrustRegistry, now: conet_core::Timestamp) -> Option<Transfer> {
    let envs: Vec<SignedEnvelope> = push
        .documents
        .iter()
        .filter_map(|d| canonical::decode::<SignedEnvelope>(d).ok())
        .filter(|e| registry.verify(e, now).is_ok())
        .collect();
    let acc_env = envs.iter().find(|e| e.payload_kind() == Acceptance::KIND)?;
    let acc: Acceptance = acc_env.open().ok()?;
    let offer: Offer = envs.iter().find(|e| e.envelope_hash() == &acc.offer_hash)?.open().ok()?;
    let c = offer.acceptable_contracts()?.into_iter().find(|c| &c.template == sale)?;
    Some(Transfer {
        device: c.argument("device")?.as_party()?.clone(),
        acceptance: acc_env.envelope_hash().clone(),
        from_manager: c.argument("sellerKeyCertificate")?.as_reference()?.clone(),
        to_manager: c.argument("buyerKeyCertificate")?.as_reference()?.clone(),
    })
}

#[derive(Default)]
pub struct KeyManagerState {
    pub transfers: Vec<Transfer>,
    pub issued: Vec<SignedEnvelope>,
    pub deregistered: Vec<PartyId>,
    pub refused: Vec<String>,
}

struct KeyManager {
    identity: Identity,
    /// This manager's own certificate.
    certificate: Hash,
    sale: Hash,
    registry: Arc<TrustRegistry>,
    state: Rc<RefCell<KeyManagerState>>,
}

impl Deliver for KeyManager {
    fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
        let Ok(sender) = self.registry.verify(&d.envelope, d.at) else {
            self.state.borrow_mut().refused.push(format!("unsigned {}", d.envelope.payload_kind()));
            return Vec::new();
        };
        let mut st = self.state.borrow_mut();
        match d.envelope.payload_kind() {
            DocumentPush::KIND => {
                if let Some(t) = d
                    .envelope
                    .open::<DocumentPush>()
                    .ok()
                    .and_then(|p| transfer_from_push(&p, &self.sale, &self.registry, d.at))
                {
                    st.transfers.push(t);
                }
                Vec::new()
            }
            // The device turned up somewhere: if it was sold away, send it on.
            LOCATION_REPORT => match st.transfers.iter().find(|t| t.device == sender && t.from_manager == self.certificate) {
                Some(t) => vec![message(
                    &self.identity,
                    &node_of(&d.from),
                    REREGISTER,
                    json!({ "keyManager": t.to_manager.to_string(), "locator": Endpoint::sim("B_K").to_string(), "sale": t.acceptance.to_string() }),
                )],
                None => Vec::new(),
            },
            REGISTRATION_REQUEST => match st.transfers.iter().find(|t| t.device == sender && t.to_manager == self.certificate) {
                Some(_) => {
                    let cert = certify(&self.identity, &sender, "device");
                    st.issued.push(cert.clone());
                    vec![Outgoing {
                        to: d.from.clone(),
                        envelope: cert,
                    }]
                }
                None => {
                    st.refused.push(format!("registration from unexpected {}", sender.short()));
                    Vec::new()
                }
            },
            DEREGISTRATION_REQUEST => {
                if st.transfers.iter().any(|t| t.device == sender) {
                    st.deregistered.push(sender);
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

fn node_of(e: &Endpoint) -> String {
    e.address().to_string()
}

#[derive(Default)]
pub struct DeviceState {
    pub certificate: Option<SignedEnvelope>,
    pub manager: String,
}

struct Device {
    identity: Identity,
    registry: Arc<TrustRegistry>,
    state: Rc<RefCell<DeviceState>>,
}

impl Deliver for Device {
    fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
        let Ok(sender) = self.registry.verify(&d.envelope, d.at) else { return Vec::new() };
        let mut st = self.state.borrow_mut();
        match d.envelope.payload_kind() {
            REREGISTER if node_of(&d.from) == st.manager => {
                let b = body(&d.envelope);
                let Some(target) = b["locator"].as_str().and_then(|l| l.parse::<Endpoint>().ok()) else {
                    return Vec::new();
                };
                let previous = st.certificate.as_ref().map(|c| c.envelope_hash().to_string());
                vec![message(
                    &self.identity,
                    &node_of(&target),
                    REGISTRATION_REQUEST,
                    json!({ "previousCertificate": previous, "sale": b["sale"] }),
                )]
            }
            CERTIFICATE => {
                let Ok(cert) = serde_json::from_slice::<Certificate>(d.envelope.payload()) else { return Vec::new() };
                if cert.issuer != sender || &cert.subject != self.identity.party_id() {
                    return Vec::new();
                }
                let old = std::mem::replace(&mut st.manager, node_of(&d.from));
                st.certificate = Some(d.envelope.clone());
                vec![message(&self.identity, &old, DEREGISTRATION_REQUEST, json!({ "newManager": st.manager }))]
            }
            _ => Vec::new(),
        }
    }
}

pub fn run(stage: &mut Stage) -> Result<Outcome, ScenarioError> {
    stage.cast(AGENTS);
    let sale = device_sale().hash().expect("template encodes");
    let (a, b, dev) = (stage.party("A"), stage.party("B"), stage.party("D"));
    let a_k_cert = certify(stage.identity("A_K"), &stage.party("A_K"), "key-manager");
    let b_k_cert = certify(stage.identity("B_K"), &stage.party("B_K"), "key-manager");
    let d_cert = certify(stage.identity("A_K"), &dev, "device");
    for (env, label) in [(&a_k_cert, "cert(A_K)"), (&b_k_cert, "cert(B_K)"), (&d_cert, "cert(D by A_K)")] {
        stage.label(env.envelope_hash(), label);
    }

    for name in ["A", "B"] {
        let mut parts = stage.parts(name, &["A", "B"]);
        parts.documents.insert_document(&device_sale()).expect("template encodes");
        if name == "B" {
            parts.policies = vec![(sale.clone(), Policy::AutoAccept(Arc::new(|_, _| true)))];
        }
        stage.add_agent(name, parts)?;
    }
    let managers: Vec<(&str, &SignedEnvelope, Rc<RefCell<KeyManagerState>>)> = vec![
        ("A_K", &a_k_cert, Rc::default()),
        ("B_K", &b_k_cert, Rc::default()),
    ];
    for (name, cert, state) in &managers {
        let node = KeyManager {
            identity: stage.identity(name).clone(),
            certificate: cert.envelope_hash().clone(),
            sale: sale.clone(),
            registry: stage.registry.clone(),
            state: state.clone(),
        };
        stage.add_scripted(name, Box::new(node));
    }
    let device: Rc<RefCell<DeviceState>> = Rc::new(RefCell::new(DeviceState {
        certificate: Some(d_cert.clone()),
        manager: "A_K".into(),
    }));
    stage.add_scripted(
        "D",
        Box::new(Device {
            identity: stage.identity("D").clone(),
            registry: stage.registry.clone(),
            state: device.clone(),
        }),
    );

    let price = format!("{}.00 EUR", stage.rng("price").gen_range(2_000..40_000));
    let contract = Contract::new(
        sale.clone(),
        [
            ("seller".into(), Value::Party(a.clone())),
            ("buyer".into(), Value::Party(b.clone())),
            ("device".into(), Value::Party(dev.clone())),
            ("deviceCertificate".into(), Value::Reference(d_cert.envelope_hash().clone())),
            ("sellerKeyCertificate".into(), Value::Reference(a_k_cert.envelope_hash().clone())),
            ("buyerKeyCertificate".into(), Value::Reference(b_k_cert.envelope_hash().clone())),
            ("price".into(), Value::text(price)),
        ],
    );
    let spec = OfferSpec::new(b.clone(), vec![OfferItem::Contract(contract)]);
    let (session, out) = stage.with_agent("A", |ag, now| ag.make_offer(spec, now))?;
    stage.send("A", out)?;
    stage.settle()?;
    stage.label_sessions("A");

    // Each agent tells its key manager about the sale.
    for (agent, manager) in [("A", "A_K"), ("B", "B_K")] {
        let docs = {
            let s = stage.agent(agent).engine().session(session).map_err(|e| ScenarioError::Script(e.to_string()))?;
            let mut docs = vec![s.live_offer_envelope().canonical_bytes().expect("envelope encodes")];
            docs.extend(s.terminal_message().map(|t| t.canonical_bytes().expect("envelope encodes")));
            docs
        };
        let out = stage.with_agent(agent, |ag, now| ag.push_documents(&Endpoint::sim(manager), docs, now))?;
        stage.send(agent, out)?;
    }
    stage.settle()?;

    stage.note("D is shut off and shipped to B");
    stage.advance(Duration::from_secs(2 * 86_400))?;
    stage.note("D arrives at B and is turned on");
    let mut rng = stage.rng("site");
    let (lat, lon): (f64, f64) = (rng.gen_range(55.0..68.0), rng.gen_range(11.0..24.0));
    let report = message(stage.identity("D"), "A_K", LOCATION_REPORT, json!({ "lat": format!("{lat:.5}"), "lon": format!("{lon:.5}") }));
    stage.send("D", vec![report])?;
    stage.settle()?;

    let expected = hops(&[
        ("A", "B", "offer"),
        ("B", "A", "acceptance"),
        ("A", "A_K", "document-push"),
        ("B", "B_K", "document-push"),
        ("D", "A_K", LOCATION_REPORT),
        ("A_K", "D", REREGISTER),
        ("D", "B_K", REGISTRATION_REQUEST),
        ("B_K", "D", CERTIFICATE),
        ("D", "A_K", DEREGISTRATION_REQUEST),
    ]);

    let d = device.borrow();
    let live: Option<Certificate> = d.certificate.as_ref().and_then(|c| serde_json::from_slice(c.payload()).ok());
    let live_signer = d.certificate.as_ref().and_then(|c| stage.registry.verify(c, stage.now()).ok());
    let (ak, bk) = (managers[0].2.borrow(), managers[1].2.borrow());
    let acceptance = stage
        .agent("A")
        .engine()
        .session(session)
        .ok()
        .and_then(|s| s.terminal_message())
        .map(|t| t.envelope_hash().clone());
    let state = |name: &str| stage.agent(name).engine().session(session).map(|s| s.state()).ok();
    let checks = vec![
        Check::eq("sale Accepted on both sides", (state("A"), state("B")), (Some(SessionState::Accepted), Some(SessionState::Accepted))),
        Check::eq("A_K learned the transfer from the signed sale", ak.transfers.first().map(|t| (t.device.clone(), Some(t.acceptance.clone()))), Some((dev.clone(), acceptance.clone()))),
        Check::eq("B_K learned the transfer from the signed sale", bk.transfers.first().map(|t| t.to_manager.clone()), Some(b_k_cert.envelope_hash().clone())),
        Check::eq("D's live certificate is issued by B_K", live.as_ref().map(|c| c.issuer.clone()), Some(stage.party("B_K"))),
        Check::eq("D's live certificate is signed by B_K", live_signer, Some(stage.party("B_K"))),
        Check::eq("D's live certificate names D", live.map(|c| c.subject), Some(dev.clone())),
        Check::eq("B_K issued exactly one certificate", bk.issued.len(), 1),
        Check::eq("deregistration request reached A_K", ak.deregistered.clone(), vec![dev.clone()]),
        Check::eq("D now answers to B_K", d.manager.clone(), "B_K".to_string()),
        Check::eq("no key manager refused a message", (ak.refused.len(), bk.refused.len()), (0, 0)),
    ];
    drop((ak, bk));
    Ok(Outcome { expected, checks })
}
