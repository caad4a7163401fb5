//! B orders custom steel rods from A. A's workflow system A_W, notified of
//! the order, has A accept it and asks the plant A_P to manufacture. Once
//! A_P reports back, A_W has A offer the delivery and payment contract,
//! which refers to the acceptance of the order.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use conet_core::agent::admin::Method;
use conet_core::agent::{AcceptedContract, EventKind, OfferSpec, Policy};
use conet_core::identity::Identity;
use conet_core::negotiation::{OfferItem, SessionState};
use conet_core::net::{Deliver, Delivery, Endpoint};
use conet_core::agent::Outgoing;
use conet_core::{Contract, Document, Hash, SignedEnvelope, Value};
use rand::Rng;
use serde_json::json;

use super::templates::{delivery_and_payment, steel_rod_purchase};
use super::{hops, Check, Hop, Outcome, ScenarioError, Stage, START};

pub const AGENTS: &[&str] = &["A", "B", "A_W", "A_P"];

pub const MANUFACTURING_REQUEST: &str = "manufacturing-request";
pub const STATUS_REPORT: &str = "status-report";

/// How long the plant takes to turn an order around.
const LEAD_TIME: Duration = Duration::from_secs(18 * 3600);

/// The plant: answers each manufacturing request with a status report.
struct Plant {
    identity: Identity,
}

impl Deliver for Plant {
    fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
        if d.envelope.payload_kind() != MANUFACTURING_REQUEST {
            return Vec::new();
        }
        let Ok(request) = serde_json::from_slice::<serde_json::Value>(d.envelope.payload()) else {
            return Vec::new();
        };
        let report = json!({ "order": request["order"], "quantity": request["quantity"], "status": "manufactured" });
        let envelope = self
            .identity
            .sign(STATUS_REPORT, report.to_string().into_bytes())
            .expect("plant holds its key");
        vec![Outgoing {
            to: d.from.clone(),
            envelope,
        }]
    }
}

/// The workflow system's inbox.
struct Inbox(Rc<RefCell<Vec<Delivery>>>);

impl Deliver for Inbox {
    fn deliver(&mut self, d: &Delivery) -> Vec<Outgoing> {
        self.0.borrow_mut().push(d.clone());
        Vec::new()
    }
}

/// The manufacturer's own automation for Steel Rod Purchase contracts.
#[derive(Default)]
struct Books {
    scheduled: Vec<i64>,
    packaging: Vec<(String, i64)>,
    ledger: Vec<(i64, String)>,
}

fn on_steel_rod_purchase(books: &Mutex<Books>, c: &AcceptedContract<'_>) {
    let quantity = match c.contract.argument("quantity") {
        Some(Value::Integer(q)) => *q,
        _ => return,
    };
    let buyer = c.contract.argument("buyer").and_then(Value::as_party).map(|p| p.short()).unwrap_or_default();
    let price = match c.contract.argument("price") {
        Some(Value::Text(t)) => t.clone(),
        _ => String::new(),
    };
    let mut b = books.lock().expect("books lock");
    b.scheduled.push(quantity);
    b.packaging.push((buyer, quantity));
    b.ledger.push((quantity, price));
}

pub fn run(stage: &mut Stage) -> Result<Outcome, ScenarioError> {
    stage.cast(AGENTS);
    let order_template = steel_rod_purchase().hash().expect("template encodes");
    let delivery_template = delivery_and_payment().hash().expect("template encodes");
    let (a, b) = (stage.party("A"), stage.party("B"));
    let mut rng = stage.rng("order");
    let quantity: i64 = rng.gen_range(50..5000);
    let unit_cents: i64 = rng.gen_range(150..900);
    let price = format!("{}.{:02} EUR", quantity * unit_cents / 100, quantity * unit_cents % 100);
    let delivery_fee = format!("{}.00 EUR", rng.gen_range(100..800));

    let books: Arc<Mutex<Books>> = Arc::default();
    let mut pa = stage.parts("A", &["B"]);
    pa.documents.insert_document(&steel_rod_purchase()).expect("template encodes");
    pa.documents.insert_document(&delivery_and_payment()).expect("template encodes");
    let hook = books.clone();
    pa.policies = vec![
        (order_template.clone(), Policy::Handler(Arc::new(move |c| on_steel_rod_purchase(&hook, c)))),
        (order_template.clone(), Policy::DeferToHuman),
    ];
    stage.add_agent("A", pa)?;

    let mut pb = stage.parts("B", &["A"]);
    pb.documents.insert_document(&steel_rod_purchase()).expect("template encodes");
    pb.documents.insert_document(&delivery_and_payment()).expect("template encodes");
    // B pays for delivery only of orders it holds a signed acceptance for.
    pb.policies = vec![(
        delivery_template.clone(),
        Policy::AutoAccept(Arc::new(|o, ctx| {
            o.contracts
                .iter()
                .filter_map(OfferItem::to_contract)
                .all(|c| matches!(c.argument("order"), Some(Value::Reference(h)) if ctx.documents.contains(h)))
        })),
    )];
    stage.add_agent("B", pb)?;

    let inbox: Rc<RefCell<Vec<Delivery>>> = Rc::default();
    stage.add_scripted("A_W", Box::new(Inbox(inbox.clone())));
    stage.add_scripted(
        "A_P",
        Box::new(Plant {
            identity: stage.identity("A_P").clone(),
        }),
    );
    stage.net.set_latency(&Endpoint::sim("A_P"), &Endpoint::sim("A_W"), LEAD_TIME);

    // o_k: B's order.
    let order = Contract::new(
        order_template.clone(),
        [
            ("buyer".into(), Value::Party(b.clone())),
            ("quantity".into(), Value::Integer(quantity)),
            ("price".into(), Value::text(price)),
            ("deliveryBy".into(), Value::Timestamp(START.saturating_add(Duration::from_secs(3 * 86_400)))),
        ],
    );
    let spec = OfferSpec::new(a.clone(), vec![OfferItem::Contract(order)]);
    let (k, out) = stage.with_agent("B", |ag, now| ag.make_offer(spec, now))?;
    stage.send("B", out)?;
    stage.settle()?;

    // A forwards every offer it parks to A_W.
    let parked: Vec<Hash> = stage
        .agent("A")
        .events()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Pending { session, .. } => stage.agent("A").engine().session(session).ok(),
            _ => None,
        })
        .map(|s| s.live_offer_hash().clone())
        .collect();
    for h in parked {
        let bytes = stage.agent("A").log().by_hash(&h).find_map(|r| r.entry.envelope().cloned());
        let Some(env) = bytes else { continue };
        let doc = env.canonical_bytes().expect("envelope encodes");
        let out = stage.with_agent("A", |ag, now| ag.push_documents(&Endpoint::sim("A_W"), vec![doc], now))?;
        stage.send("A", out)?;
    }
    stage.settle()?;
    let notified = inbox.borrow().iter().any(|d| d.envelope.payload_kind() == "document-push");

    let decision = format!("/sessions/{k}/decision");
    stage.admin("A_W", "A", Method::Post, &decision, json!({ "action": "accept" }))?;
    stage.settle()?;
    let a_k: Hash = stage
        .agent("A")
        .engine()
        .session(k)
        .ok()
        .and_then(|s| s.terminal_message())
        .map(|t| t.envelope_hash().clone())
        .ok_or_else(|| ScenarioError::Script("order not accepted".into()))?;

    // p: the manufacturing request.
    let request = json!({ "order": a_k.to_string(), "quantity": quantity });
    let p = stage
        .identity("A_W")
        .sign(MANUFACTURING_REQUEST, request.to_string().into_bytes())
        .map_err(|e| ScenarioError::Script(e.to_string()))?;
    stage.send_raw("A_W", "A_P", p)?;
    stage.settle()?;
    let report: Option<SignedEnvelope> = inbox
        .borrow()
        .iter()
        .find(|d| d.envelope.payload_kind() == STATUS_REPORT)
        .map(|d| d.envelope.clone());
    let reported_at = stage.now();

    // o_l: delivery and payment, referring to a_k.
    let delivery = Contract::new(
        delivery_template.clone(),
        [
            ("order".into(), Value::Reference(a_k.clone())),
            ("buyer".into(), Value::Party(b.clone())),
            ("amount".into(), Value::text(delivery_fee)),
        ],
    );
    let spec = OfferSpec::new(b.clone(), vec![OfferItem::Contract(delivery)]);
    stage.local_hop("A_W", "A", "offer instruction");
    let (l, out) = stage.with_agent("A", |ag, now| ag.make_offer(spec, now))?;
    stage.send("A", out)?;
    stage.settle()?;
    stage.label_sessions("A");

    let mut expected = hops(&[
        ("B", "A", "offer"),
        ("A", "A_W", "document-push"),
    ]);
    expected.push(Hop {
        from: "A_W".into(),
        to: "A".into(),
        kind: format!("POST {decision}"),
    });
    expected.extend(hops(&[
        ("A", "B", "acceptance"),
        ("A_W", "A_P", MANUFACTURING_REQUEST),
        ("A_P", "A_W", STATUS_REPORT),
        ("A_W", "A", "offer instruction"),
        ("A", "B", "offer"),
        ("B", "A", "acceptance"),
    ]));

    let state = |name: &str, id| stage.agent(name).engine().session(id).map(|s| s.state()).ok();
    let o_l_refs = stage
        .agent("B")
        .engine()
        .session(l)
        .ok()
        .and_then(|s| s.live_offer().acceptable_contracts())
        .map(|cs| {
            cs.iter()
                .flat_map(|c| c.arguments.iter().filter_map(|a| a.value.as_reference().cloned()))
                .collect::<Vec<_>>()
        });
    let b_books = books.lock().expect("books lock");
    let report_ok = report.as_ref().is_some_and(|r| {
        stage.registry.verify(r, reported_at).ok() == Some(stage.party("A_P"))
            && serde_json::from_slice::<serde_json::Value>(r.payload()).is_ok_and(|v| v["order"] == a_k.to_string())
    });
    let checks = vec![
        Check::new("A_W was notified of o_k", notified, ""),
        Check::eq("order o_k Accepted on both sides", (state("A", k), state("B", k)), (Some(SessionState::Accepted), Some(SessionState::Accepted))),
        Check::eq("handler scheduled manufacturing of the ordered quantity", b_books.scheduled.clone(), vec![quantity]),
        Check::eq("handler ordered packaging for the buyer", b_books.packaging.iter().map(|(_, q)| *q).collect::<Vec<_>>(), vec![quantity]),
        Check::eq("handler balanced the books once", b_books.ledger.len(), 1),
        Check::new("A_P's signed status report names a_k", report_ok, ""),
        Check::new(
            "status report arrived after the plant's lead time",
            reported_at.as_millis() - START.as_millis() >= LEAD_TIME.as_millis() as i64,
            "",
        ),
        Check::eq("o_l's reference argument is hash(a_k)", o_l_refs, Some(vec![a_k.clone()])),
        Check::eq("delivery o_l Accepted on both sides", (state("A", l), state("B", l)), (Some(SessionState::Accepted), Some(SessionState::Accepted))),
    ];
    Ok(Outcome { expected, checks })
}
