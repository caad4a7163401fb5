//! Agents x and y each open a session with z. z accepts o(5,1) and counters
//! o(7,1) with o(7,2), leaving y to move.

use std::sync::Arc;

use conet_core::agent::{OfferSpec, Policy};
use conet_core::negotiation::{OfferItem, SessionId, SessionState};
use conet_core::{Contract, Document, Hash, Value};

use super::templates::component_sale;
use super::{hops, Check, Outcome, ScenarioError, Stage};

pub const AGENTS: &[&str] = &["x", "y", "z"];

pub const SESSION_X: SessionId = SessionId(5);
pub const SESSION_Y: SessionId = SessionId(7);

/// z's counter to y asks this much more per unit.
const MARKUP: i64 = 25;

fn item(template: &Hash, price: i64, quantity: i64) -> OfferItem {
    OfferItem::Contract(Contract::new(
        template.clone(),
        [("price".into(), Value::Integer(price)), ("quantity".into(), Value::Integer(quantity))],
    ))
}

fn price_of(item: &OfferItem) -> Option<i64> {
    match item.to_contract()?.argument("price") {
        Some(Value::Integer(p)) => Some(*p),
        _ => None,
    }
}

pub fn run(stage: &mut Stage) -> Result<Outcome, ScenarioError> {
    stage.cast(AGENTS);
    let template = component_sale().hash().expect("template encodes");
    let (x, y) = (stage.party("x"), stage.party("y"));
    for name in AGENTS {
        let mut parts = stage.parts(name, AGENTS);
        parts.documents.insert_document(&component_sale()).expect("template encodes");
        parts.policies = match *name {
            "z" => {
                let from_x = x.clone();
                let from_y = y.clone();
                let t = template.clone();
                vec![
                    (template.clone(), Policy::AutoAccept(Arc::new(move |o, _| o.sender == from_x))),
                    (
                        template.clone(),
                        Policy::AutoCounter(Arc::new(move |o, _| {
                            if o.sender != from_y {
                                return None;
                            }
                            o.contracts
                                .iter()
                                .map(|c| {
                                    let quantity = match c.to_contract()?.argument("quantity") {
                                        Some(Value::Integer(q)) => *q,
                                        _ => return None,
                                    };
                                    Some(item(&t, price_of(c)? + MARKUP, quantity))
                                })
                                .collect()
                        })),
                    ),
                ]
            }
            "y" => vec![(template.clone(), Policy::DeferToHuman)],
            _ => Vec::new(),
        };
        stage.add_agent(name, parts)?;
    }
    let z = stage.party("z");

    let offers = [("x", SESSION_X, 120, 4), ("y", SESSION_Y, 90, 10)];
    for (from, session, price, quantity) in offers {
        let mut spec = OfferSpec::new(z.clone(), vec![item(&template, price, quantity)]);
        spec.session_id = Some(session);
        let (_, out) = stage.with_agent(from, |a, now| a.make_offer(spec, now))?;
        stage.send(from, out)?;
    }
    stage.settle()?;

    for name in AGENTS {
        stage.label_sessions(name);
    }

    let expected = hops(&[
        ("x", "z", "offer"),
        ("y", "z", "offer"),
        ("z", "x", "acceptance"),
        ("z", "y", "offer"),
    ]);
    let mut checks = Vec::new();
    for name in ["x", "z"] {
        let s = stage.agent(name).engine().session(SESSION_X).map_err(|e| ScenarioError::Script(e.to_string()))?;
        checks.push(Check::eq(format!("{name} sees session 5 Accepted"), s.state(), SessionState::Accepted));
        let binding = s
            .terminal_message()
            .and_then(|t| t.open::<conet_core::negotiation::Acceptance>().ok())
            .map(|a| (a.offer_index, a.signer.clone()));
        checks.push(Check::eq(format!("{name}: session 5 closed by a(5,1) from z"), binding, Some((1, z.clone()))));
    }
    for name in ["y", "z"] {
        let s = stage.agent(name).engine().session(SESSION_Y).map_err(|e| ScenarioError::Script(e.to_string()))?;
        checks.push(Check::eq(
            format!("{name} sees session 7 offered by the responder"),
            s.state(),
            SessionState::OfferedByResponder,
        ));
        let live = s.live_offer();
        checks.push(Check::eq(
            format!("{name}: live offer of session 7 is o(7,2) from z"),
            (live.offer_index, live.sender.clone()),
            (2, z.clone()),
        ));
        checks.push(Check::eq(format!("{name}: y to move in session 7"), s.to_move().cloned(), Some(y.clone())));
        checks.push(Check::eq(
            format!("{name}: o(7,2) prices the components {MARKUP} higher"),
            live.contracts.first().and_then(price_of),
            Some(90 + MARKUP),
        ));
    }
    checks.push(Check::new(
        "session 7 waits for y's human",
        stage.agent("y").pending().contains_key(&SESSION_Y),
        "",
    ));
    Ok(Outcome { expected, checks })
}
