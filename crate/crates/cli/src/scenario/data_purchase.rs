//! A sells a confidential dataset to B. A's agent redirects requests for it
//! to the file store A_S, which serves it only against a signed acceptance
//! naming the requester.

use std::sync::Arc;

use conet_core::agent::{OfferSpec, Policy};
use conet_core::negotiation::{Acceptance, OfferItem, SessionState};
use conet_core::net::Endpoint;
use conet_core::trace::{DisclosurePolicy, GateRule, Redirect, Resolution, TraceRequest};
use conet_core::{Contract, Document, Hash, Value};
use rand::Rng;

use super::templates::data_purchase;
use super::{hops, Check, Outcome, ScenarioError, Stage};

pub const AGENTS: &[&str] = &["A", "B", "A_S", "C"];

const STORE: &str = "A_S";

/// Synthetic sensor readings, one per line.
fn datum(stage: &Stage) -> Vec<u8> {
    let mut rng = stage.rng("datum");
    let mut out = String::from("t_ms,temperature_c,pressure_kpa\n");
    for i in 0..64 {
        let temp: f64 = rng.gen_range(1400.0..1600.0);
        let press: f64 = rng.gen_range(90.0..110.0);
        out.push_str(&format!("{},{temp:.2},{press:.3}\n", i * 250));
    }
    out.into_bytes()
}

fn resolution(stage: &Stage, agent: &str, trace: conet_core::agent::TraceId, hash: &Hash) -> Option<Resolution> {
    stage.agent(agent).trace_report(trace)?.resolutions.get(hash).cloned()
}

pub fn run(stage: &mut Stage) -> Result<Outcome, ScenarioError> {
    stage.cast(AGENTS);
    let template = data_purchase().hash().expect("template encodes");
    let datum = datum(stage);
    let datum_hash = Hash::of_bytes(&datum);
    stage.label(&datum_hash, "datum");
    let a = stage.party("A");
    let b = stage.party("B");
    let price = format!("{}.00 EUR", stage.rng("price").gen_range(500..5000));

    let mut pa = stage.parts("A", &["B", STORE]);
    pa.documents.insert_document(&data_purchase()).expect("template encodes");
    pa.documents.set_redirect(
        datum_hash.clone(),
        Redirect {
            locator: Endpoint::sim(STORE).to_string(),
            hint: "present the signed offer and acceptance to the file store".into(),
        },
    );
    stage.add_agent("A", pa)?;

    let mut ps = stage.parts(STORE, &[]);
    ps.documents.insert(datum.clone());
    ps.documents.set_policy(
        datum_hash.clone(),
        DisclosurePolicy::Gated(GateRule {
            grantor: a.clone(),
            template: template.clone(),
            hint: "served only against an accepted Data Purchase naming the requester".into(),
        }),
    );
    stage.add_agent(STORE, ps)?;

    let mut pb = stage.parts("B", &["A"]);
    pb.documents.insert_document(&data_purchase()).expect("template encodes");
    pb.policies = vec![(template.clone(), Policy::AutoAccept(Arc::new(|_, _| true)))];
    stage.add_agent("B", pb)?;
    stage.add_agent("C", stage.parts("C", &[]))?;

    let contract = Contract::new(
        template.clone(),
        [
            ("seller".into(), Value::Party(a.clone())),
            ("buyer".into(), Value::Party(b.clone())),
            ("datum".into(), Value::Reference(datum_hash.clone())),
            ("price".into(), Value::text(price)),
        ],
    );
    let spec = OfferSpec::new(b.clone(), vec![OfferItem::Contract(contract)]);
    let (session, out) = stage.with_agent("A", |ag, now| ag.make_offer(spec, now))?;
    stage.send("A", out)?;
    stage.settle()?;
    stage.label_sessions("A");

    let (trace, out) = stage.with_agent("B", |ag, now| ag.trace_session(session, now))?;
    stage.send("B", out)?;
    stage.settle()?;

    // The outsider asks the store directly, first empty-handed, then with
    // B's signed pair.
    let store = Endpoint::sim(STORE);
    let (bare, out) = stage.with_agent("C", |ag, now| ag.start_trace(vec![datum_hash.clone()], &store, Vec::new(), now))?;
    stage.send("C", out)?;
    stage.settle()?;
    let evidence = {
        let s = stage.agent("B").engine().session(session).map_err(|e| ScenarioError::Script(e.to_string()))?;
        let mut ev = vec![s.live_offer_envelope().clone()];
        ev.extend(s.terminal_message().cloned());
        ev
    };
    let (borrowed, out) = stage.with_agent("C", |ag, now| ag.start_trace(vec![datum_hash.clone()], &store, evidence, now))?;
    stage.send("C", out)?;
    stage.settle()?;

    let expected = hops(&[
        ("A", "B", "offer"),
        ("B", "A", "acceptance"),
        ("B", "A", "trace-request"),
        ("A", "B", "trace-answer"),
        ("B", STORE, "trace-request"),
        (STORE, "B", "trace-answer"),
        ("C", STORE, "trace-request"),
        (STORE, "C", "trace-answer"),
        ("C", STORE, "trace-request"),
        (STORE, "C", "trace-answer"),
    ]);
    let state = |name: &str| stage.agent(name).engine().session(session).map(|s| s.state()).ok();
    let from_store = Resolution::Fetched {
        from: store.to_string(),
    };
    let store_saw_acceptance = stage.agent(STORE).log().records().iter().any(|r| match r.entry.envelope() {
        Some(env) if env.payload_kind() == TraceRequest::KIND && env.signer() == &b => {
            env.open::<TraceRequest>().is_ok_and(|req| {
                req.evidence.iter().any(|e| e.open::<Acceptance>().is_ok_and(|acc| acc.signer == b))
            })
        }
        _ => false,
    });
    let checks = vec![
        Check::new("A_S received the acceptance signed by B before serving B", store_saw_acceptance, ""),
        Check::eq("A sees the purchase Accepted", state("A"), Some(SessionState::Accepted)),
        Check::eq("B sees the purchase Accepted", state("B"), Some(SessionState::Accepted)),
        Check::eq("B fetched the datum from A_S", resolution(stage, "B", trace, &datum_hash), Some(from_store)),
        Check::eq(
            "B holds the exact bytes sold",
            stage.agent("B").documents().get(&datum_hash).map(<[u8]>::to_vec),
            Some(datum.clone()),
        ),
        Check::new("A never held the datum itself", !stage.agent("A").documents().contains(&datum_hash), ""),
        Check::new(
            "outsider without evidence is denied",
            matches!(resolution(stage, "C", bare, &datum_hash), Some(Resolution::Denied { .. })),
            format!("{:?}", resolution(stage, "C", bare, &datum_hash)),
        ),
        Check::new(
            "outsider presenting B's acceptance is denied",
            matches!(resolution(stage, "C", borrowed, &datum_hash), Some(Resolution::Denied { .. })),
            format!("{:?}", resolution(stage, "C", borrowed, &datum_hash)),
        ),
        Check::new("outsider never holds the datum", !stage.agent("C").documents().contains(&datum_hash), ""),
    ];
    Ok(Outcome { expected, checks })
}
