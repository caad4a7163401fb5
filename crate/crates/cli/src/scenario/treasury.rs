//! A closes a run of customer sales with B and hands each to its treasury
//! agent A_T, which pledges them to bank M for a loan. M traces the pledged
//! acceptances and their offers, checks every signature, totals the
//! receivables and counters with an interest rate.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use conet_core::agent::{OfferSpec, Policy};
use conet_core::canonical;
use conet_core::contract::Decimal;
use conet_core::negotiation::{Acceptance, OfferItem, SessionState};
use conet_core::net::Endpoint;
use conet_core::trace::DisclosurePolicy;
use conet_core::{Contract, Document, Hash, Offer, SignedEnvelope, Value};
use rand::Rng;

use super::stage::fixture_rng;
use super::templates::{customer_sale, loan, receivable_key};
use super::{hops, Check, Outcome, ScenarioError, Stage, START};

pub const AGENTS: &[&str] = &["A", "B", "A_T", "M"];

/// Amounts due under the generated customer sales, in cents.
pub fn receivable_cents(seed: u64) -> Vec<i64> {
    let mut rng = fixture_rng(seed, "receivables");
    let n = rng.gen_range(3..=6);
    (0..n).map(|_| rng.gen_range(50_000..5_000_000)).collect()
}

/// Total the generated fixture promises the treasury, summed from the
/// generator's own integers.
pub fn expected_inflow_cents(seed: u64) -> i64 {
    receivable_cents(seed).iter().sum()
}

fn amount_text(cents: i64) -> String {
    format!("{}.{:02} EUR", cents / 100, cents % 100)
}

/// Cents in a `<units>.<cents> EUR` amount, as M reads it off a contract.
fn parse_eur_cents(text: &str) -> Option<i64> {
    let number = text.strip_suffix(" EUR")?;
    number.parse::<Decimal>().ok()?.to_scaled(2).and_then(|c| i64::try_from(c).ok())
}

/// Sum M computes from the signed documents it traced; `None` if any piece
/// is missing, unsigned or unreadable.
fn traced_inflow(stage: &Stage, acceptances: &[Hash], seller: &conet_core::PartyId) -> Result<i64, String> {
    let docs = stage.agent("M").documents();
    let registry = stage.agent("M").registry();
    let now = stage.now();
    let mut total = 0;
    for h in acceptances {
        let open = |h: &Hash| -> Result<SignedEnvelope, String> {
            let bytes = docs.get(h).ok_or(format!("{h} not traced"))?;
            let env = canonical::decode::<SignedEnvelope>(bytes).map_err(|e| format!("{h}: {e}"))?;
            registry.verify(&env, now).map_err(|e| format!("{h}: {e}"))?;
            Ok(env)
        };
        let acc_env = open(h)?;
        let acc: Acceptance = acc_env.open().map_err(|e| e.to_string())?;
        let offer_env = open(&acc.offer_hash)?;
        let offer: Offer = offer_env.open().map_err(|e| e.to_string())?;
        if &offer.sender != seller || offer.receiver != acc.signer || offer.session_id != acc.session_id {
            return Err(format!("{h} does not bind an offer from the borrower's company"));
        }
        for c in offer.acceptable_contracts().ok_or("proposal pledged")? {
            let amount = match c.argument("amount") {
                Some(Value::Text(t)) => parse_eur_cents(t).ok_or(format!("bad amount {t}"))?,
                _ => return Err("no amount".into()),
            };
            total += amount;
        }
    }
    Ok(total)
}

pub fn run(stage: &mut Stage) -> Result<Outcome, ScenarioError> {
    stage.cast(AGENTS);
    let cents = receivable_cents(stage.seed());
    let sale = customer_sale().hash().expect("template encodes");
    let loan_template = loan(cents.len());
    let loan_hash = loan_template.hash().expect("template encodes");
    let (a, b, m, a_t) = (stage.party("A"), stage.party("B"), stage.party("M"), stage.party("A_T"));

    let closed: Arc<Mutex<Vec<(Hash, Hash)>>> = Arc::default();
    let mut pa = stage.parts("A", &["B", "A_T"]);
    pa.documents.insert_document(&customer_sale()).expect("template encodes");
    let queue = closed.clone();
    pa.policies = vec![(
        sale.clone(),
        Policy::Handler(Arc::new(move |c| {
            queue.lock().expect("queue lock").push((c.offer_hash.clone(), c.acceptance_hash.clone()));
        })),
    )];
    stage.add_agent("A", pa)?;

    let mut pb = stage.parts("B", &["A"]);
    pb.documents.insert_document(&customer_sale()).expect("template encodes");
    pb.policies = vec![(sale.clone(), Policy::AutoAccept(Arc::new(|_, _| true)))];
    stage.add_agent("B", pb)?;

    let mut pt = stage.parts("A_T", &["M"]);
    pt.documents.insert_document(&loan_template).expect("template encodes");
    stage.add_agent("A_T", pt)?;

    let mut pm = stage.parts("M", &["A_T"]);
    pm.documents.insert_document(&loan_template).expect("template encodes");
    pm.documents.insert_document(&customer_sale()).expect("template encodes");
    pm.policies = vec![(loan_hash.clone(), Policy::DeferToHuman)];
    pm.session.auto_trace = true;
    stage.add_agent("M", pm)?;

    let mut expected = Vec::new();
    let mut pledged = Vec::new();
    for (k, amount) in cents.iter().enumerate() {
        let contract = Contract::new(
            sale.clone(),
            [
                ("buyer".into(), Value::Party(b.clone())),
                ("amount".into(), Value::text(amount_text(*amount))),
                ("dueBy".into(), Value::Timestamp(START.saturating_add(Duration::from_secs(86_400 * (30 + 7 * k as u64))))),
            ],
        );
        let spec = OfferSpec::new(b.clone(), vec![OfferItem::Contract(contract)]);
        let (_, out) = stage.with_agent("A", |ag, now| ag.make_offer(spec, now))?;
        stage.send("A", out)?;
        stage.settle()?;
        let queued: Vec<(Hash, Hash)> = std::mem::take(&mut *closed.lock().expect("queue lock"));
        for (offer_hash, acceptance_hash) in queued {
            let docs = stage.agent("A").documents();
            let bytes = [&offer_hash, &acceptance_hash]
                .iter()
                .map(|h| docs.get(h).map(<[u8]>::to_vec).ok_or(ScenarioError::Script(format!("A lost {h}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let out = stage.with_agent("A", |ag, now| ag.push_documents(&Endpoint::sim("A_T"), bytes, now))?;
            stage.send("A", out)?;
            stage.settle()?;
            stage.label(&acceptance_hash, format!("a'({})", k + 1));
            pledged.push((offer_hash, acceptance_hash));
        }
        expected.extend(hops(&[("A", "B", "offer"), ("B", "A", "acceptance"), ("A", "A_T", "document-push")]));
    }
    stage.label_sessions("A");

    // Some time later the treasury needs cash: it shows the pledged deals
    // to M alone and asks for an interest-free loan.
    stage.advance(Duration::from_secs(3 * 86_400))?;
    for (offer_hash, acceptance_hash) in &pledged {
        for h in [offer_hash, acceptance_hash] {
            let policy = DisclosurePolicy::PartiesOnly {
                parties: vec![m.clone()],
                template: None,
            };
            stage.with_agent("A_T", |ag, _| {
                ag.documents_mut().set_policy(h.clone(), policy);
                Ok(())
            })?;
        }
    }
    let total: i64 = cents.iter().sum();
    let principal = total * 4 / 5;
    let mut arguments = vec![
        ("lender".to_string(), Value::Party(m.clone())),
        ("borrower".to_string(), Value::Party(a_t.clone())),
        ("principal".to_string(), Value::text(amount_text(principal))),
        ("interestPercent".to_string(), Value::decimal("0").expect("decimal")),
    ];
    for (i, (_, acceptance)) in pledged.iter().enumerate() {
        arguments.push((receivable_key(i + 1), Value::Reference(acceptance.clone())));
    }
    let spec = OfferSpec::new(m.clone(), vec![OfferItem::Contract(Contract::new(loan_hash.clone(), arguments))]);
    let (loan_session, out) = stage.with_agent("A_T", |ag, now| ag.make_offer(spec, now))?;
    stage.send("A_T", out)?;
    stage.settle()?;

    // M follows each acceptance to the offer it binds.
    let offers: Vec<Hash> = {
        let docs = stage.agent("M").documents();
        pledged
            .iter()
            .filter_map(|(_, acc)| docs.get(acc))
            .filter_map(|bytes| canonical::decode::<SignedEnvelope>(bytes).ok())
            .filter_map(|env| env.open::<Acceptance>().ok())
            .map(|acc| acc.offer_hash.clone())
            .collect()
    };
    let (second, out) = stage.with_agent("M", |ag, now| ag.start_trace(offers.clone(), &Endpoint::sim("A_T"), Vec::new(), now))?;
    stage.send("M", out)?;
    stage.settle()?;

    let acceptances: Vec<Hash> = pledged.iter().map(|(_, acc)| acc.clone()).collect();
    let inflow = traced_inflow(stage, &acceptances, &a);
    let interest = match &inflow {
        Ok(sum) if *sum >= principal => "3.5",
        _ => "12",
    };
    let counter_items = {
        let s = stage.agent("M").engine().session(loan_session).map_err(|e| ScenarioError::Script(e.to_string()))?;
        s.live_offer()
            .acceptable_contracts()
            .unwrap_or_default()
            .into_iter()
            .map(|mut c| {
                for arg in &mut c.arguments {
                    if arg.key == "interestPercent" {
                        arg.value = Value::decimal(interest).expect("decimal");
                    }
                }
                OfferItem::Contract(c)
            })
            .collect::<Vec<_>>()
    };
    let out = stage.with_agent("M", |ag, now| ag.counter(loan_session, counter_items, None, now))?;
    stage.send("M", out)?;
    stage.settle()?;
    stage.label_sessions("M");

    expected.extend(hops(&[
        ("A_T", "M", "offer"),
        ("M", "A_T", "trace-request"),
        ("A_T", "M", "trace-answer"),
        ("M", "A_T", "trace-request"),
        ("A_T", "M", "trace-answer"),
        ("M", "A_T", "offer"),
    ]));

    let first_trace = stage
        .agent("M")
        .events()
        .iter()
        .find_map(|e| match e.kind {
            conet_core::agent::EventKind::TraceFinished { fetched, denied, .. } => Some((fetched, denied)),
            _ => None,
        });
    let second_report = stage.agent("M").trace_report(second).map(|r| (r.fetched(), r.denied()));
    let live = stage.agent("A_T").engine().session(loan_session).map_err(|e| ScenarioError::Script(e.to_string()))?;
    let live_rate = live.live_offer().contracts.first().and_then(|c| c.to_contract()).and_then(|c| c.argument("interestPercent").cloned());
    let n = cents.len();
    let checks = vec![
        Check::eq("every customer sale closed", stage.agent("B").accepted_contracts().len(), n),
        Check::eq("A_T holds both envelopes of every sale", pledged.iter().all(|(o, a)| stage.agent("A_T").documents().contains(o) && stage.agent("A_T").documents().contains(a)), true),
        Check::eq("M resolved every pledged acceptance, none denied", first_trace, Some((n, 0))),
        Check::eq("M resolved every bound offer, none denied", second_report, Some((n, 0))),
        Check::eq("inflow M computes from the signed documents equals the fixture total", inflow, Ok(expected_inflow_cents(stage.seed()))),
        Check::eq("A_T's loan session is countered by M", live.state(), SessionState::OfferedByResponder),
        Check::new(
            "M's counter carries a non-zero interest rate",
            matches!(&live_rate, Some(Value::Decimal(d)) if d.to_scaled(2).is_some_and(|x| x > 0)),
            format!("{live_rate:?}"),
        ),
        Check::new(
            "outsider B cannot read the pledged acceptances from A_T",
            matches!(stage.agent("A_T").documents().policy(&acceptances[0]), Some(DisclosurePolicy::PartiesOnly { parties, .. }) if !parties.contains(&b)),
            "",
        ),
    ];
    Ok(Outcome { expected, checks })
}
