//! Acceptance run: one PASS or FAIL line per headline criterion, and a
//! non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use conet_cli::scenario::{self, CATALOG};
use conet_core::agent::stc::{build_stc, walk_chain, ChainError};
use conet_core::negotiation::{model, write_transcript, Acceptance, Offer, OfferBinding, OfferItem, Rejection};
use conet_core::trace::{oracle, DocumentStore};
use conet_core::{Contract, Hash, Identity, SessionId, SignedEnvelope, Timestamp, TrustRegistry, Value};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[allow(dead_code, unused_imports)]
#[path = "../../core/tests/golden.rs"]
mod golden;

#[allow(dead_code, unused_imports)]
#[path = "../../core/tests/contract.rs"]
mod contract;

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn negotiation_safety() -> Outcome {
    let started = Instant::now();
    let report = model::run_fuzz(0xC0FFEE, 10_000);
    let elapsed = started.elapsed();
    check(
        report.passed() && report.sequences >= 10_000 && elapsed < Duration::from_secs(60),
        format!("{} sequences match the model in {:.1?}", report.sequences, elapsed),
        format!("{} sequences in {:.1?}, mismatches {:?}", report.sequences, elapsed, report.mismatches.first()),
    )
}

fn failed_checks(report: &scenario::ScenarioReport) -> Vec<String> {
    report.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect()
}

fn fig4_replay() -> Outcome {
    let report = scenario::run("fig4", 42).expect("fig4 is in the catalog");
    let failed = failed_checks(&report);
    check(failed.is_empty(), format!("{} checks hold", report.checks.len()), failed.join("; "))
}

const T0: Timestamp = Timestamp::from_millis(1_800_000_000_000);

/// A random legal session: one to five alternating offers, then possibly
/// an acceptance or rejection by the party to move.
fn transcript(x: &Identity, y: &Identity, rng: &mut ChaCha20Rng, session: u128) -> Vec<SignedEnvelope> {
    let template = Hash::of_bytes(b"acceptance template");
    let offers = rng.gen_range(1..=5u32);
    let mut envs: Vec<SignedEnvelope> = Vec::new();
    for index in 1..=offers {
        let (from, to) = if index % 2 == 1 { (x, y) } else { (y, x) };
        let item = Contract::new(template.clone(), [("price".to_string(), Value::Integer(rng.gen_range(1..1000)))]);
        let offer = Offer {
            session_id: SessionId(session),
            offer_index: index,
            sender: from.party_id().clone(),
            receiver: to.party_id().clone(),
            contracts: vec![OfferItem::Contract(item)],
            valid_until: Timestamp::from_millis(T0.as_millis() + 3_600_000),
            prev_offer_hash: envs.last().map(|e| e.envelope_hash().clone()),
        };
        envs.push(from.sign_document(&offer).unwrap());
    }
    let mover = if offers % 2 == 1 { y } else { x };
    let binding = OfferBinding {
        session_id: SessionId(session),
        offer_index: offers,
        offer_hash: envs.last().unwrap().envelope_hash().clone(),
        signer: mover.party_id().clone(),
    };
    match rng.gen_range(0..3) {
        0 => envs.push(mover.sign_document(&Acceptance(binding)).unwrap()),
        1 => envs.push(mover.sign_document(&Rejection(binding)).unwrap()),
        _ => {}
    }
    envs
}

fn verify_file(dir: &Path, file: &Path) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_conet"))
        .arg("--state-dir")
        .arg(dir)
        .arg("verify-transcript")
        .arg(file)
        .arg("--registry")
        .arg(dir.join("registry.json"))
        .arg("--at")
        .arg(T0.to_string())
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

fn non_repudiation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let x = Identity::generate("x", &mut rng);
    let y = Identity::generate("y", &mut rng);
    let mut registry = TrustRegistry::new();
    for id in [&x, &y] {
        registry
            .register(id, Timestamp::from_millis(0), Timestamp::from_millis(T0.as_millis() * 2))
            .map_err(|e| e.to_string())?;
    }
    registry.save(&dir.path().join("registry.json")).map_err(|e| e.to_string())?;

    let (mut valid, mut detected) = (0, 0);
    for i in 0..100u128 {
        let envs = transcript(&x, &y, &mut rng, i + 1);
        let bytes = write_transcript(&envs);
        let file = dir.path().join(format!("{i}.ndjson"));
        std::fs::write(&file, &bytes).map_err(|e| e.to_string())?;
        if verify_file(dir.path(), &file) == Some(0) {
            valid += 1;
        }

        let line = rng.gen_range(0..envs.len());
        let start: usize = envs[..line].iter().map(|e| e.to_wire_bytes().len() + 1).sum();
        let at = start + rng.gen_range(0..envs[line].to_wire_bytes().len());
        let mut tampered = bytes.clone();
        tampered[at] ^= rng.gen_range(1..=255u8);
        let file = dir.path().join(format!("{i}.tampered.ndjson"));
        std::fs::write(&file, &tampered).map_err(|e| e.to_string())?;
        if verify_file(dir.path(), &file) == Some(1) {
            detected += 1;
        }
    }
    check(
        valid == 100 && detected == 100,
        "100/100 transcripts verify, 100/100 tampered copies rejected".into(),
        format!("{valid}/100 verify, {detected}/100 tampered copies rejected"),
    )
}

fn golden_vectors() -> Outcome {
    let results = golden::run_all();
    let failed: Vec<String> = results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    check(
        failed.is_empty() && results.len() >= 10,
        format!("{} vectors reproduce bit-exactly", results.len()),
        failed.join("; "),
    )
}

fn reference_tracing() -> Outcome {
    let report = oracle::run_disclosure_fuzz(0x7ACE, 1_000);
    check(
        report.passed() && report.cases >= 1_000,
        format!(
            "{} policy tables, {} decisions, 0 over-disclosures, 0 duplicate fetches",
            report.cases, report.decisions
        ),
        format!(
            "over {} under {} duplicate fetches {} repeat requests {}",
            report.over_disclosures, report.under_disclosures, report.duplicate_fetches, report.repeat_requests_for_fetched
        ),
    )
}

fn scenarios() -> Outcome {
    let mut problems = Vec::new();
    let mut slowest = 0;
    for name in CATALOG {
        let first = scenario::run(name, 42).expect("catalog scenario");
        let second = scenario::run(name, 42).expect("catalog scenario");
        for r in [&first, &second] {
            problems.extend(failed_checks(r).into_iter().map(|f| format!("{name}: {f}")));
            if r.elapsed_ms >= 5_000 {
                problems.push(format!("{name}: took {} ms", r.elapsed_ms));
            }
            slowest = slowest.max(r.elapsed_ms);
        }
        if first.transcript_hash != second.transcript_hash {
            problems.push(format!("{name}: transcript hash differs between runs"));
        }
    }
    check(
        problems.is_empty(),
        format!("{} scenarios pass twice with identical transcripts, slowest {slowest} ms", CATALOG.len()),
        problems.join("; "),
    )
}

fn stc_chains() -> Outcome {
    let mut store = DocumentStore::new();
    let original = store
        .insert_document(&Contract::new(Hash::of_bytes(b"supply template"), [("qty".to_string(), Value::Integer(5))]))
        .map_err(|e| e.to_string())?;
    let mut links: Vec<Hash> = Vec::new();
    for step in 0..3 {
        let (evidence, _) = store.insert(format!("delivery note {step}").into_bytes());
        let link = build_stc(&original, links.last(), &evidence, T0);
        links.push(store.insert_document(&link).map_err(|e| e.to_string())?);
    }
    let head = &links[2];
    let chain = walk_chain(head, &store).map_err(|e| format!("intact chain: {e}"))?;
    let mut problems = Vec::new();
    if chain.links != [links[2].clone(), links[1].clone(), links[0].clone()] || chain.original != original {
        problems.push("intact chain walks to the wrong links".to_string());
    }
    for missing in links.iter().chain([&original]) {
        let mut copy = DocumentStore::new();
        for h in store.hashes().filter(|h| *h != missing) {
            copy.insert(store.get(h).unwrap().to_vec());
        }
        if missing != head && walk_chain(head, &copy).is_ok() {
            problems.push(format!("missing {missing} not detected"));
        }
    }
    let (evidence, _) = store.insert(b"forged".to_vec());
    let foreign = store
        .insert_document(&build_stc(&Hash::of_bytes(b"another original"), None, &evidence, T0))
        .map_err(|e| e.to_string())?;
    let grafted = store
        .insert_document(&build_stc(&original, Some(&foreign), &evidence, T0))
        .map_err(|e| e.to_string())?;
    if !matches!(walk_chain(&grafted, &store), Err(ChainError::OriginalMismatch { .. })) {
        problems.push("wrong original not detected".to_string());
    }
    check(
        problems.is_empty(),
        "3-link chain verifies; each missing document and a wrong original are detected".into(),
        problems.join("; "),
    )
}

fn proposal_completion() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&contract::refinement(), |(p, a)| contract::refinement_never_widens_case(&p, &a))
        .map_err(|e| format!("refinement widened: {e}"))?;
    let mut runner = TestRunner::new(Config { cases: 2_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&contract::proposal(), |p| contract::acceptable_iff_converts_case(&p))
        .map_err(|e| format!("acceptability: {e}"))?;
    Ok("10000 refinements never widen; 2000 proposal offers acceptable iff complete".into())
}

fn crash_recovery() -> Outcome {
    let (mut points, mut problems) = (0, Vec::new());
    for name in CATALOG {
        for agent in scenario::negotiators(name, 42) {
            let report = scenario::crash_recovery(name, 42, &agent).expect("catalog scenario");
            points += report.fault_points;
            problems.extend(report.failures.into_iter().map(|f| format!("{name}/{agent}: {f}")));
        }
    }
    check(
        problems.is_empty() && points > 0,
        format!("{points} fault points recover to the crashed state"),
        problems.join("; "),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("negotiation safety", negotiation_safety),
        ("fig. 4 replay", fig4_replay),
        ("non-repudiation", non_repudiation),
        ("golden vectors", golden_vectors),
        ("reference tracing", reference_tracing),
        ("scenarios", scenarios),
        ("stc chains", stc_chains),
        ("proposal completion", proposal_completion),
        ("crash recovery", crash_recovery),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
