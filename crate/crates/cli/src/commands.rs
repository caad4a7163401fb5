//! Commands that run to completion without touching the network.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use conet_core::agent::{Agent, AgentConfig, CONFIG_FILE};
use conet_core::canonical::{self, Document};
use conet_core::contract::{
    render_contract, validate_contract, validate_proposal, ContractDocument, Element, Finding, TypeRegistry,
    ValidationReport, NO_REFERENCE,
};
use conet_core::identity::{Identity, PublicKeyFile};
use conet_core::negotiation::{
    parse_transcript, verify_transcript, write_transcript, SessionId, TRANSCRIPT_EXTENSION,
};
use conet_core::net::Endpoint;
use conet_core::trace::DisclosurePolicy;
use conet_core::{Contract, Hash, PartyId, Template, Timestamp, TrustRegistry, Value};
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::scenario::{self, CATALOG};
use crate::CliError;

pub const DEFAULT_LISTEN: &str = "tcp://127.0.0.1:7700";
pub const DEFAULT_VALID_DAYS: u64 = 365;

/// What a command prints: `text` by default, `json` under `--json`.
/// `ok == false` means a check ran and failed.
#[derive(Debug, Clone)]
pub struct Report {
    pub ok: bool,
    pub text: String,
    pub json: Json,
}

impl Report {
    pub fn ok(text: impl Into<String>, json: Json) -> Self {
        Self {
            ok: true,
            text: text.into(),
            json,
        }
    }

    pub fn failed(text: impl Into<String>, json: Json) -> Self {
        Self {
            ok: false,
            text: text.into(),
            json,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(CliError::io(path))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

/// Writes `text` to `out`, or returns it for stdout.
fn emit(text: String, out: Option<&Path>) -> Result<String, CliError> {
    match out {
        Some(path) => {
            write(path, &text)?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(text),
    }
}

pub fn load_document(path: &Path) -> Result<ContractDocument, CliError> {
    Ok(ContractDocument::parse(&read(path)?)?)
}

pub fn load_template(path: &Path) -> Result<Template, CliError> {
    match load_document(path)? {
        ContractDocument::Template(t) => Ok(t),
        other => Err(CliError::Usage(format!("{}: expected a template, found a {}", path.display(), other.kind()))),
    }
}

/// Reads `agent.toml` without environment overrides, for editing.
fn read_config(state_dir: &Path) -> Result<Option<AgentConfig>, CliError> {
    let path = state_dir.join(CONFIG_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(Some(AgentConfig::parse(&text, &path)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::Io { path, source: e }),
    }
}

fn write_config(state_dir: &Path, config: &AgentConfig) -> Result<(), CliError> {
    write(&state_dir.join(CONFIG_FILE), config.to_toml())
}

fn registry_path(state_dir: &Path, config: Option<&AgentConfig>) -> PathBuf {
    state_dir.join(config.map_or_else(|| PathBuf::from("registry.json"), |c| c.registry.clone()))
}

fn load_registry_or_new(path: &Path, now: Timestamp) -> Result<TrustRegistry, CliError> {
    if path.exists() {
        Ok(TrustRegistry::load(path, now)?)
    } else {
        Ok(TrustRegistry::new())
    }
}

/// The agent in `state_dir`, configured from `agent.toml` with environment
/// overrides applied.
pub fn open_agent(state_dir: &Path, now: Timestamp) -> Result<(AgentConfig, Agent), CliError> {
    let config = AgentConfig::load(state_dir)?;
    let agent = Agent::open(state_dir, &config, Vec::new(), now)?;
    Ok((config, agent))
}

/// Persists the document store, which the message log does not cover.
pub fn save_documents(state_dir: &Path, config: &AgentConfig, agent: &Agent) -> Result<(), CliError> {
    agent
        .documents()
        .save(&state_dir.join(&config.documents))
        .map_err(|e| CliError::Usage(format!("saving documents: {e}")))
}

fn window(now: Timestamp, days: u64) -> (Timestamp, Timestamp) {
    (now, now.saturating_add(Duration::from_secs(days * 86_400)))
}

/// Creates an identity under `keys/`, trusts it in the registry and writes
/// a starter `agent.toml` if there is none.
pub fn keygen(
    state_dir: &Path,
    name: &str,
    listen: Option<Endpoint>,
    valid_days: u64,
    seed: Option<u64>,
    now: Timestamp,
) -> Result<Report, CliError> {
    if !conet_core::contract::is_identifier(name) {
        return Err(CliError::Usage(format!("key name `{name}` must be an identifier")));
    }
    let keys = AgentConfig::keys_dir(state_dir);
    if keys.join(format!("{name}.id.json")).exists() {
        return Err(CliError::Usage(format!("{} already holds a key named {name}", keys.display())));
    }
    let identity = match seed {
        Some(seed) => {
            let digest = Sha256::digest(format!("{seed}/keygen/{name}").as_bytes());
            Identity::generate(name, &mut ChaCha20Rng::from_seed(digest.into()))
        }
        None => Identity::generate(name, &mut OsRng),
    };
    let (public, secret) = identity.save(&keys, name)?;

    let mut config = read_config(state_dir)?;
    let created = config.is_none();
    let config = config.get_or_insert_with(|| {
        AgentConfig::new(name, listen.clone().unwrap_or_else(|| DEFAULT_LISTEN.parse().expect("valid endpoint")))
    });
    if created {
        write_config(state_dir, config)?;
    }
    let reg_path = registry_path(state_dir, Some(config));
    let mut registry = load_registry_or_new(&reg_path, now)?;
    let (from, until) = window(now, valid_days);
    registry.register(&identity, from, until)?;
    registry.save(&reg_path)?;

    let party = identity.party_id().to_string();
    let mut text = format!("{name}: {party}\n  public  {}\n  secret  {}\n", public.display(), secret.display());
    if created {
        text.push_str(&format!("  config  {}\n", state_dir.join(CONFIG_FILE).display()));
    }
    Ok(Report::ok(
        text,
        json!({
            "name": name,
            "party": party,
            "public": public,
            "secret": secret,
            "configCreated": created,
            "validUntil": until,
        }),
    ))
}

/// Trusts the key in `id_file` and records where its agent listens.
pub fn peer_add(
    state_dir: &Path,
    id_file: &Path,
    endpoint: Endpoint,
    valid_days: u64,
    now: Timestamp,
) -> Result<Report, CliError> {
    let public: PublicKeyFile = canonical::parse(&read(id_file)?)?;
    let mut config = read_config(state_dir)?
        .ok_or_else(|| CliError::Usage(format!("no {CONFIG_FILE} in {}; run keygen first", state_dir.display())))?;
    let reg_path = registry_path(state_dir, Some(&config));
    let mut registry = load_registry_or_new(&reg_path, now)?;
    let (from, until) = window(now, valid_days);
    let party = registry.insert(public.verifying_key()?, public.display_name.clone(), from, until)?;
    if party != public.party_id {
        return Err(CliError::Usage(format!(
            "{}: party id {} does not match its key",
            id_file.display(),
            public.party_id
        )));
    }
    registry.save(&reg_path)?;
    config.peers.insert(party.clone(), endpoint.clone());
    write_config(state_dir, &config)?;
    Ok(Report::ok(
        format!("{} ({party}) at {endpoint}\n", public.display_name),
        json!({ "name": public.display_name, "party": party, "endpoint": endpoint }),
    ))
}

/// Builds a template from provisions followed by `key:type` parameters.
pub fn template_new(title: &str, provisions: &[String], params: &[String], out: Option<&Path>) -> Result<Report, CliError> {
    let mut elements: Vec<Element> = provisions.iter().map(Element::provision).collect();
    for p in params {
        let (key, ty) = p
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("parameter `{p}` is not key:type")))?;
        elements.push(Element::parameter(key, ty));
    }
    let template = Template::new(title, elements);
    template.check().map_err(CliError::Usage)?;
    let doc = ContractDocument::Template(template);
    let hash = doc.hash()?;
    let text = emit(doc.to_pretty()?, out)?;
    Ok(Report::ok(text, json!({ "hash": hash, "path": out })))
}

/// Stores a template in the agent's document store so offers using it can
/// be made and validated.
pub fn template_add(state_dir: &Path, path: &Path, private: bool, now: Timestamp) -> Result<Report, CliError> {
    let template = load_template(path)?;
    let (config, mut agent) = open_agent(state_dir, now)?;
    let hash = agent.documents_mut().insert_document(&template)?;
    if !private {
        agent.documents_mut().set_policy(hash.clone(), DisclosurePolicy::Public);
    }
    save_documents(state_dir, &config, &agent)?;
    Ok(Report::ok(format!("{hash}\n"), json!({ "hash": hash, "public": !private })))
}

pub fn document_hash(path: &Path) -> Result<Report, CliError> {
    let doc = load_document(path)?;
    let hash = doc.hash()?;
    Ok(Report::ok(format!("{hash}\n"), json!({ "kind": doc.kind(), "hash": hash })))
}

/// Structural checks plus type names against the built-in type registry.
pub fn template_lint(path: &Path) -> Result<Report, CliError> {
    let template = match load_document(path) {
        Ok(ContractDocument::Template(t)) => t,
        Ok(other) => return Err(CliError::Usage(format!("expected a template, found a {}", other.kind()))),
        Err(CliError::Document(e)) => {
            return Ok(Report::failed(format!("{}: {e}\n", path.display()), json!({ "problems": [e.to_string()] })))
        }
        Err(e) => return Err(e),
    };
    let types = TypeRegistry::builtin();
    let mut problems = Vec::new();
    for p in template.parameters() {
        if types.resolve(&p.type_name).is_none() {
            problems.push(format!("parameter `{}` has unknown type `{}`", p.key, p.type_name));
        }
    }
    if template.parameters().next().is_none() {
        problems.push("template declares no parameters".to_string());
    }
    if template.provisions().next().is_none() {
        problems.push("template has no provisions".to_string());
    }
    let hash = template.hash()?;
    let text = if problems.is_empty() {
        format!("{}: ok ({hash})\n", path.display())
    } else {
        problems.iter().map(|p| format!("{}: {p}\n", path.display())).collect()
    };
    let json = json!({ "hash": hash, "problems": problems });
    Ok(if problems.is_empty() { Report::ok(text, json) } else { Report::failed(text, json) })
}

/// Parses `text` as a value of the template type `type_name`. Party
/// arguments may also name a display name from `registry`.
pub fn parse_argument(type_name: &str, text: &str, registry: Option<&TrustRegistry>) -> Result<Value, CliError> {
    let bad = |e: String| CliError::Usage(format!("`{text}` is not a {type_name}: {e}"));
    Ok(match type_name {
        "int" | "positiveInt" => Value::Integer(text.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
        "decimal" => Value::decimal(text).map_err(|e| bad(e.to_string()))?,
        "timestamp" => Value::Timestamp(text.parse().map_err(|e: conet_core::time::TimestampParseError| bad(e.to_string()))?),
        "party" => match text.parse::<PartyId>() {
            Ok(p) => Value::Party(p),
            Err(e) => {
                let named: Vec<&PartyId> = registry
                    .into_iter()
                    .flat_map(|r| r.parties())
                    .filter(|(_, entry)| entry.display_name == text)
                    .map(|(p, _)| p)
                    .collect();
                match named.as_slice() {
                    [one] => Value::Party((*one).clone()),
                    [] => return Err(bad(e.to_string())),
                    _ => return Err(bad("display name is ambiguous".into())),
                }
            }
        },
        "reference" => Value::Reference(text.parse().map_err(|e: conet_core::hash::HashParseError| bad(e.to_string()))?),
        "optionalReference" if text == NO_REFERENCE => Value::token(NO_REFERENCE),
        "optionalReference" => Value::Reference(text.parse().map_err(|e: conet_core::hash::HashParseError| bad(e.to_string()))?),
        _ => Value::text(text),
    })
}

/// Fills `template` from `key=value` pairs and checks the result.
pub fn contract_new(
    template_path: &Path,
    args: &[String],
    registry: Option<&TrustRegistry>,
    out: Option<&Path>,
) -> Result<Report, CliError> {
    let template = load_template(template_path)?;
    let mut arguments = Vec::new();
    for a in args {
        let (key, text) = a
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("argument `{a}` is not key=value")))?;
        let param = template
            .parameter(key)
            .ok_or_else(|| CliError::Usage(format!("template has no parameter `{key}`")))?;
        arguments.push((key.to_string(), parse_argument(&param.type_name, text, registry)?));
    }
    let contract = Contract::new(template.hash()?, arguments);
    let report = validate_contract(&contract, &template, &TypeRegistry::builtin())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if !report.is_valid() {
        let text = findings_text(&report);
        return Ok(Report::failed(text, json!({ "findings": report.findings })));
    }
    let doc = ContractDocument::Contract(contract);
    let hash = doc.hash()?;
    let text = emit(doc.to_pretty()?, out)?;
    Ok(Report::ok(text, json!({ "hash": hash, "path": out })))
}

fn findings_text(report: &ValidationReport) -> String {
    report
        .findings
        .iter()
        .map(|f| match f {
            Finding::MissingArgument(k) => format!("missing argument `{k}`\n"),
            Finding::ExtraArgument(k) => format!("extra argument `{k}`\n"),
            Finding::DuplicateArgument(k) => format!("duplicate argument `{k}`\n"),
            Finding::TypeMismatch(k) => format!("argument `{k}` does not satisfy its type\n"),
            Finding::UnknownType(t) => format!("unknown type `{t}`\n"),
        })
        .collect()
}

pub fn contract_validate(path: &Path, template_path: &Path) -> Result<Report, CliError> {
    let template = load_template(template_path)?;
    let types = TypeRegistry::builtin();
    let report = match load_document(path)? {
        ContractDocument::Contract(c) => validate_contract(&c, &template, &types),
        ContractDocument::Proposal(p) => validate_proposal(&p, &template, &types),
        ContractDocument::Template(_) => return Err(CliError::Usage("expected a contract or proposal".into())),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => return Ok(Report::failed(format!("{e}\n"), json!({ "error": e.to_string() }))),
    };
    let json = json!({ "valid": report.is_valid(), "findings": report.findings });
    Ok(if report.is_valid() {
        Report::ok(format!("{}: valid\n", path.display()), json)
    } else {
        Report::failed(findings_text(&report), json)
    })
}

pub fn contract_render(path: &Path, template_path: &Path) -> Result<Report, CliError> {
    let template = load_template(template_path)?;
    let contract = match load_document(path)? {
        ContractDocument::Contract(c) => c,
        ContractDocument::Proposal(p) => p
            .to_contract()
            .ok_or_else(|| CliError::Usage("proposal is not complete; only exact constraints render".into()))?,
        ContractDocument::Template(_) => return Err(CliError::Usage("expected a contract".into())),
    };
    if contract.template != template.hash()? {
        return Err(CliError::Usage(format!("contract uses template {}, not this one", contract.template)));
    }
    let prose = render_contract(&contract, &template).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Report::ok(format!("{prose}\n"), json!({ "text": prose })))
}

/// Writes the signed transcript of a session held by the local agent.
pub fn export_transcript(state_dir: &Path, session: SessionId, out: Option<&Path>, now: Timestamp) -> Result<Report, CliError> {
    let (_, agent) = open_agent(state_dir, now)?;
    let envelopes = agent
        .engine()
        .transcript(session)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let path = out.map_or_else(|| PathBuf::from(format!("{session}{TRANSCRIPT_EXTENSION}")), Path::to_path_buf);
    write(&path, write_transcript(envelopes))?;
    Ok(Report::ok(
        format!("wrote {} ({} envelopes)\n", path.display(), envelopes.len()),
        json!({ "path": path, "envelopes": envelopes.len() }),
    ))
}

/// Verifies a transcript file against a registry, with identity windows
/// evaluated at `at`.
pub fn verify_transcript_file(path: &Path, registry_path: &Path, at: Timestamp) -> Result<Report, CliError> {
    let registry = TrustRegistry::load(registry_path, at)?;
    let envelopes = parse_transcript(&read(path)?)?;
    let summary = verify_transcript(&envelopes, &registry, at)?;
    Ok(Report::ok(
        format!(
            "{}: valid, session {} {} after {} offers ({} envelopes)\n",
            path.display(),
            summary.session_id,
            summary.final_state,
            summary.offers,
            envelopes.len()
        ),
        serde_json::to_value(&summary).expect("summary serializes"),
    ))
}

pub fn scenario_list() -> Report {
    let text = CATALOG.iter().map(|n| format!("{n}\n")).collect::<String>();
    Report::ok(text, json!(CATALOG))
}

/// Runs one scenario, or all of them for `all`.
pub fn scenario_run(name: &str, seed: u64) -> Result<Report, CliError> {
    let names: Vec<&str> = if name == "all" { CATALOG.to_vec() } else { vec![name] };
    let mut text = String::new();
    let mut reports = Vec::new();
    for n in names {
        let report = scenario::run(n, seed).ok_or_else(|| unknown_scenario(n))?;
        text.push_str(&format!("# scenario {n} (seed {seed})\n"));
        text.push_str(&report.step_log());
        text.push_str(&report.tap());
        text.push_str(&format!("# transcript {} in {} ms\n", report.transcript_hash, report.elapsed_ms));
        reports.push(report);
    }
    let ok = reports.iter().all(|r| r.passed());
    let json = serde_json::to_value(&reports).expect("reports serialize");
    Ok(if ok { Report::ok(text, json) } else { Report::failed(text, json) })
}

/// Crash-injection run: `agent` is stopped at every log append in turn.
pub fn scenario_crash(name: &str, seed: u64, agent: &str) -> Result<Report, CliError> {
    if !scenario::negotiators(name, seed).iter().any(|a| a == agent) {
        if scenario::agents_of(name).is_empty() {
            return Err(unknown_scenario(name));
        }
        return Err(CliError::Usage(format!("{name} has no logging agent named {agent}")));
    }
    let report = scenario::crash_recovery(name, seed, agent).ok_or_else(|| unknown_scenario(name))?;
    let mut text = format!(
        "# crash recovery: {name}/{agent}, {} fault points, 2 variants each\n",
        report.fault_points
    );
    for f in &report.failures {
        text.push_str(&format!("not ok - {f}\n"));
    }
    if report.failures.is_empty() {
        text.push_str("ok - every fault point recovers to the crashed engine state\n");
    }
    let json = serde_json::to_value(&report).expect("report serializes");
    Ok(if report.failures.is_empty() { Report::ok(text, json) } else { Report::failed(text, json) })
}

fn unknown_scenario(name: &str) -> CliError {
    CliError::Usage(format!("no scenario `{name}`; known: {}", CATALOG.join(", ")))
}

/// Parses `PARTY` as a party id or a display name in the agent's registry.
pub fn resolve_party(text: &str, registry: &TrustRegistry) -> Result<PartyId, CliError> {
    match parse_argument("party", text, Some(registry))? {
        Value::Party(p) => Ok(p),
        _ => unreachable!("party arguments parse to parties"),
    }
}

/// The items of an offer, read from contract or proposal files.
pub fn offer_items(paths: &[PathBuf]) -> Result<Vec<conet_core::negotiation::OfferItem>, CliError> {
    use conet_core::negotiation::OfferItem;
    paths
        .iter()
        .map(|p| match load_document(p)? {
            ContractDocument::Contract(c) => Ok(OfferItem::Contract(c)),
            ContractDocument::Proposal(pr) => Ok(OfferItem::Proposal(pr)),
            ContractDocument::Template(_) => Err(CliError::Usage(format!("{}: a template is not offerable", p.display()))),
        })
        .collect()
}

pub fn parse_hashes(texts: &[String]) -> Result<Vec<Hash>, CliError> {
    texts
        .iter()
        .map(|t| t.parse().map_err(|e| CliError::Usage(format!("`{t}`: {e}"))))
        .collect()
}
