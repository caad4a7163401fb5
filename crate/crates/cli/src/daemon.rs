//! Networked commands: one-shot negotiation steps over TCP and the `serve`
//! daemon with its HTTP admin API.

use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::get;
use axum::{Json as AxumJson, Router};
use conet_core::agent::admin::{self, Method};
use conet_core::agent::{Agent, AgentConfig, Outgoing, OfferSpec, TraceId};
use conet_core::negotiation::SessionId;
use conet_core::net::tcp::run_agent;
use conet_core::net::{Endpoint, Inbound, Scheme, TcpTransport};
use conet_core::time::{Clock, SystemClock};
use conet_core::Hash;
use futures::stream::{self, Stream};
use serde_json::{json, Value as Json};
use tokio::sync::{mpsc, Mutex};

use crate::commands::{offer_items, open_agent, resolve_party, save_documents, Report};
use crate::CliError;

/// How often the daemon checks deadlines.
pub const TICK: Duration = Duration::from_secs(1);
/// How often a server-sent event stream polls for new events.
const EVENT_POLL: Duration = Duration::from_millis(200);

/// An agent bound to its listen address for the length of one command.
pub struct Session {
    pub state_dir: PathBuf,
    pub config: AgentConfig,
    pub agent: Agent,
    transport: TcpTransport,
    inbox: mpsc::Receiver<Inbound>,
    clock: SystemClock,
}

fn tcp_address(endpoint: &Endpoint) -> Result<&str, CliError> {
    if endpoint.scheme() != Scheme::Tcp {
        return Err(CliError::Usage(format!("listen endpoint {endpoint} is not tcp")));
    }
    Ok(endpoint.address())
}

impl Session {
    pub async fn open(state_dir: &Path) -> Result<Self, CliError> {
        let clock = SystemClock;
        let (config, agent) = open_agent(state_dir, clock.now())?;
        let addr = tcp_address(&config.listen)?;
        let (transport, inbox, _accept) = TcpTransport::bind(addr).await.map_err(|e| {
            CliError::Network(format!(
                "cannot listen on {addr}: {e}; if `conet serve` owns this state directory, use its admin API"
            ))
        })?;
        let mut session = Self {
            state_dir: state_dir.to_path_buf(),
            config,
            agent,
            transport,
            inbox,
            clock,
        };
        let resumed = session.agent.resume(session.clock.now())?;
        session.send(resumed).await?;
        Ok(session)
    }

    pub fn now(&self) -> conet_core::Timestamp {
        self.clock.now()
    }

    pub async fn send(&self, outgoing: Vec<Outgoing>) -> Result<(), CliError> {
        let errors = self.transport.send_all(outgoing).await;
        match errors.first() {
            None => Ok(()),
            Some(e) => Err(CliError::Network(e.to_string())),
        }
    }

    /// Dispatches inbound envelopes until `done` holds or `wait` elapses.
    pub async fn wait_until(&mut self, wait: Duration, what: &str, done: impl Fn(&Agent) -> bool) -> Result<(), CliError> {
        let deadline = tokio::time::Instant::now() + wait;
        while !done(&self.agent) {
            let inbound = tokio::time::timeout_at(deadline, self.inbox.recv())
                .await
                .map_err(|_| CliError::Timeout(what.to_string()))?
                .ok_or_else(|| CliError::Network("listener closed".into()))?;
            let now = self.now();
            if let Ok(d) = self.agent.dispatch(&inbound.envelope, None, now) {
                self.send(d.outgoing).await?;
            }
            self.agent.tick(now)?;
        }
        Ok(())
    }

    pub fn close(self) -> Result<Agent, CliError> {
        save_documents(&self.state_dir, &self.config, &self.agent)?;
        Ok(self.agent)
    }
}

fn session_summary(agent: &Agent, id: SessionId) -> Json {
    agent
        .engine()
        .session(id)
        .map(admin::session_view)
        .unwrap_or_else(|_| json!({ "sessionId": id }))
}

fn session_text(agent: &Agent, id: SessionId) -> String {
    match agent.engine().session(id) {
        Ok(s) => format!(
            "session {id}: {} after {} offers\n",
            s.state(),
            s.live_offer().offer_index
        ),
        Err(_) => format!("session {id}\n"),
    }
}

/// Opens a session with `to`; with `wait`, blocks until the counterparty
/// answers the offer.
pub async fn offer(
    state_dir: &Path,
    to: &str,
    contracts: &[PathBuf],
    validity: Option<Duration>,
    wait: Option<Duration>,
) -> Result<Report, CliError> {
    let mut s = Session::open(state_dir).await?;
    let receiver = resolve_party(to, s.agent.registry())?;
    let mut spec = OfferSpec::new(receiver, offer_items(contracts)?);
    spec.validity = validity;
    let now = s.now();
    let (id, out) = s.agent.make_offer(spec, now)?;
    s.send(out).await?;
    if let Some(wait) = wait {
        s.wait_until(wait, "no answer to the offer", |a| {
            a.engine().session(id).is_ok_and(|s| s.is_terminal() || s.live_offer().offer_index > 1)
        })
        .await?;
    }
    let agent = s.close()?;
    Ok(Report::ok(session_text(&agent, id), session_summary(&agent, id)))
}

/// Accepts or rejects the live offer of a session.
pub async fn decide(state_dir: &Path, id: SessionId, accept: bool) -> Result<Report, CliError> {
    let mut s = Session::open(state_dir).await?;
    let now = s.now();
    let out = if accept { s.agent.accept(id, now)? } else { s.agent.reject(id, now)? };
    s.send(out).await?;
    let agent = s.close()?;
    Ok(Report::ok(session_text(&agent, id), session_summary(&agent, id)))
}

/// Resolves `hashes` from `from`, a party or an endpoint.
pub async fn trace(state_dir: &Path, hashes: Vec<Hash>, from: &str, wait: Duration) -> Result<Report, CliError> {
    let mut s = Session::open(state_dir).await?;
    let source: Endpoint = match from.parse() {
        Ok(e) => e,
        Err(_) => {
            let party = resolve_party(from, s.agent.registry())?;
            s.agent
                .peer(&party)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("no endpoint known for {from}")))?
        }
    };
    let now = s.now();
    let (id, out) = s.agent.start_trace(hashes, &source, Vec::new(), now)?;
    s.send(out).await?;
    s.wait_until(wait, "trace did not finish", |a| a.trace_done(id)).await?;
    let agent = s.close()?;
    Ok(trace_report(&agent, id))
}

fn trace_report(agent: &Agent, id: TraceId) -> Report {
    let report = agent.trace_report(id).expect("finished trace has a report");
    let mut text = String::new();
    for (hash, resolution) in &report.resolutions {
        let line = serde_json::to_string(resolution).expect("resolution serializes");
        text.push_str(&format!("{hash}: {line}\n"));
    }
    let json = serde_json::to_value(report).expect("trace report serializes");
    if report.resolutions.values().all(|r| r.is_resolved()) {
        Report::ok(text, json)
    } else {
        Report::failed(text, json)
    }
}

#[derive(Clone)]
struct AdminState {
    agent: Arc<Mutex<Agent>>,
    transport: TcpTransport,
    token: String,
    state_dir: PathBuf,
    config: AgentConfig,
}

/// Runs the agent on its tcp listen address, and the admin API if
/// configured, until interrupted.
pub async fn serve(state_dir: &Path) -> Result<(), CliError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let (config, mut agent) = open_agent(state_dir, clock.now())?;
    let addr = tcp_address(&config.listen)?.to_string();
    let (transport, inbox, _accept) = TcpTransport::bind(&addr)
        .await
        .map_err(|e| CliError::Network(format!("cannot listen on {addr}: {e}")))?;
    let resumed = agent.resume(clock.now())?;
    transport.send_all(resumed).await;
    eprintln!("agent {} listening on {}", agent.party_id(), transport.endpoint());

    let agent = Arc::new(Mutex::new(agent));
    let runner = tokio::spawn(run_agent(agent.clone(), transport.clone(), inbox, clock, TICK));

    let admin_server = match &config.admin {
        Some(admin_config) => {
            let listener = tokio::net::TcpListener::bind(&admin_config.listen)
                .await
                .map_err(|e| CliError::Network(format!("cannot listen on {}: {e}", admin_config.listen)))?;
            eprintln!("admin API on http://{}", listener.local_addr().map_err(CliError::io("admin listener"))?);
            let state = AdminState {
                agent: agent.clone(),
                transport: transport.clone(),
                token: admin_config.token.clone(),
                state_dir: state_dir.to_path_buf(),
                config: config.clone(),
            };
            Some(tokio::spawn(async move { axum::serve(listener, admin_router(state)).await }))
        }
        None => None,
    };

    tokio::select! {
        _ = runner => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    if let Some(server) = admin_server {
        server.abort();
    }
    let agent = agent.lock().await;
    save_documents(state_dir, &config, &agent)
}

fn admin_router(state: AdminState) -> Router {
    Router::new()
        .route("/events/stream", get(event_stream))
        .fallback(admin_request)
        .with_state(state)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn admin_request(State(state): State<AdminState>, request: Request) -> HttpResponse {
    let method = match *request.method() {
        axum::http::Method::GET => Method::Get,
        axum::http::Method::POST => Method::Post,
        _ => return (StatusCode::METHOD_NOT_ALLOWED, AxumJson(json!({ "error": "MethodNotAllowed" }))).into_response(),
    };
    let path = request
        .uri()
        .path_and_query()
        .map_or_else(|| request.uri().path().to_string(), |pq| pq.as_str().to_string());
    let token = bearer(request.headers()).map(str::to_string);
    let body = match axum::body::to_bytes(request.into_body(), 1 << 20).await {
        Ok(b) => b,
        Err(e) => return (StatusCode::BAD_REQUEST, AxumJson(json!({ "error": "BadRequest", "message": e.to_string() }))).into_response(),
    };
    respond(state, method, &path, token.as_deref(), body).await
}

async fn respond(state: AdminState, method: Method, path: &str, token: Option<&str>, body: Bytes) -> HttpResponse {
    let response = {
        let mut agent = state.agent.lock().await;
        let response = admin::handle(&mut agent, &state.token, method, path, token, &body, SystemClock.now());
        if method == Method::Post {
            // Best effort: the log already holds everything needed to rebuild the store.
            let _ = save_documents(&state.state_dir, &state.config, &agent);
        }
        response
    };
    state.transport.send_all(response.outgoing).await;
    let status = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, AxumJson(response.body)).into_response()
}

/// Server-sent events from `since` (default 0). Browsers cannot set an
/// authorization header on an event source, so `token` may also be a
/// query parameter.
async fn event_stream(State(state): State<AdminState>, request: Request) -> HttpResponse {
    let query = request.uri().query().unwrap_or("");
    let param = |name: &str| {
        query
            .split('&')
            .find_map(|kv| kv.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
    };
    let token = bearer(request.headers()).map(str::to_string).or_else(|| param("token"));
    if token.as_deref() != Some(state.token.as_str()) {
        return (
            StatusCode::UNAUTHORIZED,
            AxumJson(json!({ "error": "Unauthorized", "message": "missing or wrong bearer token" })),
        )
            .into_response();
    }
    let since: u64 = param("since").and_then(|v| v.parse().ok()).unwrap_or(0);
    Sse::new(events_from(state.agent, since)).keep_alive(KeepAlive::default()).into_response()
}

fn events_from(agent: Arc<Mutex<Agent>>, since: u64) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    stream::unfold((agent, since, Vec::<SseEvent>::new()), |(agent, mut next, mut queued)| async move {
        loop {
            if !queued.is_empty() {
                let event = queued.remove(0);
                return Some((Ok(event), (agent, next, queued)));
            }
            {
                let agent = agent.lock().await;
                for e in agent.events_since(next) {
                    next = e.seq + 1;
                    let data = serde_json::to_string(e).expect("events serialize");
                    queued.push(SseEvent::default().id(e.seq.to_string()).data(data));
                }
            }
            if queued.is_empty() {
                tokio::time::sleep(EVENT_POLL).await;
            }
        }
    })
}
