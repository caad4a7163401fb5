//! The admin API as a transport-independent request handler. HTTP servers
//! map `(method, path, bearer token, body)` onto [`handle`] and write the
//! returned status and JSON.

use serde::Deserialize;
use serde_json::{json, Map, Value as Json};

use super::{Agent, AgentError, Outgoing};
use crate::canonical::{self, Document};
use crate::contract::{refine_proposal, render_contract, RefineError, Refined, Template, Value};
use crate::negotiation::{NegotiationError, NegotiationSession, OfferItem, SessionId};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Json,
    pub outgoing: Vec<Outgoing>,
}

impl Response {
    fn ok(body: Json) -> Self {
        Self {
            status: 200,
            body,
            outgoing: Vec::new(),
        }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
            outgoing: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Reject,
    Counter,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub action: Action,
    #[serde(default)]
    pub assignments: Map<String, Json>,
}

/// Serves one admin request. `token` is the configured access token.
pub fn handle(
    agent: &mut Agent,
    token: &str,
    method: Method,
    path: &str,
    bearer: Option<&str>,
    body: &[u8],
    now: Timestamp,
) -> Response {
    if bearer != Some(token) {
        return Response::error(401, "Unauthorized", "missing or wrong bearer token");
    }
    let (path, query) = path.split_once('?').unwrap_or((path, ""));
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, segments.as_slice()) {
        (Method::Get, ["sessions"]) => Response::ok(Json::Array(list_sessions(agent))),
        (Method::Get, ["pending"]) => Response::ok(Json::Array(pending(agent))),
        (Method::Get, ["events"]) => {
            let since = query
                .split('&')
                .find_map(|kv| kv.strip_prefix("since="))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            Response::ok(serde_json::to_value(agent.events_since(since)).expect("events serialize"))
        }
        (Method::Get, ["sessions", id]) => with_session(agent, id, |agent, id| {
            Response::ok(session_view(agent.engine().session(id).expect("looked up")))
        }),
        (Method::Get, ["sessions", id, "render"]) => with_session(agent, id, render_offer),
        (Method::Post, ["sessions", id, "decision"]) => {
            let request: DecisionRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return Response::error(400, "BadRequest", e.to_string()),
            };
            with_session(agent, id, |agent, id| decide(agent, id, &request, now))
        }
        _ => Response::error(404, "NotFound", format!("no route for {path}")),
    }
}

fn with_session(agent: &mut Agent, id: &str, f: impl FnOnce(&mut Agent, SessionId) -> Response) -> Response {
    match id.parse::<SessionId>() {
        Ok(id) if agent.engine().session(id).is_ok() => f(agent, id),
        _ => Response::error(404, "UnknownSession", format!("no session {id}")),
    }
}

pub fn session_view(s: &NegotiationSession) -> Json {
    let offer = s.live_offer();
    json!({
        "id": s.id(),
        "state": s.state(),
        "initiator": s.initiator(),
        "responder": s.responder(),
        "toMove": s.to_move(),
        "deadline": s.deadline(),
        "closedAt": s.closed_at(),
        "liveOffer": {
            "hash": s.live_offer_hash(),
            "offerIndex": offer.offer_index,
            "sender": offer.sender,
            "validUntil": offer.valid_until,
            "contracts": offer.to_authored_json().ok().and_then(|j| j.get("contracts").cloned()),
        },
        "transcript": s.log(),
    })
}

pub fn list_sessions(agent: &Agent) -> Vec<Json> {
    agent.engine().sessions().map(session_view).collect()
}

/// Pending sessions, earliest deadline first.
pub fn pending(agent: &Agent) -> Vec<Json> {
    let mut entries: Vec<_> = agent.pending().values().collect();
    entries.sort_by_key(|e| (e.deadline, e.session));
    entries
        .into_iter()
        .map(|e| {
            let mut view = agent.engine().session(e.session).map(session_view).unwrap_or(Json::Null);
            if let Json::Object(m) = &mut view {
                m.insert("pendingSince".into(), json!(e.since));
            }
            view
        })
        .collect()
}

fn render_offer(agent: &mut Agent, id: SessionId) -> Response {
    let session = agent.engine().session(id).expect("looked up");
    let mut items = Vec::new();
    for item in &session.live_offer().contracts {
        let template_hash = item.template();
        let template = agent
            .documents()
            .get(template_hash)
            .and_then(|b| canonical::decode::<Template>(b).ok());
        let entry = match (item.to_contract(), template) {
            (_, None) => json!({ "template": template_hash, "error": "template not held" }),
            (None, Some(_)) => json!({ "template": template_hash, "error": "incomplete proposal" }),
            (Some(c), Some(t)) => match render_contract(&c, &t) {
                Ok(text) => json!({
                    "template": template_hash,
                    "contract": c.hash().ok(),
                    "title": t.title,
                    "text": text,
                }),
                Err(e) => json!({ "template": template_hash, "error": e.to_string() }),
            },
        };
        items.push(entry);
    }
    Response::ok(json!({ "session": id, "items": items }))
}

/// Applies `assignments` to the live offer's items: proposal constraints are
/// narrowed and contract arguments replaced.
fn counter_items(items: &[OfferItem], assignments: &Map<String, Json>) -> Result<Vec<OfferItem>, String> {
    let mut parsed = Vec::new();
    for (key, raw) in assignments {
        let value: Value = serde_json::from_value(raw.clone()).map_err(|e| format!("`{key}`: {e}"))?;
        parsed.push((key.clone(), value));
    }
    for (key, _) in &parsed {
        let known = items.iter().any(|item| match item {
            OfferItem::Contract(c) => c.argument(key).is_some(),
            OfferItem::Proposal(p) => p.constraint(key).is_some(),
        });
        if !known {
            return Err(format!("no item has key `{key}`"));
        }
    }
    items
        .iter()
        .map(|item| match item {
            OfferItem::Proposal(p) => {
                let mine: Vec<_> = parsed.iter().filter(|(k, _)| p.constraint(k).is_some()).cloned().collect();
                match refine_proposal(p, &mine) {
                    Ok(Refined::Contract(c)) => Ok(OfferItem::Contract(c)),
                    Ok(Refined::Proposal(p)) => Ok(OfferItem::Proposal(p)),
                    Err(RefineError::UnknownKey(k) | RefineError::ConstraintViolated(k)) => {
                        Err(format!("value for `{k}` violates its constraint"))
                    }
                }
            }
            OfferItem::Contract(c) => {
                let mut c = c.clone();
                for arg in &mut c.arguments {
                    if let Some((_, v)) = parsed.iter().find(|(k, _)| *k == arg.key) {
                        arg.value = v.clone();
                    }
                }
                Ok(OfferItem::Contract(c))
            }
        })
        .collect()
}

fn decide(agent: &mut Agent, id: SessionId, request: &DecisionRequest, now: Timestamp) -> Response {
    let Some(entry) = agent.pending().get(&id).cloned() else {
        return Response::error(409, "SessionNotPending", format!("session {id} awaits no decision"));
    };
    if now > entry.deadline {
        return match agent.tick(now) {
            Ok(_) => Response::error(410, "SessionExpired", format!("session {id} expired at {}", entry.deadline)),
            Err(e) => agent_error(e),
        };
    }
    let result = match request.action {
        Action::Accept => agent.accept(id, now),
        Action::Reject => agent.reject(id, now),
        Action::Counter => {
            let live = agent.engine().session(id).expect("pending sessions exist").live_offer().contracts.clone();
            match counter_items(&live, &request.assignments) {
                Ok(items) => agent.counter(id, items, None, now),
                Err(e) => return Response::error(422, "ConstraintViolated", e),
            }
        }
    };
    match result {
        Ok(outgoing) => {
            let session = agent.engine().session(id).expect("decided sessions exist");
            Response {
                status: 200,
                body: session_view(session),
                outgoing,
            }
        }
        Err(e) => agent_error(e),
    }
}

fn agent_error(e: AgentError) -> Response {
    match e {
        AgentError::InvalidContract(m) => Response::error(422, "ConstraintViolated", m),
        AgentError::Negotiation(n @ NegotiationError::SessionExpired { .. }) => {
            Response::error(410, "SessionExpired", n.to_string())
        }
        AgentError::Negotiation(n) => Response::error(409, n.code(), n.to_string()),
        other => Response::error(500, "Internal", other.to_string()),
    }
}
