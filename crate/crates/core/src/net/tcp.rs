//! TCP transport: one listener for inbound frames and a pool of reused
//! outbound connections. Envelopes are signed end to end; the stream itself
//! is neither encrypted nor authenticated.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;

use super::frame::{read_frame, write_frame, FrameError};
use super::{Endpoint, Scheme};
use crate::agent::{Agent, Outgoing};
use crate::identity::SignedEnvelope;
use crate::time::Clock;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{0} is not a tcp endpoint")]
    NotTcp(Endpoint),
    #[error("{endpoint} unreachable: {source}")]
    Unreachable { endpoint: Endpoint, source: std::io::Error },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug)]
pub struct Inbound {
    pub envelope: SignedEnvelope,
    pub peer: SocketAddr,
}

#[derive(Clone)]
pub struct TcpTransport {
    local: SocketAddr,
    connections: Arc<Mutex<HashMap<Endpoint, OwnedWriteHalf>>>,
}

impl TcpTransport {
    /// Binds `addr` and starts accepting. Frames from every connection
    /// arrive on the returned channel in per-connection order.
    pub async fn bind(addr: &str) -> std::io::Result<(Self, mpsc::Receiver<Inbound>, JoinHandle<()>)> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let (tx, rx) = mpsc::channel(1024);
        let accept = tokio::spawn(async move {
            while let Ok((stream, peer)) = listener.accept().await {
                let tx = tx.clone();
                tokio::spawn(async move {
                    let (mut read, _write) = stream.into_split();
                    // A bad frame ends the connection; the sender reconnects.
                    while let Ok(Some(envelope)) = read_frame(&mut read).await {
                        if tx.send(Inbound { envelope, peer }).await.is_err() {
                            return;
                        }
                    }
                });
            }
        });
        Ok((
            Self {
                local,
                connections: Arc::new(Mutex::new(HashMap::new())),
            },
            rx,
            accept,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::tcp(self.local.to_string())
    }

    /// Writes one frame to `to`, reusing an open connection and
    /// reconnecting once if it has gone away.
    pub async fn send(&self, to: &Endpoint, envelope: &SignedEnvelope) -> Result<(), TransportError> {
        if to.scheme() != Scheme::Tcp {
            return Err(TransportError::NotTcp(to.clone()));
        }
        let mut pool = self.connections.lock().await;
        if let Some(w) = pool.get_mut(to) {
            if write_frame(w, envelope).await.is_ok() {
                return Ok(());
            }
            pool.remove(to);
        }
        let stream = TcpStream::connect(to.address())
            .await
            .map_err(|source| TransportError::Unreachable {
                endpoint: to.clone(),
                source,
            })?;
        stream.set_nodelay(true).ok();
        let (_read, mut write) = stream.into_split();
        write_frame(&mut write, envelope).await?;
        pool.insert(to.clone(), write);
        Ok(())
    }

    pub async fn send_all(&self, outgoing: Vec<Outgoing>) -> Vec<TransportError> {
        let mut errors = Vec::new();
        for o in outgoing {
            if let Err(e) = self.send(&o.to, &o.envelope).await {
                errors.push(e);
            }
        }
        errors
    }
}

/// The ingest loop of a tcp agent: every inbound frame and every expiry
/// tick goes through the one agent lock, so persistence is serialized.
/// Returns when the inbound channel closes or the agent stops.
pub async fn run_agent(
    agent: Arc<Mutex<Agent>>,
    transport: TcpTransport,
    mut inbox: mpsc::Receiver<Inbound>,
    clock: Arc<dyn Clock>,
    tick: Duration,
) {
    let mut ticker = tokio::time::interval(tick);
    loop {
        let outgoing = tokio::select! {
            inbound = inbox.recv() => {
                let Some(inbound) = inbound else { return };
                let mut a = agent.lock().await;
                match a.dispatch(&inbound.envelope, None, clock.now()) {
                    Ok(d) => d.outgoing,
                    Err(_) if a.is_crashed() => return,
                    Err(_) => Vec::new(),
                }
            }
            _ = ticker.tick() => {
                let mut a = agent.lock().await;
                if a.tick(clock.now()).is_err() {
                    return;
                }
                Vec::new()
            }
        };
        transport.send_all(outgoing).await;
    }
}
