//! HTTP/1.1 + JSON front end for a [`LabelQueue`].
//!
//! Routes:
//!
//! - `GET /api/query/next` returns `{"query": <envelope or null>, "pending": n}`.
//! - `POST /api/query/{id}/label` with body `{"choice": "first" | "second" | "equal" | "discard"}`
//!   returns `{"id", "status", "budget_remaining"}`. It answers 404 for unknown ids and
//!   409 (with the current status) when the query was already resolved.
//! - `GET /api/status` returns `{"env_step", "budget_total", "budget_used",
//!   "budget_remaining", "pending", "latest_success_rate"}`.
//!
//! Timestamps are milliseconds since the Unix epoch. Errors carry `{"error": message}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use rune_core::label_queue::{LabelChoice, LabelQueue, SubmitError};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

#[derive(Deserialize)]
struct LabelRequest {
    choice: LabelChoice,
}

/// Dispatches one request against the queue. Pure apart from the queue itself.
pub fn route(queue: &LabelQueue, method: &str, path: &str, body: &[u8]) -> Response {
    let path = path.split('?').next().unwrap_or(path);
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, segments.as_slice()) {
        ("GET", ["api", "query", "next"]) => {
            let query = queue.next_pending();
            Response::ok(json!({ "query": query, "pending": queue.pending() }))
        }
        ("POST", ["api", "query", id, "label"]) => {
            let request: LabelRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => {
                    return Response::error(
                        400,
                        format!("expected {{\"choice\": \"first\"|\"second\"|\"equal\"|\"discard\"}}: {e}"),
                    )
                }
            };
            match queue.submit(id, request.choice) {
                Ok(ack) => Response::ok(serde_json::to_value(ack).expect("ack serializes")),
                Err(e @ SubmitError::NotFound(_)) => Response::error(404, e.to_string()),
                Err(e @ SubmitError::Conflict { status, .. }) => Response {
                    status: 409,
                    body: json!({ "error": e.to_string(), "status": status }),
                },
            }
        }
        ("GET", ["api", "status"]) => Response::ok(serde_json::to_value(queue.status()).expect("status serializes")),
        (_, ["api", "query", "next"]) | (_, ["api", "status"]) | (_, ["api", "query", _, "label"]) => {
            Response::error(405, format!("method {method} not allowed on {path}"))
        }
        _ => Response::error(404, format!("no route for {path}")),
    }
}

/// A running server; dropping it stops the workers.
pub struct LabelServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl LabelServer {
    /// Binds `addr` (for example `127.0.0.1:0`) and starts `threads` workers.
    pub fn start(addr: &str, queue: Arc<LabelQueue>, threads: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("label server bound to a non-IP socket"))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = server.clone();
                let queue = queue.clone();
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        serve(&queue, request);
                    }
                })
            })
            .collect();
        log::info!("label server listening on http://{addr}");
        Ok(Self { server, addr, workers })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for LabelServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve(queue: &LabelQueue, mut request: tiny_http::Request) {
    let method = request.method().as_str().to_ascii_uppercase();
    let url = request.url().to_string();
    let response = if method == "OPTIONS" {
        Response {
            status: 204,
            body: Value::Null,
        }
    } else {
        let mut body = Vec::new();
        match request.as_reader().read_to_end(&mut body) {
            Ok(_) => route(queue, &method, &url, &body),
            Err(e) => Response::error(400, format!("unreadable body: {e}")),
        }
    };
    log::debug!("{method} {url} -> {}", response.status);
    let text = if response.body.is_null() {
        String::new()
    } else {
        response.body.to_string()
    };
    let mut reply = tiny_http::Response::from_string(text).with_status_code(response.status);
    for (name, value) in [
        ("Content-Type", "application/json"),
        ("Access-Control-Allow-Origin", "*"),
        ("Access-Control-Allow-Methods", "GET, POST, OPTIONS"),
        ("Access-Control-Allow-Headers", "Content-Type"),
    ] {
        reply.add_header(tiny_http::Header::from_bytes(name, value).expect("static header"));
    }
    if let Err(e) = request.respond(reply) {
        log::warn!("failed to answer {url}: {e}");
    }
}
