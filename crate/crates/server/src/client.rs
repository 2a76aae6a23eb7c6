//! Blocking HTTP client for the trace server, and an asynchronous sink that
//! controllers use to ship mergelogs and spans without waiting on the wire.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use cascade_trace::{Cpid, GraphSnapshot, Mergelog, QueryError, Span, TraceQuery, TraceSink};
use crossbeam_channel::{unbounded, Sender};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::wire::*;

const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct HttpTraceClient {
    agent: ureq::Agent,
    base: String,
}

impl HttpTraceClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(TIMEOUT))
            .build()
            .new_agent();
        HttpTraceClient {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn post_mergelog(&self, log: &Mergelog) -> Result<(), QueryError> {
        self.post(MERGELOGS_PATH, log).map(drop)
    }

    pub fn post_span(&self, span: &Span) -> Result<(), QueryError> {
        self.post(SPANS_PATH, span).map(drop)
    }

    pub fn prune(&self, max_nodes: u64) -> Result<Vec<Cpid>, QueryError> {
        let body = self.post(PRUNE_PATH, &PruneRequest { max_nodes })?;
        let resp: PruneResponse = decode(&body)?;
        Ok(resp.removed)
    }

    pub fn config(&self) -> Result<ConfigBody, QueryError> {
        self.get(CONFIG_PATH, None)
    }

    /// True when the server answers at all.
    pub fn ping(&self) -> bool {
        self.config().is_ok()
    }

    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<String, QueryError> {
        let json = serde_json::to_vec(body).map_err(|e| QueryError::Rejected(e.to_string()))?;
        let mut resp = self
            .agent
            .post(format!("{}{}", self.base, path))
            .header("content-type", "application/json")
            .send(&json[..])
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        check(status, &text, None)?;
        Ok(text)
    }

    fn get<T: DeserializeOwned>(&self, path: &str, cpid: Option<&Cpid>) -> Result<T, QueryError> {
        let mut req = self.agent.get(format!("{}{}", self.base, path));
        if let Some(c) = cpid {
            req = req.query("cpid", c.to_string());
        }
        let mut resp = req.call().map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        check(status, &text, cpid)?;
        decode(&text)
    }
}

fn transport(e: ureq::Error) -> QueryError {
    QueryError::Transport(e.to_string())
}

fn decode<T: DeserializeOwned>(text: &str) -> Result<T, QueryError> {
    serde_json::from_str(text)
        .map_err(|e| QueryError::Transport(format!("unexpected response body: {e}")))
}

fn check(status: u16, body: &str, cpid: Option<&Cpid>) -> Result<(), QueryError> {
    if (200..300).contains(&status) {
        return Ok(());
    }
    let message = serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| format!("HTTP {status}"));
    match (status, cpid) {
        (404, Some(c)) => Err(QueryError::NotFound(*c)),
        (400..=499, _) => Err(QueryError::Rejected(message)),
        _ => Err(QueryError::Transport(message)),
    }
}

impl TraceQuery for HttpTraceClient {
    fn related(&self, cpid: &Cpid) -> Result<Vec<Cpid>, QueryError> {
        let body: RelatedBody = self.get(RELATED_PATH, Some(cpid))?;
        Ok(body.cpids)
    }

    fn mergelogs(&self, filter: Option<&Cpid>) -> Result<Vec<Mergelog>, QueryError> {
        self.get(MERGELOGS_PATH, filter)
    }

    fn spans(&self, filter: Option<&Cpid>) -> Result<Vec<Span>, QueryError> {
        self.get(SPANS_PATH, filter)
    }

    fn graph(&self) -> Result<GraphSnapshot, QueryError> {
        let body: GraphBody = self.get(GRAPH_PATH, None)?;
        Ok(body.into())
    }
}

enum Message {
    Mergelog(Mergelog),
    Span(Span),
    Flush(Sender<()>),
}

/// Ships records on a background thread in submission order. Failed sends
/// are counted and dropped.
pub struct HttpSink {
    tx: Option<Sender<Message>>,
    worker: Option<thread::JoinHandle<()>>,
    failures: Arc<AtomicU64>,
}

impl HttpSink {
    pub fn new(base_url: &str) -> Self {
        let client = HttpTraceClient::new(base_url);
        let (tx, rx) = unbounded::<Message>();
        let failures = Arc::new(AtomicU64::new(0));
        let failed = failures.clone();
        let worker = thread::Builder::new()
            .name("trace-sink".into())
            .spawn(move || {
                for msg in rx {
                    let result = match msg {
                        Message::Mergelog(log) => client.post_mergelog(&log),
                        Message::Span(span) => client.post_span(&span),
                        Message::Flush(done) => {
                            let _ = done.send(());
                            Ok(())
                        }
                    };
                    if result.is_err() {
                        failed.fetch_add(1, Ordering::Relaxed);
                    }
                }
            })
            .expect("spawn sink thread");
        HttpSink {
            tx: Some(tx),
            worker: Some(worker),
            failures,
        }
    }

    /// Records the server refused or never received.
    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    fn submit(&self, msg: Message) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(msg);
        }
    }
}

impl TraceSink for HttpSink {
    fn send_mergelog(&self, log: Mergelog) {
        self.submit(Message::Mergelog(log));
    }

    fn send_span(&self, span: Span) {
        self.submit(Message::Span(span));
    }

    fn flush(&self) {
        let (done, wait) = crossbeam_channel::bounded(1);
        self.submit(Message::Flush(done));
        let _ = wait.recv();
    }
}

impl Drop for HttpSink {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
