#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use regulearn::engine::Engine;
use reqwest::{Client, Response, StatusCode};
use serde_json::Value;
use tokio::sync::oneshot;

/// The router on an ephemeral port, in-process.
pub struct Server {
    pub base: String,
    pub engine: Arc<Engine>,
    pub http: Client,
    stop: Option<oneshot::Sender<()>>,
}

impl Server {
    pub async fn start(engine: Arc<Engine>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        tokio::spawn(regulearn_server::serve(Arc::clone(&engine), listener, async {
            let _ = rx.await;
        }));
        Self {
            base,
            engine,
            http: Client::new(),
            stop: Some(tx),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        read(self.http.get(self.url(path)).send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        read(self.http.post(self.url(path)).json(body).send().await.unwrap()).await
    }

    pub async fn put(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        read(self.http.put(self.url(path)).json(body).send().await.unwrap()).await
    }

    /// Opens an SSE stream, optionally resuming after `last_event_id`.
    pub async fn sse(&self, path: &str, last_event_id: Option<&str>) -> SseReader {
        let mut req = self.http.get(self.url(path));
        if let Some(id) = last_event_id {
            req = req.header("Last-Event-ID", id);
        }
        let resp = req.send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK, "opening {path}");
        SseReader {
            body: Box::pin(resp.bytes_stream()),
            buf: String::new(),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn read(resp: Response) -> (StatusCode, Value) {
    let status = resp.status();
    let bytes = resp.bytes().await.unwrap();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, body)
}

type ByteStream = std::pin::Pin<Box<dyn futures::Stream<Item = reqwest::Result<axum::body::Bytes>> + Send>>;

/// Minimal `text/event-stream` reader: yields `(id, data)` per event and
/// skips keep-alive comments.
pub struct SseReader {
    body: ByteStream,
    buf: String,
}

impl SseReader {
    pub async fn next(&mut self, wait: Duration) -> Option<(String, Value)> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let (mut id, mut data) = (String::new(), String::new());
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("id:") {
                        id = v.trim_start().to_owned();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    continue;
                }
                return Some((id, serde_json::from_str(&data).unwrap()));
            }
            match tokio::time::timeout_at(deadline, self.body.next()).await {
                Ok(Some(Ok(chunk))) => self.buf.push_str(&String::from_utf8_lossy(&chunk)),
                _ => return None,
            }
        }
    }

    /// Everything that arrives until the stream stays quiet for `quiet`.
    pub async fn drain(&mut self, quiet: Duration) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        while let Some(e) = self.next(quiet).await {
            out.push(e);
        }
        out
    }
}

pub mod gating_http {
    use reqwest::Method;
    use serde_json::{json, Value};

    use super::Server;
    use crate::common::gating::{chat_spec, groups, learner_of, session_of};
    use crate::common::next_event_id;

    /// One HTTP request per tool-guarded entry point, on behalf of group `g`.
    pub fn requests(server: &Server, g: &str) -> Vec<(&'static str, &'static str, Method, String, Option<Value>)> {
        let s = session_of(g);
        let chat = format!("chat-{g}");
        let doc = format!("doc-{g}");
        let message = server.engine.scaffolds().messages(&s)[0].message_id.clone();
        vec![
            ("create_chat", "chat", Method::POST, "/v1/chats".into(),
                Some(serde_json::to_value(chat_spec(&format!("http-{g}"), &s)).unwrap())),
            ("send_turn", "chat", Method::POST, format!("/v1/chats/{chat}/turns"),
                Some(json!({"text": "hi", "addressee": "tutor"}))),
            ("chat", "chat", Method::GET, format!("/v1/chats/{chat}/transcripts"), None),
            ("save_plan", "planner", Method::POST, "/v1/plans".into(),
                Some(json!({"session_id": s, "main_strategy": regulearn::admin::STRATEGIES[0]}))),
            ("analyze", "writing_analytics", Method::POST, "/v1/analyze".into(),
                Some(json!({"session_id": s, "text": "We don't know.", "kinds": ["academic"]}))),
            ("submit", "writing_analytics", Method::POST, "/v1/submissions".into(),
                Some(json!({"session_id": s, "text": ""}))),
            ("create_doc", "collab_doc", Method::POST, "/v1/docs".into(),
                Some(json!({"doc_id": format!("http-doc-{g}"), "session_id": s}))),
            ("submit_op", "collab_doc", Method::POST, format!("/v1/docs/{doc}/ops"),
                Some(json!({"session_id": s, "op_id": next_event_id(), "author": learner_of(g),
                    "base_revision": 0, "position": 0, "kind": "insert", "text": "x"}))),
            ("doc_content", "collab_doc", Method::GET, format!("/v1/docs/{doc}?session_id={s}"), None),
            ("replay_doc", "collab_doc", Method::GET, format!("/v1/docs/{doc}/replay?session_id={s}&revision=0"), None),
            ("subscribe_doc", "collab_doc", Method::GET, format!("/v1/docs/{doc}/stream?session_id={s}"), None),
            ("timer", "timer", Method::GET, format!("/v1/sessions/{s}/timer"), None),
            ("scaffold_messages", "instruction_panel", Method::GET, format!("/v1/sessions/{s}/scaffold-messages"), None),
            ("subscribe_scaffolds", "instruction_panel", Method::GET, format!("/v1/sessions/{s}/scaffolds"), None),
            ("ack_scaffold", "instruction_panel", Method::POST, format!("/v1/scaffolds/{message}/ack"),
                Some(json!({"status": "shown"}))),
        ]
    }

    /// Calls every guarded endpoint for every group. Returns the number of
    /// calls and a description of each one whose outcome was wrong: 403
    /// `ToolDisabled` exactly when the group lacks the tool, success otherwise.
    pub async fn matrix(server: &Server) -> (usize, Vec<String>) {
        let mut checked = 0;
        let mut wrong = Vec::new();
        for (g, tools) in groups() {
            for (name, tool, method, path, body) in requests(server, &g) {
                let mut req = server.http.request(method, server.url(&path));
                if let Some(b) = &body {
                    req = req.json(b);
                }
                let resp = req.send().await.unwrap();
                let status = resp.status();
                let sse = resp
                    .headers()
                    .get("content-type")
                    .is_some_and(|v| v.to_str().unwrap_or("").starts_with("text/event-stream"));
                let code = if sse {
                    drop(resp);
                    String::new()
                } else {
                    let (_, v) = super::read(resp).await;
                    v["error"].as_str().unwrap_or_default().to_owned()
                };
                let disabled = !tools.contains(tool);
                let ok = if disabled {
                    status == reqwest::StatusCode::FORBIDDEN && code == "ToolDisabled"
                } else {
                    status.is_success()
                };
                if !ok {
                    wrong.push(format!("{name} for {g}: {status} {code}"));
                }
                checked += 1;
            }
        }
        (checked, wrong)
    }
}
