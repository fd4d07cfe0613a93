#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

use ricforge::mlengine::CandidateConfig;
use ricforge::orchestrator::{ProvisionConfig, TraceSource};
use serde_json::{json, Value};

/// One canned HTTP reply.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay_ms: u64,
}

impl Reply {
    /// A chat-completions envelope carrying `content` as the assistant message.
    pub fn content(content: &str) -> Self {
        let body = json!({
            "id": "mock",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        });
        Reply { status: 200, body: body.to_string(), delay_ms: 0 }
    }

    pub fn status(status: u16) -> Self {
        Reply { status, body: "{}".into(), delay_ms: 0 }
    }

    pub fn raw(body: &str) -> Self {
        Reply { status: 200, body: body.into(), delay_ms: 0 }
    }

    pub fn delayed(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

/// Minimal HTTP/1.1 server answering one request per canned reply, in order.
pub struct MockServer {
    pub url: String,
    handle: JoinHandle<Vec<Value>>,
}

impl MockServer {
    pub fn start(replies: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut requests = Vec::new();
            for reply in replies {
                let Ok((stream, _)) = listener.accept() else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                requests.push(serde_json::from_slice(&body).unwrap_or(Value::Null));
                if reply.delay_ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(reply.delay_ms));
                }
                let mut stream = stream;
                let head = format!(
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.status,
                    reply.body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.body.as_bytes());
                let _ = stream.flush();
            }
            requests
        });
        MockServer { url, handle }
    }

    /// Request bodies received, once every reply has been served.
    pub fn finish(self) -> Vec<Value> {
        self.handle.join().expect("mock server thread")
    }
}

/// The reference scenario cut to 400 s (two burst cycles).
pub fn short_source(seed: u64) -> TraceSource {
    let (mut cell, ues) = ricforge::telemetry::default_scenario(seed);
    cell.duration_s = 400.0;
    TraceSource::Simulate { cell, ues }
}

/// A three-point grid that trains in well under a second.
pub fn small_grid() -> Vec<CandidateConfig> {
    vec![
        CandidateConfig::DecisionTree { max_depth: 3, min_leaf: 5 },
        CandidateConfig::Gbdt { n_trees: 5, depth: 2, learning_rate: 0.3, min_leaf: 5 },
        CandidateConfig::Logistic { epochs: 30, learning_rate: 1.0 },
    ]
}

pub fn fast_config(out: &std::path::Path, seed: u64) -> ProvisionConfig {
    let mut config = ProvisionConfig::new(out, seed);
    config.grid = small_grid();
    config.latency_samples = 1_000;
    config
}
