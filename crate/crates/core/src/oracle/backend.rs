//! Chat-completion backends and the request/response audit log.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::PatternOracleError;

pub const URL_ENV: &str = "GCD_ORACLE_URL";
pub const TOKEN_ENV: &str = "GCD_ORACLE_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Match,
    Extract,
    Refine,
}

impl std::fmt::Display for RequestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RequestKind::Match => "match",
            RequestKind::Extract => "extract",
            RequestKind::Refine => "refine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub kind: RequestKind,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// The original (first) user prompt of the conversation.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub trait ChatBackend: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError>;
}

/// Client for an OpenAI-compatible `POST {base_url}/chat/completions`
/// endpoint, called at temperature 0.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    token: Option<String>,
    model: String,
    max_attempts: usize,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, token: Option<String>, model: impl Into<String>) -> Result<Self, PatternOracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| PatternOracleError::Config(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            model: model.into(),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        })
    }

    /// Reads the base URL and bearer token from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self, PatternOracleError> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| PatternOracleError::Config(format!("{URL_ENV} is not set")))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(url, token, model)
    }

    pub fn with_retry(mut self, max_attempts: usize, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": 0,
        })
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, e.to_string()))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}: {text}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| (false, format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, format!("response without choices[0].message.content: {text}")))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError> {
        let body = self.request_body(request);
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * attempt as u32);
            }
            match self.send_once(&body) {
                Ok(content) => return Ok(content),
                Err((retryable, msg)) => {
                    log::warn!("oracle request failed (attempt {}): {msg}", attempt + 1);
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(PatternOracleError::Transport(last))
    }
}

/// One request/response pair of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub kind: RequestKind,
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

/// Appends every exchange to a JSON-lines file.
pub struct TranscriptWriter {
    out: BufWriter<File>,
    seq: usize,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self, PatternOracleError> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            seq: 0,
        })
    }

    pub fn append(&mut self, request: &ChatRequest, response: &str) -> Result<(), PatternOracleError> {
        let entry = TranscriptEntry {
            seq: self.seq,
            kind: request.kind,
            messages: request.messages.clone(),
            response: response.to_string(),
        };
        self.seq += 1;
        serde_json::to_writer(&mut self.out, &entry).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, PatternOracleError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            PatternOracleError::Config(format!("transcript line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

/// Serves recorded responses in order, checking each request against the log.
pub struct ReplayBackend {
    entries: VecDeque<TranscriptEntry>,
    served: usize,
}

impl ReplayBackend {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self {
            entries: entries.into(),
            served: 0,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, PatternOracleError> {
        Ok(Self::new(read_transcript(path)?))
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError> {
        let seq = self.served;
        let entry = self
            .entries
            .pop_front()
            .ok_or(PatternOracleError::ReplayExhausted(seq))?;
        if entry.kind != request.kind || entry.messages != request.messages {
            return Err(PatternOracleError::ReplayMismatch { seq });
        }
        self.served += 1;
        Ok(entry.response)
    }
}

/// Returns canned replies in order; for tests and dry runs.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: VecDeque<Result<String, String>>,
    pub requests: Vec<ChatRequest>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(|s| Ok(s.into())).collect(),
            requests: Vec::new(),
        }
    }

    /// Queues a transport failure.
    pub fn push_failure(&mut self, msg: impl Into<String>) {
        self.replies.push_back(Err(msg.into()));
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError> {
        self.requests.push(request.clone());
        match self.replies.pop_front() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(PatternOracleError::Transport(e)),
            None => Err(PatternOracleError::Transport("script exhausted".into())),
        }
    }
}
