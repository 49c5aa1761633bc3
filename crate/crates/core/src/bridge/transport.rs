use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::SchemaId;

/// Environment variable holding the bearer token for the HTTP transport.
pub const API_KEY_ENV: &str = "CREDENCE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    pub schema_id: SchemaId,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("http transport: {0}")]
    Http(String),
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("transport protocol: {0}")]
    Protocol(String),
}

impl TransportError {
    /// Protocol errors are deterministic and not worth retrying.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Protocol(_))
    }
}

/// Chat-completion shaped contract: model, temperature and messages in, text out.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

fn extract_text(body: &Value) -> Option<String> {
    if let Some(t) = body.get("text").and_then(Value::as_str) {
        return Some(t.to_string());
    }
    body.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string)
}

/// Posts the request as JSON. Accepts either `{"text": ...}` or an
/// OpenAI-style `choices[0].message.content` reply.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpTransport { url: url.into(), api_key, agent }
    }

    /// Reads the token from [`API_KEY_ENV`].
    pub fn from_env(url: impl Into<String>) -> Self {
        HttpTransport::new(url, std::env::var(API_KEY_ENV).ok(), Duration::from_secs(120))
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| TransportError::Http(e.to_string()))?;
        let body: Value = resp.body_mut().read_json().map_err(|e| TransportError::Http(e.to_string()))?;
        extract_text(&body).ok_or_else(|| TransportError::Protocol(format!("reply has no text field: {body}")))
    }
}

struct ChildIo {
    _child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// Line protocol with a long-lived child process: one JSON request per line
/// on stdin, one `{"text": ...}` reply per line on stdout.
pub struct ProcessTransport {
    io: Mutex<ChildIo>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, TransportError> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ProcessTransport { io: Mutex::new(ChildIo { _child: child, stdin, stdout }) })
    }
}

impl Transport for ProcessTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let mut io = self.io.lock().map_err(|_| TransportError::Protocol("transport lock poisoned".into()))?;
        let line = serde_json::to_string(request).expect("request is serializable");
        writeln!(io.stdin, "{line}")?;
        io.stdin.flush()?;
        let mut reply = String::new();
        if io.stdout.read_line(&mut reply)? == 0 {
            return Err(TransportError::Protocol("child process closed its output".into()));
        }
        let body: Value =
            serde_json::from_str(reply.trim()).map_err(|e| TransportError::Protocol(format!("bad reply line: {e}")))?;
        extract_text(&body).ok_or_else(|| TransportError::Protocol(format!("reply has no text field: {body}")))
    }
}

/// Offline stand-in for a model. Picks one of the answers listed on the
/// prompt's `Allowed answers (JSON):` line, chosen by a hash of the prompt,
/// so identical prompts always get identical replies.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    /// Reply with unusable text unless the prompt already carries a reformat request.
    pub malformed_first: bool,
}

const ALLOWED_PREFIX: &str = "Allowed answers (JSON):";

impl Transport for ScriptedTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .ok_or_else(|| TransportError::Protocol("no user message".into()))?;
        if request.schema_id == SchemaId::Comprehension {
            return Ok("I have read the instructions and understand how payoffs are computed.".into());
        }
        if self.malformed_first && !user.content.contains(super::REFORMAT_MARKER) {
            return Ok("Let me think about it.".into());
        }
        let allowed = user
            .content
            .lines()
            .rev()
            .find_map(|l| l.trim().strip_prefix(ALLOWED_PREFIX))
            .ok_or_else(|| TransportError::Protocol("prompt lists no allowed answers".into()))?;
        let options: Vec<Value> = serde_json::from_str(allowed.trim())
            .map_err(|e| TransportError::Protocol(format!("allowed answers are not JSON: {e}")))?;
        if options.is_empty() {
            return Err(TransportError::Protocol("empty answer list".into()));
        }
        let mut hasher = Sha256::new();
        for m in &request.messages {
            hasher.update(m.content.as_bytes());
        }
        let digest = hasher.finalize();
        let pick = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % options.len();
        Ok(format!("My answer: {}", options[pick]))
    }
}
