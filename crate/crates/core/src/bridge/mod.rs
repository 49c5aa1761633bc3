//! Language-model agents: prompt rendering, reply parsing, transports and
//! record/replay cassettes.

mod cassette;
mod parse;
mod prompt;
mod transport;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, ConsumerAgent, ConsumerView, ExpertAgent, ExpertView, Objective, OfferChoice};
use crate::config::MarketConfig;
use crate::market::{ExpertPlan, PriceBook, Problem};
use crate::rng::StreamRng;

pub use cassette::{request_digest, Cassette, CassetteEntry, RequestKey};
pub use parse::{parse_response, ParseError, Parsed, ResponseSchema};
pub use prompt::{fill, objective_text, render_prompt, AgentViewRef, PromptBundle, SchemaId, Stage, Templates};
pub use transport::{
    CompletionRequest, HttpTransport, Message, ProcessTransport, ScriptedTransport, Transport, TransportError,
    API_KEY_ENV,
};

/// Opening words of the note appended to a prompt after an unusable reply.
pub const REFORMAT_MARKER: &str = "Your previous answer could not be used";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot render template `{template}`: no value for `{field}`")]
    Render { template: String, field: String },
    #[error("cannot read template {}: {source}", path.display())]
    Template { path: PathBuf, source: std::io::Error },
    #[error("cassette {}: {source}", path.display())]
    Cassette { path: PathBuf, source: std::io::Error },
    #[error("cassette {} line {line}: {message}", path.display())]
    CassetteFormat { path: PathBuf, line: usize, message: String },
    #[error("replay drift at {key}: recorded digest {recorded}, requested digest {requested}")]
    Drift { key: RequestKey, recorded: String, requested: String },
    #[error("transport failed at {key} after {attempts} attempts: {source}")]
    Transport { key: RequestKey, attempts: u32, source: TransportError },
    #[error("no usable reply at {key} after {attempts} attempts ({error}); last reply: {response:?}")]
    Unparseable { key: RequestKey, attempts: u32, error: ParseError, response: String },
    #[error("bridge misconfigured: {0}")]
    Misconfigured(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeMode {
    /// Call the transport only.
    Live,
    /// Call the transport and append every exchange to the cassette.
    Record,
    /// Serve every reply from the cassette; never touch the transport.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSettings {
    pub model: String,
    pub temperature: f64,
    /// Re-asks after an unusable reply.
    pub parse_retries: u32,
    /// Re-sends after a transport failure.
    pub transport_retries: u32,
    pub backoff_ms: u64,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings {
            model: "gpt-5.1".to_string(),
            temperature: 1.0,
            parse_retries: 3,
            transport_retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct Bridge {
    mode: BridgeMode,
    settings: BridgeSettings,
    transport: Option<Box<dyn Transport>>,
    cassette: Option<Mutex<Cassette>>,
    templates: Templates,
    transport_calls: AtomicUsize,
}

impl Bridge {
    pub fn new(
        mode: BridgeMode,
        settings: BridgeSettings,
        transport: Option<Box<dyn Transport>>,
        cassette: Option<Cassette>,
        templates: Templates,
    ) -> Result<Self, BridgeError> {
        match mode {
            BridgeMode::Live | BridgeMode::Record if transport.is_none() => {
                return Err(BridgeError::Misconfigured(format!("{mode:?} mode needs a transport")))
            }
            BridgeMode::Record | BridgeMode::Replay if cassette.is_none() => {
                return Err(BridgeError::Misconfigured(format!("{mode:?} mode needs a cassette")))
            }
            _ => {}
        }
        Ok(Bridge {
            mode,
            settings,
            transport,
            cassette: cassette.map(Mutex::new),
            templates,
            transport_calls: AtomicUsize::new(0),
        })
    }

    pub fn mode(&self) -> BridgeMode {
        self.mode
    }

    pub fn settings(&self) -> &BridgeSettings {
        &self.settings
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Number of requests handed to the transport so far.
    pub fn transport_calls(&self) -> usize {
        self.transport_calls.load(Ordering::SeqCst)
    }

    /// Gives back the cassette, e.g. to inspect a recording.
    pub fn into_cassette(self) -> Option<Cassette> {
        self.cassette.map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn request(&self, bundle: &PromptBundle) -> CompletionRequest {
        CompletionRequest {
            model: self.settings.model.clone(),
            temperature: self.settings.temperature,
            messages: vec![
                Message { role: "system".into(), content: bundle.system_text.clone() },
                Message { role: "user".into(), content: bundle.user_text() },
            ],
            schema_id: bundle.schema,
        }
    }

    fn send(&self, key: &RequestKey, request: &CompletionRequest) -> Result<String, BridgeError> {
        let transport = self.transport.as_ref().ok_or_else(|| BridgeError::Misconfigured("no transport".into()))?;
        let mut attempt = 0;
        loop {
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match transport.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < self.settings.transport_retries => {
                    std::thread::sleep(Duration::from_millis(
                        self.settings.backoff_ms.saturating_mul(1 << attempt.min(16)),
                    ));
                    attempt += 1;
                }
                Err(source) => return Err(BridgeError::Transport { key: key.clone(), attempts: attempt + 1, source }),
            }
        }
    }

    /// One completion, served or recorded according to the mode.
    pub fn complete(&self, key: &RequestKey, request: &CompletionRequest) -> Result<String, BridgeError> {
        let digest = request_digest(request);
        match self.mode {
            BridgeMode::Live => self.send(key, request),
            BridgeMode::Replay => {
                let cassette = self.cassette.as_ref().expect("checked in new").lock().expect("cassette lock");
                match cassette.get(key) {
                    Some(entry) if entry.digest == digest => Ok(entry.response.clone()),
                    Some(entry) => {
                        Err(BridgeError::Drift { key: key.clone(), recorded: entry.digest.clone(), requested: digest })
                    }
                    None => {
                        Err(BridgeError::Drift { key: key.clone(), recorded: "(no entry)".into(), requested: digest })
                    }
                }
            }
            BridgeMode::Record => {
                let response = self.send(key, request)?;
                let mut cassette = self.cassette.as_ref().expect("checked in new").lock().expect("cassette lock");
                cassette.append(CassetteEntry { key: key.clone(), digest, response: response.clone() })?;
                Ok(response)
            }
        }
    }

    /// Asks until the reply parses, appending a reformat note on each retry.
    pub fn ask(
        &self,
        run: u32,
        round: u32,
        agent: &str,
        kind: &str,
        bundle: &PromptBundle,
        schema: &ResponseSchema,
    ) -> Result<Parsed, BridgeError> {
        let mut bundle = bundle.clone();
        let base_question = bundle.question_text.clone();
        let mut attempt = 0;
        loop {
            let key = RequestKey { run, round, agent: agent.to_string(), kind: kind.to_string(), attempt };
            let response = self.complete(&key, &self.request(&bundle))?;
            match parse_response(&response, schema) {
                Ok(parsed) => return Ok(parsed),
                Err(error) if attempt < self.settings.parse_retries => {
                    bundle.question_text = format!(
                        "{base_question}\n\n{REFORMAT_MARKER}: {error}. Reply again with only the JSON object in the requested format."
                    );
                    attempt += 1;
                }
                Err(error) => {
                    return Err(BridgeError::Unparseable { key, attempts: attempt + 1, error, response });
                }
            }
        }
    }
}

fn unexpected(p: Parsed) -> AgentError {
    AgentError::Invalid(format!("parser returned {p:?} for the wrong stage"))
}

pub struct LlmExpert {
    bridge: Arc<Bridge>,
    config: Arc<MarketConfig>,
    run: u32,
    name: String,
    objective: Objective,
}

impl LlmExpert {
    pub fn new(bridge: Arc<Bridge>, config: Arc<MarketConfig>, run: u32, index: usize, objective: Objective) -> Self {
        LlmExpert { bridge, config, run, name: format!("expert-{index}"), objective }
    }

    fn render(&self, stage: Stage, view: &ExpertView) -> Result<PromptBundle, BridgeError> {
        render_prompt(self.bridge.templates(), stage, AgentViewRef::Expert(view), self.objective, &self.config)
    }
}

impl ExpertAgent for LlmExpert {
    fn post_prices(&mut self, view: &ExpertView) -> Result<PriceBook, AgentError> {
        let bundle = self.render(Stage::Prices, view)?;
        let schema = ResponseSchema::PriceBook { grid: self.config.grid() };
        match self.bridge.ask(self.run, view.round, &self.name, "prices", &bundle, &schema)? {
            Parsed::PriceBook(b) => Ok(b),
            other => Err(unexpected(other)),
        }
    }

    fn plan(&mut self, view: &ExpertView, prices: PriceBook, problems: &[Problem]) -> Result<ExpertPlan, AgentError> {
        let mut decisions = Vec::with_capacity(problems.len());
        for (consumer, &problem) in problems.iter().enumerate() {
            let bundle = self.render(Stage::PlanDecision { prices, consumer, problem }, view)?;
            let schema = ResponseSchema::Decision { institution: self.config.institution, problem, prices };
            let kind = format!("plan-{consumer}");
            match self.bridge.ask(self.run, view.round, &self.name, &kind, &bundle, &schema)? {
                Parsed::Decision(d) => decisions.push(d),
                other => return Err(unexpected(other)),
            }
        }
        Ok(ExpertPlan { decisions })
    }

    fn comprehension(&mut self, view: &ExpertView) -> Result<Option<String>, AgentError> {
        let bundle = self.render(Stage::Comprehension, view)?;
        match self.bridge.ask(self.run, 0, &self.name, "comprehension", &bundle, &ResponseSchema::Comprehension)? {
            Parsed::Comprehension(text) => Ok(Some(text)),
            other => Err(unexpected(other)),
        }
    }

    fn is_remote(&self) -> bool {
        true
    }
}

pub struct LlmConsumer {
    bridge: Arc<Bridge>,
    config: Arc<MarketConfig>,
    run: u32,
    name: String,
    objective: Objective,
}

impl LlmConsumer {
    pub fn new(bridge: Arc<Bridge>, config: Arc<MarketConfig>, run: u32, index: usize, objective: Objective) -> Self {
        LlmConsumer { bridge, config, run, name: format!("consumer-{index}"), objective }
    }
}

impl ConsumerAgent for LlmConsumer {
    fn choose(&mut self, view: &ConsumerView, _tie_break: &mut StreamRng) -> Result<OfferChoice, AgentError> {
        let bundle = render_prompt(
            self.bridge.templates(),
            Stage::Approach,
            AgentViewRef::Consumer(view),
            self.objective,
            &self.config,
        )?;
        let schema = ResponseSchema::ConsumerChoice { labels: view.offers.iter().map(|o| o.label.clone()).collect() };
        match self.bridge.ask(self.run, view.round, &self.name, "approach", &bundle, &schema)? {
            Parsed::ConsumerChoice(Some(slot)) => Ok(OfferChoice::Slot(slot)),
            Parsed::ConsumerChoice(None) => Ok(OfferChoice::Exit),
            other => Err(unexpected(other)),
        }
    }

    fn comprehension(&mut self, view: &ConsumerView) -> Result<Option<String>, AgentError> {
        let bundle = render_prompt(
            self.bridge.templates(),
            Stage::Comprehension,
            AgentViewRef::Consumer(view),
            self.objective,
            &self.config,
        )?;
        match self.bridge.ask(self.run, 0, &self.name, "comprehension", &bundle, &ResponseSchema::Comprehension)? {
            Parsed::Comprehension(text) => Ok(Some(text)),
            other => Err(unexpected(other)),
        }
    }

    fn is_remote(&self) -> bool {
        true
    }
}
