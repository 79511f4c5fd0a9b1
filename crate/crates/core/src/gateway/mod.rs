//! Client layer over the five backend roles.
//!
//! Every call goes through one path: encode the request, take an in-flight
//! permit, post, classify the status, retry transient failures with
//! exponential backoff. `mock://` endpoints resolve to in-process
//! deterministic backends; `http(s)://` endpoints use a blocking HTTP client
//! with a bearer token read from a named environment variable.

pub mod http;
pub mod mock;
pub mod wire;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;
use crate::prompt::{ChatRole, ImageSlot, ImageSource, MultimodalMessage, Part, PromptBundle, SlotRole};
use wire::{OutputKind, WireError, WireRequest, WireResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendRole {
    #[default]
    Teacher,
    Student,
    Generator,
    Evaluator,
    Embedder,
}

impl BackendRole {
    pub const ALL: [BackendRole; 5] = [
        BackendRole::Teacher,
        BackendRole::Student,
        BackendRole::Generator,
        BackendRole::Evaluator,
        BackendRole::Embedder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::Teacher => "teacher",
            BackendRole::Student => "student",
            BackendRole::Generator => "generator",
            BackendRole::Evaluator => "evaluator",
            BackendRole::Embedder => "embedder",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_tokens() -> u32 {
    1024
}
fn default_in_flight() -> usize {
    8
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Filled in from the table name.
    #[serde(skip)]
    pub role: BackendRole,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Keys never
    /// live in config files.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_tokens")]
    pub max_output_tokens: u32,
}

impl BackendConfig {
    pub fn mock(role: BackendRole) -> Self {
        BackendConfig {
            role,
            endpoint: format!("mock://{role}"),
            model_name: format!("mock-{role}"),
            auth_env: None,
            timeout_secs: 30.0,
            max_retries: 2,
            temperature: if role == BackendRole::Generator { 0.8 } else { 0.0 },
            max_output_tokens: 1024,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock://")
    }
}

/// One structured file declaring all five roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff")]
    pub retry_base_ms: u64,
    pub teacher: BackendConfig,
    pub student: BackendConfig,
    pub generator: BackendConfig,
    pub evaluator: BackendConfig,
    pub embedder: BackendConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing gateway config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{role}: {message}")]
    Invalid { role: BackendRole, message: String },
    #[error("max_in_flight must be at least 1")]
    InFlight,
}

impl GatewayConfig {
    pub fn mock() -> Self {
        GatewayConfig {
            max_in_flight: default_in_flight(),
            retry_base_ms: 0,
            teacher: BackendConfig::mock(BackendRole::Teacher),
            student: BackendConfig::mock(BackendRole::Student),
            generator: BackendConfig::mock(BackendRole::Generator),
            evaluator: BackendConfig::mock(BackendRole::Evaluator),
            embedder: BackendConfig::mock(BackendRole::Embedder),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: GatewayConfig = toml::from_str(text)?;
        for role in BackendRole::ALL {
            cfg.backend_mut(role).role = role;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::InFlight);
        }
        for role in BackendRole::ALL {
            let b = self.backend(role);
            let bad = |message: &str| {
                Err(ConfigError::Invalid {
                    role,
                    message: message.to_string(),
                })
            };
            if !(b.timeout_secs > 0.0 && b.timeout_secs.is_finite()) {
                return bad("timeout_secs must be positive");
            }
            if !(b.temperature >= 0.0 && b.temperature.is_finite()) {
                return bad("temperature must be non-negative");
            }
            let scheme_ok = ["mock://", "http://", "https://"].iter().any(|s| b.endpoint.starts_with(s));
            if !scheme_ok {
                return bad("endpoint must be mock://, http:// or https://");
            }
        }
        Ok(())
    }

    pub fn backend(&self, role: BackendRole) -> &BackendConfig {
        match role {
            BackendRole::Teacher => &self.teacher,
            BackendRole::Student => &self.student,
            BackendRole::Generator => &self.generator,
            BackendRole::Evaluator => &self.evaluator,
            BackendRole::Embedder => &self.embedder,
        }
    }

    pub fn backend_mut(&mut self, role: BackendRole) -> &mut BackendConfig {
        match role {
            BackendRole::Teacher => &mut self.teacher,
            BackendRole::Student => &mut self.student,
            BackendRole::Generator => &mut self.generator,
            BackendRole::Evaluator => &mut self.evaluator,
            BackendRole::Embedder => &mut self.embedder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// Moves one JSON request body to a backend and returns `(status, body)`.
pub trait Transport: Send + Sync {
    fn post(&self, body: &str, timeout: Duration) -> Result<(u16, String), TransportError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("{role}: timed out after {attempts} attempt(s)")]
    Timeout { role: BackendRole, attempts: u32 },
    #[error("{role}: provider returned {status}: {excerpt}")]
    Provider {
        role: BackendRole,
        status: u16,
        excerpt: String,
    },
    #[error("{role}: authentication failed: {message}")]
    Auth { role: BackendRole, message: String },
    #[error("{role}: transport failure: {message}")]
    Transport { role: BackendRole, message: String },
    #[error("{role}: empty completion")]
    EmptyCompletion { role: BackendRole },
    #[error("{role}: undecodable payload: {message}")]
    Undecodable { role: BackendRole, message: String },
    #[error("{role}: refused: {reason}")]
    Refusal { role: BackendRole, reason: String },
    #[error("embedding dimensions differ within a batch: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {index} is a zero vector and cannot be normalized")]
    ZeroEmbedding { index: usize },
    #[error("embedder returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("operation needs a {expected} backend, got {got}")]
    WrongRole { expected: &'static str, got: BackendRole },
    #[error("nothing to embed")]
    EmptyInput,
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl GatewayError {
    pub fn is_refusal(&self) -> bool {
        matches!(self, GatewayError::Refusal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    Text(String),
    Image(ImageBuffer),
    TextAndImage(String, ImageBuffer),
}

#[derive(Debug, Clone)]
pub struct GenerationResponse {
    pub kind: ResponseKind,
    /// Wall time of the successful try, excluding backoff.
    pub latency_ms: u64,
    /// Number of tries, starting at 1.
    pub attempt: u32,
    /// Provider body, kept for audit.
    pub raw: String,
}

impl GenerationResponse {
    pub fn text(&self) -> Option<&str> {
        match &self.kind {
            ResponseKind::Text(t) | ResponseKind::TextAndImage(t, _) => Some(t),
            ResponseKind::Image(_) => None,
        }
    }

    pub fn image(&self) -> Option<&ImageBuffer> {
        match &self.kind {
            ResponseKind::Image(i) | ResponseKind::TextAndImage(_, i) => Some(i),
            ResponseKind::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPhase {
    Sc,
    Pq,
}

impl EvalPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalPhase::Sc => "vie_sc",
            EvalPhase::Pq => "vie_pq",
        }
    }
}

/// One evaluator call. Perceptual-quality requests never carry conditions.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub phase: EvalPhase,
    pub rubric: String,
    pub image: Arc<ImageBuffer>,
    pub conditions: Vec<(SlotRole, Arc<ImageBuffer>)>,
}

impl EvalRequest {
    pub fn semantic(rubric: String, image: Arc<ImageBuffer>, conditions: Vec<(SlotRole, Arc<ImageBuffer>)>) -> Self {
        EvalRequest {
            phase: EvalPhase::Sc,
            rubric,
            image,
            conditions,
        }
    }

    pub fn perceptual(rubric: String, image: Arc<ImageBuffer>) -> Self {
        EvalRequest {
            phase: EvalPhase::Pq,
            rubric,
            image,
            conditions: Vec::new(),
        }
    }

    fn messages(&self) -> Vec<MultimodalMessage> {
        let conditions: &[_] = match self.phase {
            EvalPhase::Sc => &self.conditions,
            EvalPhase::Pq => &[],
        };
        let mut parts: Vec<Part> = conditions
            .iter()
            .chain(std::iter::once(&(SlotRole::Generated, self.image.clone())))
            .enumerate()
            .map(|(i, (role, img))| {
                Part::Image(ImageSlot {
                    label: format!("image_{}", i + 1),
                    role: *role,
                    source: ImageSource::Pixels(img.clone()),
                })
            })
            .collect();
        parts.push(Part::Text(self.rubric.clone()));
        vec![MultimodalMessage::new(ChatRole::User, parts).expect("labels are distinct and parts non-empty")]
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    max: usize,
    active: Mutex<usize>,
    cv: Condvar,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            active: Mutex::new(0),
            cv: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock();
        while *n >= self.max {
            self.cv.wait(&mut n);
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock() -= 1;
        self.0.cv.notify_one();
    }
}

const EXCERPT_CHARS: usize = 300;
const MAX_BACKOFF_MS: u64 = 30_000;

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

/// Shareable client; all operations may be called from many threads.
pub struct Gateway {
    config: GatewayConfig,
    transports: Vec<Arc<dyn Transport>>,
    limiter: Limiter,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish()
    }
}

impl Gateway {
    /// Resolves transports; a configured `auth_env` that is unset fails here.
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let mut transports: Vec<Arc<dyn Transport>> = Vec::with_capacity(5);
        for role in BackendRole::ALL {
            let b = config.backend(role);
            let t: Arc<dyn Transport> = if b.is_mock() {
                Arc::new(mock::MockBackend::new(role, &b.endpoint))
            } else {
                let bearer = match &b.auth_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::Auth {
                        role,
                        message: format!("environment variable {var} is not set"),
                    })?),
                    None => None,
                };
                Arc::new(http::HttpTransport::new(&b.endpoint, bearer))
            };
            transports.push(t);
        }
        Ok(Gateway {
            limiter: Limiter::new(config.max_in_flight),
            config,
            transports,
        })
    }

    pub fn mock() -> Self {
        Gateway::new(GatewayConfig::mock()).expect("mock config needs no credentials")
    }

    /// Replaces the transport for one role, e.g. with a scripted test double.
    pub fn with_transport(mut self, role: BackendRole, transport: Arc<dyn Transport>) -> Self {
        self.transports[role.index()] = transport;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn backend(&self, role: BackendRole) -> &BackendConfig {
        self.config.backend(role)
    }

    /// Highest number of simultaneous in-flight calls observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak.load(Ordering::SeqCst)
    }

    /// Wire payload for a bundle, as it would be sent.
    pub fn bundle_request(
        &self,
        role: BackendRole,
        bundle: &PromptBundle,
        attempt: u32,
    ) -> Result<WireRequest, GatewayError> {
        let b = self.backend(role);
        Ok(WireRequest {
            model: b.model_name.clone(),
            output: if role == BackendRole::Generator {
                OutputKind::Image
            } else {
                OutputKind::Text
            },
            kind: bundle.kind().as_str().to_string(),
            messages: wire::encode_messages(bundle.messages())?,
            input: Vec::new(),
            temperature: b.temperature,
            max_output_tokens: b.max_output_tokens,
            attempt,
        })
    }

    pub fn eval_request(&self, req: &EvalRequest) -> Result<WireRequest, GatewayError> {
        let b = self.backend(BackendRole::Evaluator);
        Ok(WireRequest {
            model: b.model_name.clone(),
            output: OutputKind::Text,
            kind: req.phase.as_str().to_string(),
            messages: wire::encode_messages(&req.messages())?,
            input: Vec::new(),
            temperature: b.temperature,
            max_output_tokens: b.max_output_tokens,
            attempt: 0,
        })
    }

    fn call(&self, role: BackendRole, req: &WireRequest) -> Result<(WireResponse, String, u32, u64), GatewayError> {
        let b = self.backend(role);
        let body = serde_json::to_string(req).expect("wire request serializes");
        let timeout = Duration::from_secs_f64(b.timeout_secs);
        let transport = &self.transports[role.index()];
        let mut tries = 0u32;
        loop {
            tries += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                transport.post(&body, timeout)
            };
            let latency = started.elapsed().as_millis() as u64;
            let transient = match result {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let resp: WireResponse = serde_json::from_str(&text).map_err(|e| GatewayError::Undecodable {
                        role,
                        message: format!("response is not valid JSON: {e}"),
                    })?;
                    return Ok((resp, text, tries, latency));
                }
                Ok((status @ (401 | 403), text)) => {
                    return Err(GatewayError::Auth {
                        role,
                        message: format!("status {status}: {}", excerpt(&text)),
                    })
                }
                Ok((status, text)) if status == 429 || status >= 500 => GatewayError::Provider {
                    role,
                    status,
                    excerpt: excerpt(&text),
                },
                Ok((status, text)) => {
                    return Err(GatewayError::Provider {
                        role,
                        status,
                        excerpt: excerpt(&text),
                    })
                }
                Err(TransportError::Timeout) => GatewayError::Timeout { role, attempts: tries },
                Err(TransportError::Io(message)) => return Err(GatewayError::Transport { role, message }),
            };
            if tries > b.max_retries {
                return Err(transient);
            }
            let delay = self
                .config
                .retry_base_ms
                .saturating_mul(1u64 << (tries - 1).min(20))
                .min(MAX_BACKOFF_MS);
            log::warn!("{role}: {transient}; retrying in {delay} ms");
            if delay > 0 {
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
    }

    fn expect_role(role: BackendRole, allowed: &[BackendRole], expected: &'static str) -> Result<(), GatewayError> {
        if allowed.contains(&role) {
            Ok(())
        } else {
            Err(GatewayError::WrongRole { expected, got: role })
        }
    }

    /// Text completion from the teacher or student. `attempt` is the sampling
    /// index sent to the provider.
    pub fn complete_text(
        &self,
        role: BackendRole,
        bundle: &PromptBundle,
        attempt: u32,
    ) -> Result<GenerationResponse, GatewayError> {
        Self::expect_role(role, &[BackendRole::Teacher, BackendRole::Student], "teacher or student")?;
        let req = self.bundle_request(role, bundle, attempt)?;
        let (resp, raw, tries, latency) = self.call(role, &req)?;
        if let Some(reason) = resp.refusal {
            return Err(GatewayError::Refusal { role, reason });
        }
        match resp.text {
            Some(t) if !t.trim().is_empty() => Ok(GenerationResponse {
                kind: ResponseKind::Text(t),
                latency_ms: latency,
                attempt: tries,
                raw,
            }),
            _ => Err(GatewayError::EmptyCompletion { role }),
        }
    }

    pub fn generate_image(&self, bundle: &PromptBundle, attempt: u32) -> Result<GenerationResponse, GatewayError> {
        let req = self.bundle_request(BackendRole::Generator, bundle, 0)?;
        self.generate_from(&req, attempt)
    }

    /// Like [`Gateway::generate_image`] for a payload encoded once up front,
    /// so repeated attempts skip re-encoding the images.
    pub fn generate_from(&self, req: &WireRequest, attempt: u32) -> Result<GenerationResponse, GatewayError> {
        let role = BackendRole::Generator;
        let req = WireRequest {
            attempt,
            ..req.clone()
        };
        let (resp, raw, tries, latency) = self.call(role, &req)?;
        if let Some(reason) = resp.refusal {
            return Err(GatewayError::Refusal { role, reason });
        }
        let Some(data) = resp.image else {
            return Err(GatewayError::Undecodable {
                role,
                message: "response carries no image".into(),
            });
        };
        let img = wire::decode_image(&data).map_err(|message| GatewayError::Undecodable { role, message })?;
        let kind = match resp.text {
            Some(t) if !t.trim().is_empty() => ResponseKind::TextAndImage(t, img),
            _ => ResponseKind::Image(img),
        };
        Ok(GenerationResponse {
            kind,
            latency_ms: latency,
            attempt: tries,
            raw,
        })
    }

    /// One unit-norm vector per text, whatever the provider returned.
    pub fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let role = BackendRole::Embedder;
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let b = self.backend(role);
        let req = WireRequest {
            model: b.model_name.clone(),
            output: OutputKind::Embedding,
            kind: "embedding".into(),
            messages: Vec::new(),
            input: texts.to_vec(),
            temperature: 0.0,
            max_output_tokens: 0,
            attempt: 0,
        };
        let (resp, _, _, _) = self.call(role, &req)?;
        let vectors = resp.embeddings.ok_or_else(|| GatewayError::Undecodable {
            role,
            message: "response carries no embeddings".into(),
        })?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        let dim = vectors[0].len();
        vectors
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                if v.len() != dim {
                    return Err(GatewayError::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(GatewayError::ZeroEmbedding { index });
                }
                Ok(v.into_iter().map(|x| x / norm).collect())
            })
            .collect()
    }

    /// Raw evaluator answer; parsing belongs to the scoring module.
    pub fn evaluate(&self, req: &EvalRequest) -> Result<GenerationResponse, GatewayError> {
        let role = BackendRole::Evaluator;
        let wire = self.eval_request(req)?;
        let (resp, raw, tries, latency) = self.call(role, &wire)?;
        if let Some(reason) = resp.refusal {
            return Err(GatewayError::Refusal { role, reason });
        }
        match resp.text {
            Some(t) if !t.trim().is_empty() => Ok(GenerationResponse {
                kind: ResponseKind::Text(t),
                latency_ms: latency,
                attempt: tries,
                raw,
            }),
            _ => Err(GatewayError::EmptyCompletion { role }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Replays canned `(status, body)` answers and counts calls.
    struct Scripted {
        answers: Mutex<VecDeque<Result<(u16, String), TransportError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(answers: Vec<Result<(u16, &str), TransportError>>) -> Arc<Self> {
            Arc::new(Scripted {
                answers: Mutex::new(answers.into_iter().map(|a| a.map(|(s, b)| (s, b.to_string()))).collect()),
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Transport for Scripted {
        fn post(&self, _: &str, _: Duration) -> Result<(u16, String), TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.answers.lock().pop_front().expect("script exhausted")
        }
    }

    fn small(v: u8) -> Arc<ImageBuffer> {
        Arc::new(ImageBuffer::filled(8, 8, [v, v, v]).unwrap())
    }

    fn bundle() -> PromptBundle {
        let parts = vec![
            Part::Image(ImageSlot {
                label: "image_1".into(),
                role: SlotRole::DemoInput,
                source: ImageSource::Pixels(small(10)),
            }),
            Part::Image(ImageSlot {
                label: "image_2".into(),
                role: SlotRole::DemoLabel,
                source: ImageSource::Pixels(small(20)),
            }),
            Part::Image(ImageSlot {
                label: "image_3".into(),
                role: SlotRole::QueryInput,
                source: ImageSource::Pixels(small(30)),
            }),
            Part::Text("describe".into()),
        ];
        PromptBundle::new(
            crate::prompt::PromptKind::StudentOpenEnded,
            vec![
                MultimodalMessage::text(ChatRole::System, "sys"),
                MultimodalMessage::new(ChatRole::User, parts).unwrap(),
            ],
        )
    }

    #[test]
    fn retries_429_then_succeeds() {
        let s = Scripted::new(vec![Ok((429, "slow down")), Ok((200, r#"{"text":"ok"}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Student, s.clone());
        let r = g.complete_text(BackendRole::Student, &bundle(), 0).unwrap();
        assert_eq!(r.attempt, 2);
        assert_eq!(r.text(), Some("ok"));
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let s = Scripted::new(vec![Ok((401, "bad key")), Ok((200, r#"{"text":"ok"}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Teacher, s.clone());
        let err = g.complete_text(BackendRole::Teacher, &bundle(), 0).unwrap_err();
        assert!(matches!(err, GatewayError::Auth { .. }));
        assert_eq!(s.calls.load(Ordering::SeqCst), 1);

        let s = Scripted::new(vec![Ok((422, "invalid"))]);
        let g = Gateway::mock().with_transport(BackendRole::Teacher, s.clone());
        let err = g.complete_text(BackendRole::Teacher, &bundle(), 0).unwrap_err();
        assert!(matches!(err, GatewayError::Provider { status: 422, .. }));
    }

    #[test]
    fn transient_failures_exhaust_retries() {
        let s = Scripted::new(vec![
            Err(TransportError::Timeout),
            Ok((503, "busy")),
            Err(TransportError::Timeout),
        ]);
        let g = Gateway::mock().with_transport(BackendRole::Student, s.clone());
        let err = g.complete_text(BackendRole::Student, &bundle(), 0).unwrap_err();
        assert_eq!(err, GatewayError::Timeout { role: BackendRole::Student, attempts: 3 });
        assert_eq!(s.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn empty_completion_and_refusal() {
        let s = Scripted::new(vec![Ok((200, r#"{"text":"  "}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Student, s);
        assert!(matches!(
            g.complete_text(BackendRole::Student, &bundle(), 0),
            Err(GatewayError::EmptyCompletion { .. })
        ));
        let s = Scripted::new(vec![Ok((200, r#"{"refusal":"no"}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Generator, s);
        assert!(g.generate_image(&bundle(), 0).unwrap_err().is_refusal());
        let s = Scripted::new(vec![Ok((200, r#"{"image":"not base64!"}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Generator, s);
        assert!(matches!(g.generate_image(&bundle(), 0), Err(GatewayError::Undecodable { .. })));
    }

    #[test]
    fn wrong_role_and_unbound() {
        let g = Gateway::mock();
        assert!(matches!(
            g.complete_text(BackendRole::Generator, &bundle(), 0),
            Err(GatewayError::WrongRole { .. })
        ));
        let unbound = PromptBundle::new(
            crate::prompt::PromptKind::StudentOpenEnded,
            vec![MultimodalMessage::new(
                ChatRole::User,
                vec![Part::Image(ImageSlot {
                    label: "image_1".into(),
                    role: SlotRole::DemoInput,
                    source: ImageSource::Path("/x.png".into()),
                })],
            )
            .unwrap()],
        );
        assert!(matches!(
            g.complete_text(BackendRole::Student, &unbound, 0),
            Err(GatewayError::Wire(WireError::Unbound(_)))
        ));
    }

    #[test]
    fn wire_round_trip_and_injectivity() {
        let g = Gateway::mock();
        let b = bundle();
        let req = g.bundle_request(BackendRole::Student, &b, 0).unwrap();
        assert_eq!(wire::decode_bundle(&req).unwrap(), b);
        let other = g.bundle_request(BackendRole::Student, &b, 1).unwrap();
        assert_ne!(serde_json::to_string(&req).unwrap(), serde_json::to_string(&other).unwrap());
    }

    #[test]
    fn mock_generator_differs_per_attempt_and_is_deterministic() {
        let g = Gateway::mock();
        let b = bundle();
        let digests: std::collections::BTreeSet<_> = (0..10)
            .map(|a| g.generate_image(&b, a).unwrap().image().unwrap().digest())
            .collect();
        assert_eq!(digests.len(), 10);
        let again = g.generate_image(&b, 3).unwrap();
        let first = g.generate_image(&b, 3).unwrap();
        assert_eq!(again.image(), first.image());
        assert_eq!(first.image().unwrap().dimensions(), (224, 224));
    }

    #[test]
    fn eval_payload_image_counts() {
        let g = Gateway::mock();
        let cond = vec![
            (SlotRole::DemoInput, small(1)),
            (SlotRole::DemoLabel, small(2)),
            (SlotRole::QueryInput, small(3)),
        ];
        let sc = g.eval_request(&EvalRequest::semantic("r".into(), small(4), cond.clone())).unwrap();
        assert_eq!(sc.images().count(), 4);
        assert_eq!(sc.images().last().unwrap().1, SlotRole::Generated);
        let mut pq = EvalRequest::perceptual("r".into(), small(4));
        pq.conditions = cond;
        let pq = g.eval_request(&pq).unwrap();
        assert_eq!(pq.images().count(), 1);
        let text = g.evaluate(&EvalRequest::perceptual("r".into(), small(4))).unwrap();
        assert!(crate::vie::parse_score_block(text.text().unwrap()).unwrap().pq.is_some());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let g = Gateway::mock();
        let v = g.embed_text(&["a".into(), "a".into(), "something longer".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        for e in &v {
            assert_eq!(e.len(), mock::MOCK_EMBED_DIM);
            assert!((e.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }
        assert_eq!(g.embed_text(&[]), Err(GatewayError::EmptyInput));
        let s = Scripted::new(vec![Ok((200, r#"{"embeddings":[[1,0],[1,0,0]]}"#))]);
        let g = Gateway::mock().with_transport(BackendRole::Embedder, s);
        assert!(matches!(
            g.embed_text(&["a".into(), "b".into()]),
            Err(GatewayError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn in_flight_bound_is_respected() {
        struct Slow(AtomicUsize, AtomicUsize);
        impl Transport for Slow {
            fn post(&self, _: &str, _: Duration) -> Result<(u16, String), TransportError> {
                let now = self.0.fetch_add(1, Ordering::SeqCst) + 1;
                self.1.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(15));
                self.0.fetch_sub(1, Ordering::SeqCst);
                Ok((200, r#"{"text":"ok"}"#.into()))
            }
        }
        let slow = Arc::new(Slow(AtomicUsize::new(0), AtomicUsize::new(0)));
        let mut cfg = GatewayConfig::mock();
        cfg.max_in_flight = 3;
        let g = Gateway::new(cfg).unwrap().with_transport(BackendRole::Student, slow.clone());
        let b = bundle();
        std::thread::scope(|s| {
            for i in 0..12 {
                let (g, b) = (&g, &b);
                s.spawn(move || g.complete_text(BackendRole::Student, b, i).unwrap());
            }
        });
        assert_eq!(g.peak_in_flight(), 3);
        assert!(slow.1.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn config_parses_and_validates() {
        let text = r#"
            max_in_flight = 4
            [teacher]
            endpoint = "https://api.example.com/v1/chat"
            model_name = "big"
            auth_env = "TEACHER_KEY"
            [student]
            endpoint = "mock://student"
            model_name = "small"
            [generator]
            endpoint = "mock://generator"
            model_name = "gen"
            temperature = 0.7
            [evaluator]
            endpoint = "mock://evaluator"
            model_name = "eval"
            [embedder]
            endpoint = "mock://embedder"
            model_name = "emb"
        "#;
        let cfg = GatewayConfig::from_toml(text).unwrap();
        assert_eq!(cfg.generator.role, BackendRole::Generator);
        assert_eq!(cfg.teacher.auth_env.as_deref(), Some("TEACHER_KEY"));
        assert_eq!(cfg.student.max_retries, 3);
        let bad = text.replace("temperature = 0.7", "temperature = -1.0");
        assert!(matches!(GatewayConfig::from_toml(&bad), Err(ConfigError::Invalid { .. })));
        let keyed = text.replace("TEACHER_KEY", "VICL_SURELY_UNSET_KEY_VAR");
        let err = Gateway::new(GatewayConfig::from_toml(&keyed).unwrap()).unwrap_err();
        assert!(matches!(err, GatewayError::Auth { .. }));
    }
}
