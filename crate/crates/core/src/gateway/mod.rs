//! Chat-completion access with record/replay.
//!
//! Every request is reduced to a [`ChatRequest`] whose SHA-256 content hash
//! is its cache key. Depending on the [`RunMode`] a transcript is served from
//! the on-disk cache, fetched from the backend, or both.

mod cache;
mod http;
mod retry;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::TranscriptCache;
pub use http::{HttpBackend, API_KEY_VAR, DEFAULT_ENDPOINT, ENDPOINT_VAR};
pub use retry::RetryPolicy;

use crate::promptkit::PromptBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_endpoint")]
    pub endpoint_url: String,
    #[serde(default)]
    pub request_seed: Option<u64>,
}

fn default_max_output_tokens() -> u32 {
    16_384
}

fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.to_string()
}

impl ModelParams {
    pub fn new(model_name: impl Into<String>) -> Self {
        ModelParams {
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            endpoint_url: default_endpoint(),
            request_seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidParams("model_name is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_output_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} must be a finite non-negative number",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// The content that identifies a completion. Field order is part of the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn from_bundle(bundle: &PromptBundle, params: &ModelParams) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &bundle.system_message {
            messages.push(ChatMessage {
                role: Role::System,
                content: system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: Role::User,
            content: bundle.user_message.clone(),
        });
        ChatRequest {
            model: params.model_name.clone(),
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
            seed: params.request_seed,
            messages,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn cache_key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serialization is infallible");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Text of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_api(reason: Option<&str>) -> Self {
        match reason {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("credentials missing: set {0}")]
    MissingCredentials(String),
    #[error("request failed: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::RateLimited(_))
    }
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, BackendError>;
}

/// Adapts a closure into a backend; used for scripted and offline runs.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<BackendReply, BackendError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        (self.0)(request)
    }
}

/// Backend for runs without credentials: every call fails with the missing variable.
pub struct NoCredentials;

impl ChatBackend for NoCredentials {
    fn send(&self, _request: &ChatRequest) -> Result<BackendReply, BackendError> {
        Err(BackendError::MissingCredentials(API_KEY_VAR.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub cache_key: String,
    pub request: ChatRequest,
    pub response_text: String,
    pub finish_reason: FinishReason,
    /// Seconds since the Unix epoch when the response was received.
    pub timestamp: u64,
}

impl Transcript {
    /// The response hit the output-token limit and must not be scored.
    pub fn is_truncated(&self) -> bool {
        self.finish_reason == FinishReason::Length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Always call the backend; never touch the cache.
    Live,
    /// Always call the backend and store every transcript.
    Record,
    /// Serve from cache; call and store on a miss.
    Replay,
    /// Serve from cache only; a miss is an error.
    ReplayStrict,
}

impl RunMode {
    pub fn uses_cache(self) -> bool {
        !matches!(self, RunMode::Live)
    }

    /// Modes that call the backend for every request.
    pub fn always_calls_backend(self) -> bool {
        matches!(self, RunMode::Live | RunMode::Record)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Live => "live",
            RunMode::Record => "record",
            RunMode::Replay => "replay",
            RunMode::ReplayStrict => "replay_strict",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(RunMode::Live),
            "record" => Ok(RunMode::Record),
            "replay" => Ok(RunMode::Replay),
            "replay_strict" => Ok(RunMode::ReplayStrict),
            other => Err(format!(
                "unknown mode `{other}` (expected live, record, replay or replay_strict)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("credentials missing: environment variable {var} is not set")]
    MissingCredentials { var: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("cache miss for key {key} in replay_strict mode")]
    CacheMiss { key: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error(transparent)]
    Backend(BackendError),
    #[error("mode {0} needs a cache directory")]
    NoCache(RunMode),
    #[error("transcript cache: {0}")]
    Cache(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// Sends requests according to a [`RunMode`], with retries and a transcript cache.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    mode: RunMode,
    cache: Option<TranscriptCache>,
    retry: RetryPolicy,
    sleep: fn(Duration),
    backend_calls: AtomicUsize,
}

impl Gateway {
    /// `cache_dir` is required for every mode except `live`.
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        mode: RunMode,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, GatewayError> {
        let cache = match (mode.uses_cache(), cache_dir) {
            (false, _) => None,
            (true, Some(dir)) => Some(TranscriptCache::open(dir)?),
            (true, None) => return Err(GatewayError::NoCache(mode)),
        };
        Ok(Gateway {
            backend,
            mode,
            cache,
            retry: RetryPolicy::default(),
            sleep: std::thread::sleep,
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replaces the backoff sleep, e.g. with a no-op in tests.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn cache(&self) -> Option<&TranscriptCache> {
        self.cache.as_ref()
    }

    /// Number of requests that reached the backend (including retries).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<Transcript, GatewayError> {
        params.validate()?;
        self.complete_request(&ChatRequest::from_bundle(bundle, params))
    }

    pub fn complete_request(&self, request: &ChatRequest) -> Result<Transcript, GatewayError> {
        let key = request.cache_key();
        if matches!(self.mode, RunMode::Replay | RunMode::ReplayStrict) {
            let cache = self.cache.as_ref().expect("replay modes always have a cache");
            if let Some(hit) = cache.load(&key)? {
                return Ok(hit);
            }
            if self.mode == RunMode::ReplayStrict {
                return Err(GatewayError::CacheMiss { key });
            }
        }

        let reply = self.send_with_retry(request)?;
        let transcript = Transcript {
            cache_key: key,
            request: request.clone(),
            response_text: reply.text,
            finish_reason: reply.finish_reason,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if transcript.is_truncated() {
            log::warn!("response {} truncated at the output-token limit", transcript.cache_key);
        }
        if let Some(cache) = &self.cache {
            cache.store(&transcript)?;
        }
        Ok(transcript)
    }

    /// Completes every request with at most `jobs` in flight; results keep input order.
    pub fn complete_all(&self, requests: &[ChatRequest], jobs: usize) -> Vec<Result<Transcript, GatewayError>> {
        crate::par::map_bounded(requests, jobs.max(1), |r| self.complete_request(r))
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(request) {
                Ok(reply) => return Ok(reply),
                Err(BackendError::MissingCredentials(var)) => {
                    return Err(GatewayError::MissingCredentials { var })
                }
                Err(BackendError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
                Err(e) if e.is_retryable() => {
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::Exhausted { attempts: attempt, last: e });
                    }
                    let delay = self.retry.delay_after(attempt);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    (self.sleep)(delay);
                }
                Err(e) => return Err(GatewayError::Backend(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn bundle(text: &str) -> PromptBundle {
        PromptBundle {
            system_message: None,
            user_message: text.to_string(),
            example_count: 0,
            rendered_features: Default::default(),
        }
    }

    fn echo() -> Arc<dyn ChatBackend> {
        Arc::new(FnBackend(|r: &ChatRequest| {
            Ok(BackendReply {
                text: format!("echo: {}", r.user_text()),
                finish_reason: FinishReason::Stop,
            })
        }))
    }

    fn no_sleep(_: Duration) {}

    #[test]
    fn cache_key_is_stable_and_content_sensitive() {
        let params = ModelParams::new("gpt-4o-2024-08-06");
        let a = ChatRequest::from_bundle(&bundle("Berlin"), &params);
        let b = ChatRequest::from_bundle(&bundle("Berlin"), &params);
        assert_eq!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key().len(), 64);
        let c = ChatRequest::from_bundle(&bundle("Berlin "), &params);
        assert_ne!(a.cache_key(), c.cache_key());
        let mut hot = params.clone();
        hot.temperature = 0.5;
        assert_ne!(a.cache_key(), ChatRequest::from_bundle(&bundle("Berlin"), &hot).cache_key());
        let mut other_endpoint = params.clone();
        other_endpoint.endpoint_url = "http://localhost:1/v1/chat/completions".into();
        assert_eq!(
            a.cache_key(),
            ChatRequest::from_bundle(&bundle("Berlin"), &other_endpoint).cache_key()
        );
    }

    #[test]
    fn record_then_strict_replay_serves_identical_text() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::new("m");
        let rec = Gateway::new(echo(), RunMode::Record, Some(dir.path().into())).unwrap();
        let first = rec.complete(&bundle("Potsdam"), &params).unwrap();
        assert_eq!(rec.backend_calls(), 1);

        let replay = Gateway::new(Arc::new(NoCredentials), RunMode::ReplayStrict, Some(dir.path().into())).unwrap();
        let again = replay.complete(&bundle("Potsdam"), &params).unwrap();
        assert_eq!(again.response_text, first.response_text);
        assert_eq!(replay.backend_calls(), 0);

        match replay.complete(&bundle("Spandau"), &params) {
            Err(GatewayError::CacheMiss { key }) => {
                assert_eq!(key, ChatRequest::from_bundle(&bundle("Spandau"), &params).cache_key())
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_falls_through_to_backend() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::new("m");
        let gw = Gateway::new(echo(), RunMode::Replay, Some(dir.path().into())).unwrap();
        gw.complete(&bundle("a"), &params).unwrap();
        gw.complete(&bundle("a"), &params).unwrap();
        assert_eq!(gw.backend_calls(), 1);

        let no_creds = Gateway::new(Arc::new(NoCredentials), RunMode::Replay, Some(dir.path().into())).unwrap();
        assert!(no_creds.complete(&bundle("a"), &params).is_ok());
        assert!(matches!(
            no_creds.complete(&bundle("b"), &params),
            Err(GatewayError::MissingCredentials { ref var }) if var == API_KEY_VAR
        ));
    }

    #[test]
    fn live_mode_writes_nothing() {
        let gw = Gateway::new(echo(), RunMode::Live, None).unwrap();
        assert!(gw.cache().is_none());
        gw.complete(&bundle("x"), &ModelParams::new("m")).unwrap();
        assert!(Gateway::new(echo(), RunMode::Record, None).is_err());
    }

    #[test]
    fn transient_errors_are_retried_up_to_cap() {
        let failures = Arc::new(Mutex::new(2));
        let f = failures.clone();
        let flaky = Arc::new(FnBackend(move |_: &ChatRequest| {
            let mut left = f.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                Err(BackendError::RateLimited("429".into()))
            } else {
                Ok(BackendReply {
                    text: "ok".into(),
                    finish_reason: FinishReason::Stop,
                })
            }
        }));
        let gw = Gateway::new(flaky, RunMode::Live, None)
            .unwrap()
            .with_sleep(no_sleep);
        assert_eq!(gw.complete(&bundle("x"), &ModelParams::new("m")).unwrap().response_text, "ok");
        assert_eq!(gw.backend_calls(), 3);

        let down = Arc::new(FnBackend(|_: &ChatRequest| Err(BackendError::Transient("503".into()))));
        let gw = Gateway::new(down, RunMode::Live, None)
            .unwrap()
            .with_retry(RetryPolicy::new(4, Duration::from_millis(1), Duration::from_millis(4)))
            .with_sleep(no_sleep);
        assert!(matches!(
            gw.complete(&bundle("x"), &ModelParams::new("m")),
            Err(GatewayError::Exhausted { attempts: 4, .. })
        ));
        assert_eq!(gw.backend_calls(), 4);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let denied = Arc::new(FnBackend(|_: &ChatRequest| Err(BackendError::Auth("401".into()))));
        let gw = Gateway::new(denied, RunMode::Live, None).unwrap().with_sleep(no_sleep);
        assert!(matches!(
            gw.complete(&bundle("x"), &ModelParams::new("m")),
            Err(GatewayError::Auth(_))
        ));
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn truncation_is_flagged_on_the_transcript() {
        let cut = Arc::new(FnBackend(|_: &ChatRequest| {
            Ok(BackendReply {
                text: "<<PER Goe".into(),
                finish_reason: FinishReason::Length,
            })
        }));
        let gw = Gateway::new(cut, RunMode::Live, None).unwrap();
        assert!(gw.complete(&bundle("x"), &ModelParams::new("m")).unwrap().is_truncated());
    }

    #[test]
    fn params_are_validated() {
        let mut p = ModelParams::new("");
        assert!(p.validate().is_err());
        p.model_name = "m".into();
        p.max_output_tokens = 0;
        assert!(p.validate().is_err());
        p.max_output_tokens = 10;
        p.temperature = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn batch_results_keep_input_order() {
        let params = ModelParams::new("m");
        let gw = Gateway::new(echo(), RunMode::Live, None).unwrap();
        let reqs: Vec<ChatRequest> = (0..20)
            .map(|i| ChatRequest::from_bundle(&bundle(&i.to_string()), &params))
            .collect();
        let out = gw.complete_all(&reqs, 4);
        for (i, t) in out.into_iter().enumerate() {
            assert_eq!(t.unwrap().response_text, format!("echo: {i}"));
        }
    }

    #[test]
    fn mode_parsing() {
        for m in [RunMode::Live, RunMode::Record, RunMode::Replay, RunMode::ReplayStrict] {
            assert_eq!(m.to_string().parse::<RunMode>().unwrap(), m);
        }
        assert!("offline".parse::<RunMode>().is_err());
    }
}
