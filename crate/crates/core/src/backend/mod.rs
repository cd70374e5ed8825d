//! Model-backend abstraction: captioning and image generation.
//!
//! Two implementations per trait: an HTTP client for real services and a
//! deterministic in-process stub for tests and offline runs. Selection is by
//! endpoint scheme ("stub://..." vs "http://..."). All calls are blocking;
//! parallelism comes from [`bounded_map`], which never exceeds the
//! configured number of in-flight requests.

mod http;
mod stub;

pub use http::{HttpCaptioner, HttpGenerator};
pub use stub::{StubCaptioner, StubGenerator, STUB_IMAGE_MAGIC};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Failure surfaced by a backend call, after retries were exhausted.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status} after {attempts} attempt(s): {message}")]
    Http {
        attempts: u32,
        status: u16,
        message: String,
    },
    #[error("malformed backend response: {message}")]
    Protocol { message: String },
    #[error("backend misconfigured: {message}")]
    Config { message: String },
}

impl BackendError {
    /// Transient failures worth retrying: transport errors and the usual
    /// overload/gateway statuses.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Http { status, .. } => matches!(status, 429 | 502 | 503 | 504),
            _ => false,
        }
    }

    fn set_attempts(&mut self, n: u32) {
        match self {
            BackendError::Transport { attempts, .. } => *attempts = n,
            BackendError::Http { attempts, .. } => *attempts = n,
            _ => {}
        }
    }
}

/// One captioning call: the image plus the exact prompt to ask about it.
#[derive(Debug, Clone)]
pub struct CaptionRequest {
    pub image_id: String,
    pub image_bytes: Vec<u8>,
    pub prompt: String,
}

impl CaptionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.image_bytes.is_empty() {
            return Err(BackendError::Config {
                message: format!("empty image bytes for {}", self.image_id),
            });
        }
        if self.prompt.is_empty() {
            return Err(BackendError::Config {
                message: format!("empty prompt for {}", self.image_id),
            });
        }
        Ok(())
    }
}

/// A caption, tagged with the image it describes and the backend that
/// produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub image_id: String,
    pub text: String,
    pub model_name: String,
}

/// One generation call. The caller owns seed derivation; the backend must
/// be deterministic in (prompt, seed, params) where the service allows.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: String,
    pub seed: u64,
    pub params: GenerationParams,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::Config {
                message: "empty generation prompt".into(),
            });
        }
        Ok(())
    }
}

/// Diffusion sampling knobs. Defaults are the pipeline-wide inference
/// settings; jobs may override per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default = "default_guidance_scale")]
    pub guidance_scale: f64,
    #[serde(default = "default_num_steps")]
    pub num_steps: u32,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
}

fn default_guidance_scale() -> f64 {
    2.0
}
fn default_num_steps() -> u32 {
    50
}
fn default_side() -> u32 {
    512
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            guidance_scale: default_guidance_scale(),
            num_steps: default_num_steps(),
            width: default_side(),
            height: default_side(),
        }
    }
}

/// Connection settings for one backend endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// "stub://name" selects the in-process stub; "http(s)://..." the HTTP client.
    pub endpoint: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// First retry sleeps this long; each later retry doubles it.
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    /// Name of the environment variable holding the bearer token, if the
    /// service needs one.
    #[serde(default)]
    pub auth_token_env: Option<String>,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_backoff_base_ms() -> u64 {
    250
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "stub://default".into(),
            max_in_flight: default_max_in_flight(),
            max_retries: default_max_retries(),
            timeout_ms: default_timeout_ms(),
            backoff_base_ms: default_backoff_base_ms(),
            auth_token_env: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config {
                message: "max_in_flight must be >= 1".into(),
            });
        }
        if self.timeout_ms == 0 {
            return Err(BackendError::Config {
                message: "timeout_ms must be >= 1".into(),
            });
        }
        if self.endpoint.is_empty() {
            return Err(BackendError::Config {
                message: "endpoint is empty".into(),
            });
        }
        Ok(())
    }

    fn is_stub(&self) -> bool {
        self.endpoint.starts_with("stub://")
    }

    fn is_http(&self) -> bool {
        self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")
    }
}

/// Produces a caption for a caption request.
pub trait CaptionBackend: Send + Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, BackendError>;
    fn name(&self) -> &str;
}

/// Produces encoded image bytes for a generation request.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, BackendError>;
    fn name(&self) -> &str;
}

/// Instantiate the captioner selected by the endpoint scheme.
pub fn make_caption_backend(
    config: &BackendConfig,
) -> Result<Box<dyn CaptionBackend>, BackendError> {
    config.validate()?;
    if config.is_stub() {
        Ok(Box::new(StubCaptioner::new(&config.endpoint)))
    } else if config.is_http() {
        Ok(Box::new(HttpCaptioner::new(config)?))
    } else {
        Err(BackendError::Config {
            message: format!("unsupported endpoint scheme: {}", config.endpoint),
        })
    }
}

/// Instantiate the generator selected by the endpoint scheme.
pub fn make_generation_backend(
    config: &BackendConfig,
) -> Result<Box<dyn GenerationBackend>, BackendError> {
    config.validate()?;
    if config.is_stub() {
        Ok(Box::new(StubGenerator::new(&config.endpoint)))
    } else if config.is_http() {
        Ok(Box::new(HttpGenerator::new(config)?))
    } else {
        Err(BackendError::Config {
            message: format!("unsupported endpoint scheme: {}", config.endpoint),
        })
    }
}

/// Generate every plan item with at most `max_in_flight` calls in flight.
/// Results come back in plan order; failures stay itemized so one bad item
/// cannot erase completed work.
pub fn dispatch_plan(
    plan: &crate::sampler::GenerationPlan,
    params: &GenerationParams,
    backend: &dyn GenerationBackend,
    max_in_flight: usize,
) -> Vec<Result<Vec<u8>, BackendError>> {
    bounded_map(&plan.items, max_in_flight, |item| {
        backend.generate(&GenerationRequest {
            prompt: item.prompt.clone(),
            seed: item.seed,
            params: params.clone(),
        })
    })
}

/// Run `op` up to `max_retries + 1` times, sleeping `backoff_base * 2^i`
/// between tries, retrying only transient failures. The returned error
/// carries the true attempt count.
pub fn with_retries<T>(
    max_retries: u32,
    backoff_base: Duration,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match op() {
            Ok(value) => return Ok(value),
            Err(mut err) => {
                if err.is_retryable() && attempt <= max_retries {
                    let backoff = backoff_base.saturating_mul(1u32 << (attempt - 1).min(16));
                    thread::sleep(backoff);
                    continue;
                }
                err.set_attempts(attempt);
                return Err(err);
            }
        }
    }
}

/// Apply `f` to every item with at most `max_in_flight` workers. Results
/// come back in input order; per-item failures stay per-item.
pub fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    assert!(max_in_flight >= 1, "max_in_flight must be >= 1");
    let mut slots: Vec<Option<R>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.min(items.len().max(1));
    {
        let slots_ptr = SlotWriter::new(&mut slots);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= items.len() {
                        break;
                    }
                    let result = f(&items[idx]);
                    // Each index is claimed by exactly one worker.
                    unsafe { slots_ptr.write(idx, result) };
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|slot| slot.expect("every index was claimed"))
        .collect()
}

/// Shared mutable access to disjoint vector slots across scoped threads.
/// Safe because the atomic work counter hands each index to one worker.
struct SlotWriter<R> {
    ptr: *mut Option<R>,
}

unsafe impl<R: Send> Send for SlotWriter<R> {}
unsafe impl<R: Send> Sync for SlotWriter<R> {}

impl<R> SlotWriter<R> {
    fn new(slots: &mut [Option<R>]) -> Self {
        SlotWriter {
            ptr: slots.as_mut_ptr(),
        }
    }

    unsafe fn write(&self, idx: usize, value: R) {
        *self.ptr.add(idx) = Some(value);
    }
}
