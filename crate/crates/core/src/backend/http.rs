//! Blocking HTTP clients for remote caption and generation services.
//!
//! Wire contract (JSON over POST, one route per backend kind):
//!   POST {endpoint}/caption  {image_b64, prompt}          -> {text}
//!   POST {endpoint}/generate {prompt, guidance_scale,
//!                             num_steps, seed,
//!                             width, height}              -> {image_b64}
//!
//! Auth is a bearer token read from the environment variable named in the
//! config, when one is named. Transient failures (transport errors, HTTP
//! 429/502/503/504) are retried with exponential backoff; other statuses
//! fail fast.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{
    with_retries, BackendConfig, BackendError, CaptionBackend, CaptionRequest, CaptionResponse,
    GenerationBackend, GenerationRequest,
};

#[derive(Serialize)]
struct CaptionWire<'a> {
    image_b64: String,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CaptionReply {
    text: String,
}

#[derive(Serialize)]
struct GenerationWire<'a> {
    prompt: &'a str,
    guidance_scale: f64,
    num_steps: u32,
    seed: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct GenerationReply {
    image_b64: String,
}

struct HttpClient {
    client: reqwest::blocking::Client,
    base: String,
    name: String,
    token: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
}

impl HttpClient {
    fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config {
                message: format!("failed to build HTTP client: {e}"),
            })?;
        let token = match config.auth_token_env.as_deref().filter(|v| !v.is_empty()) {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Config {
                message: format!("auth environment variable {var} is not set"),
            })?),
            None => None,
        };
        let base = config.endpoint.trim_end_matches('/').to_string();
        Ok(HttpClient {
            client,
            name: base.clone(),
            base,
            token,
            max_retries: config.max_retries,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
        })
    }

    fn post_json<Req: Serialize, Reply: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        request: &Req,
    ) -> Result<Reply, BackendError> {
        let url = format!("{}/{route}", self.base);
        with_retries(self.max_retries, self.backoff_base, || {
            let mut builder = self.client.post(&url).json(request);
            if let Some(token) = &self.token {
                builder = builder.bearer_auth(token);
            }
            let response = builder.send().map_err(|e| BackendError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
            let status = response.status();
            let body = response.text().map_err(|e| BackendError::Transport {
                attempts: 1,
                message: format!("failed reading response body: {e}"),
            })?;
            if !status.is_success() {
                let mut message = body;
                message.truncate(200);
                return Err(BackendError::Http {
                    attempts: 1,
                    status: status.as_u16(),
                    message,
                });
            }
            serde_json::from_str(&body).map_err(|e| BackendError::Protocol {
                message: format!("bad JSON reply: {e}"),
            })
        })
    }
}

/// Captioning client for a remote vision-language service.
pub struct HttpCaptioner {
    inner: HttpClient,
}

impl HttpCaptioner {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        Ok(HttpCaptioner {
            inner: HttpClient::new(config)?,
        })
    }
}

impl CaptionBackend for HttpCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        request.validate()?;
        let wire = CaptionWire {
            image_b64: BASE64.encode(&request.image_bytes),
            prompt: &request.prompt,
        };
        let reply: CaptionReply = self.inner.post_json("caption", &wire)?;
        if reply.text.trim().is_empty() {
            return Err(BackendError::Protocol {
                message: format!("empty caption for {}", request.image_id),
            });
        }
        Ok(CaptionResponse {
            image_id: request.image_id.clone(),
            text: reply.text,
            model_name: self.inner.name.clone(),
        })
    }

    fn name(&self) -> &str {
        &self.inner.name
    }
}

/// Generation client for a remote text-to-image service.
pub struct HttpGenerator {
    inner: HttpClient,
}

impl HttpGenerator {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        Ok(HttpGenerator {
            inner: HttpClient::new(config)?,
        })
    }
}

impl GenerationBackend for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, BackendError> {
        request.validate()?;
        let wire = GenerationWire {
            prompt: &request.prompt,
            guidance_scale: request.params.guidance_scale,
            num_steps: request.params.num_steps,
            seed: request.seed,
            width: request.params.width,
            height: request.params.height,
        };
        let reply: GenerationReply = self.inner.post_json("generate", &wire)?;
        BASE64
            .decode(&reply.image_b64)
            .map_err(|e| BackendError::Protocol {
                message: format!("image_b64 is not valid base64: {e}"),
            })
    }

    fn name(&self) -> &str {
        &self.inner.name
    }
}
