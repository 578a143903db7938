//! Captioner and generator service boundaries, with offline mocks.
//!
//! Requests go through [`Captioner`] and [`Generator`]. The HTTP
//! implementations speak a small JSON protocol; the mocks are deterministic
//! and need no network.

mod calls;
mod http;
mod mock;
mod templates;
mod validate;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::PromptKind;

pub use calls::{caption_validated, run_bounded, CallLog, CallRecord, CallStatus};
pub use http::{HttpCaptioner, HttpGenerator};
pub use mock::{
    decode_ppm, encode_ppm, mock_style_features, synthetic_image_ref, HashingTextEmbedder,
    MockCaptioner, MockGenerator, RgbImage, STYLE_FEATURE_DIM,
};
pub use templates::{template_by_id, template_for, Template, CONTENT_TEMPLATE, STYLE_TEMPLATE};
pub use validate::{validate_caption, CaptionRules};

pub const CAPTION_URL_VAR: &str = "MEGACURATE_CAPTION_URL";
pub const GEN_URL_VAR: &str = "MEGACURATE_GEN_URL";
/// Names the environment variable that holds the bearer token.
pub const TOKEN_VAR_VAR: &str = "MEGACURATE_TOKEN_VAR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("generation refused: {reason}")]
    Refused { reason: String },
    #[error("caption rejected: {reason}")]
    Validation { reason: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("cannot resolve image {0}")]
    Unresolvable(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("endpoint config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    Style,
    Content,
}

impl CaptionMode {
    pub fn prompt_kind(self) -> PromptKind {
        match self {
            CaptionMode::Style => PromptKind::Style,
            CaptionMode::Content => PromptKind::Content,
        }
    }
}

impl std::str::FromStr for CaptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "style" => Ok(CaptionMode::Style),
            "content" => Ok(CaptionMode::Content),
            other => Err(format!("unknown caption mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_id: u64,
    pub image_ref: String,
    pub mode: CaptionMode,
    pub template_id: String,
}

impl CaptionRequest {
    /// Request using the current template for `mode`.
    pub fn new(image_id: u64, image_ref: impl Into<String>, mode: CaptionMode) -> Self {
        Self {
            image_id,
            image_ref: image_ref.into(),
            mode,
            template_id: template_for(mode).id.to_string(),
        }
    }

    pub fn template(&self) -> Result<&'static Template, ClientError> {
        let t = template_by_id(&self.template_id).ok_or_else(|| {
            ClientError::Request(format!("unknown template {}", self.template_id))
        })?;
        if t.mode != self.mode {
            return Err(ClientError::Request(format!(
                "template {} is for {:?} captions, request is {:?}",
                t.id, t.mode, self.mode
            )));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Combination id; names the output.
    pub request_id: u64,
    pub combined_prompt: String,
    pub steps: u32,
    pub cfg_scale: f64,
    pub seed: u64,
    pub resolution: (u32, u32),
}

impl GenerationRequest {
    pub const DEFAULT_STEPS: u32 = 40;
    pub const DEFAULT_CFG_SCALE: f64 = 4.0;
    pub const DEFAULT_RESOLUTION: (u32, u32) = (1024, 1024);

    pub fn new(request_id: u64, combined_prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            request_id,
            combined_prompt: combined_prompt.into(),
            steps: Self::DEFAULT_STEPS,
            cfg_scale: Self::DEFAULT_CFG_SCALE,
            seed,
            resolution: Self::DEFAULT_RESOLUTION,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.steps < 1 {
            return Err(ClientError::Request("steps must be at least 1".into()));
        }
        if !(self.cfg_scale > 0.0 && self.cfg_scale.is_finite()) {
            return Err(ClientError::Request(format!(
                "cfg_scale must be positive, got {}",
                self.cfg_scale
            )));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(ClientError::Request("resolution must be non-zero".into()));
        }
        if self.combined_prompt.trim().is_empty() {
            return Err(ClientError::Request("empty prompt".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub image_ref: String,
    pub attempts: u32,
}

pub trait Captioner: Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<Caption, ClientError>;
}

pub trait Generator: Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationOutcome, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceEndpoint {
    pub base_url: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Delay before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            token_env: None,
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: vec![500, 2_000, 8_000],
        }
    }
}

impl ServiceEndpoint {
    /// Endpoint from `url_var` and [`TOKEN_VAR_VAR`], or `None` when the URL is unset.
    pub fn from_env(url_var: &str) -> Option<Self> {
        let base_url = std::env::var(url_var).ok().filter(|u| !u.is_empty())?;
        Some(Self {
            base_url,
            token_env: std::env::var(TOKEN_VAR_VAR).ok().filter(|v| !v.is_empty()),
            ..Self::default()
        })
    }

    pub fn diagnostics(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.timeout_ms == 0 {
            out.push(("timeout_ms", "must be positive".to_string()));
        }
        if !self.base_url.is_empty()
            && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://"))
        {
            out.push((
                "base_url",
                format!("{:?} is not an http(s) URL", self.base_url),
            ));
        }
        out
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn backoff(&self, retry: usize) -> Duration {
        match self.backoff_ms.len() {
            0 => Duration::ZERO,
            n => Duration::from_millis(self.backoff_ms[retry.min(n - 1)]),
        }
    }

    fn token(&self) -> Result<Option<String>, ClientError> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::Config(format!("token variable {var} is not set"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_template_follows_mode() {
        let r = CaptionRequest::new(1, "a.png", CaptionMode::Style);
        assert_eq!(r.template().unwrap().mode, CaptionMode::Style);
        let bad = CaptionRequest {
            template_id: CONTENT_TEMPLATE.id.into(),
            ..r
        };
        assert!(matches!(bad.template(), Err(ClientError::Request(_))));
    }

    #[test]
    fn generation_defaults_and_checks() {
        let r = GenerationRequest::new(1, "x", 9);
        assert_eq!((r.steps, r.cfg_scale), (40, 4.0));
        r.validate().unwrap();
        assert!(GenerationRequest {
            steps: 0,
            ..r.clone()
        }
        .validate()
        .is_err());
        assert!(GenerationRequest {
            cfg_scale: 0.0,
            ..r
        }
        .validate()
        .is_err());
    }

    #[test]
    fn endpoint_backoff_and_diagnostics() {
        let e = ServiceEndpoint {
            backoff_ms: vec![10, 20],
            ..Default::default()
        };
        assert_eq!(e.backoff(0), Duration::from_millis(10));
        assert_eq!(e.backoff(5), Duration::from_millis(20));
        assert!(ServiceEndpoint::default().diagnostics().is_empty());
        let bad = ServiceEndpoint {
            timeout_ms: 0,
            base_url: "ftp://x".into(),
            ..Default::default()
        };
        assert_eq!(bad.diagnostics().len(), 2);
    }
}
