use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Caption, CaptionRequest, Captioner, ClientError, GenerationOutcome, GenerationRequest,
    Generator, ServiceEndpoint,
};

fn agent(endpoint: &ServiceEndpoint) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(endpoint.timeout()))
        .http_status_as_error(false)
        .build()
        .into()
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

/// POSTs `body` as JSON, retrying transport errors, 429 and 5xx per the
/// endpoint's schedule. Returns the decoded reply and the attempt count.
fn post_json<B: Serialize, R: DeserializeOwned>(
    endpoint: &ServiceEndpoint,
    agent: &ureq::Agent,
    route: &str,
    body: &B,
) -> Result<(R, u32), ClientError> {
    let url = format!("{}/{route}", endpoint.base_url.trim_end_matches('/'));
    let token = endpoint.token()?;
    let total = endpoint.max_retries + 1;
    let mut last = String::new();
    for attempt in 1..=total {
        if attempt > 1 {
            std::thread::sleep(endpoint.backoff(attempt as usize - 2));
        }
        let mut req = agent.post(&url);
        if let Some(t) = &token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    let value = resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| ClientError::Response(e.to_string()))?;
                    return Ok((value, attempt));
                }
                if !retryable(status) || attempt == total {
                    return Err(ClientError::Status {
                        status,
                        attempts: attempt,
                    });
                }
                log::warn!("{url}: HTTP {status}, attempt {attempt}/{total}");
            }
            Err(e) => {
                last = e.to_string();
                log::warn!("{url}: {last}, attempt {attempt}/{total}");
            }
        }
    }
    Err(ClientError::Transport {
        attempts: total,
        message: last,
    })
}

#[derive(Serialize)]
struct CaptionBody<'a> {
    image_ref: &'a str,
    mode: super::CaptionMode,
    template_id: &'a str,
    template_digest: String,
    instruction: &'a str,
}

#[derive(Deserialize)]
struct CaptionReply {
    text: String,
}

/// `POST {base_url}/caption` with the image ref and instruction, expecting `{"text": …}`.
pub struct HttpCaptioner {
    endpoint: ServiceEndpoint,
    agent: ureq::Agent,
}

impl HttpCaptioner {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, ClientError> {
        check(&endpoint)?;
        Ok(Self {
            agent: agent(&endpoint),
            endpoint,
        })
    }
}

fn check(endpoint: &ServiceEndpoint) -> Result<(), ClientError> {
    if endpoint.base_url.is_empty() {
        return Err(ClientError::Config("base_url is empty".into()));
    }
    match endpoint.diagnostics().into_iter().next() {
        Some((field, msg)) => Err(ClientError::Config(format!("{field}: {msg}"))),
        None => Ok(()),
    }
}

impl Captioner for HttpCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<Caption, ClientError> {
        let template = request.template()?;
        let body = CaptionBody {
            image_ref: &request.image_ref,
            mode: request.mode,
            template_id: template.id,
            template_digest: template.digest(),
            instruction: template.text,
        };
        let (reply, attempts): (CaptionReply, u32) =
            post_json(&self.endpoint, &self.agent, "caption", &body)?;
        Ok(Caption {
            text: reply.text,
            attempts,
        })
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    request_id: u64,
    prompt: &'a str,
    steps: u32,
    cfg_scale: f64,
    seed: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct GenerateReply {
    #[serde(default)]
    image_ref: Option<String>,
    #[serde(default)]
    refused: Option<String>,
}

/// `POST {base_url}/generate`, expecting `{"image_ref": …}` or `{"refused": reason}`.
pub struct HttpGenerator {
    endpoint: ServiceEndpoint,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, ClientError> {
        check(&endpoint)?;
        Ok(Self {
            agent: agent(&endpoint),
            endpoint,
        })
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationOutcome, ClientError> {
        request.validate()?;
        let body = GenerateBody {
            request_id: request.request_id,
            prompt: &request.combined_prompt,
            steps: request.steps,
            cfg_scale: request.cfg_scale,
            seed: request.seed,
            width: request.resolution.0,
            height: request.resolution.1,
        };
        let (reply, attempts): (GenerateReply, u32) =
            post_json(&self.endpoint, &self.agent, "generate", &body)?;
        match (reply.image_ref, reply.refused) {
            (_, Some(reason)) => Err(ClientError::Refused { reason }),
            (Some(image_ref), None) => Ok(GenerationOutcome {
                image_ref,
                attempts,
            }),
            (None, None) => Err(ClientError::Response(
                "reply has neither image_ref nor refused".into(),
            )),
        }
    }
}
