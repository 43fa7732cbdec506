//! Client for the JSON-over-HTTP model gateway (protocol v1) and the
//! on-disk candidate-pool cache.
//!
//! ```text
//! POST /v1/generate {"model_id", "prompt", "n", "seed"?} -> {"images": [b64 PNG]}
//! POST /v1/caption  {"image": b64 PNG}                 -> {"prompt"}
//! POST /v1/embed    {"image": b64 PNG}                 -> {"vector", "dim"}
//! errors: 4xx/5xx {"error": code, "message"}
//! ```

pub mod cache;

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::attribution::{
    AttribError, BackendError, GenerationBackend, ModelId, Prompt, PromptSource, PromptSourceKind,
};
use crate::imagecore::{Image, ImageError};
use crate::similarity::{FeatureExtractor, FeatureVector, SimilarityError};

pub use cache::{CacheError, CacheStats, FaultStage, PoolCache, PoolManifest};

pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const API_KEY_HEADER: &str = "X-Api-Key";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error {status} {code}: {message}")]
    Remote { status: u16, code: String, message: String },
    #[error("expected {expected} images, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Remote { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    pub api_key: Option<String>,
}

impl GatewayConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        GatewayConfig {
            base_url: base_url.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            retries: DEFAULT_RETRIES,
            backoff_ms: 200,
            api_key: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig("timeout_ms must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::InvalidConfig(format!(
                "base_url must start with http:// or https://, got {:?}",
                self.base_url
            )));
        }
        Ok(())
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Thread-safe gateway client.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    config: GatewayConfig,
    agent: ureq::Agent,
}

fn encode_image(image: &Image) -> Result<String, GatewayError> {
    Ok(B64.encode(image.encode_png()?))
}

fn decode_image(b64: &str) -> Result<Image, GatewayError> {
    let bytes = B64
        .decode(b64)
        .map_err(|e| GatewayError::Protocol(format!("invalid base64 image: {e}")))?;
    Image::decode(&bytes).map_err(|e| GatewayError::Protocol(format!("undecodable image: {e}")))
}

fn field<'a>(body: &'a Value, name: &str) -> Result<&'a Value, GatewayError> {
    body.get(name)
        .ok_or_else(|| GatewayError::Protocol(format!("response is missing `{name}`")))
}

impl GatewayClient {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(GatewayClient { config, agent })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn post_once(&self, url: &str, payload: &str) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(url).content_type("application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header(API_KEY_HEADER, key);
        }
        let mut resp = req.send(payload).map_err(|e| match e {
            ureq::Error::Timeout(t) => GatewayError::Transport(format!("timeout ({t:?})")),
            other => GatewayError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(format!("reading response body: {e}")))?;
        if !(200..300).contains(&status) {
            let parsed: Option<Value> = serde_json::from_str(&text).ok();
            let get = |k: &str| {
                parsed
                    .as_ref()
                    .and_then(|v| v.get(k))
                    .and_then(Value::as_str)
                    .map(str::to_string)
            };
            return Err(GatewayError::Remote {
                status,
                code: get("error").unwrap_or_else(|| "unknown".into()),
                message: get("message").unwrap_or(text),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(format!("malformed JSON body: {e}")))
    }

    /// POSTs `body` with retries on transport errors and 5xx responses. The
    /// serialized payload is built once and resent unchanged.
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.config.endpoint(path);
        let payload = body.to_string();
        let mut delay = self.config.backoff_ms;
        let mut attempt = 0;
        loop {
            match self.post_once(&url, &payload) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    warn!(
                        "{path} failed ({e}); retry {attempt}/{} in {delay} ms",
                        self.config.retries
                    );
                    thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn generate(
        &self,
        model_id: &str,
        prompt: &str,
        n: usize,
        seed: Option<u64>,
    ) -> Result<Vec<Image>, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidConfig("n must be at least 1".into()));
        }
        let mut body = json!({"model_id": model_id, "prompt": prompt, "n": n});
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        debug!("generate model={model_id} n={n} seed={seed:?}");
        let resp = self.post("/v1/generate", &body)?;
        let images = field(&resp, "images")?
            .as_array()
            .ok_or_else(|| GatewayError::Protocol("`images` is not an array".into()))?;
        if images.len() != n {
            return Err(GatewayError::CountMismatch {
                expected: n,
                got: images.len(),
            });
        }
        images
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| GatewayError::Protocol("image entry is not a string".into()))
                    .and_then(decode_image)
            })
            .collect()
    }

    pub fn caption(&self, image: &Image) -> Result<Prompt, GatewayError> {
        let resp = self.post("/v1/caption", &json!({"image": encode_image(image)?}))?;
        let text = field(&resp, "prompt")?
            .as_str()
            .ok_or_else(|| GatewayError::Protocol("`prompt` is not a string".into()))?;
        Prompt::new(text, PromptSourceKind::Generated)
            .map_err(|_| GatewayError::Protocol("empty prompt in caption response".into()))
    }

    pub fn embed(&self, image: &Image) -> Result<FeatureVector, GatewayError> {
        let resp = self.post("/v1/embed", &json!({"image": encode_image(image)?}))?;
        let raw = field(&resp, "vector")?
            .as_array()
            .ok_or_else(|| GatewayError::Protocol("`vector` is not an array".into()))?;
        let dim = field(&resp, "dim")?
            .as_u64()
            .ok_or_else(|| GatewayError::Protocol("`dim` is not an integer".into()))?;
        if dim as usize != raw.len() {
            return Err(GatewayError::Protocol(format!(
                "dim {dim} but vector has {} entries",
                raw.len()
            )));
        }
        // serde_json cannot represent NaN, so services emit it as null or a string.
        let values = raw
            .iter()
            .map(|v| match v {
                Value::Number(n) => n.as_f64().ok_or(GatewayError::NonFinite),
                Value::Null => Err(GatewayError::NonFinite),
                Value::String(s) => match s.parse::<f64>() {
                    Ok(f) if !f.is_finite() => Err(GatewayError::NonFinite),
                    _ => Err(GatewayError::Protocol(format!("vector entry {s:?} is not a number"))),
                },
                other => Err(GatewayError::Protocol(format!("vector entry {other} is not a number"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        FeatureVector::new("embed", values).map_err(|e| match e {
            SimilarityError::NonFinite => GatewayError::NonFinite,
            other => GatewayError::Protocol(other.to_string()),
        })
    }
}

pub fn remote_generate(
    cfg: &GatewayConfig,
    model_id: &str,
    prompt: &str,
    n: usize,
    seed: Option<u64>,
) -> Result<Vec<Image>, GatewayError> {
    GatewayClient::new(cfg.clone())?.generate(model_id, prompt, n, seed)
}

pub fn remote_caption(cfg: &GatewayConfig, image: &Image) -> Result<Prompt, GatewayError> {
    GatewayClient::new(cfg.clone())?.caption(image)
}

pub fn remote_embed(cfg: &GatewayConfig, image: &Image) -> Result<FeatureVector, GatewayError> {
    GatewayClient::new(cfg.clone())?.embed(image)
}

/// Generation backend that requests one seeded image per pool index.
#[derive(Debug, Clone)]
pub struct GatewayBackend {
    client: GatewayClient,
}

impl GatewayBackend {
    pub fn new(client: GatewayClient) -> Self {
        GatewayBackend { client }
    }
}

impl GenerationBackend for GatewayBackend {
    fn generate(&self, model: &ModelId, prompt: &Prompt, seeds: &[u64]) -> Result<Vec<Image>, BackendError> {
        seeds
            .iter()
            .map(|&seed| {
                let mut imgs = self
                    .client
                    .generate(model.as_str(), prompt.text(), 1, Some(seed))
                    .map_err(|e| match e {
                        GatewayError::Remote { ref code, .. } if code == "unknown_model" => {
                            BackendError::UnknownModel(model.to_string())
                        }
                        other => BackendError::Failed(other.to_string()),
                    })?;
                Ok(imgs.remove(0))
            })
            .collect()
    }
}

/// Prompt inversion through the caption endpoint.
#[derive(Debug, Clone)]
pub struct RemoteCaption {
    client: GatewayClient,
}

impl RemoteCaption {
    pub fn new(client: GatewayClient) -> Self {
        RemoteCaption { client }
    }
}

impl PromptSource for RemoteCaption {
    fn invert(&self, image: &Image) -> Result<Prompt, AttribError> {
        self.client
            .caption(image)
            .map_err(|e| AttribError::PromptUnavailable(e.to_string()))
    }
}

/// Feature extraction through the embed endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbed {
    client: GatewayClient,
}

impl RemoteEmbed {
    pub fn new(client: GatewayClient) -> Self {
        RemoteEmbed { client }
    }
}

impl FeatureExtractor for RemoteEmbed {
    fn id(&self) -> &str {
        "embed"
    }

    fn extract(&self, image: &Image) -> Result<FeatureVector, SimilarityError> {
        self.client.embed(image).map_err(|e| match e {
            GatewayError::NonFinite => SimilarityError::NonFinite,
            other => SimilarityError::Extraction(other.to_string()),
        })
    }
}

/// Scripted HTTP/1.1 server for exercising the client.
#[cfg(any(test, feature = "mock-server"))]
pub mod mock {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::{Arc, Mutex};
    use std::thread;
    use std::time::Duration;

    #[derive(Debug, Clone)]
    pub struct Recorded {
        pub path: String,
        pub headers: Vec<(String, String)>,
        pub body: String,
    }

    impl Recorded {
        pub fn header(&self, name: &str) -> Option<&str> {
            self.headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.as_str())
        }
    }

    #[derive(Debug, Clone)]
    pub enum Reply {
        Json(u16, String),
        /// Sleep before answering, to trigger client timeouts.
        Delay(Duration, u16, String),
    }

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<Recorded>>>,
    }

    fn read_request(stream: &mut TcpStream) -> Option<Recorded> {
        let mut reader = BufReader::new(stream.try_clone().ok()?);
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let path = line.split_whitespace().nth(1)?.to_string();
        let mut headers = Vec::new();
        let mut len = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).ok()?;
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.parse().ok()?;
                }
                headers.push((k, v));
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).ok()?;
        Some(Recorded {
            path,
            headers,
            body: String::from_utf8_lossy(&body).into_owned(),
        })
    }

    fn reason(status: u16) -> &'static str {
        match status {
            200 => "OK",
            400 => "Bad Request",
            404 => "Not Found",
            500 => "Internal Server Error",
            _ => "Status",
        }
    }

    impl MockServer {
        /// Serves `replies` in order, then answers 500 to anything further.
        pub fn start(replies: Vec<Reply>) -> MockServer {
            Self::start_with(move |i, _| replies.get(i).cloned().unwrap_or(Reply::Json(500, "{}".into())))
        }

        /// Answers request `i` with `handler(i, &request)`.
        pub fn start_with<F>(handler: F) -> MockServer
        where
            F: Fn(usize, &Recorded) -> Reply + Send + 'static,
        {
            let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
            let url = format!("http://{}", listener.local_addr().expect("local addr"));
            let requests = Arc::new(Mutex::new(Vec::new()));
            let log = Arc::clone(&requests);
            thread::spawn(move || {
                for (i, stream) in listener.incoming().enumerate() {
                    let Ok(mut stream) = stream else { continue };
                    let Some(req) = read_request(&mut stream) else { continue };
                    let reply = handler(i, &req);
                    log.lock().expect("mock log").push(req);
                    let (status, body) = match reply {
                        Reply::Json(s, b) => (s, b),
                        Reply::Delay(d, s, b) => {
                            thread::sleep(d);
                            (s, b)
                        }
                    };
                    let head = format!(
                        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        reason(status),
                        body.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(body.as_bytes());
                    let _ = stream.flush();
                }
            });
            MockServer { url, requests }
        }

        pub fn recorded(&self) -> Vec<Recorded> {
            self.requests.lock().expect("mock log").clone()
        }
    }
}
