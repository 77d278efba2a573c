use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde_json::json;
use thiserror::Error;

use super::identity::SensorIdentity;
use crate::registry::{
    sha256_hex, ContextFacts, Credentials, IdentificationResult, JoinResponse, RegistrationRecord, SensingStrategy,
    SensorProfile, DIGEST_HEADER,
};

pub const REGISTRY_ATTEMPTS: u32 = 3;
pub const REGISTRY_BACKOFF: Duration = Duration::from_millis(200);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum RegistryClientError {
    #[error("registry unreachable after {attempts} attempt(s): {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("registry answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("plugin {0} not found")]
    NotFound(String),
    #[error("plugin digest mismatch: header {header}, body {actual}")]
    DigestMismatch { header: String, actual: String },
    #[error("plugin response lacks a digest header")]
    MissingDigest,
    #[error("bad registry response: {0}")]
    Decode(String),
}

impl RegistryClientError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, RegistryClientError::Unreachable { .. })
    }
}

/// HTTP client for the registry API. Connection failures and 5xx answers
/// are retried with exponential backoff.
#[derive(Debug, Clone)]
pub struct RegistryClient {
    http: reqwest::Client,
    base: String,
    attempts: u32,
    backoff: Duration,
}

impl RegistryClient {
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::Client::builder().timeout(REQUEST_TIMEOUT).build().expect("http client builds");
        RegistryClient {
            http,
            base: base.into().trim_end_matches('/').to_string(),
            attempts: REGISTRY_ATTEMPTS,
            backoff: REGISTRY_BACKOFF,
        }
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send(
        &self,
        build: impl Fn(&reqwest::Client) -> reqwest::RequestBuilder,
    ) -> Result<reqwest::Response, RegistryClientError> {
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                tokio::time::sleep(self.backoff * 2u32.pow(attempt - 1)).await;
            }
            match build(&self.http).send().await {
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("status {}", resp.status());
                }
                Ok(resp) => return Ok(resp),
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(attempt = attempt + 1, "registry request failed: {last}");
        }
        Err(RegistryClientError::Unreachable { attempts: self.attempts, last })
    }

    async fn json<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, RegistryClientError> {
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(RegistryClientError::Status { status: status.as_u16(), body });
        }
        resp.json().await.map_err(|e| RegistryClientError::Decode(e.to_string()))
    }

    pub async fn health(&self) -> Result<(), RegistryClientError> {
        let url = format!("{}/health", self.base);
        let resp = self.send(|c| c.get(&url)).await?;
        Self::json::<serde_json::Value>(resp).await.map(|_| ())
    }

    pub async fn identify(&self, identity: &SensorIdentity) -> Result<IdentificationResult, RegistryClientError> {
        let query = [("model", identity.model.as_str()), ("mfr", identity.manufacturer.as_str())];
        let url = reqwest::Url::parse_with_params(&format!("{}/identify", self.base), query)
            .map_err(|e| RegistryClientError::Decode(format!("bad registry url: {e}")))?;
        let resp = self.send(|c| c.get(url.clone())).await?;
        Self::json(resp).await
    }

    /// Descriptor text, verified against the served digest.
    pub async fn fetch_plugin(&self, id: &str) -> Result<String, RegistryClientError> {
        let url = format!("{}/plugins/{id}", self.base);
        let resp = self.send(|c| c.get(&url)).await?;
        match resp.status() {
            StatusCode::NOT_FOUND => return Err(RegistryClientError::NotFound(id.to_string())),
            s if !s.is_success() => {
                let body = resp.text().await.unwrap_or_default();
                return Err(RegistryClientError::Status { status: s.as_u16(), body });
            }
            _ => {}
        }
        let header = resp
            .headers()
            .get(DIGEST_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_ascii_lowercase)
            .ok_or(RegistryClientError::MissingDigest)?;
        let body = resp.bytes().await.map_err(|e| RegistryClientError::Decode(e.to_string()))?;
        let actual = sha256_hex(&body);
        if actual != header {
            return Err(RegistryClientError::DigestMismatch { header, actual });
        }
        String::from_utf8(body.to_vec()).map_err(|e| RegistryClientError::Decode(e.to_string()))
    }

    pub async fn register(&self, profile: &SensorProfile) -> Result<RegistrationRecord, RegistryClientError> {
        let url = format!("{}/register", self.base);
        let resp = self.send(|c| c.post(&url).json(profile)).await?;
        Self::json(resp).await
    }

    pub async fn strategy(&self, uid: &str, facts: &ContextFacts) -> Result<SensingStrategy, RegistryClientError> {
        let url = format!("{}/strategy", self.base);
        let body = json!({ "uid": uid, "facts": facts });
        let resp = self.send(|c| c.post(&url).json(&body)).await?;
        Self::json(resp).await
    }

    pub async fn credentials(&self, uid: &str) -> Result<Credentials, RegistryClientError> {
        let url = format!("{}/credentials", self.base);
        let body = json!({ "uid": uid });
        let resp = self.send(|c| c.post(&url).json(&body)).await?;
        Self::json(resp).await
    }

    pub async fn join(&self, uid: &str, token: &str) -> Result<bool, RegistryClientError> {
        let url = format!("{}/join", self.base);
        let body = json!({ "uid": uid, "token": token });
        let resp = self.send(|c| c.post(&url).json(&body)).await?;
        Self::json::<JoinResponse>(resp).await.map(|r| r.accepted)
    }
}
