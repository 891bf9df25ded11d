//! Blocking JSON-over-HTTP client shared by the synonym and judge providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("provider at {url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("provider at {url} sent an unexpected body: {message}")]
    Body { url: String, message: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    url: String,
    client: reqwest::blocking::Client,
}

impl JsonEndpoint {
    /// `base` is the provider root; `route` is appended (e.g. `/judge`).
    pub fn new(base: &str, route: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let url = format!("{}{}", base.trim_end_matches('/'), route);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        Ok(JsonEndpoint { url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        let resp = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transport {
                url: self.url.clone(),
                message: e.to_string(),
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Status {
                url: self.url.clone(),
                status: status.as_u16(),
            });
        }
        resp.json().map_err(|e| ProviderError::Body {
            url: self.url.clone(),
            message: e.to_string(),
        })
    }
}
