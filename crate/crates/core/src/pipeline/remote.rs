//! HTTP client for a web-search service.
//!
//! Wire protocol: `POST {endpoint}` with body `{"query": ..., "num_results": n}`;
//! the response is a JSON array of `{"text": ..., "score": ...}`. The API key,
//! when set, is sent in the `X-API-KEY` header.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::backend::{Passage, TextBackend};
use crate::error::{Error, Result};

/// Environment variable holding the search service key.
pub const API_KEY_ENV: &str = "MMRAG_SEARCH_API_KEY";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further attempt.
    pub backoff_base: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(10),
            max_retries: 2,
            backoff_base: Duration::from_millis(250),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    num_results: usize,
}

#[derive(Deserialize)]
struct SearchHit {
    text: String,
    #[serde(default)]
    score: f64,
}

/// Decodes a search response body, dropping empty passages and keeping at
/// most `limit` in server order.
pub fn parse_search_response(body: &[u8], limit: usize) -> Result<Vec<Passage>> {
    let hits: Vec<SearchHit> = serde_json::from_slice(body)
        .map_err(|e| Error::Backend(format!("malformed search response: {e}")))?;
    Ok(hits
        .into_iter()
        .filter(|h| !h.text.trim().is_empty())
        .take(limit)
        .map(|h| Passage {
            text: h.text,
            score: if h.score.is_finite() { h.score } else { 0.0 },
        })
        .collect())
}

pub struct RemoteSearchBackend {
    client: Client,
    config: RemoteConfig,
}

enum Attempt {
    Done(Vec<Passage>),
    Retry(String),
    Fail(String),
}

impl RemoteSearchBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Backend(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client, config })
    }

    fn attempt(&self, query: &str, limit: usize) -> Attempt {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("X-API-KEY", key);
        }
        let body = serde_json::to_vec(&SearchRequest {
            query,
            num_results: limit,
        })
        .expect("request serializes");
        let resp = match req.body(body).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport error: {e}")),
        };
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(format!("server returned {status}"));
        }
        if !status.is_success() {
            return Attempt::Fail(format!("server returned {status}"));
        }
        match resp.bytes() {
            Ok(bytes) => match parse_search_response(&bytes, limit) {
                Ok(p) => Attempt::Done(p),
                Err(e) => Attempt::Fail(e.to_string()),
            },
            Err(e) => Attempt::Retry(format!("reading body: {e}")),
        }
    }
}

impl TextBackend for RemoteSearchBackend {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<Passage>> {
        let mut delay = self.config.backoff_base;
        let mut attempt = 0;
        loop {
            match self.attempt(query, limit) {
                Attempt::Done(p) => return Ok(p),
                Attempt::Fail(msg) => return Err(Error::Backend(msg)),
                Attempt::Retry(msg) if attempt >= self.config.max_retries => {
                    return Err(Error::Backend(format!(
                        "{msg} (after {} attempts)",
                        attempt + 1
                    )))
                }
                Attempt::Retry(_) => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn benefits_from_concurrency(&self) -> bool {
        true
    }
}
