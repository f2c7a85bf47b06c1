//! HTTP transports: live (reqwest), recording, and content-addressed replay.
//!
//! Fixture files are JSON lines, one request/response pair per line, keyed by
//! a fingerprint of the request method, URL and body. Headers are never
//! recorded, so credentials do not leak into fixtures.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    #[serde(skip)]
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpRequest {
    pub fn post_json(url: impl Into<String>, body: String) -> Self {
        Self {
            method: "POST".into(),
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body,
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.method, &self.url, &self.body] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("no recorded fixture for request {0}")]
    NoFixture(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Network(_))
    }
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let method = reqwest::Method::from_bytes(req.method.as_bytes())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let mut builder = self.client.request(method, &req.url).body(req.body.clone());
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        let resp = builder
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: String,
    pub request: HttpRequest,
    pub response: HttpResponse,
}

/// Forwards to an inner transport and appends every exchange to a fixture file.
pub struct RecordingTransport<T> {
    inner: T,
    sink: Mutex<File>,
}

impl<T: HttpTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())
            .map_err(|e| TransportError::Fixture(e.to_string()))?;
        Ok(Self {
            inner,
            sink: Mutex::new(file),
        })
    }
}

impl<T: HttpTransport> HttpTransport for RecordingTransport<T> {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(req)?;
        let entry = FixtureEntry {
            fingerprint: req.fingerprint(),
            request: req.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| TransportError::Fixture(e.to_string()))?;
        let mut f = self.sink.lock().unwrap();
        writeln!(f, "{line}").map_err(|e| TransportError::Fixture(e.to_string()))?;
        Ok(response)
    }
}

/// Serves recorded responses by request fingerprint. Never touches the network.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    fixtures: HashMap<String, HttpResponse>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        // later recordings of the same request win
        Self {
            fixtures: entries
                .into_iter()
                .map(|e| (e.fingerprint, e.response))
                .collect(),
        }
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, TransportError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| TransportError::Fixture(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line)
                .map_err(|e| TransportError::Fixture(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, TransportError> {
        let path = path.into();
        let f = File::open(&path)
            .map_err(|e| TransportError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl HttpTransport for ReplayTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let fp = req.fingerprint();
        self.fixtures
            .get(&fp)
            .cloned()
            .ok_or(TransportError::NoFixture(fp))
    }
}
