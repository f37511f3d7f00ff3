//! Web search and page fetching for the research stage.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use crate::agent::ToolError;
use crate::tools::denylist::Denylist;
use crate::types::sha256_hex;

pub const TRUNCATION_MARKER: &str = "\n[truncated]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, ToolError>;
}

/// Reads `<dir>/<sha256(query)>.json`, a JSON list of hits. A missing file
/// means no results.
#[derive(Debug, Clone)]
pub struct FixtureSearch {
    pub dir: PathBuf,
}

pub fn fixture_key(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

impl SearchBackend for FixtureSearch {
    fn search(&self, query: &str, _k: usize) -> Result<Vec<SearchHit>, ToolError> {
        if !self.dir.is_dir() {
            return Err(ToolError::BackendUnavailable(format!(
                "fixture directory {} missing",
                self.dir.display()
            )));
        }
        let path = self.dir.join(format!("{}.json", fixture_key(query)));
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| ToolError::BackendUnavailable(format!("{}: {e}", path.display())))
    }
}

/// Google search through the Serper API.
#[derive(Debug, Clone)]
pub struct SerperSearch {
    pub api_key: String,
    pub endpoint: String,
    pub timeout: Duration,
}

impl SerperSearch {
    pub fn new(api_key: impl Into<String>) -> Self {
        SerperSearch {
            api_key: api_key.into(),
            endpoint: "https://google.serper.dev/search".into(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var("SERPER_API_KEY").ok().filter(|k| !k.is_empty()).map(Self::new)
    }
}

pub fn parse_serper(body: &Value) -> Vec<SearchHit> {
    body.get("organic")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|it| {
                    Some(SearchHit {
                        title: it.get("title")?.as_str()?.to_string(),
                        url: it.get("link")?.as_str()?.to_string(),
                        snippet: it.get("snippet").and_then(Value::as_str).unwrap_or("").to_string(),
                    })
                })
                .collect()
        })
        .unwrap_or_default()
}

impl SearchBackend for SerperSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, ToolError> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let mut resp = agent
            .post(&self.endpoint)
            .header("X-API-KEY", &self.api_key)
            .send_json(json!({"q": query, "num": k}))
            .map_err(|e| ToolError::BackendUnavailable(e.to_string()))?;
        match resp.status().as_u16() {
            429 => return Err(ToolError::QuotaExceeded),
            s if s >= 400 => return Err(ToolError::BackendUnavailable(format!("HTTP {s}"))),
            _ => {}
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::BackendUnavailable(e.to_string()))?;
        Ok(parse_serper(&body))
    }
}

pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<String, ToolError>;
}

/// Reads `<dir>/<sha256(url)>.html`.
#[derive(Debug, Clone)]
pub struct FixturePages {
    pub dir: PathBuf,
}

impl PageFetcher for FixturePages {
    fn fetch(&self, url: &Url) -> Result<String, ToolError> {
        let path = self.dir.join(format!("{}.html", fixture_key(url.as_str())));
        std::fs::read_to_string(&path).map_err(|_| ToolError::Fetch(format!("no fixture page for {url}")))
    }
}

#[derive(Debug, Clone)]
pub struct HttpFetcher {
    pub timeout: Duration,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        HttpFetcher {
            timeout: Duration::from_secs(30),
        }
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<String, ToolError> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .new_agent();
        let mut resp = agent.get(url.as_str()).call().map_err(|e| ToolError::Fetch(e.to_string()))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| ToolError::Fetch(e.to_string()))
    }
}

/// Logs every URL passed to the inner fetcher.
pub struct RecordingFetcher<F> {
    pub inner: F,
    pub log: Arc<Mutex<Vec<String>>>,
}

impl<F> RecordingFetcher<F> {
    pub fn new(inner: F) -> Self {
        RecordingFetcher {
            inner,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn fetched(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl<F: PageFetcher> PageFetcher for RecordingFetcher<F> {
    fn fetch(&self, url: &Url) -> Result<String, ToolError> {
        self.log.lock().unwrap().push(url.to_string());
        self.inner.fetch(url)
    }
}

/// Drops denylisted and duplicate URLs (first occurrence wins), then keeps
/// at most `k`.
pub fn filter_hits(hits: Vec<SearchHit>, denylist: &Denylist, k: usize) -> Vec<SearchHit> {
    let mut seen = HashSet::new();
    hits.into_iter()
        .filter(|h| !denylist.is_blocked_str(&h.url))
        .filter(|h| seen.insert(h.url.clone()))
        .take(k)
        .collect()
}

pub fn browser_search(
    backend: &dyn SearchBackend,
    denylist: &Denylist,
    query: &str,
    k: usize,
) -> Result<Vec<SearchHit>, ToolError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(filter_hits(backend.search(query, k)?, denylist, k))
}

/// Checks the denylist before anything touches the network.
pub fn browser_open(
    fetcher: &dyn PageFetcher,
    denylist: &Denylist,
    url: &str,
    max_bytes: usize,
) -> Result<String, ToolError> {
    let parsed = Url::parse(url).map_err(|e| ToolError::Fetch(format!("invalid url {url}: {e}")))?;
    if denylist.is_blocked(&parsed) {
        return Err(ToolError::DenylistedHost(parsed.host_str().unwrap_or(url).to_string()));
    }
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(ToolError::Fetch(format!("unsupported scheme {}", parsed.scheme())));
    }
    let html = fetcher.fetch(&parsed)?;
    Ok(truncate_with_marker(&html_to_text(&html), max_bytes))
}

/// Keeps the first `max_bytes` bytes (on a char boundary) and appends the
/// marker when anything was cut.
pub fn truncate_with_marker(text: &str, max_bytes: usize) -> String {
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let mut cut = max_bytes;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..cut])
}

/// Crude readable-text extraction: drops tags, script/style bodies and
/// comments, decodes common entities, collapses whitespace per line.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let lower = html.to_ascii_lowercase();
    let bytes = html.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if lower[i..].starts_with("<!--") {
                i = lower[i..].find("-->").map(|p| i + p + 3).unwrap_or(bytes.len());
                continue;
            }
            let skip_body = ["script", "style", "noscript", "head"]
                .into_iter()
                .find(|t| lower[i + 1..].starts_with(t));
            let tag_end = lower[i..].find('>').map(|p| i + p + 1).unwrap_or(bytes.len());
            let tag_name: String = lower[i + 1..tag_end.min(lower.len())]
                .trim_start_matches('/')
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect();
            if let Some(t) = skip_body {
                if tag_name == t {
                    let close = format!("</{t}");
                    i = lower[tag_end..]
                        .find(&close)
                        .and_then(|p| lower[tag_end + p..].find('>').map(|q| tag_end + p + q + 1))
                        .unwrap_or(bytes.len());
                    continue;
                }
            }
            if matches!(
                tag_name.as_str(),
                "p" | "br" | "div" | "li" | "tr" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "pre" | "section" | "article"
            ) {
                out.push('\n');
            }
            i = tag_end;
        } else {
            let next = html[i..].find('<').map(|p| i + p).unwrap_or(bytes.len());
            out.push_str(&decode_entities(&html[i..next]));
            i = next;
        }
    }
    out.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn decode_entities(s: &str) -> String {
    s.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}
