//! Host-suffix denylist for research browsing.

use url::Url;

/// Hosts that serve benchmark data or reference solutions.
pub const DEFAULT_DENYLIST: &str = "\
# benchmark datasets and reference implementations
huggingface.co/datasets/xdzouyd/text2world
huggingface.co/datasets/thuml/bytesized32-world-model-cot
github.com/nicoladainese96/code-world-models
raw.githubusercontent.com/nicoladainese96/code-world-models
github.com/openai/gym
raw.githubusercontent.com/openai/gym
";

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pattern {
    host: String,
    path_prefix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Denylist {
    patterns: Vec<Pattern>,
}

impl Denylist {
    /// One host suffix per line, optionally followed by a path prefix
    /// (`host/path`). Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let patterns = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                let l = l.to_ascii_lowercase();
                let l = l
                    .strip_prefix("https://")
                    .or_else(|| l.strip_prefix("http://"))
                    .unwrap_or(&l)
                    .to_string();
                match l.split_once('/') {
                    Some((h, p)) if !p.trim_matches('/').is_empty() => Pattern {
                        host: h.trim_start_matches('.').to_string(),
                        path_prefix: Some(format!("/{}", p.trim_matches('/'))),
                    },
                    Some((h, _)) => Pattern {
                        host: h.trim_start_matches('.').to_string(),
                        path_prefix: None,
                    },
                    None => Pattern {
                        host: l.trim_start_matches('.').to_string(),
                        path_prefix: None,
                    },
                }
            })
            .collect();
        Denylist { patterns }
    }

    pub fn empty() -> Self {
        Denylist::default()
    }

    pub fn hosts(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.host.clone()).collect()
    }

    pub fn is_blocked(&self, url: &Url) -> bool {
        let Some(host) = url.host_str() else {
            return false;
        };
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        let path = url.path().to_ascii_lowercase();
        self.patterns.iter().any(|p| {
            let host_hit = host == p.host || host.ends_with(&format!(".{}", p.host));
            host_hit
                && match &p.path_prefix {
                    None => true,
                    Some(prefix) => {
                        path == *prefix
                            || path.strip_prefix(prefix.as_str()).is_some_and(|r| r.starts_with('/'))
                    }
                }
        })
    }

    /// Unparseable URLs are treated as blocked.
    pub fn is_blocked_str(&self, url: &str) -> bool {
        Url::parse(url).map(|u| self.is_blocked(&u)).unwrap_or(true)
    }
}

pub fn default_denylist() -> Denylist {
    Denylist::parse(DEFAULT_DENYLIST)
}
