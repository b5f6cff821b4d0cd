//! Knowledge-base linking: entity search, first-hit selection and
//! description fetch, behind a response cache with three modes.
//!
//! The HTTP surface follows the Wikidata action API (`wbsearchentities` and
//! `wbgetentities`) so the default base URL works against the public service,
//! and tests point the client at a local stub instead.
//!
//! * `live`: every lookup goes to the network, nothing is persisted.
//! * `record`: lookups missing from the cache go to the network and are
//!   persisted to the cache file immediately.
//! * `replay`: the cache is the only source; a miss is an error.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EntityLink, Meme};

pub const DEFAULT_BASE_URL: &str = "https://www.wikidata.org";
pub const CACHE_FORMAT: &str = "memegraphs-kb-cache/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbMode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for KbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KbMode::Live => "live",
            KbMode::Record => "record",
            KbMode::Replay => "replay",
        })
    }
}

impl FromStr for KbMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "live" => Ok(KbMode::Live),
            "record" => Ok(KbMode::Record),
            "replay" => Ok(KbMode::Replay),
            other => Err(format!("unknown kb mode {other:?}")),
        }
    }
}

/// One entity-search candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbHit {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

/// What was observed for one query: the ranked search hits and the fetched
/// description of the selected hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub search: Vec<KbHit>,
    #[serde(default)]
    pub selected: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheFile {
    pub format: String,
    pub entries: BTreeMap<String, CachedResponse>,
}

impl CacheFile {
    pub fn new() -> Self {
        Self {
            format: CACHE_FORMAT.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CacheFile = serde_json::from_str(&s).map_err(|e| Error::parse("kb cache", e))?;
        if file.format != CACHE_FORMAT {
            return Err(Error::parse(
                "kb cache",
                format!("unsupported format {:?}", file.format),
            ));
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cache serializes");
        s.push('\n');
        s
    }

    /// Writes through a temporary file and a rename so a reader never sees
    /// a half-written cache.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Chooses which search candidate a mention links to.
pub trait CandidateSelector: Send + Sync {
    fn select<'a>(&self, query: &str, hits: &'a [KbHit]) -> Option<&'a KbHit>;
}

/// Takes the first search result, whatever it is.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstHit;

impl CandidateSelector for FirstHit {
    fn select<'a>(&self, _query: &str, hits: &'a [KbHit]) -> Option<&'a KbHit> {
        hits.first()
    }
}

/// Spaces requests at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        Self {
            interval: Duration::from_secs_f64(1.0 / rate),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone)]
pub struct KbConfig {
    pub base_url: String,
    pub mode: KbMode,
    pub cache_path: Option<PathBuf>,
    pub requests_per_second: f64,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub search_limit: usize,
    pub language: String,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            mode: KbMode::Replay,
            cache_path: None,
            requests_per_second: 5.0,
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(20),
            search_limit: 7,
            language: "en".to_string(),
        }
    }
}

#[derive(Deserialize)]
struct SearchBody {
    #[serde(default)]
    search: Vec<KbHit>,
}

#[derive(Deserialize)]
struct EntitiesBody {
    #[serde(default)]
    entities: BTreeMap<String, EntityBody>,
}

#[derive(Deserialize)]
struct EntityBody {
    #[serde(default)]
    descriptions: BTreeMap<String, LangValue>,
}

#[derive(Deserialize)]
struct LangValue {
    value: String,
}

/// Shareable knowledge-base client. Concurrent lookups are serialized
/// through the rate limiter; each cache insertion is written atomically.
pub struct KbClient {
    config: KbConfig,
    cache: Mutex<CacheFile>,
    limiter: RateLimiter,
    selector: Box<dyn CandidateSelector>,
    agent: ureq::Agent,
    requests: std::sync::atomic::AtomicU64,
}

impl fmt::Debug for KbClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KbClient")
            .field("config", &self.config)
            .field("entries", &self.cache.lock().unwrap().entries.len())
            .finish()
    }
}

impl KbClient {
    /// Opens the client. In replay and record mode an existing cache file is
    /// loaded; replay mode requires one (or an in-memory cache via
    /// [`KbClient::with_cache`]).
    pub fn new(config: KbConfig) -> Result<Self> {
        let cache = match (&config.cache_path, config.mode) {
            (Some(p), KbMode::Replay) => CacheFile::load(p)?,
            (Some(p), KbMode::Record) if p.exists() => CacheFile::load(p)?,
            _ => CacheFile::new(),
        };
        Ok(Self::with_cache(config, cache))
    }

    pub fn with_cache(config: KbConfig, cache: CacheFile) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            limiter: RateLimiter::per_second(config.requests_per_second),
            config,
            cache: Mutex::new(cache),
            selector: Box::new(FirstHit),
            agent,
            requests: Default::default(),
        }
    }

    /// Replaces first-hit selection with a ranking hook.
    pub fn with_selector(mut self, selector: Box<dyn CandidateSelector>) -> Self {
        self.selector = selector;
        self
    }

    pub fn mode(&self) -> KbMode {
        self.config.mode
    }

    /// Number of HTTP requests issued so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn cache_snapshot(&self) -> CacheFile {
        self.cache.lock().unwrap().clone()
    }

    /// Ranked search candidates for a query, from cache or network
    /// depending on the mode.
    pub fn search(&self, query: &str) -> Result<Vec<KbHit>> {
        Ok(self.lookup(query)?.search)
    }

    /// Links one entity: search its normalized form, take the selected
    /// (by default first) hit and fetch its description. With no hits the
    /// entity comes back unlinked.
    pub fn link_entity(&self, entity: &EntityLink) -> Result<EntityLink> {
        let query = entity.normalized.trim();
        if query.is_empty() {
            return Err(Error::parse("entity", "empty normalized form"));
        }
        let resp = self.lookup(query)?;
        let mut out = entity.clone();
        out.kb_id = resp.selected.clone();
        out.description = match &resp.selected {
            Some(_) => Some(resp.description.unwrap_or_default()),
            None => None,
        };
        Ok(out)
    }

    fn lookup(&self, query: &str) -> Result<CachedResponse> {
        let mode = self.config.mode;
        if mode != KbMode::Live {
            if let Some(hit) = self.cache.lock().unwrap().entries.get(query) {
                return Ok(hit.clone());
            }
            if mode == KbMode::Replay {
                return Err(Error::CacheMiss(query.to_string()));
            }
        }

        let search = self.fetch_search(query)?;
        let selected = self.selector.select(query, &search).map(|h| h.id.clone());
        let description = match &selected {
            Some(id) => Some(self.fetch_description(id)?),
            None => None,
        };
        let resp = CachedResponse {
            search,
            selected,
            description,
        };

        if mode == KbMode::Record {
            let mut cache = self.cache.lock().unwrap();
            cache.entries.insert(query.to_string(), resp.clone());
            if let Some(path) = &self.config.cache_path {
                cache.save(path)?;
            }
        }
        Ok(resp)
    }

    fn api_url(&self) -> String {
        format!("{}/w/api.php", self.config.base_url.trim_end_matches('/'))
    }

    fn fetch_search(&self, query: &str) -> Result<Vec<KbHit>> {
        let limit = self.config.search_limit.to_string();
        let params = [
            ("action", "wbsearchentities"),
            ("search", query),
            ("language", self.config.language.as_str()),
            ("limit", limit.as_str()),
            ("format", "json"),
        ];
        let body = self.get_with_retry(&params)?;
        let parsed: SearchBody =
            serde_json::from_str(&body).map_err(|e| Error::parse("kb search response", e))?;
        Ok(parsed.search)
    }

    fn fetch_description(&self, id: &str) -> Result<String> {
        let params = [
            ("action", "wbgetentities"),
            ("ids", id),
            ("props", "descriptions"),
            ("languages", self.config.language.as_str()),
            ("format", "json"),
        ];
        let body = self.get_with_retry(&params)?;
        let parsed: EntitiesBody =
            serde_json::from_str(&body).map_err(|e| Error::parse("kb entity response", e))?;
        Ok(parsed
            .entities
            .get(id)
            .and_then(|e| e.descriptions.get(&self.config.language))
            .map(|d| d.value.clone())
            .unwrap_or_default())
    }

    fn get_with_retry(&self, params: &[(&str, &str)]) -> Result<String> {
        let url = self.api_url();
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            self.limiter.acquire();
            self.requests
                .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let mut req = self.agent.get(&url);
            for (k, v) in params {
                req = req.query(*k, *v);
            }
            match req.call() {
                Ok(mut resp) => match resp.body_mut().read_to_string() {
                    Ok(body) => return Ok(body),
                    Err(e) => last = e.to_string(),
                },
                Err(ureq::Error::StatusCode(code)) if code != 429 && code < 500 => {
                    return Err(Error::Network {
                        attempts: attempt,
                        message: format!("HTTP {code} from {url}"),
                    });
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("kb request attempt {attempt} failed: {last}");
            if attempt < self.config.attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Network {
            attempts: self.config.attempts,
            message: last,
        })
    }
}

/// Descriptions of the linked entities, first occurrence first, without
/// repeats. Unlinked entities and empty descriptions contribute nothing.
pub fn build_knowledge(_meme: &Meme, entities: &[EntityLink]) -> Vec<String> {
    let mut seen = HashSet::new();
    entities
        .iter()
        .filter(|e| e.is_linked())
        .filter_map(|e| e.description.as_deref())
        .filter(|d| !d.trim().is_empty())
        .filter(|d| seen.insert(d.to_string()))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Label, Split};
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    const GARY: &str = "American politician, businessman, and 29th Governor of New Mexico.";

    fn percent_decode(s: &str) -> String {
        let bytes = s.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'+' => out.push(b' '),
                b'%' if i + 2 < bytes.len() => {
                    out.push(u8::from_str_radix(&s[i + 1..i + 3], 16).unwrap());
                    i += 2;
                }
                b => out.push(b),
            }
            i += 1;
        }
        String::from_utf8(out).unwrap()
    }

    /// Minimal Wikidata-shaped HTTP stub. The first `fail_first` requests
    /// get a 503.
    fn stub(fail_first: usize) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let mut line = String::new();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                reader.read_line(&mut line).unwrap();
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                }
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let target = line.split_whitespace().nth(1).unwrap_or("");
                let query: BTreeMap<String, String> = target
                    .split_once('?')
                    .map(|(_, q)| q)
                    .unwrap_or("")
                    .split('&')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_string(), percent_decode(v)))
                    .collect();
                let (status, body) = if n < fail_first {
                    ("503 Service Unavailable", String::from("{}"))
                } else if query.get("action").map(String::as_str) == Some("wbsearchentities") {
                    let body = match query.get("search").map(String::as_str) {
                        Some("Gary Johnson") => r#"{"search":[{"id":"Q1000","label":"Gary Johnson"}]}"#,
                        Some("Hillary Clinton") => {
                            r#"{"search":[{"id":"Q6294","label":"Hillary Clinton"},{"id":"Q9","label":"Hillary Step"}]}"#
                        }
                        _ => r#"{"search":[]}"#,
                    };
                    ("200 OK", body.to_string())
                } else {
                    let id = query.get("ids").cloned().unwrap_or_default();
                    let desc = match id.as_str() {
                        "Q1000" => GARY,
                        "Q6294" => "American politician and diplomat",
                        _ => "",
                    };
                    (
                        "200 OK",
                        serde_json::json!({"entities": {id.clone(): {"descriptions": {"en": {"language": "en", "value": desc}}}}})
                            .to_string(),
                    )
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (url, hits)
    }

    fn config(url: &str, mode: KbMode) -> KbConfig {
        KbConfig {
            base_url: url.to_string(),
            mode,
            requests_per_second: 1000.0,
            initial_backoff: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
            ..KbConfig::default()
        }
    }

    fn entity(name: &str) -> EntityLink {
        EntityLink::from_text(name, name)
    }

    #[test]
    fn live_first_hit_and_description() {
        let (url, _) = stub(0);
        let client = KbClient::new(config(&url, KbMode::Live)).unwrap();
        let linked = client.link_entity(&entity("Gary Johnson")).unwrap();
        assert_eq!(linked.kb_id.as_deref(), Some("Q1000"));
        assert_eq!(linked.description.as_deref(), Some(GARY));

        let ambiguous = client.link_entity(&entity("Hillary Clinton")).unwrap();
        assert_eq!(ambiguous.kb_id.as_deref(), Some("Q6294"));
    }

    #[test]
    fn empty_result_is_unlinked() {
        let (url, _) = stub(0);
        let client = KbClient::new(config(&url, KbMode::Live)).unwrap();
        let linked = client.link_entity(&entity("xyzzy")).unwrap();
        assert!(!linked.is_linked());
        assert_eq!(linked.description, None);
    }

    #[test]
    fn retries_transient_failures() {
        let (url, hits) = stub(2);
        let client = KbClient::new(config(&url, KbMode::Live)).unwrap();
        let linked = client.link_entity(&entity("Gary Johnson")).unwrap();
        assert!(linked.is_linked());
        // two failed + search + fetch
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (url, hits) = stub(usize::MAX);
        let client = KbClient::new(config(&url, KbMode::Live)).unwrap();
        let err = client.link_entity(&entity("Gary Johnson")).unwrap_err();
        assert!(matches!(err, Error::Network { attempts: 3, .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn record_then_replay() {
        let (url, hits) = stub(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        let mut cfg = config(&url, KbMode::Record);
        cfg.cache_path = Some(path.clone());
        let recorder = KbClient::new(cfg.clone()).unwrap();
        let names = ["Gary Johnson", "Hillary Clinton", "xyzzy"];
        let recorded: Vec<_> = names
            .iter()
            .map(|n| recorder.link_entity(&entity(n)).unwrap())
            .collect();
        let after_record = hits.load(Ordering::SeqCst);

        cfg.mode = KbMode::Replay;
        cfg.base_url = "http://127.0.0.1:9".to_string();
        let replayer = KbClient::new(cfg).unwrap();
        let replayed: Vec<_> = names
            .iter()
            .map(|n| replayer.link_entity(&entity(n)).unwrap())
            .collect();
        assert_eq!(recorded, replayed);
        assert_eq!(replayer.request_count(), 0);
        assert_eq!(hits.load(Ordering::SeqCst), after_record);

        let err = replayer.link_entity(&entity("Jill Stein")).unwrap_err();
        assert!(matches!(err, Error::CacheMiss(ref q) if q == "Jill Stein"));
    }

    #[test]
    fn rate_limiter_spacing() {
        let limiter = RateLimiter::per_second(50.0);
        let start = Instant::now();
        for _ in 0..11 {
            limiter.acquire();
        }
        // 11 requests at 50/s need at least 10 intervals of 20 ms.
        assert!(start.elapsed() >= Duration::from_millis(200));
    }

    #[test]
    fn knowledge_dedup_and_unlinked() {
        let meme = Meme {
            id: "m".into(),
            text: "t".into(),
            image_ref: None,
            label: Label::NonHateful,
            split: Split::Train,
        };
        let mut hillary = entity("Hillary Clinton");
        hillary.kb_id = Some("Q6294".into());
        hillary.description = Some("American politician and diplomat".into());
        let mut trump = entity("Donald Trump");
        trump.kb_id = Some("Q22686".into());
        trump.description = Some("president of the United States from 2017 to 2021".into());
        let unlinked = entity("xyzzy");

        assert_eq!(build_knowledge(&meme, &[hillary.clone(), unlinked.clone()]).len(), 1);
        assert_eq!(build_knowledge(&meme, &[hillary.clone(), hillary.clone()]).len(), 1);
        assert_eq!(
            build_knowledge(&meme, &[hillary.clone(), trump.clone(), hillary]),
            vec![
                "American politician and diplomat".to_string(),
                "president of the United States from 2017 to 2021".to_string()
            ]
        );
    }
}
