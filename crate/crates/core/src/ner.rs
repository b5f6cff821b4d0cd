//! Named-entity extraction over meme text.
//!
//! Two engines share one normalization step. The gazetteer engine scans the
//! text for known aliases; the import engine reads spans produced by any
//! third-party recognizer from a sidecar file. Meme text is noisy: people are
//! named by first name only ("Hillary"), with names run together
//! ("donaldtrump") or next to an unrelated word ("green Bernie"), and
//! [`normalize_mention`] maps all of those onto the canonical name.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EntityLink;

const DEFAULT_GAZETTEER: &str = include_str!("../data/gazetteer.json");

#[derive(Debug, Clone)]
struct Entry {
    canonical: String,
}

/// Canonical full names with their aliases.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<Entry>,
    /// cleaned alias -> entry
    aliases: HashMap<String, usize>,
    /// cleaned alias with spaces removed -> entry
    concatenated: HashMap<String, usize>,
    /// every word of every cleaned alias, longest first
    words: Vec<String>,
    max_alias_words: usize,
}

impl Gazetteer {
    /// Builds from `canonical -> aliases`. The canonical name is always an
    /// alias of itself.
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut aliases: HashMap<String, usize> = HashMap::new();
        let mut concatenated = HashMap::new();
        let mut problems = Vec::new();

        for (canonical, alias_list) in map {
            let canonical = canonical.trim().to_string();
            if canonical.is_empty() {
                problems.push("empty canonical name".to_string());
                continue;
            }
            if !is_title_cased(&canonical) {
                problems.push(format!("canonical name {canonical:?} is not title-cased"));
            }
            let id = entries.len();
            entries.push(Entry {
                canonical: canonical.clone(),
            });
            for alias in std::iter::once(&canonical).chain(alias_list.iter()) {
                let key = clean(alias);
                if key.is_empty() {
                    problems.push(format!("empty alias for {canonical}"));
                    continue;
                }
                if let Some(&prev) = aliases.get(&key) {
                    if prev != id {
                        problems.push(format!(
                            "alias {alias:?} claimed by both {} and {canonical}",
                            entries[prev].canonical
                        ));
                    }
                }
                concatenated.insert(key.replace(' ', ""), id);
                aliases.insert(key, id);
            }
        }
        if entries.is_empty() {
            problems.push("gazetteer has no entries".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::parse("gazetteer", problems.join("; ")));
        }

        let mut words: Vec<String> = aliases
            .keys()
            .flat_map(|k| k.split(' ').map(str::to_string))
            .collect();
        words.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        words.dedup();
        let max_alias_words = aliases.keys().map(|k| k.split(' ').count()).max().unwrap_or(1);

        Ok(Self {
            entries,
            aliases,
            concatenated,
            words,
            max_alias_words,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(s).map_err(|e| Error::parse("gazetteer", e))?;
        Self::new(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// The bundled gazetteer of 2016 US election figures.
    pub fn us_election_2016() -> Self {
        Self::from_json(DEFAULT_GAZETTEER).expect("bundled gazetteer is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, cleaned: &str) -> Option<&str> {
        self.aliases
            .get(cleaned)
            .map(|&i| self.entries[i].canonical.as_str())
    }

    /// A single token that is several alias words run together.
    fn lookup_concatenated(&self, token: &str) -> Option<&str> {
        if let Some(&i) = self.concatenated.get(token) {
            return Some(&self.entries[i].canonical);
        }
        let split = self.segment(token)?;
        self.lookup(&split)
    }

    /// Greedy longest-match split of `token` into known alias words.
    fn segment(&self, token: &str) -> Option<String> {
        let mut rest = token;
        let mut parts = Vec::new();
        while !rest.is_empty() {
            let word = self.words.iter().find(|w| rest.starts_with(w.as_str()))?;
            parts.push(word.as_str());
            rest = &rest[word.len()..];
        }
        (parts.len() > 1).then(|| parts.join(" "))
    }
}

fn is_title_cased(name: &str) -> bool {
    name.split_whitespace().all(|w| {
        w.chars()
            .next()
            .is_some_and(|c| !c.is_alphabetic() || c.is_uppercase())
    })
}

/// Lowercases, drops possessive `'s`, turns `-`/`_` into spaces, strips the
/// remaining punctuation and collapses whitespace.
fn clean(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mut words = Vec::new();
    for raw in lowered.split(|c: char| c.is_whitespace() || c == '-' || c == '_') {
        let raw = raw
            .strip_suffix("'s")
            .or_else(|| raw.strip_suffix("\u{2019}s"))
            .unwrap_or(raw);
        let w: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
        if !w.is_empty() {
            words.push(w);
        }
    }
    words.join(" ")
}

/// Maps a surface mention onto a canonical gazetteer name.
///
/// Tries, in order: the whole cleaned mention, the mention as run-together
/// alias words, and the mention with leading modifier words dropped. A
/// mention that matches nothing comes back trimmed but otherwise unchanged.
pub fn normalize_mention(mention: &str, gazetteer: &Gazetteer) -> String {
    let cleaned = clean(mention);
    if cleaned.is_empty() {
        return mention.trim().to_string();
    }
    if let Some(c) = gazetteer.lookup(&cleaned) {
        return c.to_string();
    }
    let tokens: Vec<&str> = cleaned.split(' ').collect();
    if tokens.len() == 1 {
        if let Some(c) = gazetteer.lookup_concatenated(tokens[0]) {
            return c.to_string();
        }
    }
    for start in 1..tokens.len() {
        let suffix = tokens[start..].join(" ");
        if let Some(c) = gazetteer.lookup(&suffix) {
            return c.to_string();
        }
        if start + 1 == tokens.len() {
            if let Some(c) = gazetteer.lookup_concatenated(&suffix) {
                return c.to_string();
            }
        }
    }
    mention.trim().to_string()
}

/// One span from an external recognizer, in character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportedSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// One line of the sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub meme_id: String,
    pub spans: Vec<ImportedSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NerKind {
    Gazetteer,
    ExternalImport,
}

#[derive(Debug, Clone)]
pub struct NerEngine {
    kind: NerKind,
    gazetteer: Gazetteer,
    imported: HashMap<String, Vec<ImportedSpan>>,
}

fn word_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:['\u{2019}][\p{L}\p{N}]+)*").unwrap())
}

impl NerEngine {
    pub fn gazetteer(gazetteer: Gazetteer) -> Self {
        Self {
            kind: NerKind::Gazetteer,
            gazetteer,
            imported: HashMap::new(),
        }
    }

    /// Reads a JSON-lines sidecar of recognized spans. Normalization still
    /// goes through `gazetteer`.
    pub fn external_import(gazetteer: Gazetteer, sidecar: &Path) -> Result<Self> {
        let file = std::fs::File::open(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let mut imported: HashMap<String, Vec<ImportedSpan>> = HashMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(sidecar, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SidecarRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("NER sidecar line {}", n + 1), e))?;
            imported.entry(rec.meme_id).or_default().extend(rec.spans);
        }
        Ok(Self {
            kind: NerKind::ExternalImport,
            gazetteer,
            imported,
        })
    }

    pub fn kind(&self) -> NerKind {
        self.kind
    }

    pub fn gazetteer_ref(&self) -> &Gazetteer {
        &self.gazetteer
    }

    /// Entities in one meme's text, in order of appearance. `kb_id` and
    /// `description` are left unset.
    pub fn extract_entities(&self, meme_id: &str, text: &str) -> Result<Vec<EntityLink>> {
        match self.kind {
            NerKind::Gazetteer => Ok(self.scan(text)),
            NerKind::ExternalImport => self.from_sidecar(meme_id, text),
        }
    }

    fn scan(&self, text: &str) -> Vec<EntityLink> {
        let words: Vec<(usize, usize)> = word_regex()
            .find_iter(text)
            .map(|m| (m.start(), m.end()))
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = self.gazetteer.max_alias_words.min(words.len() - i);
            let hit = (1..=longest).rev().find_map(|n| {
                let (start, end) = (words[i].0, words[i + n - 1].1);
                let cleaned = clean(&text[start..end]);
                let canonical = self.gazetteer.lookup(&cleaned).or_else(|| {
                    (n == 1)
                        .then(|| self.gazetteer.lookup_concatenated(&cleaned))
                        .flatten()
                })?;
                Some((n, start, end, canonical.to_string()))
            });
            match hit {
                Some((n, start, end, canonical)) => {
                    let mut link = EntityLink::from_text(&text[start..end], canonical);
                    let cstart = text[..start].chars().count();
                    link.span = Some((cstart, cstart + text[start..end].chars().count()));
                    out.push(link);
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    fn from_sidecar(&self, meme_id: &str, text: &str) -> Result<Vec<EntityLink>> {
        let Some(spans) = self.imported.get(meme_id) else {
            return Ok(Vec::new());
        };
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::with_capacity(spans.len());
        for span in spans {
            if span.start >= span.end || span.end > chars.len() {
                return Err(Error::parse(
                    "NER sidecar",
                    format!("span {}..{} out of range for meme {meme_id}", span.start, span.end),
                ));
            }
            let surface: String = chars[span.start..span.end].iter().collect();
            if surface != span.surface {
                return Err(Error::parse(
                    "NER sidecar",
                    format!(
                        "span {}..{} of meme {meme_id} reads {surface:?}, sidecar says {:?}",
                        span.start, span.end, span.surface
                    ),
                ));
            }
            let mut link =
                EntityLink::from_text(surface.clone(), normalize_mention(&surface, &self.gazetteer));
            link.entity_type = span.label.clone();
            link.span = Some((span.start, span.end));
            out.push(link);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn gaz() -> Gazetteer {
        Gazetteer::us_election_2016()
    }

    #[test]
    fn first_name_only() {
        let e = NerEngine::gazetteer(gaz());
        let hits = e.extract_entities("m", "Hillary for prison").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].mention, "Hillary");
        assert_eq!(hits[0].normalized, "Hillary Clinton");
        assert_eq!(hits[0].span, Some((0, 7)));
    }

    #[test]
    fn concatenated_name() {
        let e = NerEngine::gazetteer(gaz());
        let hits = e.extract_entities("m", "#donaldtrump 2016").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].mention, "donaldtrump");
        assert_eq!(hits[0].normalized, "Donald Trump");
        assert_eq!(normalize_mention("donaldtrump", &gaz()), "Donald Trump");
        assert_eq!(normalize_mention("HillaryClinton", &gaz()), "Hillary Clinton");
    }

    #[test]
    fn no_hits() {
        let e = NerEngine::gazetteer(gaz());
        assert!(e.extract_entities("m", "when the coffee kicks in").unwrap().is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let e = NerEngine::gazetteer(gaz());
        let hits = e.extract_entities("m", "Vote Hillary Rodham Clinton, not Trump!").unwrap();
        let names: Vec<_> = hits.iter().map(|h| h.normalized.as_str()).collect();
        assert_eq!(names, vec!["Hillary Clinton", "Donald Trump"]);
        assert_eq!(hits[0].mention, "Hillary Rodham Clinton");
    }

    #[test]
    fn leading_modifier_dropped() {
        assert_eq!(normalize_mention("green Bernie", &gaz()), "Bernie Sanders");
        assert_eq!(normalize_mention("crooked hillary's", &gaz()), "Hillary Clinton");
    }

    #[test]
    fn canonical_and_passthrough() {
        assert_eq!(normalize_mention("Hillary Clinton", &gaz()), "Hillary Clinton");
        assert_eq!(normalize_mention("  xyzzy ", &gaz()), "xyzzy");
    }

    #[test]
    fn bad_gazetteer_rejected() {
        assert!(Gazetteer::from_json(r#"{"hillary clinton": ["hillary"]}"#).is_err());
        assert!(Gazetteer::from_json(r#"{"A B": ["x"], "C D": ["x"]}"#).is_err());
        assert!(Gazetteer::from_json("{}").is_err());
    }

    #[test]
    fn sidecar_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ner.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(
            f,
            r#"{{"meme_id":"m1","spans":[{{"start":6,"end":18,"surface":"green Bernie","label":"PERSON"}}]}}"#
        )
        .unwrap();
        let e = NerEngine::external_import(gaz(), &path).unwrap();
        let hits = e.extract_entities("m1", "Go go green Bernie").unwrap();
        assert_eq!(hits[0].normalized, "Bernie Sanders");
        assert_eq!(hits[0].entity_type.as_deref(), Some("PERSON"));
        assert!(e.extract_entities("m2", "anything").unwrap().is_empty());
        // surface mismatch
        assert!(e.extract_entities("m1", "Go go green Burnie").is_err());
    }

    #[test]
    fn missing_sidecar_is_error() {
        assert!(NerEngine::external_import(gaz(), Path::new("/nonexistent/ner.jsonl")).is_err());
    }
}
