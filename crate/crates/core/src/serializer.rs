//! Text renderings of the augmentation.
//!
//! A scene graph becomes one sentence per relation, `"0-man has 11-eye."`,
//! joined by single spaces. Knowledge descriptions each end in exactly one
//! full stop and are joined the same way. The classifier sees
//! `<meme text> [SEP] <augmentation>`; see `docs/formats.md` for the exact
//! byte layout.

use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::model::{AugmentedInput, Meme, SceneGraph, Variant};

pub const DEFAULT_SEPARATOR: &str = "[SEP]";

/// `T_sg`: every relation rendered as `{i}-{label} {predicate} {j}-{label}.`
/// in relation order. Relations whose endpoints do not resolve are skipped;
/// callers validate graphs first.
pub fn serialize_scene_graph(graph: &SceneGraph) -> String {
    if graph.empty {
        return String::new();
    }
    let sentences: Vec<String> = graph
        .relations
        .iter()
        .filter_map(|r| {
            let s = graph.object(r.subject_index)?;
            let o = graph.object(r.object_index)?;
            Some(format!(
                "{} {} {}.",
                s.display_name(),
                r.predicate,
                o.display_name()
            ))
        })
        .collect();
    sentences.join(" ")
}

fn dot_runs() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\.{2,}").unwrap())
}

/// `T_kn`: descriptions terminated by exactly one full stop, space-joined.
/// Runs of dots collapse to one so the result never contains `..`.
pub fn serialize_knowledge(descriptions: &[String]) -> String {
    descriptions
        .iter()
        .filter_map(|d| {
            let d = dot_runs().replace_all(d.trim(), ".");
            let d = d.trim();
            if d.is_empty() || d == "." {
                return None;
            }
            let mut d = d.to_string();
            if !d.ends_with('.') {
                d.push('.');
            }
            Some(d)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pairs the meme text with the variant's augmentation strings. Strings the
/// variant does not use must be empty.
pub fn build_input(meme: &Meme, t_sg: &str, t_kn: &str, variant: Variant) -> Result<AugmentedInput> {
    if !variant.uses_scene_graph() && !t_sg.is_empty() {
        return Err(Error::Serialize(format!(
            "variant {variant} takes no scene-graph text for meme {}",
            meme.id
        )));
    }
    if !variant.uses_knowledge() && !t_kn.is_empty() {
        return Err(Error::Serialize(format!(
            "variant {variant} takes no knowledge text for meme {}",
            meme.id
        )));
    }
    Ok(AugmentedInput {
        meme_id: meme.id.clone(),
        text: meme.text.clone(),
        sg_text: t_sg.to_string(),
        kn_text: t_kn.to_string(),
        variant,
    })
}

/// The augmentation segment that follows the separator.
pub fn augmentation_segment(input: &AugmentedInput) -> String {
    match input.variant {
        Variant::TextOnly => String::new(),
        Variant::SceneGr => input.sg_text.clone(),
        Variant::Know => input.kn_text.clone(),
        Variant::SceneGrKnow => [input.sg_text.as_str(), input.kn_text.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Classifier-facing text. Text-only inputs are the bare meme text; every
/// other variant emits the separator even when the augmentation is empty.
pub fn render_input(input: &AugmentedInput, separator: &str) -> String {
    match input.variant {
        Variant::TextOnly => input.text.clone(),
        _ => format!("{} {} {}", input.text, separator, augmentation_segment(input)),
    }
}

/// A relation sentence read back from `T_sg`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTriple {
    pub subject_index: usize,
    pub subject_label: String,
    pub predicate: String,
    pub object_index: usize,
    pub object_label: String,
}

fn triple_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)-(\S+) (.+) (\d+)-(\S+)$").unwrap())
}

/// Inverse of [`serialize_scene_graph`] for labels without whitespace.
pub fn parse_scene_graph_text(text: &str) -> Result<Vec<ParsedTriple>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text
        .strip_suffix('.')
        .ok_or_else(|| Error::parse("scene graph text", "missing final full stop"))?;
    body.split(". ")
        .map(|sentence| {
            let caps = triple_re()
                .captures(sentence)
                .ok_or_else(|| Error::parse("scene graph text", format!("bad sentence {sentence:?}")))?;
            Ok(ParsedTriple {
                subject_index: caps[1].parse().map_err(|e| Error::parse("index", e))?,
                subject_label: caps[2].to_string(),
                predicate: caps[3].to_string(),
                object_index: caps[4].parse().map_err(|e| Error::parse("index", e))?,
                object_label: caps[5].to_string(),
            })
        })
        .collect()
}
