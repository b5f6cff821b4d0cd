//! The augmentation pipeline, one meme at a time: scene graph, entities,
//! knowledge lookup, then one serialized input per variant.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::load_graph;
use crate::error::{Error, Result};
use crate::graph_ops::{apply_annotations, cap_top_k, dedup_objects, filter_meme_text_objects};
use crate::kb::{build_knowledge, KbClient};
use crate::model::{
    AnnotationRecord, AugmentedInput, EntityLink, Label, Meme, SceneGraph, Split, Variant, OBJECT_CAP,
};
use crate::ner::NerEngine;
use crate::serializer::{build_input, render_input, serialize_knowledge, serialize_scene_graph, DEFAULT_SEPARATOR};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub variants: Vec<Variant>,
    pub object_cap: usize,
    /// Drop objects with these labels (rendered meme text picked up by the
    /// detector). `None` keeps every object.
    pub banned_labels: Option<BTreeSet<String>>,
    /// Merge same-label boxes overlapping at least this much. `None` skips
    /// deduplication.
    pub iou_threshold: Option<f64>,
    /// Human corrections applied after capping, keyed by meme id.
    pub annotations: BTreeMap<String, AnnotationRecord>,
    pub separator: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            object_cap: OBJECT_CAP,
            banned_labels: None,
            iou_threshold: None,
            annotations: BTreeMap::new(),
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }
}

/// Everything the pipeline produced for one meme.
#[derive(Debug, Clone)]
pub struct MemeAugmentation {
    pub meme: Meme,
    pub graph: Option<SceneGraph>,
    pub entities: Vec<EntityLink>,
    pub sg_text: String,
    pub kn_text: String,
}

impl MemeAugmentation {
    pub fn input(&self, variant: Variant) -> Result<AugmentedInput> {
        let sg = if variant.uses_scene_graph() { self.sg_text.as_str() } else { "" };
        let kn = if variant.uses_knowledge() { self.kn_text.as_str() } else { "" };
        build_input(&self.meme, sg, kn, variant)
    }
}

/// One line of an augmented corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub meme_id: String,
    pub split: Split,
    pub label: Label,
    pub variant: Variant,
    pub text: String,
    pub sg_text: String,
    pub kn_text: String,
    /// The exact classifier input.
    pub input: String,
}

/// Graph post-processing: cap, human corrections, then the optional
/// clean-up rules.
pub fn prepare_graph(graph: &SceneGraph, options: &PipelineOptions) -> Result<SceneGraph> {
    let mut g = cap_top_k(graph, options.object_cap);
    let record = options.annotations.get(&g.meme_id);
    if let Some(r) = record {
        g = apply_annotations(&g, r)?;
    }
    if let Some(banned) = &options.banned_labels {
        g = filter_meme_text_objects(&g, banned, record);
    }
    if let Some(thr) = options.iou_threshold {
        g = dedup_objects(&g, thr);
    }
    Ok(g)
}

/// Named entities of the meme text, each linked through the knowledge base.
pub fn link_entities(meme: &Meme, ner: &NerEngine, kb: &KbClient) -> Result<Vec<EntityLink>> {
    ner.extract_entities(&meme.id, &meme.text)?
        .iter()
        .map(|e| kb.link_entity(e))
        .collect()
}

/// Runs the pipeline over a dataset. Graphs are read only when a requested
/// variant uses them, and entity linking only runs for knowledge variants.
pub fn pipeline_augment(
    memes: &[Meme],
    graphs_dir: Option<&Path>,
    ner: &NerEngine,
    kb: &KbClient,
    options: &PipelineOptions,
) -> Result<Vec<MemeAugmentation>> {
    let need_graphs = options.variants.iter().any(|v| v.uses_scene_graph());
    let need_knowledge = options.variants.iter().any(|v| v.uses_knowledge());
    if need_graphs && graphs_dir.is_none() {
        return Err(Error::parse("pipeline options", "scene-graph variants need a graphs directory"));
    }

    let mut out = Vec::with_capacity(memes.len());
    for meme in memes {
        let graph = match graphs_dir.filter(|_| need_graphs) {
            Some(dir) => Some(prepare_graph(&load_graph(dir, &meme.id)?, options)?),
            None => None,
        };
        let sg_text = graph.as_ref().map(serialize_scene_graph).unwrap_or_default();
        let entities = if need_knowledge {
            link_entities(meme, ner, kb)?
        } else {
            Vec::new()
        };
        let kn_text = serialize_knowledge(&build_knowledge(meme, &entities));
        out.push(MemeAugmentation {
            meme: meme.clone(),
            graph,
            entities,
            sg_text,
            kn_text,
        });
    }
    Ok(out)
}

pub fn corpus_records(
    augmented: &[MemeAugmentation],
    variant: Variant,
    separator: &str,
) -> Result<Vec<CorpusRecord>> {
    augmented
        .iter()
        .map(|a| {
            let input = a.input(variant)?;
            Ok(CorpusRecord {
                meme_id: a.meme.id.clone(),
                split: a.meme.split,
                label: a.meme.label,
                variant,
                input: render_input(&input, separator),
                text: input.text,
                sg_text: input.sg_text,
                kn_text: input.kn_text,
            })
        })
        .collect()
}

pub fn corpus_file_name(variant: Variant) -> String {
    format!("{}.jsonl", variant.file_stem())
}

/// JSON lines, one record per meme, in dataset order.
pub fn corpus_to_jsonl(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("corpus records serialize"));
        s.push('\n');
    }
    s
}

/// Writes one corpus file per requested variant into `dir`.
pub fn write_corpora(
    dir: &Path,
    augmented: &[MemeAugmentation],
    options: &PipelineOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &variant in &options.variants {
        let records = corpus_records(augmented, variant, &options.separator)?;
        let path = dir.join(corpus_file_name(variant));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(corpus_to_jsonl(&records).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{CacheFile, KbConfig, KbMode};
    use crate::ner::Gazetteer;

    fn meme(id: &str, text: &str) -> Meme {
        Meme {
            id: id.into(),
            text: text.into(),
            image_ref: None,
            label: Label::NonHateful,
            split: Split::Train,
        }
    }

    fn replay_client() -> KbClient {
        let config = KbConfig {
            mode: KbMode::Replay,
            ..KbConfig::default()
        };
        KbClient::with_cache(config, CacheFile::new())
    }

    #[test]
    fn empty_graph_and_no_entities() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.empty"), "").unwrap();
        let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
        let memes = [meme("m", "nothing to see")];
        let aug = pipeline_augment(&memes, Some(dir.path()), &ner, &replay_client(), &PipelineOptions::default())
            .unwrap();
        for v in [Variant::SceneGr, Variant::Know, Variant::SceneGrKnow] {
            let recs = corpus_records(&aug, v, DEFAULT_SEPARATOR).unwrap();
            assert_eq!(recs[0].input, "nothing to see [SEP] ");
        }
        let recs = corpus_records(&aug, Variant::TextOnly, DEFAULT_SEPARATOR).unwrap();
        assert_eq!(recs[0].input, "nothing to see");
    }

    #[test]
    fn text_only_ignores_graphs_and_kb() {
        let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
        let options = PipelineOptions {
            variants: vec![Variant::TextOnly],
            ..PipelineOptions::default()
        };
        // Empty replay cache: any lookup would be a miss.
        let memes = [meme("m", "trump 2016")];
        let aug = pipeline_augment(&memes, None, &ner, &replay_client(), &options).unwrap();
        assert!(aug[0].graph.is_none());
        assert!(aug[0].entities.is_empty());
    }

    #[test]
    fn missing_graph_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
        let options = PipelineOptions {
            variants: vec![Variant::SceneGr],
            ..PipelineOptions::default()
        };
        let err = pipeline_augment(&[meme("m", "x")], Some(dir.path()), &ner, &replay_client(), &options);
        assert!(matches!(err, Err(Error::MissingGraph(_))));
    }
}
