//! Dataset ingestion and scene-graph loading.
//!
//! The native format is one CSV with header `id,image_ref,text,label,split`.
//! Splits can also come from separate id lists, and the public MultiOFF
//! release (three CSVs with `image_name,sentence,label`) has its own loader.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_ops::{cap_top_k, MergeItem};
use crate::model::{validate_raw_scene_graph, AnnotationRecord, Label, Meme, SceneGraph, Split, OBJECT_CAP};

pub const CSV_HEADER: [&str; 5] = ["id", "image_ref", "text", "label", "split"];

/// Where split assignments come from.
#[derive(Debug, Clone, Default)]
pub enum SplitSpec {
    /// The `split` column of the dataset file.
    #[default]
    Column,
    /// One file of meme ids per split, one id per line. Overrides the column.
    IdFiles {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    #[serde(default)]
    image_ref: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    split: String,
}

fn read_id_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Loads memes from the native CSV. All problems are gathered before
/// failing so one run lists every offending row.
pub fn load_dataset(path: &Path, spec: &SplitSpec) -> Result<Vec<Meme>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        rows.push(row.map_err(|e| Error::parse(format!("dataset row {}", i + 2), e))?);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(vec![format!("{} contains no memes", path.display())]));
    }

    let split_of: Option<BTreeMap<String, Split>> = match spec {
        SplitSpec::Column => None,
        SplitSpec::IdFiles { train, dev, test } => {
            let mut map = BTreeMap::new();
            let mut problems = Vec::new();
            for (split, file) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
                for id in read_id_file(file)? {
                    if let Some(prev) = map.insert(id.clone(), split) {
                        problems.push(format!("meme {id} listed in both {prev} and {split}"));
                    }
                }
            }
            if !problems.is_empty() {
                return Err(Error::Dataset(problems));
            }
            Some(map)
        }
    };

    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    let mut memes = Vec::with_capacity(rows.len());
    for row in rows {
        let id = row.id.trim().to_string();
        if id.is_empty() {
            problems.push("row with empty id".to_string());
            continue;
        }
        if !seen.insert(id.clone()) {
            problems.push(format!("duplicate id {id}"));
            continue;
        }
        let label = if row.label.trim().is_empty() {
            problems.push(format!("missing label for {id}"));
            None
        } else {
            match row.label.parse::<Label>() {
                Ok(l) => Some(l),
                Err(e) => {
                    problems.push(format!("{id}: {e}"));
                    None
                }
            }
        };
        let split = match &split_of {
            Some(map) => match map.get(&id) {
                Some(s) => Some(*s),
                None => {
                    problems.push(format!("{id} is in no split file"));
                    None
                }
            },
            None => match row.split.parse::<Split>() {
                Ok(s) => Some(s),
                Err(e) => {
                    problems.push(format!("{id}: {e}"));
                    None
                }
            },
        };
        if let (Some(label), Some(split)) = (label, split) {
            let image_ref = row.image_ref.trim();
            memes.push(Meme {
                id,
                text: row.text,
                image_ref: (!image_ref.is_empty()).then(|| image_ref.to_string()),
                label,
                split,
            });
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(problems));
    }
    Ok(memes)
}

/// Writes memes in the native CSV layout.
pub fn write_dataset(path: &Path, memes: &[Meme]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    w.write_record(CSV_HEADER).map_err(ser)?;
    for m in memes {
        w.write_record([
            m.id.as_str(),
            m.image_ref.as_deref().unwrap_or(""),
            m.text.as_str(),
            if m.label == Label::Hateful { "1" } else { "0" },
            m.split.as_str(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const MULTIOFF_FILES: [(Split, &str); 3] = [
    (Split::Train, "Training_meme_dataset.csv"),
    (Split::Dev, "Validation_meme_dataset.csv"),
    (Split::Test, "Testing_meme_dataset.csv"),
];

#[derive(Debug, Deserialize)]
struct MultiOffRow {
    image_name: String,
    sentence: String,
    label: String,
}

fn multioff_label(raw: &str) -> Option<Label> {
    let l = raw.trim().to_lowercase();
    if l.starts_with("non") {
        Some(Label::NonHateful)
    } else if l.starts_with("offensiv") {
        Some(Label::Hateful)
    } else {
        None
    }
}

/// Loads the MultiOFF release from the directory holding its three split
/// files. Meme ids are the image file names without extension.
pub fn load_multioff(dir: &Path) -> Result<Vec<Meme>> {
    let mut memes = Vec::new();
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for (split, name) in MULTIOFF_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        for row in reader.deserialize::<MultiOffRow>() {
            let row = row.map_err(|e| Error::parse(name, e))?;
            let image = row.image_name.trim().to_string();
            let id = Path::new(&image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| image.clone());
            if !seen.insert(id.clone()) {
                problems.push(format!("duplicate id {id}"));
                continue;
            }
            match multioff_label(&row.label) {
                Some(label) => memes.push(Meme {
                    id,
                    text: row.sentence,
                    image_ref: Some(image),
                    label,
                    split,
                }),
                None => problems.push(format!("{id}: unrecognised label {:?}", row.label)),
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(problems));
    }
    Ok(memes)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Dev => self.dev += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.train, self.dev, self.test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub memes: SplitCounts,
    pub hateful: SplitCounts,
}

impl DatasetStats {
    pub fn of(memes: &[Meme]) -> Self {
        let mut stats = DatasetStats::default();
        for m in memes {
            stats.memes.bump(m.split);
            if m.label == Label::Hateful {
                stats.hateful.bump(m.split);
            }
        }
        stats
    }

    pub fn summary(&self) -> String {
        Split::ALL
            .iter()
            .map(|&s| format!("{s}: {} memes, {} hateful", self.memes.get(s), self.hateful.get(s)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn split_memes(memes: &[Meme], split: Split) -> Vec<Meme> {
    memes.iter().filter(|m| m.split == split).cloned().collect()
}

pub fn graph_path(dir: &Path, meme_id: &str) -> PathBuf {
    dir.join(format!("{meme_id}.json"))
}

pub fn empty_marker_path(dir: &Path, meme_id: &str) -> PathBuf {
    dir.join(format!("{meme_id}.empty"))
}

/// Reads `{id}.json` for a meme, or returns an empty graph when only the
/// `{id}.empty` marker exists. Malformed graphs are rejected; the object
/// cap is applied later by the pipeline.
pub fn load_graph(dir: &Path, meme_id: &str) -> Result<SceneGraph> {
    let path = graph_path(dir, meme_id);
    if !path.exists() {
        if empty_marker_path(dir, meme_id).exists() {
            return Ok(SceneGraph::empty(meme_id));
        }
        return Err(Error::MissingGraph(meme_id.to_string()));
    }
    let graph = SceneGraph::read(&path)?;
    if graph.meme_id != meme_id {
        return Err(Error::parse(
            path.display().to_string(),
            format!("graph belongs to meme {}", graph.meme_id),
        ));
    }
    let problems = validate_raw_scene_graph(&graph);
    if !problems.is_empty() {
        return Err(Error::parse(path.display().to_string(), problems.join("; ")));
    }
    Ok(graph)
}

pub fn load_graphs(dir: &Path, memes: &[Meme]) -> Result<BTreeMap<String, SceneGraph>> {
    memes
        .iter()
        .map(|m| Ok((m.id.clone(), load_graph(dir, &m.id)?)))
        .collect()
}

/// Reads one annotator's records, `{id}.json` per meme.
pub fn load_records(dir: &Path, memes: &[Meme]) -> Result<BTreeMap<String, AnnotationRecord>> {
    memes
        .iter()
        .map(|m| {
            let path = graph_path(dir, &m.id);
            if !path.exists() {
                return Err(Error::Annotation(format!("no record for {} in {}", m.id, dir.display())));
            }
            let rec = AnnotationRecord::read(&path)?;
            if rec.meme_id != m.id {
                return Err(Error::parse(path.display().to_string(), format!("record belongs to meme {}", rec.meme_id)));
            }
            Ok((m.id.clone(), rec))
        })
        .collect()
}

/// Pairs each meme's capped graph with both annotators' records.
pub fn load_merge_items(memes: &[Meme], graphs_dir: &Path, a_dir: &Path, b_dir: &Path) -> Result<Vec<MergeItem>> {
    let mut a = load_records(a_dir, memes)?;
    let mut b = load_records(b_dir, memes)?;
    memes
        .iter()
        .map(|m| {
            Ok(MergeItem {
                split: m.split,
                graph: cap_top_k(&load_graph(graphs_dir, &m.id)?, OBJECT_CAP),
                a: a.remove(&m.id).expect("loaded above"),
                b: b.remove(&m.id).expect("loaded above"),
            })
        })
        .collect()
}

/// Object and relation counts over non-empty graphs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub graphs: usize,
    pub empty: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_relations: usize,
    pub max_relations: usize,
    pub unique_labels: usize,
    pub unique_predicates: usize,
}

impl GraphStats {
    pub fn of<'a>(graphs: impl IntoIterator<Item = &'a SceneGraph>) -> Self {
        let mut s = GraphStats {
            min_objects: usize::MAX,
            min_relations: usize::MAX,
            ..Default::default()
        };
        let mut labels = BTreeSet::new();
        let mut predicates = BTreeSet::new();
        for g in graphs {
            s.graphs += 1;
            if g.empty {
                s.empty += 1;
                continue;
            }
            s.min_objects = s.min_objects.min(g.objects.len());
            s.max_objects = s.max_objects.max(g.objects.len());
            s.min_relations = s.min_relations.min(g.relations.len());
            s.max_relations = s.max_relations.max(g.relations.len());
            labels.extend(g.objects.iter().map(|o| o.label.as_str()));
            predicates.extend(g.relations.iter().map(|r| r.predicate.as_str()));
        }
        if s.graphs == s.empty {
            s.min_objects = 0;
            s.min_relations = 0;
        }
        s.unique_labels = labels.len();
        s.unique_predicates = predicates.len();
        s
    }
}
