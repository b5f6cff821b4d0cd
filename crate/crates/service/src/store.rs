//! Versioned annotation store: an append-only log of accepted records and
//! an in-memory index rebuilt from it on start.
//!
//! Readers take a snapshot without locking. Writers serialize on one mutex,
//! check the meme's version against the caller's token, append to the log
//! and only then publish the new snapshot, so a record is visible only once
//! it is durable.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use memegraphs_core::graph_ops::{apply_annotations, cap_top_k};
use memegraphs_core::model::{AnnotationRecord, Meme, SceneGraph, OBJECT_CAP};
use serde::Serialize;

/// Where accepted records go. The store appends one record per accepted
/// write and replays all of them on open; any ordered durable sequence
/// will do.
pub trait LogSink: Send {
    fn append(&mut self, record: &AnnotationRecord) -> io::Result<()>;
    fn replay(&mut self) -> io::Result<Vec<AnnotationRecord>>;
}

/// JSON lines, one compact record per line, flushed and synced per write.
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl LogSink for FileLog {
    fn append(&mut self, record: &AnnotationRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }

    fn replay(&mut self) -> io::Result<Vec<AnnotationRecord>> {
        let text = std::fs::read_to_string(&self.path)?;
        let mut out = Vec::new();
        let mut consumed = 0;
        for line in text.split_inclusive('\n') {
            if !line.ends_with('\n') {
                // A write cut short by a crash. Drop it so the next append
                // starts on a fresh line.
                log::warn!("{}: discarding torn final line", self.path.display());
                self.file.set_len(consumed as u64)?;
                break;
            }
            consumed += line.len();
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", self.path.display())))?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Log kept in memory; for tests and throwaway sessions.
#[derive(Default, Clone)]
pub struct MemoryLog {
    pub records: Arc<Mutex<Vec<AnnotationRecord>>>,
}

impl LogSink for MemoryLog {
    fn append(&mut self, record: &AnnotationRecord) -> io::Result<()> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }

    fn replay(&mut self) -> io::Result<Vec<AnnotationRecord>> {
        Ok(self.records.lock().unwrap().clone())
    }
}

#[derive(Debug)]
pub enum StoreError {
    UnknownMeme(String),
    Conflict { current_version: u64 },
    Invalid(Vec<String>),
    Io(io::Error),
}

impl std::fmt::Display for StoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreError::UnknownMeme(id) => write!(f, "unknown meme {id}"),
            StoreError::Conflict { current_version } => write!(f, "version conflict, current version is {current_version}"),
            StoreError::Invalid(problems) => write!(f, "invalid record: {}", problems.join("; ")),
            StoreError::Io(e) => write!(f, "log write failed: {e}"),
        }
    }
}

impl std::error::Error for StoreError {}

/// Immutable view of everything accepted so far.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    versions: HashMap<String, u64>,
    records: HashMap<(String, String), AnnotationRecord>,
}

impl Snapshot {
    pub fn version(&self, meme_id: &str) -> u64 {
        self.versions.get(meme_id).copied().unwrap_or(0)
    }

    pub fn record(&self, meme_id: &str, annotator_id: &str) -> Option<&AnnotationRecord> {
        self.records.get(&(meme_id.to_string(), annotator_id.to_string()))
    }

    /// Annotators with a saved record on the meme, sorted.
    pub fn annotators(&self, meme_id: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .records
            .keys()
            .filter(|(m, _)| m == meme_id)
            .map(|(_, a)| a.clone())
            .collect();
        out.sort();
        out
    }

    fn accept(&mut self, record: AnnotationRecord) {
        self.versions.insert(record.meme_id.clone(), record.version);
        self.records
            .insert((record.meme_id.clone(), record.annotator_id.clone()), record);
    }
}

/// What an annotator needs to work on one meme.
#[derive(Debug, Clone, Serialize)]
pub struct Task {
    pub meme: Meme,
    pub image_ref: Option<String>,
    pub graph: SceneGraph,
    pub record: Option<AnnotationRecord>,
    pub version: u64,
    /// Screenshots of text carry no scene to correct and are skipped.
    pub disregarded: bool,
}

pub struct Store {
    memes: BTreeMap<String, Meme>,
    graphs: BTreeMap<String, SceneGraph>,
    snapshot: ArcSwap<Snapshot>,
    writer: Mutex<Box<dyn LogSink>>,
}

impl Store {
    /// Opens the store over a dataset and its raw graphs, replaying the log.
    /// Every meme needs a graph. Graphs are capped first, the same way the
    /// pipeline does before applying corrections, so verdict keys line up.
    pub fn open(memes: Vec<Meme>, graphs: BTreeMap<String, SceneGraph>, mut log: Box<dyn LogSink>) -> io::Result<Self> {
        let graphs: BTreeMap<String, SceneGraph> =
            graphs.into_iter().map(|(id, g)| (id, cap_top_k(&g, OBJECT_CAP))).collect();
        let memes: BTreeMap<String, Meme> = memes.into_iter().map(|m| (m.id.clone(), m)).collect();
        if let Some(id) = memes.keys().find(|id| !graphs.contains_key(*id)) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("no scene graph for meme {id}")));
        }
        let mut snap = Snapshot::default();
        for (line, rec) in log.replay()?.into_iter().enumerate() {
            let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("log entry {}: {msg}", line + 1));
            if !memes.contains_key(&rec.meme_id) {
                return Err(invalid(format!("unknown meme {}", rec.meme_id)));
            }
            let expected = snap.version(&rec.meme_id) + 1;
            if rec.version != expected {
                return Err(invalid(format!("version {} where {expected} was due", rec.version)));
            }
            snap.accept(rec);
        }
        Ok(Self {
            memes,
            graphs,
            snapshot: ArcSwap::from_pointee(snap),
            writer: Mutex::new(log),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.load_full()
    }

    pub fn memes(&self) -> impl Iterator<Item = &Meme> {
        self.memes.values()
    }

    pub fn meme(&self, id: &str) -> Option<&Meme> {
        self.memes.get(id)
    }

    pub fn graph(&self, id: &str) -> Option<&SceneGraph> {
        self.graphs.get(id)
    }

    pub fn task(&self, meme_id: &str, annotator_id: &str) -> Result<Task, StoreError> {
        let meme = self.memes.get(meme_id).ok_or_else(|| StoreError::UnknownMeme(meme_id.to_string()))?;
        let graph = &self.graphs[meme_id];
        let snap = self.snapshot();
        Ok(Task {
            image_ref: meme.image_ref.clone(),
            meme: meme.clone(),
            graph: graph.clone(),
            record: snap.record(meme_id, annotator_id).cloned(),
            version: snap.version(meme_id),
            disregarded: graph.empty,
        })
    }

    /// Accepts `record` if the meme is still at `expected_version`. The
    /// stored record carries the new version.
    pub fn submit(&self, mut record: AnnotationRecord, expected_version: u64) -> Result<u64, StoreError> {
        let graph = self
            .graphs
            .get(&record.meme_id)
            .ok_or_else(|| StoreError::UnknownMeme(record.meme_id.clone()))?;
        let problems = record.unresolved_keys(graph);
        if !problems.is_empty() {
            return Err(StoreError::Invalid(problems));
        }
        if let Err(e) = apply_annotations(graph, &record) {
            return Err(StoreError::Invalid(vec![e.to_string()]));
        }

        let mut log = self.writer.lock().unwrap();
        let current = self.snapshot.load();
        let current_version = current.version(&record.meme_id);
        if current_version != expected_version {
            return Err(StoreError::Conflict { current_version });
        }
        record.version = current_version + 1;
        log.append(&record).map_err(StoreError::Io)?;
        let mut next = Snapshot::clone(&current);
        let version = record.version;
        next.accept(record);
        self.snapshot.store(Arc::new(next));
        Ok(version)
    }
}
