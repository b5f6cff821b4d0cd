//! Domain types shared by every stage: memes, scene graphs, entity links,
//! serialized classifier inputs and annotation records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of objects kept per scene graph, ranked by detection score.
pub const OBJECT_CAP: usize = 16;

/// Binary hatefulness label. Stored as `1` (hateful) / `0` (non-hateful).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    NonHateful,
    Hateful,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonHateful => 0,
            Label::Hateful => 1,
        }
    }

    pub fn from_bool(hateful: bool) -> Self {
        if hateful {
            Label::Hateful
        } else {
            Label::NonHateful
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::NonHateful),
            1 => Ok(Label::Hateful),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "1" => Ok(Label::Hateful),
            "0" => Ok(Label::NonHateful),
            other => Err(format!("unrecognised label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meme {
    pub id: String,
    pub text: String,
    pub image_ref: Option<String>,
    pub label: Label,
    pub split: Split,
}

/// Axis-aligned box in pixel units: `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub index: usize,
    pub label: String,
    pub bbox: BBox,
    pub score: f64,
}

impl SceneObject {
    /// The `index-label` rendering used in serialized graphs, e.g. `0-man`.
    pub fn display_name(&self) -> String {
        format!("{}-{}", self.index, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    #[serde(rename = "subject")]
    pub subject_index: usize,
    pub predicate: String,
    #[serde(rename = "object")]
    pub object_index: usize,
}

impl RelationTriple {
    pub fn new(subject_index: usize, predicate: impl Into<String>, object_index: usize) -> Self {
        Self {
            subject_index,
            predicate: predicate.into(),
            object_index,
        }
    }
}

/// Scene graph of one meme image, as produced by the external generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub meme_id: String,
    #[serde(default)]
    pub empty: bool,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub relations: Vec<RelationTriple>,
}

impl SceneGraph {
    /// Graph for a meme where the generator produced nothing (or which is a
    /// screenshot of text and carries no visual content).
    pub fn empty(meme_id: impl Into<String>) -> Self {
        Self {
            meme_id: meme_id.into(),
            empty: true,
            objects: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn object(&self, index: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.index == index)
    }

    pub fn has_object(&self, index: usize) -> bool {
        self.object(index).is_some()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("scene graph", e))
    }

    /// Canonical file rendering: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene graph serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(format!("scene graph {}", path.display()), message),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Checks every scene-graph invariant. An empty result means the graph is
/// well formed; each entry names the offending element.
pub fn validate_scene_graph(graph: &SceneGraph) -> Vec<String> {
    let mut violations = validate_raw_scene_graph(graph);
    if graph.objects.len() > OBJECT_CAP {
        violations.push(format!(
            "object count {} exceeds cap {}",
            graph.objects.len(),
            OBJECT_CAP
        ));
    }
    violations
}

/// Generator output before capping: the same checks without the object
/// count limit.
pub fn validate_raw_scene_graph(graph: &SceneGraph) -> Vec<String> {
    let mut violations = Vec::new();

    if graph.empty && (!graph.objects.is_empty() || !graph.relations.is_empty()) {
        violations.push("empty flag inconsistent".to_string());
    }

    let mut seen = BTreeSet::new();
    for obj in &graph.objects {
        if !seen.insert(obj.index) {
            violations.push(format!("duplicate object index {}", obj.index));
        }
        if !obj.bbox.is_valid() {
            violations.push(format!("object {} has degenerate bbox", obj.display_name()));
        }
        if !(0.0..=1.0).contains(&obj.score) {
            violations.push(format!(
                "object {} score {} outside [0,1]",
                obj.display_name(),
                obj.score
            ));
        }
        if obj.label.trim().is_empty() {
            violations.push(format!("object {} has empty label", obj.index));
        }
    }

    for rel in &graph.relations {
        for endpoint in [rel.subject_index, rel.object_index] {
            if !seen.contains(&endpoint) {
                violations.push(format!("relation endpoint {endpoint} unresolved"));
            }
        }
    }
    violations
}

/// Informational remarks that do not make a graph invalid (self-relations).
pub fn scene_graph_notes(graph: &SceneGraph) -> Vec<String> {
    graph
        .relations
        .iter()
        .enumerate()
        .filter(|(_, r)| r.subject_index == r.object_index)
        .map(|(pos, r)| {
            format!(
                "relation {pos} is a self-relation on object {}",
                r.subject_index
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    /// Named entity found in the meme text.
    TextNer,
    /// Link a human attached to a scene-graph object.
    ObjectLink,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLink {
    pub mention: String,
    pub normalized: String,
    #[serde(default)]
    pub kb_id: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub source: EntitySource,
    /// Entity type, only known when spans come from an external recognizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    /// Character offsets of the mention in the meme text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl EntityLink {
    pub fn from_text(mention: impl Into<String>, normalized: impl Into<String>) -> Self {
        Self {
            mention: mention.into(),
            normalized: normalized.into(),
            kb_id: None,
            description: None,
            source: EntitySource::TextNer,
            entity_type: None,
            span: None,
        }
    }

    pub fn is_linked(&self) -> bool {
        self.kb_id.is_some()
    }
}

/// Which augmentation follows the meme text in the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TextOnly,
    SceneGr,
    Know,
    SceneGrKnow,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::TextOnly,
        Variant::SceneGr,
        Variant::Know,
        Variant::SceneGrKnow,
    ];

    pub fn uses_scene_graph(self) -> bool {
        matches!(self, Variant::SceneGr | Variant::SceneGrKnow)
    }

    pub fn uses_knowledge(self) -> bool {
        matches!(self, Variant::Know | Variant::SceneGrKnow)
    }

    /// Short name used on the command line and in file names.
    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::TextOnly => "text",
            Variant::SceneGr => "sg",
            Variant::Know => "know",
            Variant::SceneGrKnow => "sg+know",
        }
    }

    /// Row label used in report tables.
    pub fn model_name(self) -> &'static str {
        match self {
            Variant::TextOnly => "TxtBERT",
            Variant::SceneGr => "MemeGraphs[SceneGr]",
            Variant::Know => "MemeGraphs[Know]",
            Variant::SceneGrKnow => "MemeGraphs[SceneGr+Know]",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Variant::TextOnly => "text_only",
            Variant::SceneGr => "scene_gr",
            Variant::Know => "know",
            Variant::SceneGrKnow => "scene_gr_know",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" | "text_only" => Ok(Variant::TextOnly),
            "sg" | "scene_gr" => Ok(Variant::SceneGr),
            "know" => Ok(Variant::Know),
            "sg+know" | "scene_gr_know" => Ok(Variant::SceneGrKnow),
            other => Err(format!(
                "unknown variant {other:?} (expected text, sg, know or sg+know)"
            )),
        }
    }
}

/// Serialized classifier input for one meme under one variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedInput {
    pub meme_id: String,
    pub text: String,
    pub sg_text: String,
    pub kn_text: String,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ObjectVerdict {
    Correct,
    Incorrect {
        #[serde(default)]
        replacement: Option<String>,
    },
    Removed,
}

impl ObjectVerdict {
    pub fn is_correct(&self) -> bool {
        matches!(self, ObjectVerdict::Correct)
    }

    pub fn incorrect(replacement: impl Into<String>) -> Self {
        ObjectVerdict::Incorrect {
            replacement: Some(replacement.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum RelationVerdict {
    Correct,
    Corrected { triple: RelationTriple },
    Removed,
}

impl RelationVerdict {
    pub fn is_correct(&self) -> bool {
        matches!(self, RelationVerdict::Correct)
    }
}

/// One annotator's verdicts on one meme's scene graph.
///
/// Items without a verdict count as correct. Relation verdicts are keyed by
/// the relation's position in the graph's relation list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub meme_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub object_verdicts: BTreeMap<usize, ObjectVerdict>,
    #[serde(default)]
    pub relation_verdicts: BTreeMap<usize, RelationVerdict>,
    #[serde(default)]
    pub entity_links: BTreeMap<usize, Vec<String>>,
    #[serde(default)]
    pub version: u64,
}

impl AnnotationRecord {
    pub fn new(meme_id: impl Into<String>, annotator_id: impl Into<String>) -> Self {
        Self {
            meme_id: meme_id.into(),
            annotator_id: annotator_id.into(),
            object_verdicts: BTreeMap::new(),
            relation_verdicts: BTreeMap::new(),
            entity_links: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn object_verdict(&self, index: usize) -> &ObjectVerdict {
        self.object_verdicts
            .get(&index)
            .unwrap_or(&ObjectVerdict::Correct)
    }

    pub fn relation_verdict(&self, position: usize) -> &RelationVerdict {
        self.relation_verdicts
            .get(&position)
            .unwrap_or(&RelationVerdict::Correct)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("annotation record", e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation record serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Every key must point at an element of `graph`, and corrected triples
    /// may only reference existing objects. Returns the offending keys.
    pub fn unresolved_keys(&self, graph: &SceneGraph) -> Vec<String> {
        let mut bad = Vec::new();
        if self.meme_id != graph.meme_id {
            bad.push(format!(
                "record meme_id {} does not match graph {}",
                self.meme_id, graph.meme_id
            ));
        }
        for &idx in self.object_verdicts.keys() {
            if !graph.has_object(idx) {
                bad.push(format!("object {idx}"));
            }
        }
        for (&pos, verdict) in &self.relation_verdicts {
            if pos >= graph.relations.len() {
                bad.push(format!("relation {pos}"));
            } else if let RelationVerdict::Corrected { triple } = verdict {
                for endpoint in [triple.subject_index, triple.object_index] {
                    if !graph.has_object(endpoint) {
                        bad.push(format!("relation {pos} endpoint {endpoint}"));
                    }
                }
            }
        }
        for &idx in self.entity_links.keys() {
            if !graph.has_object(idx) {
                bad.push(format!("entity link on object {idx}"));
            }
        }
        bad
    }
}
