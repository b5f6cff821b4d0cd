//! Two-annotator merging.
//!
//! Agreement keeps an item, a correctness disagreement removes it, and two
//! different corrections are settled by how often each alternative occurs in
//! the items both annotators agreed on.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::apply_annotations;
use crate::error::{Error, Result};
use crate::model::{AnnotationRecord, ObjectVerdict, RelationTriple, RelationVerdict, SceneGraph, Split};

pub const MERGED_ANNOTATOR: &str = "merged";

/// Frequencies of labels, predicates and entity links on the items both
/// annotators agreed on. Built from the training split only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementPool {
    pub object_labels: BTreeMap<String, u64>,
    pub predicates: BTreeMap<String, u64>,
    pub links: BTreeMap<String, u64>,
}

impl AgreementPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the agreed items of one meme.
    pub fn add(&mut self, graph: &SceneGraph, a: &AnnotationRecord, b: &AnnotationRecord) -> Result<()> {
        check_same_graph(graph, a, b)?;
        for obj in &graph.objects {
            let label = match (a.object_verdict(obj.index), b.object_verdict(obj.index)) {
                (ObjectVerdict::Correct, ObjectVerdict::Correct) => Some(obj.label.as_str()),
                (
                    ObjectVerdict::Incorrect { replacement: Some(x) },
                    ObjectVerdict::Incorrect { replacement: Some(y) },
                ) if x == y => Some(x.as_str()),
                _ => None,
            };
            if let Some(label) = label {
                *self.object_labels.entry(label.to_string()).or_default() += 1;
            }
            let la = link_set(a, obj.index);
            let lb = link_set(b, obj.index);
            if !la.is_empty() && la == lb {
                for id in la {
                    *self.links.entry(id.to_string()).or_default() += 1;
                }
            }
        }
        for (pos, rel) in graph.relations.iter().enumerate() {
            let predicate = match (a.relation_verdict(pos), b.relation_verdict(pos)) {
                (RelationVerdict::Correct, RelationVerdict::Correct) => Some(rel.predicate.as_str()),
                (RelationVerdict::Corrected { triple: x }, RelationVerdict::Corrected { triple: y }) if x == y => {
                    Some(x.predicate.as_str())
                }
                _ => None,
            };
            if let Some(p) = predicate {
                *self.predicates.entry(p.to_string()).or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn label_count(&self, label: &str) -> u64 {
        self.object_labels.get(label).copied().unwrap_or(0)
    }

    pub fn predicate_count(&self, predicate: &str) -> u64 {
        self.predicates.get(predicate).copied().unwrap_or(0)
    }

    pub fn link_count(&self, kb_id: &str) -> u64 {
        self.links.get(kb_id).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    #[default]
    Lexicographic,
}

#[derive(Debug, Clone, Default)]
pub struct MergePolicy {
    pub agreement_pool: AgreementPool,
    pub tie_break: TieBreak,
    /// `(meme_id, object_index, kb_id)` links a reviewer confirmed as
    /// plausible. When both annotators' differing links are all confirmed
    /// (one face showing two people), the merge keeps their union.
    pub verified_links: BTreeSet<(String, usize, String)>,
}

impl MergePolicy {
    pub fn new(agreement_pool: AgreementPool) -> Self {
        Self {
            agreement_pool,
            ..Self::default()
        }
    }

    fn is_verified(&self, meme_id: &str, object: usize, kb_id: &str) -> bool {
        self.verified_links
            .contains(&(meme_id.to_string(), object, kb_id.to_string()))
    }
}

/// Picks the candidate with the highest count; ties go to the
/// lexicographically smallest candidate.
fn most_frequent<'a, I, F>(candidates: I, count: F) -> Option<&'a str>
where
    I: IntoIterator<Item = &'a str>,
    F: Fn(&str) -> u64,
{
    let mut sorted: Vec<&str> = candidates.into_iter().collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(&str, u64)> = None;
    for c in sorted {
        let n = count(c);
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

fn merge_object(a: &ObjectVerdict, b: &ObjectVerdict, pool: &AgreementPool) -> ObjectVerdict {
    use ObjectVerdict::*;
    match (a, b) {
        (Correct, Correct) => Correct,
        (Correct, _) | (_, Correct) => Removed,
        (Incorrect { replacement: Some(x) }, Incorrect { replacement: Some(y) }) => {
            if x == y {
                ObjectVerdict::incorrect(x.clone())
            } else {
                let winner = most_frequent([x.as_str(), y.as_str()], |c| pool.label_count(c))
                    .expect("two candidates");
                ObjectVerdict::incorrect(winner)
            }
        }
        // Both say wrong but at most one offers a type: the annotators
        // disagree on whether the object exists at all.
        _ => Removed,
    }
}

fn merge_relation(a: &RelationVerdict, b: &RelationVerdict, pool: &AgreementPool) -> RelationVerdict {
    use RelationVerdict::*;
    match (a, b) {
        (Correct, Correct) => Correct,
        (Correct, _) | (_, Correct) => Removed,
        (Corrected { triple: x }, Corrected { triple: y }) => {
            if x == y {
                return Corrected { triple: x.clone() };
            }
            let (cx, cy) = (pool.predicate_count(&x.predicate), pool.predicate_count(&y.predicate));
            let pick: &RelationTriple = match cx.cmp(&cy) {
                std::cmp::Ordering::Greater => x,
                std::cmp::Ordering::Less => y,
                std::cmp::Ordering::Equal => {
                    let key = |t: &RelationTriple| (t.predicate.clone(), t.subject_index, t.object_index);
                    if key(x) <= key(y) {
                        x
                    } else {
                        y
                    }
                }
            };
            Corrected { triple: pick.clone() }
        }
        _ => Removed,
    }
}

fn link_set(record: &AnnotationRecord, object: usize) -> BTreeSet<&str> {
    record
        .entity_links
        .get(&object)
        .map(|v| v.iter().map(String::as_str).collect())
        .unwrap_or_default()
}

fn check_same_graph(graph: &SceneGraph, a: &AnnotationRecord, b: &AnnotationRecord) -> Result<()> {
    if a.meme_id != graph.meme_id || b.meme_id != graph.meme_id {
        return Err(Error::Annotation(format!(
            "mismatched meme ids: graph {}, records {} and {}",
            graph.meme_id, a.meme_id, b.meme_id
        )));
    }
    for r in [a, b] {
        let bad = r.unresolved_keys(graph);
        if !bad.is_empty() {
            return Err(Error::Annotation(format!(
                "record of {} on meme {} has unresolved keys: {}",
                r.annotator_id,
                graph.meme_id,
                bad.join(", ")
            )));
        }
    }
    Ok(())
}

/// Merges two annotators' records on one graph. Returns the merged graph and
/// the merged record (annotator `merged`, explicit verdict for every item).
pub fn merge_annotators(
    graph: &SceneGraph,
    a: &AnnotationRecord,
    b: &AnnotationRecord,
    policy: &MergePolicy,
) -> Result<(SceneGraph, AnnotationRecord)> {
    check_same_graph(graph, a, b)?;
    let pool = &policy.agreement_pool;
    let mut merged = AnnotationRecord::new(graph.meme_id.clone(), MERGED_ANNOTATOR);
    merged.version = 1;

    for obj in &graph.objects {
        let verdict = merge_object(a.object_verdict(obj.index), b.object_verdict(obj.index), pool);
        let kept = !matches!(verdict, ObjectVerdict::Removed);
        merged.object_verdicts.insert(obj.index, verdict);
        if !kept {
            continue;
        }

        let la = link_set(a, obj.index);
        let lb = link_set(b, obj.index);
        let links: Vec<String> = if la == lb {
            la.iter().map(|s| s.to_string()).collect()
        } else {
            let disputed: Vec<&str> = la.symmetric_difference(&lb).copied().collect();
            let all_verified = disputed
                .iter()
                .all(|id| policy.is_verified(&graph.meme_id, obj.index, id));
            if all_verified {
                la.union(&lb).map(|s| s.to_string()).collect()
            } else {
                most_frequent(la.union(&lb).copied(), |c| pool.link_count(c))
                    .map(|s| vec![s.to_string()])
                    .unwrap_or_default()
            }
        };
        if !links.is_empty() {
            merged.entity_links.insert(obj.index, links);
        }
    }

    for pos in 0..graph.relations.len() {
        let verdict = merge_relation(a.relation_verdict(pos), b.relation_verdict(pos), pool);
        merged.relation_verdicts.insert(pos, verdict);
    }

    let merged_graph = apply_annotations(graph, &merged)?;
    Ok((merged_graph, merged))
}

/// One reviewer-confirmed link in a verified-links file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedLink {
    pub meme_id: String,
    pub object: usize,
    pub kb_id: String,
}

/// Reads a JSON array of [`VerifiedLink`].
pub fn load_verified_links(path: &Path) -> Result<BTreeSet<(String, usize, String)>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let links: Vec<VerifiedLink> = serde_json::from_str(&s).map_err(|e| Error::parse("verified links", e))?;
    Ok(links.into_iter().map(|l| (l.meme_id, l.object, l.kb_id)).collect())
}

/// Both annotators' records on one meme's graph.
#[derive(Debug, Clone)]
pub struct MergeItem {
    pub split: Split,
    pub graph: SceneGraph,
    pub a: AnnotationRecord,
    pub b: AnnotationRecord,
}

/// Builds the agreement pool from the training items, then merges every
/// item. Output order follows `items`.
pub fn merge_corpus(
    items: &[MergeItem],
    verified_links: BTreeSet<(String, usize, String)>,
) -> Result<(AgreementPool, Vec<(SceneGraph, AnnotationRecord)>)> {
    let mut pool = AgreementPool::new();
    for it in items.iter().filter(|it| it.split == Split::Train) {
        pool.add(&it.graph, &it.a, &it.b)?;
    }
    let policy = MergePolicy {
        agreement_pool: pool,
        verified_links,
        ..MergePolicy::default()
    };
    let merged = items
        .iter()
        .map(|it| merge_annotators(&it.graph, &it.a, &it.b, &policy))
        .collect::<Result<Vec<_>>>()?;
    Ok((policy.agreement_pool, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, SceneObject};

    fn graph() -> SceneGraph {
        let labels = ["man", "hat", "tree", "wheel"];
        SceneGraph {
            meme_id: "m".into(),
            empty: false,
            objects: labels
                .iter()
                .enumerate()
                .map(|(i, l)| SceneObject {
                    index: [0, 1, 10, 13][i],
                    label: l.to_string(),
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    score: 0.5,
                })
                .collect(),
            relations: vec![
                RelationTriple::new(0, "wearing", 1),
                RelationTriple::new(0, "near", 10),
            ],
        }
    }

    #[test]
    fn unanimous_replacement() {
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.object_verdicts.insert(10, ObjectVerdict::incorrect("hair"));
        b.object_verdicts.insert(10, ObjectVerdict::incorrect("hair"));
        let (g, rec) = merge_annotators(&graph(), &a, &b, &MergePolicy::default()).unwrap();
        assert_eq!(g.object(10).unwrap().label, "hair");
        assert_eq!(rec.annotator_id, MERGED_ANNOTATOR);
    }

    #[test]
    fn frequency_resolution() {
        let mut pool = AgreementPool::new();
        pool.object_labels.insert("shoe".into(), 7);
        pool.object_labels.insert("foot".into(), 2);
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        b.object_verdicts.insert(13, ObjectVerdict::incorrect("foot"));
        let policy = MergePolicy::new(pool);
        let (g, _) = merge_annotators(&graph(), &a, &b, &policy).unwrap();
        assert_eq!(g.object(13).unwrap().label, "shoe");
        let (g2, _) = merge_annotators(&graph(), &b, &a, &policy).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn frequency_tie_is_lexicographic() {
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        b.object_verdicts.insert(13, ObjectVerdict::incorrect("foot"));
        let (g, _) = merge_annotators(&graph(), &a, &b, &MergePolicy::default()).unwrap();
        assert_eq!(g.object(13).unwrap().label, "foot");
    }

    #[test]
    fn correctness_disagreement_removes() {
        let a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        b.object_verdicts.insert(10, ObjectVerdict::incorrect("bush"));
        b.relation_verdicts.insert(0, RelationVerdict::Removed);
        let (g, _) = merge_annotators(&graph(), &a, &b, &MergePolicy::default()).unwrap();
        assert!(!g.has_object(10));
        // relation 0 removed by disagreement, relation 1 pruned with object 10
        assert!(g.relations.is_empty());
    }

    #[test]
    fn link_union_when_verified() {
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.entity_links.insert(0, vec!["Q359442".into()]);
        b.entity_links.insert(0, vec!["Q51730".into()]);
        let mut policy = MergePolicy::default();
        policy.verified_links.insert(("m".into(), 0, "Q359442".into()));
        policy.verified_links.insert(("m".into(), 0, "Q51730".into()));
        let (_, rec) = merge_annotators(&graph(), &a, &b, &policy).unwrap();
        assert_eq!(rec.entity_links[&0], vec!["Q359442".to_string(), "Q51730".to_string()]);

        // Without verification the more frequent link wins.
        let mut pool = AgreementPool::new();
        pool.links.insert("Q51730".into(), 3);
        let (_, rec) = merge_annotators(&graph(), &a, &b, &MergePolicy::new(pool)).unwrap();
        assert_eq!(rec.entity_links[&0], vec!["Q51730".to_string()]);
    }

    #[test]
    fn mismatched_meme_ids() {
        let a = AnnotationRecord::new("m", "a");
        let b = AnnotationRecord::new("other", "b");
        assert!(merge_annotators(&graph(), &a, &b, &MergePolicy::default()).is_err());
    }

    #[test]
    fn pool_counts_agreed_items_only() {
        let g = graph();
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        b.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        a.object_verdicts.insert(10, ObjectVerdict::Removed);
        a.entity_links.insert(0, vec!["Q8441".into()]);
        b.entity_links.insert(0, vec!["Q8441".into()]);
        let mut pool = AgreementPool::new();
        pool.add(&g, &a, &b).unwrap();
        assert_eq!(pool.label_count("shoe"), 1);
        assert_eq!(pool.label_count("man"), 1);
        assert_eq!(pool.label_count("tree"), 0);
        assert_eq!(pool.link_count("Q8441"), 1);
        assert_eq!(pool.predicate_count("wearing"), 1);
    }
}
