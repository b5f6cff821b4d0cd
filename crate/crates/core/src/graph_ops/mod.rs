//! Deterministic scene-graph post-processing.
//!
//! The clean-up rules mirror the human correction guidelines: meme text
//! detected as `sign`/`letter` is dropped, repeated detections of the same
//! object collapse to one, and annotator verdicts relabel or remove items but
//! never add any. Graphs flagged `empty` (generator failures and screenshot
//! memes) pass through every operation untouched.

mod agreement;
mod merge;

use std::collections::{BTreeMap, BTreeSet, HashSet};

pub use agreement::{agreement_stats, AgreementBreakdown, AgreementReport, AgreementTable, Category};
pub use merge::{
    load_verified_links, merge_annotators, merge_corpus, AgreementPool, MergeItem, MergePolicy, TieBreak, VerifiedLink,
    MERGED_ANNOTATOR,
};

use crate::error::{Error, Result};
use crate::model::{AnnotationRecord, ObjectVerdict, RelationVerdict, SceneGraph};

pub const DEFAULT_BANNED_LABELS: [&str; 2] = ["sign", "letter"];
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.9;

pub fn default_banned_labels() -> BTreeSet<String> {
    DEFAULT_BANNED_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Keeps the `k` highest-scoring objects and renumbers them `0..n` by
/// descending score. Equal scores keep the lower original index first.
/// Relations touching a dropped object are pruned.
pub fn cap_top_k(graph: &SceneGraph, k: usize) -> SceneGraph {
    assert!(k >= 1, "cap_top_k needs k >= 1");
    if graph.empty {
        return graph.clone();
    }
    let mut ranked: Vec<_> = graph.objects.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.index.cmp(&b.index))
    });
    ranked.truncate(k);

    let remap: BTreeMap<usize, usize> = ranked
        .iter()
        .enumerate()
        .map(|(new, o)| (o.index, new))
        .collect();
    let objects = ranked
        .into_iter()
        .enumerate()
        .map(|(new, o)| {
            let mut o = o.clone();
            o.index = new;
            o
        })
        .collect();
    let relations = graph
        .relations
        .iter()
        .filter_map(|r| {
            let s = *remap.get(&r.subject_index)?;
            let o = *remap.get(&r.object_index)?;
            let mut r = r.clone();
            r.subject_index = s;
            r.object_index = o;
            Some(r)
        })
        .collect();
    SceneGraph {
        meme_id: graph.meme_id.clone(),
        empty: false,
        objects,
        relations,
    }
}

/// Drops objects whose label is banned (meme text read as a sign or as
/// letters) together with their relations. An object an annotator marked
/// correct is a real sign in the picture and stays.
pub fn filter_meme_text_objects(
    graph: &SceneGraph,
    banned_labels: &BTreeSet<String>,
    annotation: Option<&AnnotationRecord>,
) -> SceneGraph {
    if graph.empty {
        return graph.clone();
    }
    let drop: HashSet<usize> = graph
        .objects
        .iter()
        .filter(|o| banned_labels.contains(&o.label))
        .filter(|o| {
            !annotation
                .and_then(|a| a.object_verdicts.get(&o.index))
                .is_some_and(ObjectVerdict::is_correct)
        })
        .map(|o| o.index)
        .collect();
    remove_objects(graph, &drop)
}

/// Collapses repeated detections: objects sharing a label whose boxes overlap
/// with IoU at or above `iou_threshold` merge into the lowest-index one.
/// Relations are re-pointed to the survivor and exact duplicates collapsed.
pub fn dedup_objects(graph: &SceneGraph, iou_threshold: f64) -> SceneGraph {
    assert!(
        iou_threshold > 0.0 && iou_threshold <= 1.0,
        "iou_threshold must be in (0, 1]"
    );
    if graph.empty {
        return graph.clone();
    }
    let mut order: Vec<_> = graph.objects.iter().collect();
    order.sort_by_key(|o| o.index);

    let mut survivors: Vec<&crate::model::SceneObject> = Vec::new();
    let mut redirect: BTreeMap<usize, usize> = BTreeMap::new();
    for obj in order {
        let target = survivors
            .iter()
            .find(|s| s.label == obj.label && s.bbox.iou(&obj.bbox) >= iou_threshold)
            .map(|s| s.index);
        match target {
            Some(t) => {
                redirect.insert(obj.index, t);
            }
            None => {
                redirect.insert(obj.index, obj.index);
                survivors.push(obj);
            }
        }
    }

    let kept: HashSet<usize> = survivors.iter().map(|s| s.index).collect();
    let objects = graph
        .objects
        .iter()
        .filter(|o| kept.contains(&o.index))
        .cloned()
        .collect();

    let mut seen = HashSet::new();
    let relations = graph
        .relations
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(&s) = redirect.get(&r.subject_index) {
                r.subject_index = s;
            }
            if let Some(&o) = redirect.get(&r.object_index) {
                r.object_index = o;
            }
            r
        })
        .filter(|r| seen.insert(r.clone()))
        .collect();

    SceneGraph {
        meme_id: graph.meme_id.clone(),
        empty: false,
        objects,
        relations,
    }
}

/// Applies one annotator's verdicts: replacements relabel objects, corrected
/// triples replace relations, removed items disappear. Nothing is ever added.
///
/// An object marked incorrect without a replacement is removed, as is every
/// relation that touches a removed object.
pub fn apply_annotations(graph: &SceneGraph, record: &AnnotationRecord) -> Result<SceneGraph> {
    let bad = record.unresolved_keys(graph);
    if !bad.is_empty() {
        return Err(Error::Annotation(format!(
            "unresolved verdict keys for meme {}: {}",
            graph.meme_id,
            bad.join(", ")
        )));
    }
    if graph.empty {
        return Ok(graph.clone());
    }

    let mut removed = HashSet::new();
    let mut objects = Vec::with_capacity(graph.objects.len());
    for obj in &graph.objects {
        match record.object_verdict(obj.index) {
            ObjectVerdict::Correct => objects.push(obj.clone()),
            ObjectVerdict::Incorrect {
                replacement: Some(label),
            } => {
                let mut obj = obj.clone();
                obj.label = label.clone();
                objects.push(obj);
            }
            ObjectVerdict::Incorrect { replacement: None } | ObjectVerdict::Removed => {
                removed.insert(obj.index);
            }
        }
    }

    let relations = graph
        .relations
        .iter()
        .enumerate()
        .filter_map(|(pos, r)| match record.relation_verdict(pos) {
            RelationVerdict::Correct => Some(r.clone()),
            RelationVerdict::Corrected { triple } => Some(triple.clone()),
            RelationVerdict::Removed => None,
        })
        .filter(|r| !removed.contains(&r.subject_index) && !removed.contains(&r.object_index))
        .collect();

    Ok(SceneGraph {
        meme_id: graph.meme_id.clone(),
        empty: false,
        objects,
        relations,
    })
}

fn remove_objects(graph: &SceneGraph, drop: &HashSet<usize>) -> SceneGraph {
    if drop.is_empty() {
        return graph.clone();
    }
    SceneGraph {
        meme_id: graph.meme_id.clone(),
        empty: graph.empty,
        objects: graph
            .objects
            .iter()
            .filter(|o| !drop.contains(&o.index))
            .cloned()
            .collect(),
        relations: graph
            .relations
            .iter()
            .filter(|r| !drop.contains(&r.subject_index) && !drop.contains(&r.object_index))
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scene_graph, BBox, RelationTriple, SceneObject};

    fn obj(index: usize, label: &str, score: f64) -> SceneObject {
        SceneObject {
            index,
            label: label.to_string(),
            bbox: BBox::new(index as f64, 0.0, index as f64 + 10.0, 10.0),
            score,
        }
    }

    fn graph(objects: Vec<SceneObject>, relations: Vec<RelationTriple>) -> SceneGraph {
        SceneGraph {
            meme_id: "m".into(),
            empty: false,
            objects,
            relations,
        }
    }

    #[test]
    fn cap_keeps_highest_scores_and_prunes() {
        // 18 objects with scores rising with index: the top 16 are 2..=17.
        let objects = (0..18).map(|i| obj(i, "thing", 0.1 + i as f64 * 0.01)).collect();
        let g = graph(
            objects,
            vec![
                RelationTriple::new(0, "near", 17),
                RelationTriple::new(17, "near", 16),
                RelationTriple::new(1, "on", 2),
            ],
        );
        let capped = cap_top_k(&g, 16);
        assert_eq!(capped.objects.len(), 16);
        assert!(validate_scene_graph(&capped).is_empty());
        // old 17 -> new 0, old 16 -> new 1
        assert_eq!(capped.relations, vec![RelationTriple::new(0, "near", 1)]);
        let scores: Vec<f64> = capped.objects.iter().map(|o| o.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(capped.objects.iter().map(|o| o.index).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn cap_under_limit_is_identity() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(1, "shirt", 0.8), obj(2, "eye", 0.7)],
            vec![RelationTriple::new(0, "wearing", 1)],
        );
        assert_eq!(cap_top_k(&g, 16), g);
    }

    #[test]
    fn cap_tie_at_cut_keeps_lower_index() {
        // Oracle: enumerate the objects, stable-sort by descending score and
        // take the first two; stable sort keeps index order among ties.
        let objects = vec![obj(0, "a", 0.9), obj(1, "b", 0.5), obj(2, "c", 0.5), obj(3, "d", 0.1)];
        let mut oracle: Vec<(usize, f64)> = objects.iter().map(|o| (o.index, o.score)).collect();
        oracle.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        let expected: Vec<&str> = oracle[..2]
            .iter()
            .map(|(i, _)| objects[*i].label.as_str())
            .collect();
        assert_eq!(expected, vec!["a", "b"]);

        let capped = cap_top_k(&graph(objects.clone(), vec![]), 2);
        let labels: Vec<&str> = capped.objects.iter().map(|o| o.label.as_str()).collect();
        assert_eq!(labels, expected);
    }

    #[test]
    fn filter_drops_sign_and_its_relations() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(3, "sign", 0.8), obj(4, "letter", 0.7)],
            vec![
                RelationTriple::new(0, "holding", 3),
                RelationTriple::new(4, "on", 3),
            ],
        );
        let f = filter_meme_text_objects(&g, &default_banned_labels(), None);
        assert_eq!(f.objects.len(), 1);
        assert!(f.relations.is_empty());
    }

    #[test]
    fn filter_noop_without_banned_labels() {
        let g = graph(vec![obj(0, "man", 0.9)], vec![RelationTriple::new(0, "near", 0)]);
        assert_eq!(filter_meme_text_objects(&g, &default_banned_labels(), None), g);
    }

    #[test]
    fn filter_keeps_sign_marked_correct() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(3, "sign", 0.8)],
            vec![RelationTriple::new(0, "holding", 3)],
        );
        let mut rec = AnnotationRecord::new("m", "merged");
        rec.object_verdicts.insert(3, ObjectVerdict::Correct);
        assert_eq!(filter_meme_text_objects(&g, &default_banned_labels(), Some(&rec)), g);
    }

    #[test]
    fn dedup_identical_boxes_merge() {
        let mut a = obj(0, "man", 0.9);
        let mut b = obj(1, "man", 0.8);
        a.bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
        b.bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g = graph(
            vec![a, b, obj(2, "hat", 0.5)],
            vec![RelationTriple::new(0, "wearing", 2), RelationTriple::new(1, "wearing", 2)],
        );
        let d = dedup_objects(&g, DEFAULT_IOU_THRESHOLD);
        assert_eq!(d.objects.iter().map(|o| o.index).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(d.relations, vec![RelationTriple::new(0, "wearing", 2)]);
    }

    #[test]
    fn dedup_partial_overlap_keeps_both() {
        let mut a = obj(0, "man", 0.9);
        let mut b = obj(1, "man", 0.8);
        a.bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
        b.bbox = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!(a.bbox.iou(&b.bbox) < DEFAULT_IOU_THRESHOLD);
        let g = graph(vec![a, b], vec![]);
        assert_eq!(dedup_objects(&g, DEFAULT_IOU_THRESHOLD), g);
    }

    #[test]
    fn dedup_label_mismatch_keeps_both() {
        let mut a = obj(0, "man", 0.9);
        let mut b = obj(1, "woman", 0.8);
        a.bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
        b.bbox = a.bbox;
        let g = graph(vec![a, b], vec![]);
        assert_eq!(dedup_objects(&g, DEFAULT_IOU_THRESHOLD), g);
    }

    #[test]
    fn apply_replacement() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(13, "wheel", 0.4)],
            vec![RelationTriple::new(0, "has", 13)],
        );
        let mut rec = AnnotationRecord::new("m", "a");
        rec.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        let out = apply_annotations(&g, &rec).unwrap();
        assert_eq!(out.object(13).unwrap().label, "shoe");
        assert_eq!(out.relations, g.relations);
    }

    #[test]
    fn apply_empty_record_is_identity() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(1, "hat", 0.4)],
            vec![RelationTriple::new(0, "wearing", 1)],
        );
        assert_eq!(apply_annotations(&g, &AnnotationRecord::new("m", "a")).unwrap(), g);
    }

    #[test]
    fn apply_dangling_key_errors() {
        let g = graph(vec![obj(0, "man", 0.9)], vec![]);
        let mut rec = AnnotationRecord::new("m", "a");
        rec.object_verdicts.insert(99, ObjectVerdict::Removed);
        let err = apply_annotations(&g, &rec).unwrap_err().to_string();
        assert!(err.contains("object 99"), "{err}");
    }

    #[test]
    fn apply_removals_and_relation_corrections() {
        let g = graph(
            vec![obj(0, "man", 0.9), obj(1, "hat", 0.5), obj(2, "tree", 0.3)],
            vec![
                RelationTriple::new(0, "wearing", 1),
                RelationTriple::new(0, "near", 2),
                RelationTriple::new(1, "on", 0),
            ],
        );
        let mut rec = AnnotationRecord::new("m", "a");
        rec.object_verdicts.insert(2, ObjectVerdict::Incorrect { replacement: None });
        rec.relation_verdicts.insert(
            2,
            RelationVerdict::Corrected {
                triple: RelationTriple::new(1, "above", 0),
            },
        );
        rec.relation_verdicts.insert(0, RelationVerdict::Removed);
        let out = apply_annotations(&g, &rec).unwrap();
        assert_eq!(out.objects.len(), 2);
        assert_eq!(out.relations, vec![RelationTriple::new(1, "above", 0)]);
    }

    #[test]
    fn empty_graphs_are_skipped() {
        let g = SceneGraph::empty("shot");
        assert_eq!(cap_top_k(&g, 16), g);
        assert_eq!(dedup_objects(&g, 0.9), g);
        assert_eq!(filter_meme_text_objects(&g, &default_banned_labels(), None), g);
        assert_eq!(apply_annotations(&g, &AnnotationRecord::new("shot", "a")).unwrap(), g);
    }
}
