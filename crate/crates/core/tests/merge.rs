use std::path::PathBuf;

use memegraphs_core::dataset::{load_dataset, load_merge_items, SplitSpec};
use memegraphs_core::graph_ops::{load_verified_links, merge_corpus};
use memegraphs_core::model::{AnnotationRecord, SceneGraph};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/merge")
}

#[test]
fn two_annotator_fixture_matches_expected() {
    let dir = fixture();
    let memes = load_dataset(&dir.join("memes.csv"), &SplitSpec::Column).unwrap();
    let items = load_merge_items(&memes, &dir.join("graphs"), &dir.join("annotator_a"), &dir.join("annotator_b")).unwrap();
    let verified = load_verified_links(&dir.join("verified_links.json")).unwrap();
    let (pool, merged) = merge_corpus(&items, verified).unwrap();

    assert_eq!(pool.label_count("hat"), 1);
    assert_eq!(pool.label_count("helmet"), 0, "dev memes must not feed the pool");
    assert_eq!(pool.predicate_count("holding"), 1);
    assert_eq!(pool.link_count("Q7747"), 1);

    for (meme, (graph, record)) in memes.iter().zip(&merged) {
        let expected = dir.join("expected");
        let want_graph = SceneGraph::read(&expected.join(format!("{}.graph.json", meme.id))).unwrap();
        let want_record = AnnotationRecord::read(&expected.join(format!("{}.record.json", meme.id))).unwrap();
        assert_eq!(graph, &want_graph, "graph of {}", meme.id);
        assert_eq!(record, &want_record, "record of {}", meme.id);
    }
}

#[test]
fn missing_record_is_reported() {
    let dir = fixture();
    let mut memes = load_dataset(&dir.join("memes.csv"), &SplitSpec::Column).unwrap();
    memes[0].id = "r9".into();
    let err = load_merge_items(&memes, &dir.join("graphs"), &dir.join("annotator_a"), &dir.join("annotator_b")).unwrap_err();
    assert!(err.to_string().contains("r9"), "{err}");
}
