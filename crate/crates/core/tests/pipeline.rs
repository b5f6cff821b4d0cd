use std::path::PathBuf;
use std::time::Instant;

use memegraphs_core::dataset::{load_dataset, DatasetStats, SplitSpec};
use memegraphs_core::kb::{CacheFile, KbClient, KbConfig, KbMode};
use memegraphs_core::model::{Split, Variant};
use memegraphs_core::ner::{Gazetteer, NerEngine};
use memegraphs_core::pipeline::{corpus_file_name, pipeline_augment, write_corpora, PipelineOptions};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pipeline")
}

fn replay_client() -> KbClient {
    let cache = CacheFile::load(&fixture().join("kb_cache.json")).unwrap();
    KbClient::with_cache(
        KbConfig {
            mode: KbMode::Replay,
            ..KbConfig::default()
        },
        cache,
    )
}

/// Set MEMEGRAPHS_BLESS=1 to rewrite the golden files after a deliberate
/// format change, then review the diff.
#[test]
fn fixture_matches_golden_files() {
    let start = Instant::now();
    let dir = fixture();
    let memes = load_dataset(&dir.join("memes.csv"), &SplitSpec::Column).unwrap();
    let stats = DatasetStats::of(&memes);
    assert_eq!(stats.memes.as_tuple(), (8, 2, 2));
    assert_eq!(stats.hateful.get(Split::Train), 4);

    let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
    let kb = replay_client();
    let options = PipelineOptions::default();
    let aug = pipeline_augment(&memes, Some(&dir.join("graphs")), &ner, &kb, &options).unwrap();
    assert_eq!(kb.request_count(), 0);

    let out = tempfile::tempdir().unwrap();
    write_corpora(out.path(), &aug, &options).unwrap();
    let golden = dir.join("golden");
    for v in Variant::ALL {
        let name = corpus_file_name(v);
        let got = std::fs::read(out.path().join(&name)).unwrap();
        if std::env::var_os("MEMEGRAPHS_BLESS").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(golden.join(&name), &got).unwrap();
            continue;
        }
        let want = std::fs::read(golden.join(&name)).unwrap();
        assert!(got == want, "{name} differs from golden:\n{}", String::from_utf8_lossy(&got));
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn replay_is_deterministic() {
    let dir = fixture();
    let memes = load_dataset(&dir.join("memes.csv"), &SplitSpec::Column).unwrap();
    let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
    let options = PipelineOptions::default();
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let aug = pipeline_augment(&memes, Some(&dir.join("graphs")), &ner, &replay_client(), &options).unwrap();
        write_corpora(out.path(), &aug, &options)
            .unwrap()
            .iter()
            .map(|p| std::fs::read(p).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn replay_miss_is_an_error() {
    let dir = fixture();
    let mut memes = load_dataset(&dir.join("memes.csv"), &SplitSpec::Column).unwrap();
    memes[0].text = "Ben Carson for president".into();
    let ner = NerEngine::gazetteer(Gazetteer::us_election_2016());
    let err = pipeline_augment(&memes, Some(&dir.join("graphs")), &ner, &replay_client(), &PipelineOptions::default())
        .unwrap_err();
    assert!(err.to_string().contains("Ben Carson"), "{err}");
}
