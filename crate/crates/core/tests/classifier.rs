use memegraphs_core::classifier::gradcheck::check_gradients;
use memegraphs_core::classifier::train::{pos_weight_of, predict, Trainer};
use memegraphs_core::classifier::{
    predictions_csv, prepare, read_predictions, run_seed, train, Checkpoint, EncodedExample, Encoder,
    ImageEmbeddings, ModelConfig, Tokenizer, TrainConfig,
};
use memegraphs_core::eval::prf1;
use memegraphs_core::model::{Label, Split, Variant};
use memegraphs_core::pipeline::CorpusRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(image_dim: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 16,
        seq_len: 12,
        image_dim,
        positions: true,
        dropout: 0.0,
        ln_eps: 1e-5,
    }
}

fn tiny_batch(image_dim: usize) -> Vec<EncodedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..6)
        .map(|b| {
            let len = 12 - b % 3;
            let mut ids = vec![2];
            ids.extend((1..len).map(|t| 4 + (b * 11 + t * 7) % 46));
            ids.resize(12, 0);
            EncodedExample {
                meme_id: b.to_string(),
                ids,
                label: Label::from_bool(b % 2 == 0),
                image: (image_dim > 0).then(|| (0..image_dim).map(|_| rng.random::<f64>() - 0.5).collect()),
            }
        })
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    for image_dim in [0, 3] {
        let enc = Encoder::new(tiny_config(image_dim), 11).unwrap();
        let checks = check_gradients(&enc, &tiny_batch(image_dim), 1.3, 1e-4).unwrap();
        assert_eq!(checks.len(), enc.params.len());
        let worst = checks
            .iter()
            .max_by(|a, b| a.rel_error(1e-9).total_cmp(&b.rel_error(1e-9)))
            .unwrap();
        assert!(worst.rel_error(1e-9) <= 1e-4, "{worst:?}");
    }
}

fn corpus(n: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let hateful = rng.random_bool(0.4);
            let cue = if hateful { "noose" } else { "cake" };
            let filler: Vec<String> = (0..4).map(|_| format!("w{}", rng.random_range(0..20))).collect();
            let text = filler.join(" ");
            CorpusRecord {
                meme_id: format!("m{i}"),
                split: match i % 5 {
                    0 => Split::Dev,
                    1 => Split::Test,
                    _ => Split::Train,
                },
                label: Label::from_bool(hateful),
                variant: Variant::SceneGr,
                input: format!("{text} [SEP] 0-man holding 1-{cue}."),
                text,
                sg_text: format!("0-man holding 1-{cue}."),
                kn_text: String::new(),
            }
        })
        .collect()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        n_seeds: 2,
        max_epochs: 12,
        dim: 16,
        heads: 2,
        ffn_dim: 32,
        ..TrainConfig::desk()
    }
}

#[test]
fn same_seed_same_predictions() {
    let records = corpus(80, 1);
    let cfg = quick_config();
    let data = prepare(&records, None, &cfg, "[SEP]").unwrap();
    let a = run_seed(&data, &cfg, 3).unwrap();
    let b = run_seed(&data, &cfg, 3).unwrap();
    assert_eq!(predictions_csv(&a.test_predictions), predictions_csv(&b.test_predictions));
    assert_eq!(a.encoder.params, b.encoder.params);
    let c = run_seed(&data, &cfg, 4).unwrap();
    assert_ne!(a.encoder.params, c.encoder.params);
}

#[test]
fn early_stopping_respects_patience() {
    let records = corpus(80, 2);
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 2,
        ..quick_config()
    };
    let data = prepare(&records, None, &cfg, "[SEP]").unwrap();
    let out = train(Encoder::new(data.model_config.clone(), 0).unwrap(), &data.train, &data.dev, &cfg, 0).unwrap();
    let mut stale = 0;
    for (i, e) in out.log.iter().enumerate() {
        stale = if e.improved { 0 } else { stale + 1 };
        assert!(stale <= cfg.patience);
        if stale == cfg.patience {
            assert_eq!(i + 1, out.log.len(), "training continued past patience");
        }
    }
    let best = out.log.iter().filter(|e| e.improved).last().unwrap();
    assert_eq!(best.epoch, out.best_epoch);
    assert_eq!(best.dev_loss, out.best_dev_loss);
}

#[test]
fn fusion_leaves_image_embeddings_untouched() {
    let records = corpus(60, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut images = ImageEmbeddings {
        dim: 5,
        ..Default::default()
    };
    for r in &records {
        images
            .vectors
            .insert(r.meme_id.clone(), (0..5).map(|_| rng.random::<f64>()).collect());
    }
    let before = images.clone();
    let cfg = quick_config();
    let data = prepare(&records, Some(&images), &cfg, "[SEP]").unwrap();
    let snapshot: Vec<Vec<f64>> = data.train.iter().map(|e| e.image.clone().unwrap()).collect();
    let out = run_seed(&data, &cfg, 0).unwrap();
    assert_eq!(images, before);
    for (e, s) in data.train.iter().zip(&snapshot) {
        let now = e.image.as_ref().unwrap();
        assert!(now.iter().zip(s).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(out.encoder.config.image_dim, 5);

    let mut partial = images.clone();
    partial.vectors.remove("m0");
    assert!(prepare(&records, Some(&partial), &cfg, "[SEP]").is_err());
}

#[test]
fn memorizes_a_small_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let texts: Vec<String> = (0..20)
        .map(|_| {
            let n = rng.random_range(5..10);
            (0..n).map(|_| format!("w{}", rng.random_range(0..30))).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let tok = Tokenizer::fit(texts.iter().map(String::as_str), "[SEP]");
    let cfg = TrainConfig::desk();
    let mc = cfg.model_config(tok.vocab_size(), 12, 0);
    let data: Vec<EncodedExample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| EncodedExample {
            meme_id: i.to_string(),
            ids: tok.encode(t, 12),
            label: Label::from_bool(i % 2 == 0),
            image: None,
        })
        .collect();
    let labels: Vec<Label> = data.iter().map(|e| e.label).collect();
    for seed in 0..3 {
        let mut t = Trainer::new(Encoder::new(mc.clone(), seed).unwrap(), &cfg, pos_weight_of(&labels).unwrap(), seed);
        let reached = (0..200).any(|_| {
            t.run_epoch(&data).unwrap();
            let pred: Vec<Label> = predict(t.encoder(), &data, 0.5).unwrap().iter().map(|p| p.label).collect();
            prf1(&pred, &labels, Label::Hateful).unwrap().f1 == 1.0
        });
        assert!(reached, "seed {seed}");
    }
}

#[test]
fn checkpoint_and_predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records = corpus(40, 4);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..quick_config()
    };
    let data = prepare(&records, None, &cfg, "[SEP]").unwrap();
    let run = run_seed(&data, &cfg, 0).unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::new(&run.encoder, &data.tokenizer, cfg.threshold).save(&path).unwrap();
    let (enc, tok) = Checkpoint::load(&path).unwrap().restore().unwrap();
    assert_eq!(enc.params, run.encoder.params);
    assert_eq!(tok.vocab(), data.tokenizer.vocab());
    let again = predict(&enc, &data.test, cfg.threshold).unwrap();
    assert_eq!(again, run.test_predictions);

    let csv = dir.path().join("pred.csv");
    std::fs::write(&csv, predictions_csv(&again)).unwrap();
    assert_eq!(read_predictions(&csv).unwrap(), again);
}
