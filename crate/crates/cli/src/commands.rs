use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use memegraphs_core::classifier::{predictions_csv, prepare, read_predictions, run_seeds, Checkpoint, ImageEmbeddings, TrainConfig};
use memegraphs_core::dataset::{
    graph_path, load_dataset, load_graph, load_graphs, load_merge_items, load_multioff, load_records, write_dataset,
    DatasetStats, GraphStats, SplitSpec,
};
use memegraphs_core::eval::{minority_class, prf1, render_report, RunReport};
use memegraphs_core::graph_ops::{cap_top_k, load_verified_links, merge_corpus, AgreementTable, Category};
use memegraphs_core::kb::{KbClient, KbConfig, KbMode};
use memegraphs_core::model::{Label, Meme, Split, Variant, OBJECT_CAP};
use memegraphs_core::ner::{Gazetteer, NerEngine};
use memegraphs_core::pipeline::{link_entities, pipeline_augment, read_corpus, write_corpora, PipelineOptions};
use memegraphs_core::serializer::{serialize_knowledge, serialize_scene_graph};
use memegraphs_core::Error as CoreError;
use serde::Serialize;

use crate::{DatasetArgs, KbArgs, NerArgs};

/// Bad input content that is not a core error.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::InvalidData { 1 } else { 2 };
        }
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
    }
    1
}

/// The error chain on one line, skipping causes the previous message
/// already quotes.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_memes(args: &DatasetArgs) -> Result<Vec<Meme>> {
    if let Some(dir) = &args.multioff {
        return Ok(load_multioff(dir)?);
    }
    let path = args.dataset.as_ref().expect("clap enforces --dataset");
    let spec = match args.split_files.as_deref() {
        Some([train, dev, test]) => SplitSpec::IdFiles {
            train: train.clone(),
            dev: dev.clone(),
            test: test.clone(),
        },
        _ => SplitSpec::Column,
    };
    Ok(load_dataset(path, &spec)?)
}

fn kb_client(args: &KbArgs) -> Result<KbClient> {
    if args.kb_mode == KbMode::Replay && args.kb_cache.is_none() {
        return Err(Invalid("--kb-mode replay needs --kb-cache".into()).into());
    }
    let config = KbConfig {
        base_url: args.kb_url.clone(),
        mode: args.kb_mode,
        cache_path: args.kb_cache.clone(),
        requests_per_second: args.kb_rate,
        ..KbConfig::default()
    };
    Ok(KbClient::new(config)?)
}

fn ner_engine(args: &NerArgs) -> Result<NerEngine> {
    let gazetteer = match &args.gazetteer {
        Some(p) => Gazetteer::load(p)?,
        None => Gazetteer::us_election_2016(),
    };
    Ok(match &args.ner_sidecar {
        Some(p) => NerEngine::external_import(gazetteer, p)?,
        None => NerEngine::gazetteer(gazetteer),
    })
}

pub fn ingest(data: &DatasetArgs, graphs: Option<&Path>, write: Option<&Path>) -> Result<()> {
    let memes = load_memes(data)?;
    println!("{}", DatasetStats::of(&memes).summary());
    if let Some(dir) = graphs {
        let loaded = load_graphs(dir, &memes)?;
        let capped: Vec<_> = loaded.values().map(|g| cap_top_k(g, OBJECT_CAP)).collect();
        let stats = GraphStats::of(&capped);
        println!(
            "graphs: {} ({} empty); objects {}..{}; relations {}..{}; {} labels, {} predicates",
            stats.graphs,
            stats.empty,
            stats.min_objects,
            stats.max_objects,
            stats.min_relations,
            stats.max_relations,
            stats.unique_labels,
            stats.unique_predicates
        );
    }
    if let Some(out) = write {
        write_dataset(out, &memes)?;
    }
    Ok(())
}

pub struct AugmentRequest<'a> {
    pub data: &'a DatasetArgs,
    pub graphs: Option<&'a Path>,
    pub out: &'a Path,
    pub variants: Vec<Variant>,
    pub kb: &'a KbArgs,
    pub ner: &'a NerArgs,
    pub iou_threshold: Option<f64>,
    pub banned_labels: Option<Vec<String>>,
    pub annotations: Option<&'a Path>,
    pub separator: String,
}

pub fn augment(req: AugmentRequest<'_>) -> Result<()> {
    let memes = load_memes(req.data)?;
    let mut options = PipelineOptions {
        separator: req.separator,
        iou_threshold: req.iou_threshold,
        banned_labels: req
            .banned_labels
            .map(|v| v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
        ..PipelineOptions::default()
    };
    if !req.variants.is_empty() {
        let mut v = req.variants;
        v.dedup();
        options.variants = v;
    }
    if let Some(t) = options.iou_threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Invalid(format!("--iou-threshold {t} is outside (0, 1]")).into());
        }
    }
    if let Some(dir) = req.annotations {
        let available: Vec<Meme> = memes.iter().filter(|m| graph_path(dir, &m.id).exists()).cloned().collect();
        options.annotations = load_records(dir, &available)?;
    }
    let needs_kb = options.variants.iter().any(|v| v.uses_knowledge());
    let kb = if needs_kb {
        kb_client(req.kb)?
    } else {
        KbClient::with_cache(KbConfig::default(), Default::default())
    };
    let ner = ner_engine(req.ner)?;
    let aug = pipeline_augment(&memes, req.graphs, &ner, &kb, &options)?;
    for p in write_corpora(req.out, &aug, &options)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct LinkLine<'a> {
    meme_id: &'a str,
    entities: Vec<memegraphs_core::model::EntityLink>,
}

pub fn link(data: &DatasetArgs, out: Option<&Path>, kb: &KbArgs, ner: &NerArgs) -> Result<()> {
    let memes = load_memes(data)?;
    let client = kb_client(kb)?;
    let engine = ner_engine(ner)?;
    let mut text = String::new();
    for m in &memes {
        let line = LinkLine {
            meme_id: &m.id,
            entities: link_entities(m, &engine, &client)?,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    match out {
        Some(p) => write_file(p, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn serialize(graph: Option<&Path>, descriptions: &[String]) -> Result<()> {
    if graph.is_none() && descriptions.is_empty() {
        return Err(Invalid("nothing to serialize: pass --graph and/or --description".into()).into());
    }
    if let Some(p) = graph {
        let g = memegraphs_core::model::SceneGraph::read(p)?;
        let problems = memegraphs_core::model::validate_raw_scene_graph(&g);
        if !problems.is_empty() {
            return Err(Invalid(format!("{}: {}", p.display(), problems.join("; "))).into());
        }
        println!("{}", serialize_scene_graph(&cap_top_k(&g, OBJECT_CAP)));
    }
    if !descriptions.is_empty() {
        println!("{}", serialize_knowledge(descriptions));
    }
    Ok(())
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(p) = path else {
        return Ok(TrainConfig::desk());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())).into())
}

pub fn train(corpus: &Path, config: Option<&Path>, seeds: Option<usize>, images: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        cfg.n_seeds = n;
    }
    cfg.validate()?;
    let records = read_corpus(corpus)?;
    let Some(first) = records.first() else {
        return Err(Invalid(format!("{} is empty", corpus.display())).into());
    };
    let variant = first.variant;
    if records.iter().any(|r| r.variant != variant) {
        return Err(Invalid(format!("{} mixes variants", corpus.display())).into());
    }
    let images = images.map(ImageEmbeddings::load).transpose()?;
    let separator = memegraphs_core::serializer::DEFAULT_SEPARATOR;
    let data = prepare(&records, images.as_ref(), &cfg, separator)?;
    if data.train.is_empty() {
        return Err(Invalid("no training memes".into()).into());
    }
    log::info!(
        "{} train / {} dev / {} test, vocab {}, seq_len {}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        data.tokenizer.vocab_size(),
        data.model_config.seq_len
    );
    let outcomes = run_seeds(&data, &cfg)?;
    let runs: Vec<_> = outcomes.iter().map(|o| o.summary()).collect();
    let report = RunReport::new(variant, runs, cfg.dev_criterion)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for o in &outcomes {
        write_file(&out.join(format!("predictions/seed{}_dev.csv", o.seed)), predictions_csv(&o.dev_predictions).as_bytes())?;
        write_file(&out.join(format!("predictions/seed{}_test.csv", o.seed)), predictions_csv(&o.test_predictions).as_bytes())?;
    }
    let best = outcomes
        .iter()
        .find(|o| o.seed == report.best_dev_seed)
        .expect("best seed is one of the runs");
    Checkpoint::new(&best.encoder, &data.tokenizer, cfg.threshold).save(&out.join("model.json"))?;
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    print!("{}", render_report(std::slice::from_ref(&report)));
    Ok(())
}

pub fn eval(reports: &[std::path::PathBuf], predictions: Option<&Path>, corpus: Option<&Path>) -> Result<()> {
    if let (Some(pred), Some(corpus)) = (predictions, corpus) {
        let records = read_corpus(corpus)?;
        let labels: BTreeMap<&str, (Split, Label)> =
            records.iter().map(|r| (r.meme_id.as_str(), (r.split, r.label))).collect();
        let train: Vec<Label> = records.iter().filter(|r| r.split == Split::Train).map(|r| r.label).collect();
        let positive = minority_class(&train);
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for p in read_predictions(pred)? {
            let Some(&(_, label)) = labels.get(p.meme_id.as_str()) else {
                return Err(Invalid(format!("prediction for unknown meme {}", p.meme_id)).into());
            };
            got.push(p.label);
            want.push(label);
        }
        let s = prf1(&got, &want, positive)?;
        println!("P {:.3}  R {:.3}  F1 {:.3}  (n={}, positive={})", s.precision, s.recall, s.f1, got.len(), positive.as_u8());
        return Ok(());
    }
    if reports.is_empty() {
        return Err(Invalid("pass --report files or --predictions with --corpus".into()).into());
    }
    let loaded = reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunReport>(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())).into())
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_report(&loaded));
    Ok(())
}

pub fn agree(data: &DatasetArgs, graphs: &Path, a: &Path, b: &Path) -> Result<()> {
    let memes = load_memes(data)?;
    let ra = load_records(a, &memes)?;
    let rb = load_records(b, &memes)?;
    for category in [Category::Objects, Category::Relations] {
        let mut table = AgreementTable::new(category);
        for m in &memes {
            let g = cap_top_k(&load_graph(graphs, &m.id)?, OBJECT_CAP);
            table.add_on_graph(&g, &ra[&m.id], &rb[&m.id])?;
        }
        match table.report() {
            Ok(r) => println!(
                "{category}: {} items, agreement {:.2}%, kappa {:.2}",
                r.n_items,
                100.0 * r.percent_agreement,
                r.kappa
            ),
            Err(e) => println!("{category}: {e}"),
        }
    }
    Ok(())
}

pub fn merge(data: &DatasetArgs, graphs: &Path, a: &Path, b: &Path, verified: Option<&Path>, out: &Path) -> Result<()> {
    let memes = load_memes(data)?;
    let items = load_merge_items(&memes, graphs, a, b)?;
    let verified = verified.map(load_verified_links).transpose()?.unwrap_or_default();
    let (pool, merged) = merge_corpus(&items, verified)?;
    for (graph, record) in &merged {
        write_file(&out.join("records").join(format!("{}.json", graph.meme_id)), record.to_json().as_bytes())?;
        write_file(&out.join("graphs").join(format!("{}.json", graph.meme_id)), (graph.to_json() + "\n").as_bytes())?;
    }
    println!(
        "merged {} memes; pool of {} labels, {} predicates, {} links",
        merged.len(),
        pool.object_labels.len(),
        pool.predicates.len(),
        pool.links.len()
    );
    Ok(())
}

pub fn serve(data: &DatasetArgs, graphs: &Path, log_path: &Path, addr: &str, kb: &KbArgs) -> Result<()> {
    use memegraphs_service::{AppState, FileLog, Store};
    let memes = load_memes(data)?;
    let graphs = load_graphs(graphs, &memes)?;
    let log = FileLog::open(log_path).with_context(|| format!("opening {}", log_path.display()))?;
    let store = Store::open(memes, graphs, Box::new(log)).with_context(|| format!("replaying {}", log_path.display()))?;
    let kb = if kb.kb_mode == KbMode::Replay && kb.kb_cache.is_none() {
        None
    } else {
        Some(Arc::new(kb_client(kb)?))
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        memegraphs_service::serve(listener, AppState { store: Arc::new(store), kb }).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    bail!("server stopped")
}
