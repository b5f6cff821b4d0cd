//! Desk-scale transformer classifier over the serialized inputs, optionally
//! fused with a frozen image embedding.

pub mod encoder;
pub mod gradcheck;
pub mod tokenizer;
pub mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::minority_class;
use crate::model::{Label, Split};
use crate::pipeline::CorpusRecord;

pub use encoder::{sigmoid, Encoder, Layout, ModelConfig, TensorSpec};
pub use tokenizer::{compute_max_length, Tokenizer};
pub use train::{
    predict, run_seed, run_seeds, train, weighted_bce, EncodedExample, EpochLog, Prediction, SeedOutcome,
    TrainConfig, TrainOutcome, Trainer,
};

/// Image embeddings keyed by meme id, all of one length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    meme_id: String,
    embedding: Vec<f64>,
}

impl ImageEmbeddings {
    /// JSON lines of `{"meme_id": ..., "embedding": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = ImageEmbeddings::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine =
                serde_json::from_str(line).map_err(|e| Error::parse(format!("embeddings line {}", i + 1), e))?;
            if out.vectors.is_empty() {
                out.dim = rec.embedding.len();
            } else if rec.embedding.len() != out.dim {
                return Err(Error::parse(
                    format!("embeddings line {}", i + 1),
                    format!("length {} differs from {}", rec.embedding.len(), out.dim),
                ));
            }
            out.vectors.insert(rec.meme_id, rec.embedding);
        }
        if out.dim == 0 {
            return Err(Error::parse("embeddings", "no non-empty vectors"));
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> String {
        self.vectors
            .iter()
            .map(|(id, v)| {
                serde_json::to_string(&EmbeddingLine {
                    meme_id: id.clone(),
                    embedding: v.clone(),
                })
                .expect("embedding serializes")
                    + "\n"
            })
            .collect()
    }
}

/// A corpus tokenized for training, with the encoder shape fixed by the
/// training split.
pub struct PreparedData {
    pub tokenizer: Tokenizer,
    pub model_config: ModelConfig,
    pub train: Vec<EncodedExample>,
    pub dev: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    /// Minority class of the training split, scored as positive.
    pub positive: Label,
}

/// Builds the vocabulary and sequence length from the training records and
/// encodes every split. With `images`, every meme needs an embedding.
pub fn prepare(
    records: &[CorpusRecord],
    images: Option<&ImageEmbeddings>,
    cfg: &TrainConfig,
    separator: &str,
) -> Result<PreparedData> {
    let train_inputs: Vec<&str> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.input.as_str())
        .collect();
    let tokenizer = Tokenizer::fit(train_inputs.iter().copied(), separator);
    let max_len = compute_max_length(train_inputs.iter().copied(), &tokenizer)?;
    let seq_len = (max_len + 1).max(cfg.min_seq_len);
    let image_dim = images.map_or(0, |i| i.dim);
    let model_config = cfg.model_config(tokenizer.vocab_size(), seq_len, image_dim);

    let mut missing = Vec::new();
    let mut splits: BTreeMap<Split, Vec<EncodedExample>> = BTreeMap::new();
    for r in records {
        let image = match images {
            Some(imgs) => match imgs.vectors.get(&r.meme_id) {
                Some(v) => Some(v.clone()),
                None => {
                    missing.push(r.meme_id.clone());
                    continue;
                }
            },
            None => None,
        };
        splits.entry(r.split).or_default().push(EncodedExample {
            meme_id: r.meme_id.clone(),
            ids: tokenizer.encode(&r.input, seq_len),
            label: r.label,
            image,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Model(format!("no image embedding for {}", missing.join(", "))));
    }
    let mut take = |s| splits.remove(&s).unwrap_or_default();
    let (train, dev, test) = (take(Split::Train), take(Split::Dev), take(Split::Test));
    let labels: Vec<Label> = train.iter().map(|e| e.label).collect();
    Ok(PreparedData {
        positive: minority_class(&labels),
        tokenizer,
        model_config,
        train,
        dev,
        test,
    })
}

pub const CHECKPOINT_FORMAT: &str = "memegraphs-checkpoint/1";

/// Saved model: configuration, vocabulary, the tensor table and the flat
/// weight vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub separator: String,
    pub vocab: Vec<String>,
    pub threshold: f64,
    pub tensors: Vec<TensorSpec>,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn new(encoder: &Encoder, tokenizer: &Tokenizer, threshold: f64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: encoder.config.clone(),
            separator: tokenizer.separator().to_string(),
            vocab: tokenizer.vocab().to_vec(),
            threshold,
            tensors: encoder.layout.tensors.clone(),
            weights: encoder.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serialize(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse("checkpoint", e))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::parse("checkpoint", format!("unknown format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn restore(&self) -> Result<(Encoder, Tokenizer)> {
        let encoder = Encoder::from_params(self.config.clone(), self.weights.clone())?;
        if encoder.layout.tensors != self.tensors {
            return Err(Error::parse("checkpoint", "tensor table does not match the configuration"));
        }
        let tokenizer = Tokenizer::from_json(
            &serde_json::json!({"separator": self.separator, "vocab": self.vocab}).to_string(),
        )?;
        if tokenizer.vocab_size() != self.config.vocab_size {
            return Err(Error::parse("checkpoint", "vocabulary size does not match the configuration"));
        }
        Ok((encoder, tokenizer))
    }
}

/// CSV with header `meme_id,probability,label`.
pub fn predictions_csv(predictions: &[Prediction]) -> String {
    let mut s = String::from("meme_id,probability,label\n");
    for p in predictions {
        s.push_str(&format!("{},{},{}\n", csv_field(&p.meme_id), p.probability, p.label.as_u8()));
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    reader
        .deserialize::<(String, f64, u8)>()
        .map(|row| {
            let (meme_id, probability, label) = row.map_err(|e| Error::parse("predictions", e))?;
            Ok(Prediction {
                meme_id,
                probability,
                label: Label::try_from(label).map_err(|e| Error::parse("predictions", e))?,
            })
        })
        .collect()
}
