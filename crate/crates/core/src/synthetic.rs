//! Generated corpora where the label is a known function of the
//! augmentation content.
//!
//! Every meme names one invented person and comes with a two-relation scene
//! graph. A meme is hateful when its graph contains a hostile object or the
//! named person's knowledge-base description opens with a hostile category
//! word. The meme text itself carries no signal, so a text-only classifier
//! cannot beat chance while the augmented variants can.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{graph_path, write_dataset};
use crate::error::Result;
use crate::kb::{CacheFile, CachedResponse, KbHit};
use crate::model::{BBox, Label, Meme, RelationTriple, SceneGraph, SceneObject, Split};
use crate::ner::Gazetteer;

pub const HOSTILE_OBJECTS: [&str; 4] = ["noose", "torch", "pitchfork", "club"];
pub const HOSTILE_CATEGORIES: [&str; 4] = ["Extremist", "Militant", "Supremacist", "Bigoted"];
const NEUTRAL_OBJECTS: [&str; 8] = ["cake", "balloon", "guitar", "dog", "hat", "chair", "flower", "cup"];
const NEUTRAL_CATEGORIES: [&str; 4] = ["Retired", "Popular", "Local", "Amateur"];
const PEOPLE: [&str; 4] = ["man", "woman", "boy", "girl"];
const PREDICATES: [&str; 4] = ["holding", "near", "wearing", "behind"];
const ROLES: [&str; 6] = ["politician", "blogger", "musician", "activist", "preacher", "journalist"];
const ROLE_QUALIFIERS: [&str; 4] = ["online", "former", "regional", "independent"];
const FILLER: [&str; 24] = [
    "when", "you", "finally", "see", "that", "guy", "again", "today", "me", "after", "they", "said",
    "nobody", "asked", "for", "this", "look", "at", "him", "now", "every", "single", "time", "lol",
];
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mir", "ven", "tas", "dru", "pel", "sor", "fen", "gul", "ra", "tho", "bex", "nim", "quo", "zar",
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_memes: usize,
    pub seed: u64,
    /// Fractions of memes in train and dev; the rest is test.
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub hostile_object_rate: f64,
    pub hostile_entity_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_memes: 600,
            seed: 0,
            train_fraction: 0.6,
            dev_fraction: 0.2,
            hostile_object_rate: 0.25,
            hostile_entity_rate: 0.25,
        }
    }
}

pub struct SyntheticCorpus {
    pub memes: Vec<Meme>,
    pub graphs: Vec<SceneGraph>,
    pub gazetteer: Gazetteer,
    pub kb_cache: CacheFile,
}

/// The labelling rule, applied to rendered augmentation text.
pub fn label_from_augmentation(sg_text: &str, kn_text: &str) -> Label {
    let hostile_object = sg_text
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| HOSTILE_OBJECTS.contains(&w));
    let hostile_entity = HOSTILE_CATEGORIES
        .iter()
        .any(|c| kn_text.starts_with(&format!("{c} ")));
    Label::from_bool(hostile_object || hostile_entity)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn invent_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let word = |rng: &mut ChaCha8Rng| {
        let a = SYLLABLES.choose(rng).unwrap();
        let b = SYLLABLES.choose(rng).unwrap();
        capitalize(&format!("{a}{b}"))
    };
    let mut seen = BTreeSet::new();
    let mut names = Vec::with_capacity(n);
    while names.len() < n {
        let name = format!("{} {}", word(rng), word(rng));
        if seen.insert(name.clone()) {
            names.push(name);
        }
    }
    names
}

fn object(rng: &mut ChaCha8Rng, index: usize, label: &str) -> SceneObject {
    let x = rng.random_range(0.0..200.0);
    let y = rng.random_range(0.0..200.0);
    SceneObject {
        index,
        label: label.to_string(),
        bbox: BBox::new(x, y, x + rng.random_range(20.0..200.0), y + rng.random_range(20.0..200.0)),
        score: rng.random_range(0.3..1.0),
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = invent_names(&mut rng, spec.n_memes);
    let n_train = (spec.n_memes as f64 * spec.train_fraction).round() as usize;
    let n_dev = (spec.n_memes as f64 * spec.dev_fraction).round() as usize;

    let mut memes = Vec::with_capacity(spec.n_memes);
    let mut graphs = Vec::with_capacity(spec.n_memes);
    let mut aliases = BTreeMap::new();
    let mut cache = CacheFile::new();
    for (i, name) in names.iter().enumerate() {
        let id = format!("syn{i:04}");
        let hostile_object = rng.random_bool(spec.hostile_object_rate);
        let hostile_entity = rng.random_bool(spec.hostile_entity_rate);

        let mut filler: Vec<&str> = FILLER.choose_multiple(&mut rng, 4).copied().collect();
        filler.shuffle(&mut rng);
        let text = format!("{} {} {} {} {}", filler[0], filler[1], name, filler[2], filler[3]);

        let person = PEOPLE.choose(&mut rng).unwrap();
        let mut things: Vec<&str> = NEUTRAL_OBJECTS.choose_multiple(&mut rng, 2).copied().collect();
        if hostile_object {
            let slot = rng.random_range(0..2);
            things[slot] = HOSTILE_OBJECTS.choose(&mut rng).unwrap();
        }
        let objects = vec![
            object(&mut rng, 0, person),
            object(&mut rng, 1, things[0]),
            object(&mut rng, 2, things[1]),
        ];
        let relations = vec![
            RelationTriple::new(0, *PREDICATES.choose(&mut rng).unwrap(), 1),
            RelationTriple::new(0, *PREDICATES.choose(&mut rng).unwrap(), 2),
        ];
        graphs.push(SceneGraph {
            meme_id: id.clone(),
            empty: false,
            objects,
            relations,
        });

        let category = if hostile_entity {
            HOSTILE_CATEGORIES.choose(&mut rng).unwrap()
        } else {
            NEUTRAL_CATEGORIES.choose(&mut rng).unwrap()
        };
        let description = format!(
            "{category} {} {}.",
            ROLE_QUALIFIERS.choose(&mut rng).unwrap(),
            ROLES.choose(&mut rng).unwrap()
        );
        let kb_id = format!("Q{}", 900_000 + i);
        cache.entries.insert(
            name.clone(),
            CachedResponse {
                search: vec![KbHit {
                    id: kb_id.clone(),
                    label: Some(name.clone()),
                    description: Some(description.clone()),
                }],
                selected: Some(kb_id),
                description: Some(description),
            },
        );
        aliases.insert(name.clone(), Vec::new());

        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        memes.push(Meme {
            id,
            text,
            image_ref: None,
            label: Label::from_bool(hostile_object || hostile_entity),
            split,
        });
    }
    Ok(SyntheticCorpus {
        memes,
        graphs,
        gazetteer: Gazetteer::new(aliases)?,
        kb_cache: cache,
    })
}

impl SyntheticCorpus {
    /// Writes `memes.csv`, `graphs/`, `gazetteer.json` and `kb_cache.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let graphs = dir.join("graphs");
        std::fs::create_dir_all(&graphs).map_err(|e| crate::Error::io(&graphs, e))?;
        write_dataset(&dir.join("memes.csv"), &self.memes)?;
        for g in &self.graphs {
            g.write(&graph_path(&graphs, &g.meme_id))?;
        }
        let gaz: BTreeMap<&str, Vec<String>> = self
            .kb_cache
            .entries
            .keys()
            .map(|k| (k.as_str(), Vec::new()))
            .collect();
        let gaz_path = dir.join("gazetteer.json");
        std::fs::write(&gaz_path, serde_json::to_string_pretty(&gaz).expect("gazetteer serializes"))
            .map_err(|e| crate::Error::io(&gaz_path, e))?;
        self.kb_cache.save(&dir.join("kb_cache.json"))
    }
}
