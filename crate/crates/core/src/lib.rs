//! Knowledge-augmented hateful meme classification.
//!
//! A meme is turned into a single text: the overlaid meme text, a separator,
//! and an augmentation built from the image's scene graph and from knowledge
//! base descriptions of the entities named in the text. That text feeds a
//! small transformer classifier. The crate also carries the human-correction
//! workflow: graph clean-up rules, two-annotator merging and agreement
//! statistics.
//!
//! Pipeline order:
//!
//! 1. [`model`] and [`dataset`]: memes and scene graphs from disk.
//! 2. [`graph_ops`]: top-k capping, clean-up, annotation merge/agreement.
//! 3. [`ner`] and [`kb`]: entity extraction and description lookup.
//! 4. [`serializer`]: scene graph and knowledge text rendering.
//! 5. [`pipeline`]: all of the above per meme and per variant.
//! 6. [`classifier`] and [`eval`]: training over seeds and reporting.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph_ops;
pub mod kb;
pub mod model;
pub mod ner;
pub mod pipeline;
pub mod serializer;
pub mod synthetic;

pub use error::{Error, Result};
