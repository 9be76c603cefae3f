//! Seed-matching weak supervision for text classification.
//!
//! Pseudo-labels come from counting seed words. Before a confidence model is
//! trained on them, documents can be corrupted (seed deletion, random
//! deletion) so that the model cannot simply memorize the seed that produced
//! each label. The most confident pseudo-labels are then kept and grown by
//! self-training.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod corrupt;
pub mod error;
pub mod model;
pub mod rng;
pub mod select;
pub mod selftrain;
pub mod synth;
pub mod weaklabel;

pub use corpus::{tokenize, ClassId, ClassSet, Corpus, CorpusFormat, Document, SeedLexicon};
pub use corrupt::{corrupt_dataset, corrupt_document, deletion_count, random_delete, seed_delete, CorruptionKind, CorruptionSpec};
pub use error::{Error, Result};
pub use model::{EvaluateOn, LinearTextClassifier, TrainConfig};
pub use select::{noise_curve, select_oracle, select_top, selection_count, SelectionReport};
pub use selftrain::{run_pipeline, RunLedger, SelectionStrategy, SelfTrainConfig};
pub use weaklabel::{noise_stats, seed_match, synthesize_flip_noise, NoiseTransitionMatrix, Provenance, PseudoLabeledDataset};
