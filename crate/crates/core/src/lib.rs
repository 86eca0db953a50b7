//! Fully automatic pipeline for reading and scoring handwritten answer sheets.

pub mod decoder;
pub mod image;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod recognizer;
pub mod rng;
pub mod scorer;
pub mod segment;
pub mod synth;

pub use decoder::{decode, CandidateLattice, DecoderConfig, Hypothesis};
pub use image::{BoundingBox, GrayImage};
pub use lm::{NGramModel, Vocabulary};
pub use metrics::{qwk, ConfusionMatrix, EvalReport, RatingPair};
pub use recognizer::{ConvNetSpec, Ensemble, Posterior, Recognizer, TrainConfig};
pub use rng::{derive_seed, Rng64};
pub use scorer::{PooledFeature, ScoreDataset, ScoreItem, Scorer, ScorerConfig, TokenSequence};
pub use segment::{SegmentError, SegmenterConfig, TextLineImage};
pub use synth::{AugmentParams, GlyphAtlas, GlyphSample, SheetSpec};
