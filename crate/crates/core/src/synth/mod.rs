//! Synthetic data: glyph corpora, ruled answer sheets with exact ground
//! truth, training augmentations and rubric-scored answer text.

mod augment;
mod corpus;
mod glyph;
mod sheet;
mod text;

use thiserror::Error;

pub use augment::{apply, augment, gaussian_blur, resize_bilinear, warp_affine, AugmentDraw, AugmentParams};
pub use corpus::{generate_corpus, generate_glyph_set, split_indices, CorpusSizes, GlyphCorpus, GlyphSample, Split};
pub use glyph::{GlyphAtlas, DEFAULT_SYMBOLS, GLYPH_SIZE};
pub use sheet::{generate_sheet, random_sheet_spec, BlockSpec, BlockTruth, CellTruth, GroundTruth, SheetSpec};
pub use text::{AnswerText, Rubric, TextGenerator, KEYWORD_SYMBOLS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("unknown glyph label {0:?}")]
    UnknownLabel(String),
    #[error("invalid sheet spec: {0}")]
    Spec(String),
}
