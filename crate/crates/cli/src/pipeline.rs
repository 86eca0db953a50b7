//! Reading one sheet end to end: segment, recognize, decode, score.

use inkgrade_core::decoder::{decode, tokens_to_text, CandidateLattice, DecodeError, DecoderConfig};
use inkgrade_core::image::GrayImage;
use inkgrade_core::lm::NGramModel;
use inkgrade_core::recognizer::{Ensemble, RecognizerError};
use inkgrade_core::scorer::Scorer;
use inkgrade_core::segment::{segment_sheet, LineSlot, SegmentError, SegmenterConfig, TextLineImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SheetError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Recognize(#[from] RecognizerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl SheetError {
    pub fn kind(&self) -> &'static str {
        match self {
            SheetError::Segment(e) => e.kind(),
            SheetError::Recognize(_) => "RecognizerError",
            SheetError::Decode(_) => "DecodeError",
        }
    }
}

/// Top-k candidate lattice for one assembled line.
pub fn line_lattice(ens: &Ensemble, line: &TextLineImage, k: usize) -> Result<CandidateLattice, RecognizerError> {
    let images: Vec<GrayImage> = line
        .slots
        .iter()
        .filter_map(|s| match s {
            LineSlot::Glyph { image, .. } => Some(image.clone()),
            LineSlot::Blank { .. } => None,
        })
        .collect();
    let mut posts = ens.predict_all(&images)?.into_iter();
    let slots: Vec<_> = line
        .slots
        .iter()
        .map(|s| match s {
            LineSlot::Glyph { .. } => posts.next(),
            LineSlot::Blank { .. } => None,
        })
        .collect();
    Ok(CandidateLattice::from_posteriors(&slots, ens.alphabet(), k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineReading {
    pub text: String,
    pub greedy_text: String,
}

pub fn read_line(ens: &Ensemble, lm: &NGramModel, dcfg: &DecoderConfig, line: &TextLineImage) -> Result<LineReading, SheetError> {
    let lattice = line_lattice(ens, line, dcfg.k)?;
    if lattice.positions.is_empty() {
        return Ok(LineReading { text: String::new(), greedy_text: String::new() });
    }
    let greedy_text = lattice.greedy().concat();
    let hyp = decode(&lattice, lm, dcfg)?;
    Ok(LineReading { text: tokens_to_text(&hyp.tokens), greedy_text })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReading {
    pub block: usize,
    pub text: String,
    pub greedy_text: String,
    pub rank: Option<usize>,
}

/// Reads every answer block of a sheet in layout order.
pub fn read_sheet(
    sheet: &GrayImage,
    seg: &SegmenterConfig,
    ens: &Ensemble,
    lm: &NGramModel,
    dcfg: &DecoderConfig,
    scorer: Option<&Scorer>,
) -> Result<Vec<BlockReading>, SheetError> {
    let blocks = segment_sheet(sheet, seg)?;
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = read_line(ens, lm, dcfg, &b.line)?;
            let rank = scorer.map(|s| s.predict(&r.text));
            Ok(BlockReading { block: i, text: r.text, greedy_text: r.greedy_text, rank })
        })
        .collect()
}
