//! Ruled answer sheets with exact ground truth.

use serde::{Deserialize, Serialize};

use crate::image::{BoundingBox, GrayImage};
use crate::rng::{derive_seed, Rng64};
use crate::segment::GridPos;

use super::augment::{augment, resize_bilinear, AugmentParams};
use super::glyph::{GlyphAtlas, GLYPH_SIZE};
use super::SynthError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub rows: usize,
    pub cols: usize,
    /// Interior size of each square cell in pixels.
    pub cell_px: usize,
    /// Labels written into the grid in reading order (right column first, top to bottom).
    pub text: Vec<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetSpec {
    pub blocks: Vec<BlockSpec>,
    pub inter_block_gap: usize,
    pub margin: usize,
    pub line_thickness: usize,
}

impl SheetSpec {
    pub fn single(rows: usize, cols: usize, text: Vec<char>) -> Self {
        Self { blocks: vec![BlockSpec { rows, cols, cell_px: GLYPH_SIZE, text }], inter_block_gap: 30, margin: 20, line_thickness: 2 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.blocks.is_empty() {
            return Err(SynthError::Spec("sheet has no blocks".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.rows == 0 || b.cols == 0 || b.cell_px < 8 {
                return Err(SynthError::Spec(format!("block {i}: degenerate grid")));
            }
            if b.text.len() > b.rows * b.cols {
                return Err(SynthError::Spec(format!("block {i}: text of {} labels exceeds {}x{} grid", b.text.len(), b.rows, b.cols)));
            }
        }
        if self.line_thickness == 0 {
            return Err(SynthError::Spec("line thickness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    /// Cell interior in sheet coordinates.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub grid_pos: GridPos,
    pub label: Option<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    /// Outer extent of the ruled grid in sheet coordinates.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Top row of each horizontal line, sheet coordinates.
    pub row_lines: Vec<usize>,
    /// Left column of each vertical line, sheet coordinates.
    pub col_lines: Vec<usize>,
    /// Cells in reading order.
    pub cells: Vec<CellTruth>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub blocks: Vec<BlockTruth>,
}

/// Draws the ruled grids and writes augmented glyphs into the cells.
pub fn generate_sheet(spec: &SheetSpec, atlas: &GlyphAtlas, aug: &AugmentParams, seed: u64) -> Result<(GrayImage, GroundTruth), SynthError> {
    spec.validate()?;
    for b in &spec.blocks {
        for &c in &b.text {
            atlas.index_of(c).ok_or(SynthError::UnknownLabel(c.to_string()))?;
        }
    }
    let mut rng = Rng64::new(derive_seed(seed, "sheet"));
    let t = spec.line_thickness;
    let dims: Vec<(usize, usize)> = spec
        .blocks
        .iter()
        .map(|b| (b.cols * (b.cell_px + t) + t, b.rows * (b.cell_px + t) + t))
        .collect();
    let indent = 20;
    let width = dims.iter().map(|d| d.0).max().unwrap_or(0) + 2 * spec.margin + indent;
    let height = dims.iter().map(|d| d.1).sum::<usize>() + 2 * spec.margin + spec.inter_block_gap * (spec.blocks.len() - 1);
    let mut sheet = GrayImage::blank(width, height);

    let mut truth = GroundTruth { blocks: Vec::new() };
    let mut top = spec.margin;
    for (bi, (block, &(bw, bh))) in spec.blocks.iter().zip(&dims).enumerate() {
        let left = spec.margin + rng.below(indent + 1);
        let pitch = block.cell_px + t;
        let row_lines: Vec<usize> = (0..=block.rows).map(|r| top + r * pitch).collect();
        let col_lines: Vec<usize> = (0..=block.cols).map(|c| left + c * pitch).collect();
        for &y in &row_lines {
            for yy in y..y + t {
                sheet.data_mut()[yy * width + left..yy * width + left + bw].fill(0);
            }
        }
        for &x in &col_lines {
            for yy in top..top + bh {
                sheet.data_mut()[yy * width + x..yy * width + x + t].fill(0);
            }
        }

        let mut cells = Vec::with_capacity(block.rows * block.cols);
        for col_from_right in 0..block.cols {
            let c = block.cols - 1 - col_from_right;
            for r in 0..block.rows {
                let bbox = BoundingBox::new(col_lines[c] + t, row_lines[r] + t, block.cell_px, block.cell_px);
                let idx = cells.len();
                let label = block.text.get(idx).copied();
                if let Some(label) = label {
                    let glyph_seed = derive_seed(seed, &format!("glyph/{bi}/{idx}"));
                    let glyph = atlas.render(label, glyph_seed)?;
                    let glyph = augment(&glyph, aug, derive_seed(glyph_seed, "augment"));
                    let glyph = if block.cell_px == GLYPH_SIZE {
                        glyph
                    } else {
                        resize_bilinear(&glyph, block.cell_px, block.cell_px)
                    };
                    sheet.blit(&glyph, bbox.x, bbox.y);
                }
                cells.push(CellTruth { bbox, grid_pos: GridPos { column_from_right: col_from_right, row_from_top: r }, label });
            }
        }
        truth.blocks.push(BlockTruth {
            bbox: BoundingBox::new(left, top, bw, bh),
            row_lines,
            col_lines,
            cells,
            text: block.text.iter().collect(),
        });
        top += bh + spec.inter_block_gap;
    }
    Ok((sheet, truth))
}

/// A random sheet layout of 1..=max_blocks grids, each 3..=max_rows rows by
/// 2..=max_cols columns, partially filled with random labels.
pub fn random_sheet_spec(atlas: &GlyphAtlas, max_blocks: usize, max_rows: usize, max_cols: usize, rng: &mut Rng64) -> SheetSpec {
    let n_blocks = 1 + rng.below(max_blocks.max(1));
    let blocks = (0..n_blocks)
        .map(|_| {
            let rows = 3 + rng.below(max_rows.saturating_sub(2).max(1));
            let cols = 2 + rng.below(max_cols.saturating_sub(1).max(1));
            let cell_px = [48, 56, 64][rng.below(3)];
            let n_text = rng.below(rows * cols + 1);
            let text = (0..n_text).map(|_| atlas.labels()[rng.below(atlas.len())]).collect();
            BlockSpec { rows, cols, cell_px, text }
        })
        .collect();
    SheetSpec { blocks, inter_block_gap: 20 + rng.below(30), margin: 20, line_thickness: 2 }
}
