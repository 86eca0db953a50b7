//! Beam search over per-cell recognition candidates fused with an n-gram LM.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{NGramModel, Vocabulary};
use crate::recognizer::{top_k, Posterior};

/// Token emitted for blank cells.
pub const BLANK: &str = " ";

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("lattice has no positions")]
    EmptyLattice,
    #[error("position {0} has no candidates")]
    EmptyPosition(usize),
    #[error("position {position} has a positive log-posterior {value}")]
    PositiveLogPosterior { position: usize, value: f64 },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Alphabet index; used for tie-breaking.
    pub label: usize,
    pub token: String,
    /// Natural-log posterior.
    pub log_posterior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Position {
    Glyph(Vec<Candidate>),
    Blank,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateLattice {
    pub positions: Vec<Position>,
}

impl CandidateLattice {
    /// `None` entries become blank positions.
    pub fn from_posteriors(posts: &[Option<Posterior>], alphabet: &[char], k: usize) -> Self {
        let positions = posts
            .iter()
            .map(|p| match p {
                None => Position::Blank,
                Some(p) => Position::Glyph(
                    top_k(p, k)
                        .into_iter()
                        .map(|(label, lp)| Candidate { label, token: alphabet[label].to_string(), log_posterior: lp.min(0.0) })
                        .collect(),
                ),
            })
            .collect();
        Self { positions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(DecodeError::EmptyLattice);
        }
        for (i, p) in self.positions.iter().enumerate() {
            if let Position::Glyph(c) = p {
                if c.is_empty() {
                    return Err(DecodeError::EmptyPosition(i));
                }
                if let Some(bad) = c.iter().find(|c| c.log_posterior > 0.0) {
                    return Err(DecodeError::PositiveLogPosterior { position: i, value: bad.log_posterior });
                }
            }
        }
        Ok(())
    }

    /// Top candidate at every glyph position.
    pub fn greedy(&self) -> Vec<String> {
        self.positions
            .iter()
            .map(|p| match p {
                Position::Glyph(c) => best_candidate(c).token.clone(),
                Position::Blank => BLANK.to_string(),
            })
            .collect()
    }
}

fn best_candidate(c: &[Candidate]) -> &Candidate {
    c.iter()
        .min_by(|a, b| b.log_posterior.total_cmp(&a.log_posterior).then(a.label.cmp(&b.label)))
        .expect("non-empty position")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    pub k: usize,
    pub length_bonus: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { beam_width: 8, lm_weight: 0.5, k: 10, length_bonus: 0.0 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.k == 0 {
            return Err(DecodeError::InvalidConfig("beam_width and k must be at least 1".into()));
        }
        if !(self.lm_weight >= 0.0) || !self.length_bonus.is_finite() {
            return Err(DecodeError::InvalidConfig("lm_weight must be >= 0 and length_bonus finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub tokens: Vec<String>,
    pub score: f64,
    pub classifier_score: f64,
    /// Unweighted natural-log LM score.
    pub lm_score: f64,
    pub lm_state: Vec<u32>,
}

fn ln_prob(lm: &NGramModel, id: u32, ctx: &[u32]) -> f64 {
    lm.logprob_ids(id, ctx) * std::f64::consts::LN_10
}

fn push_state(state: &mut Vec<u32>, id: u32, order: usize) {
    state.push(id);
    let keep = order - 1;
    if state.len() > keep {
        state.drain(..state.len() - keep);
    }
}

/// Higher score first; equal scores go to the smaller label sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.labels.cmp(&b.labels))
}

fn run_beam(lattice: &CandidateLattice, lm: &NGramModel, cfg: &DecoderConfig) -> Result<Vec<Hypothesis>> {
    lattice.validate()?;
    cfg.validate()?;
    let alpha = cfg.lm_weight;
    let mut beam = vec![Hypothesis {
        labels: Vec::new(),
        tokens: Vec::new(),
        score: 0.0,
        classifier_score: 0.0,
        lm_score: 0.0,
        lm_state: lm.start_context(),
    }];
    for pos in &lattice.positions {
        match pos {
            Position::Blank => {
                for h in &mut beam {
                    h.labels.push(usize::MAX);
                    h.tokens.push(BLANK.to_string());
                    h.lm_state = lm.start_context();
                }
            }
            Position::Glyph(cands) => {
                let mut next = Vec::with_capacity(beam.len() * cands.len().min(cfg.k));
                for h in &beam {
                    for c in cands.iter().take(cfg.k) {
                        let id = lm.vocab.id(&c.token);
                        let lm_ln = ln_prob(lm, id, &h.lm_state);
                        let mut lm_state = h.lm_state.clone();
                        push_state(&mut lm_state, id, lm.order);
                        let mut labels = h.labels.clone();
                        labels.push(c.label);
                        let mut tokens = h.tokens.clone();
                        tokens.push(c.token.clone());
                        next.push(Hypothesis {
                            labels,
                            tokens,
                            score: h.score + c.log_posterior + alpha * lm_ln + cfg.length_bonus,
                            classifier_score: h.classifier_score + c.log_posterior,
                            lm_score: h.lm_score + lm_ln,
                            lm_state,
                        });
                    }
                }
                next.sort_by(rank);
                next.truncate(cfg.beam_width);
                beam = next;
            }
        }
    }
    for h in &mut beam {
        let eos = ln_prob(lm, Vocabulary::EOS_ID, &h.lm_state);
        h.score += alpha * eos;
        h.lm_score += eos;
    }
    beam.sort_by(rank);
    Ok(beam)
}

/// Best hypothesis of the beam search.
pub fn decode(lattice: &CandidateLattice, lm: &NGramModel, cfg: &DecoderConfig) -> Result<Hypothesis> {
    Ok(run_beam(lattice, lm, cfg)?.swap_remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub rank: usize,
    pub tokens: Vec<String>,
    pub score: f64,
    pub classifier_score: f64,
    pub lm_score: f64,
}

/// Final beam contents, best first, without duplicate token sequences.
pub fn rescore_nbest(lattice: &CandidateLattice, lm: &NGramModel, cfg: &DecoderConfig, n: usize) -> Result<Vec<NBestEntry>> {
    if n > cfg.beam_width {
        return Err(DecodeError::InvalidConfig(format!("n = {n} exceeds beam width {}", cfg.beam_width)));
    }
    let beam = run_beam(lattice, lm, cfg)?;
    let mut out: Vec<NBestEntry> = Vec::with_capacity(n);
    for h in beam {
        if out.len() == n {
            break;
        }
        if out.iter().any(|e| e.tokens == h.tokens) {
            continue;
        }
        out.push(NBestEntry {
            rank: out.len() + 1,
            tokens: h.tokens,
            score: h.score,
            classifier_score: h.classifier_score,
            lm_score: h.lm_score,
        });
    }
    Ok(out)
}

pub fn write_nbest_jsonl(entries: &[NBestEntry], mut w: impl Write) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Concatenates decoded tokens into the answer string.
pub fn tokens_to_text(tokens: &[String]) -> String {
    tokens.concat()
}
