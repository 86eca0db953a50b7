//! Agreement and accuracy metrics: quadratic weighted kappa, edit distance,
//! character accuracy and confusion counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("kappa undefined: expected weighted disagreement is zero")]
    UndefinedKappa,
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("rating sequences differ in length ({system} vs {human})")]
    LengthMismatch { system: usize, human: usize },
    #[error("no ratings")]
    Empty,
    #[error("rank {rank} outside [0, {n_ranks})")]
    RankOutOfRange { rank: usize, n_ranks: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingPair {
    pub system: Vec<usize>,
    pub human: Vec<usize>,
    pub n_ranks: usize,
}

impl RatingPair {
    pub fn new(system: Vec<usize>, human: Vec<usize>, n_ranks: usize) -> Result<Self, MetricsError> {
        if system.len() != human.len() {
            return Err(MetricsError::LengthMismatch { system: system.len(), human: human.len() });
        }
        if system.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(&rank) = system.iter().chain(&human).find(|&&r| r >= n_ranks) {
            return Err(MetricsError::RankOutOfRange { rank, n_ranks });
        }
        Ok(Self { system, human, n_ranks })
    }
}

/// Square count matrix; rows index the reference (human) label, columns the
/// hypothesis (system) label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, counts: vec![vec![0; n]; n] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.n).map(|i| self.counts[i][i]).sum()
    }
}

/// Counts `(hyp, ref)` pairs into an `n`×`n` matrix.
pub fn confusion(pairs: &[(usize, usize)], n: usize) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::zeros(n);
    for &(hyp, reference) in pairs {
        m.counts[reference][hyp] += 1;
    }
    m
}

/// Quadratic weighted kappa with the expected matrix scaled to the observed
/// total. Zero expected disagreement only arises when both raters give one
/// shared constant rank; that case is 1.0.
pub fn qwk(pair: &RatingPair) -> Result<f64, MetricsError> {
    let n = pair.n_ranks;
    let pairs: Vec<(usize, usize)> = pair.system.iter().copied().zip(pair.human.iter().copied()).collect();
    let obs = confusion(&pairs, n);
    let total = obs.total() as f64;
    let rows = obs.row_sums();
    let cols = obs.col_sums();
    let denom_w = if n > 1 { ((n - 1) * (n - 1)) as f64 } else { 1.0 };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = ((i as f64) - (j as f64)).powi(2) / denom_w;
            num += w * obs.counts[i][j] as f64;
            den += w * rows[i] as f64 * cols[j] as f64 / total;
        }
    }
    if den == 0.0 {
        if pair.system == pair.human {
            return Ok(1.0);
        }
        return Err(MetricsError::UndefinedKappa);
    }
    Ok(1.0 - num / den)
}

/// Unit-cost insert/delete/substitute distance, two-row DP.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn char_accuracy<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok((1.0 - levenshtein(hyp, reference) as f64 / reference.len() as f64).max(0.0))
}

/// Pooled accuracy `1 - Σ d / Σ |ref|` over many lines.
pub fn corpus_char_accuracy<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64, MetricsError> {
    let total: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    if total == 0 {
        return Err(MetricsError::EmptyReference);
    }
    let dist: usize = pairs.iter().map(|(h, r)| levenshtein(h, r)).sum();
    Ok((1.0 - dist as f64 / total as f64).max(0.0))
}

pub fn kappa_label(k: f64) -> &'static str {
    if k > 0.8 {
        "almost perfect"
    } else if k > 0.6 {
        "substantial"
    } else if k > 0.4 {
        "moderate"
    } else if k > 0.2 {
        "fair"
    } else if k > 0.0 {
        "slight"
    } else {
        "poor"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub char_accuracy: Option<f64>,
    pub qwk: Option<f64>,
    pub n: usize,
    pub confusion_path: Option<String>,
    pub thresholds_label: Option<String>,
}

impl EvalReport {
    pub fn new(char_accuracy: Option<f64>, qwk: Option<f64>, n: usize, confusion_path: Option<String>) -> Self {
        Self { char_accuracy, qwk, n, confusion_path, thresholds_label: qwk.map(|k| kappa_label(k).to_string()) }
    }
}

#[cfg(test)]
#[path = "../tests/oracles/qwk.rs"]
mod qwk_oracle;
