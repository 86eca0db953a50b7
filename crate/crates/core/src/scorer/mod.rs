//! Answer scoring as text classification: character tokens, a small
//! transformer encoder, CLS states pooled from the last layers, and a linear
//! softmax head over score ranks.

mod model;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{qwk, RatingPair};
use crate::nn::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Checkpoint, CheckpointError, ParamSet};
use crate::rng::{derive_seed, Rng64};

pub use model::Dims;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const SHARD: usize = 8;
const CKPT_KIND: &str = "scorer";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("invalid scorer config: {0}")]
    InvalidConfig(String),
    #[error("token sequence shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 5 items to split, got {0}")]
    TooFew(usize),
    #[error("rank {rank} out of range for {n_ranks} ranks")]
    RankOutOfRange { rank: usize, n_ranks: usize },
    #[error("training split is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of final layers whose CLS states are pooled; `min(4, L)` if unset.
    pub pooled_layers: Option<usize>,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub n_ranks: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            pooled_layers: None,
            ffn_dim: 128,
            max_len: 32,
            n_ranks: 4,
            lr: 1e-3,
            batch_size: 16,
            epochs: 5,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    pub fn pooled(&self) -> usize {
        self.pooled_layers.unwrap_or(self.n_layers.min(4))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScorerError::InvalidConfig(m.into()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.n_layers == 0 {
            return bad("n_layers must be positive");
        }
        let p = self.pooled();
        if p == 0 || p > self.n_layers {
            return bad("pooled_layers must be in [1, n_layers]");
        }
        if self.ffn_dim == 0 || self.max_len == 0 || self.n_ranks < 2 || self.batch_size == 0 {
            return bad("ffn_dim, max_len and batch_size must be positive and n_ranks at least 2");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        Ok(())
    }

    pub fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            d_model: self.d_model,
            heads: self.n_heads,
            ffn: self.ffn_dim,
            layers: self.n_layers,
            pooled: self.pooled(),
            max_len: self.max_len,
            ranks: self.n_ranks,
        }
    }
}

/// Token ids with CLS first, and a flag per position marking real tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends masked PAD positions up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD_ID);
            self.mask.push(false);
        }
    }
}

/// Symbol table: PAD, CLS, UNK, then the known symbols in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    pub fn new<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let mut rest: Vec<String> =
            symbols.into_iter().filter(|s| s != PAD && s != CLS && s != UNK).collect();
        rest.sort();
        rest.dedup();
        let mut all = vec![PAD.to_string(), CLS.to_string(), UNK.to_string()];
        all.extend(rest);
        let index = all.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        Self { symbols: all, index }
    }

    /// One symbol per character seen in `texts`.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        Self::new(texts.into_iter().flat_map(|t| t.chars()).map(String::from))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> u32 {
        self.index.get(symbol).copied().unwrap_or(UNK_ID)
    }

    /// Pre-split tokens, for callers with their own segmentation.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> TokenSequence {
        let mut ids = vec![CLS_ID];
        ids.extend(tokens.iter().take(max_len.saturating_sub(1)).map(|t| self.id(t.as_ref())));
        let mask = vec![true; ids.len()];
        TokenSequence { ids, mask }
    }

    /// Character tokens, truncated so the sequence including CLS fits `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenSequence {
        let chars: Vec<String> = text.chars().map(String::from).collect();
        self.encode_tokens(&chars, max_len)
    }
}

/// CLS hidden states of the pooled layers: `d_model x P`, column `j` taken
/// after layer `L - P + 1 + j` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeature {
    pub d_model: usize,
    pub columns: Vec<Vec<f32>>,
}

impl PooledFeature {
    fn from_flat(d_model: usize, flat: &[f32]) -> Self {
        Self { d_model, columns: flat.chunks(d_model).map(<[f32]>::to_vec).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d_model, self.columns.len())
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.columns[col][row]
    }

    /// Column-by-column concatenation, the head's input layout.
    pub fn flatten(&self) -> Vec<f32> {
        self.columns.concat()
    }
}

/// Per-layer attention maps over the valid positions of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub len: usize,
    pub heads: usize,
    pub layers: Vec<Vec<f32>>,
}

impl AttentionMaps {
    pub fn row(&self, layer: usize, head: usize, i: usize) -> &[f32] {
        let t = self.len;
        &self.layers[layer][(head * t + i) * t..(head * t + i + 1) * t]
    }
}

/// Index of the most probable rank; ties go to the lower rank.
pub fn argmax_rank(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn softmax64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    pub cfg: ScorerConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamSet,
}

impl Scorer {
    pub fn init(cfg: ScorerConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.dims(tokenizer.len());
        let params = model::init_params(&dims, &mut Rng64::new(derive_seed(seed, "scorer/init")));
        Ok(Self { cfg, tokenizer, params })
    }

    pub fn dims(&self) -> Dims {
        self.cfg.dims(self.tokenizer.len())
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.tokenizer.tokenize(text, self.cfg.max_len)
    }

    /// Valid `(id, position)` pairs of a sequence.
    fn positions(&self, seq: &TokenSequence) -> Result<Vec<(usize, usize)>> {
        if seq.ids.len() != seq.mask.len() {
            return Err(ScorerError::ShapeMismatch(format!("{} ids but {} mask flags", seq.ids.len(), seq.mask.len())));
        }
        if seq.ids.len() > self.cfg.max_len {
            return Err(ScorerError::ShapeMismatch(format!("length {} exceeds max_len {}", seq.ids.len(), self.cfg.max_len)));
        }
        if seq.ids.first() != Some(&CLS_ID) || !seq.mask[0] {
            return Err(ScorerError::ShapeMismatch("sequence must start with a valid CLS token".into()));
        }
        let vocab = self.tokenizer.len();
        let mut out = Vec::with_capacity(seq.len());
        for (pos, (&id, &valid)) in seq.ids.iter().zip(&seq.mask).enumerate() {
            if !valid {
                continue;
            }
            if id as usize >= vocab {
                return Err(ScorerError::ShapeMismatch(format!("token id {id} outside vocabulary of {vocab}")));
            }
            out.push((id as usize, pos));
        }
        Ok(out)
    }

    fn trace(&self, seq: &TokenSequence) -> Result<model::Trace> {
        let pos = self.positions(seq)?;
        Ok(model::forward(&self.dims(), &self.params, &pos))
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<PooledFeature> {
        Ok(PooledFeature::from_flat(self.cfg.d_model, &self.trace(seq)?.feature))
    }

    pub fn encode_with_attention(&self, seq: &TokenSequence) -> Result<(PooledFeature, AttentionMaps)> {
        let tr = self.trace(seq)?;
        let maps = AttentionMaps { len: tr.len(), heads: self.cfg.n_heads, layers: tr.attention_maps() };
        Ok((PooledFeature::from_flat(self.cfg.d_model, &tr.feature), maps))
    }

    /// Rank probabilities for a pooled feature.
    pub fn classify(&self, feature: &PooledFeature) -> Vec<f64> {
        let flat = feature.flatten();
        assert_eq!(flat.len(), self.dims().feature_len(), "pooled feature shape does not match the model");
        softmax64(&model::head_logits(&self.dims(), &self.params, &flat))
    }

    pub fn predict_proba(&self, text: &str) -> Vec<f64> {
        let seq = self.tokenize(text);
        softmax64(&self.trace(&seq).expect("tokenizer output is well formed").logits)
    }

    pub fn predict(&self, text: &str) -> usize {
        argmax_rank(&self.predict_proba(text))
    }

    pub fn score_answers<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<usize> {
        texts.par_iter().map(|t| self.predict(t.as_ref())).collect()
    }

    /// Summed gradient and per-item losses over a batch of sequences.
    fn batch_gradient(&self, batch: &[(&[(usize, usize)], usize)]) -> (ParamSet, Vec<f64>) {
        let dims = self.dims();
        let shards: Vec<(ParamSet, Vec<f64>)> = batch
            .par_chunks(SHARD)
            .map(|shard| {
                let mut grads = self.params.zeros_like();
                let mut losses = Vec::with_capacity(shard.len());
                for &(pos, y) in shard {
                    let tr = model::forward(&dims, &self.params, pos);
                    let probs = softmax64(&tr.logits);
                    losses.push(-probs[y].max(f64::MIN_POSITIVE).ln());
                    let dlogits: Vec<f32> =
                        probs.iter().enumerate().map(|(i, &p)| (p - if i == y { 1.0 } else { 0.0 }) as f32).collect();
                    model::backward(&dims, &self.params, &tr, &dlogits, &mut grads);
                }
                (grads, losses)
            })
            .collect();
        let mut iter = shards.into_iter();
        let (mut grads, mut losses) = iter.next().expect("non-empty batch");
        for (g, l) in iter {
            grads.add_assign(&g);
            losses.extend(l);
        }
        (grads, losses)
    }

    /// Mean cross-entropy and its gradient over `(text, rank)` pairs.
    pub fn loss_and_gradient(&self, items: &[(&str, usize)]) -> Result<(f64, ParamSet)> {
        let seqs: Vec<Vec<(usize, usize)>> =
            items.iter().map(|(t, _)| self.positions(&self.tokenize(t))).collect::<Result<_>>()?;
        let batch: Vec<(&[(usize, usize)], usize)> = seqs.iter().zip(items).map(|(s, (_, y))| (s.as_slice(), *y)).collect();
        let (mut g, losses) = self.batch_gradient(&batch);
        g.scale(1.0 / items.len() as f32);
        Ok((losses.iter().sum::<f64>() / items.len() as f64, g))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CKPT_KIND.into(),
            spec: serde_json::json!({ "config": self.cfg, "vocab": self.tokenizer.symbols() }),
            alphabet: String::new(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let fmt = |m: String| ScorerError::Checkpoint(CheckpointError::Format(m));
        if ckpt.kind != CKPT_KIND {
            return Err(fmt(format!("expected a scorer checkpoint, got {:?}", ckpt.kind)));
        }
        let cfg: ScorerConfig = serde_json::from_value(ckpt.spec["config"].clone()).map_err(|e| fmt(e.to_string()))?;
        cfg.validate()?;
        let vocab: Vec<String> = serde_json::from_value(ckpt.spec["vocab"].clone()).map_err(|e| fmt(e.to_string()))?;
        let tokenizer = Tokenizer::new(vocab.clone());
        if tokenizer.symbols() != vocab.as_slice() {
            return Err(fmt("vocabulary is not in canonical order".into()));
        }
        let shapes: Vec<Vec<usize>> = ckpt.params.tensors.iter().map(|t| t.shape.clone()).collect();
        if shapes != model::expected_shapes(&cfg.dims(tokenizer.len())) {
            return Err(fmt("tensor layout does not match config".into()));
        }
        Ok(Self { cfg, tokenizer, params: ckpt.params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_checkpoint(&self.to_checkpoint(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

/// One labelled answer, the JSON-lines record for scoring data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub text: String,
    pub rank: usize,
    #[serde(default)]
    pub question_id: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreDataset {
    pub train: Vec<ScoreItem>,
    pub val: Vec<ScoreItem>,
    pub test: Vec<ScoreItem>,
}

/// Seeded shuffle, then 3:1:1 slicing; leftover items go to train.
pub fn split_dataset(items: &[ScoreItem], seed: u64) -> Result<ScoreDataset> {
    let n = items.len();
    if n < 5 {
        return Err(ScorerError::TooFew(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng64::new(derive_seed(seed, "scorer/split")).shuffle(&mut order);
    let k = n / 5;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(ScoreDataset { val: pick(&order[..k]), test: pick(&order[k..2 * k]), train: pick(&order[2 * k..]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_qwk: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerHistory {
    pub batch_size: usize,
    pub epochs: usize,
    /// Mean training loss of the initialized model.
    pub initial_loss: f64,
    pub per_epoch: Vec<ScorerEpoch>,
    /// Epoch whose parameters were kept; `None` keeps the initialization.
    pub best_epoch: Option<usize>,
}

/// QWK of `scorer` on `items`; `None` when the set is empty or kappa is undefined.
pub fn evaluate_qwk(scorer: &Scorer, items: &[ScoreItem]) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let texts: Vec<&str> = items.iter().map(|i| i.text.as_str()).collect();
    let system = scorer.score_answers(&texts);
    let human = items.iter().map(|i| i.rank).collect();
    let pair = RatingPair::new(system, human, scorer.cfg.n_ranks).ok()?;
    qwk(&pair).ok()
}

/// Trains end to end with Adam on the train split and keeps the epoch with
/// the best validation QWK (the last epoch when there is no validation set).
pub fn train_scorer(cfg: &ScorerConfig, data: &ScoreDataset) -> Result<(Scorer, ScorerHistory)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(ScorerError::EmptyDataset);
    }
    for it in data.train.iter().chain(&data.val).chain(&data.test) {
        if it.rank >= cfg.n_ranks {
            return Err(ScorerError::RankOutOfRange { rank: it.rank, n_ranks: cfg.n_ranks });
        }
    }
    let tokenizer = Tokenizer::from_texts(data.train.iter().map(|i| i.text.as_str()));
    let mut scorer = Scorer::init(cfg.clone(), tokenizer, cfg.seed)?;
    let seqs: Vec<Vec<(usize, usize)>> =
        data.train.iter().map(|it| scorer.positions(&scorer.tokenize(&it.text))).collect::<Result<_>>()?;
    let all: Vec<(&[(usize, usize)], usize)> = seqs.iter().zip(&data.train).map(|(s, it)| (s.as_slice(), it.rank)).collect();
    let n = all.len();
    let initial_loss = scorer.batch_gradient(&all).1.iter().sum::<f64>() / n as f64;
    log::info!("scorer: {} train items, batch {}, {} epochs", n, cfg.batch_size, cfg.epochs);

    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut adam = Adam::new(adam_cfg, &scorer.params);
    let mut rng = Rng64::new(derive_seed(cfg.seed, "scorer/shuffle"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sample_loss = vec![0.0; n];
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[(usize, usize)], usize)> = idx.iter().map(|&i| all[i]).collect();
            let (mut grads, losses) = scorer.batch_gradient(&batch);
            if losses.iter().any(|l| l.is_nan()) {
                return Err(ScorerError::Divergence { epoch, step });
            }
            for (&i, l) in idx.iter().zip(losses) {
                sample_loss[i] = l;
            }
            grads.scale(1.0 / idx.len() as f32);
            adam.step(&mut scorer.params, &grads);
            if !scorer.params.all_finite() {
                return Err(ScorerError::Divergence { epoch, step });
            }
            step += 1;
        }
        let train_loss = sample_loss.iter().sum::<f64>() / n as f64;
        let val_qwk = evaluate_qwk(&scorer, &data.val);
        log::info!("scorer epoch {epoch}: loss {train_loss:.4} val qwk {val_qwk:?}");
        per_epoch.push(ScorerEpoch { epoch, train_loss, val_qwk });
        let key = val_qwk.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => key > *b || (data.val.is_empty()),
        };
        if better {
            best = Some((key, epoch, scorer.params.clone()));
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        scorer.params = params;
    }
    let history = ScorerHistory { batch_size: cfg.batch_size, epochs: cfg.epochs, initial_loss, per_epoch, best_epoch };
    Ok((scorer, history))
}
