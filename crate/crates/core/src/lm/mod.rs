//! Character n-gram language model with interpolated modified Kneser-Ney
//! smoothing, ARPA serialization and backoff queries. Probabilities are log10.

mod arpa;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arpa::{read_arpa, write_arpa, ArpaText};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
/// log10 probability given to n-grams that predict `<s>`.
pub const NEVER: f64 = -99.0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("count-of-counts are zero at every order up to {order}")]
    DegenerateCounts { order: usize },
    #[error("ARPA format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LmError>;

/// Dense token ids. `<unk>`, `<s>` and `</s>` take ids 0, 1 and 2; the rest
/// follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const UNK_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;

    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let reserved = [UNK, BOS, EOS];
        let rest: BTreeSet<String> =
            tokens.into_iter().map(|t| t.as_ref().to_string()).filter(|t| !reserved.contains(&t.as_str())).collect();
        let symbols: Vec<String> = reserved.iter().map(|s| s.to_string()).chain(rest).collect();
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        Self { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Splits a line into single-character tokens, skipping whitespace.
pub fn char_tokens(line: &str) -> Vec<String> {
    line.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
}

/// Raw n-gram counts for orders `1..=order`. `counts[k - 1]` holds k-grams.
#[derive(Clone, Debug)]
pub struct NGramCounts {
    pub order: usize,
    pub vocab: Vocabulary,
    pub counts: Vec<HashMap<Vec<u32>, u64>>,
}

impl NGramCounts {
    pub fn get(&self, ngram: &[u32]) -> u64 {
        self.counts.get(ngram.len().wrapping_sub(1)).and_then(|m| m.get(ngram)).copied().unwrap_or(0)
    }
}

/// Sentence padded with `order - 1` copies of `<s>` and a final `</s>`.
fn pad_sentence(vocab: &Vocabulary, sentence: &[String], order: usize) -> Vec<u32> {
    let mut ids = vec![Vocabulary::BOS_ID; order - 1];
    ids.extend(sentence.iter().map(|t| vocab.id(t)));
    ids.push(Vocabulary::EOS_ID);
    ids
}

pub fn count_ngrams(corpus: &[Vec<String>], order: usize) -> Result<NGramCounts> {
    if order == 0 {
        return Err(LmError::InvalidOrder);
    }
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let vocab = Vocabulary::new(corpus.iter().flatten());
    let mut counts = vec![HashMap::new(); order];
    for sentence in corpus {
        let ids = pad_sentence(&vocab, sentence, order);
        for n in 1..=order {
            for w in ids.windows(n) {
                *counts[n - 1].entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    Ok(NGramCounts { order, vocab, counts })
}

/// One stored n-gram: log10 probability and log10 backoff weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NGramEntry {
    pub prob: f64,
    pub backoff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    pub order: usize,
    pub vocab: Vocabulary,
    /// `tables[k - 1]` maps k-grams to entries.
    pub tables: Vec<HashMap<Vec<u32>, NGramEntry>>,
}

/// `D1, D2, D3+` for one order.
pub type Discounts = [f64; 3];

fn discount(d: &Discounts, count: u64) -> f64 {
    match count {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

/// Used for an order whose adjusted counts are all above 4.
pub const FALLBACK_DISCOUNTS: Discounts = [0.5, 1.0, 1.5];

/// Discounts from count-of-counts `t[1..=4]` (index 0 unused).
pub fn discounts_from_count_of_counts(t: [u64; 5]) -> Discounts {
    if t[1..].iter().all(|&x| x == 0) {
        return FALLBACK_DISCOUNTS;
    }
    let denom = t[1] + 2 * t[2];
    let y = if denom == 0 { 0.0 } else { t[1] as f64 / denom as f64 };
    let mut d = [0.0; 3];
    for k in 1..=3 {
        let ratio = if t[k] == 0 { 0.0 } else { t[k + 1] as f64 / t[k] as f64 };
        d[k - 1] = (k as f64 - (k + 1) as f64 * y * ratio).clamp(0.0, k as f64);
    }
    d
}

/// Kneser-Ney adjusted counts: raw counts at the top order and for n-grams
/// starting with `<s>`, left-continuation counts otherwise.
pub fn adjusted_counts(counts: &NGramCounts) -> Vec<HashMap<Vec<u32>, u64>> {
    let n = counts.order;
    let mut adjusted = Vec::with_capacity(n);
    for k in 1..=n {
        if k == n {
            adjusted.push(counts.counts[k - 1].clone());
            continue;
        }
        let mut cont: HashMap<&[u32], u64> = HashMap::new();
        for g in counts.counts[k].keys() {
            *cont.entry(&g[1..]).or_insert(0) += 1;
        }
        let table = counts.counts[k - 1]
            .iter()
            .map(|(g, &raw)| {
                let a = if g[0] == Vocabulary::BOS_ID { raw } else { cont.get(g.as_slice()).copied().unwrap_or(0) };
                (g.clone(), a)
            })
            .collect();
        adjusted.push(table);
    }
    adjusted
}

struct ContextStats {
    total: u64,
    /// Continuations with adjusted count 1, 2 and 3+.
    n: [u64; 3],
}

impl ContextStats {
    fn gamma(&self, d: &Discounts) -> f64 {
        (d[0] * self.n[0] as f64 + d[1] * self.n[1] as f64 + d[2] * self.n[2] as f64) / self.total as f64
    }
}

/// Estimates an interpolated modified Kneser-Ney model. `discounts` overrides
/// the per-order discounts estimated from count-of-counts.
pub fn estimate_kn(counts: &NGramCounts, discounts: Option<&[Discounts]>) -> Result<NGramModel> {
    let n = counts.order;
    let vocab = counts.vocab.clone();
    let adjusted = adjusted_counts(counts);
    let bos = Vocabulary::BOS_ID;

    let mut all_d = Vec::with_capacity(n);
    let mut degenerate = 0;
    for (k, table) in adjusted.iter().enumerate() {
        let mut t = [0u64; 5];
        for (g, &a) in table {
            if *g.last().unwrap() != bos && (1..=4).contains(&a) {
                t[a as usize] += 1;
            }
        }
        if t[1..].iter().all(|&x| x == 0) {
            degenerate += 1;
        }
        all_d.push(match discounts {
            Some(ds) => ds[k],
            None => discounts_from_count_of_counts(t),
        });
    }
    if degenerate == n && discounts.is_none() {
        return Err(LmError::DegenerateCounts { order: n });
    }

    // per-order context statistics, excluding continuations that are <s>
    let stats: Vec<HashMap<&[u32], ContextStats>> = adjusted
        .iter()
        .map(|table| {
            let mut m: HashMap<&[u32], ContextStats> = HashMap::new();
            for (g, &a) in table {
                if *g.last().unwrap() == bos {
                    continue;
                }
                let s = m.entry(&g[..g.len() - 1]).or_insert(ContextStats { total: 0, n: [0; 3] });
                s.total += a;
                if a > 0 {
                    s.n[(a.min(3) - 1) as usize] += 1;
                }
            }
            m
        })
        .collect();

    // linear interpolated probabilities, lowest order first
    let mut linear: Vec<HashMap<Vec<u32>, f64>> = Vec::with_capacity(n);
    let uni = &stats[0][&[][..]];
    let uni_gamma = uni.gamma(&all_d[0]);
    let v_prime = (vocab.len() - 1) as f64;
    let mut p1 = HashMap::new();
    for id in 0..vocab.len() as u32 {
        if id == bos {
            continue;
        }
        let a = adjusted[0].get(&vec![id]).copied().unwrap_or(0);
        let u = (a as f64 - discount(&all_d[0], a)) / uni.total as f64;
        p1.insert(vec![id], u + uni_gamma / v_prime);
    }
    linear.push(p1);
    for k in 2..=n {
        let d = &all_d[k - 1];
        let mut pk = HashMap::with_capacity(adjusted[k - 1].len());
        for (g, &a) in &adjusted[k - 1] {
            if *g.last().unwrap() == bos {
                continue;
            }
            let s = &stats[k - 1][&g[..k - 1]];
            let lower = linear[k - 2][&g[1..]];
            let p = (a as f64 - discount(d, a)) / s.total as f64 + s.gamma(d) * lower;
            pk.insert(g.clone(), p);
        }
        linear.push(pk);
    }

    let mut tables = Vec::with_capacity(n);
    for k in 1..=n {
        let mut table = HashMap::new();
        // the unigram table covers the whole vocabulary, <unk> included
        let keys: Vec<&Vec<u32>> = if k == 1 { linear[0].keys().collect() } else { adjusted[k - 1].keys().collect() };
        for g in keys {
            table.insert(g.clone(), NGramEntry { prob: 0.0, backoff: 0.0 });
        }
        if k == 1 {
            table.insert(vec![bos], NGramEntry { prob: 0.0, backoff: 0.0 });
        }
        for (g, e) in table.iter_mut() {
            e.prob = match linear[k - 1].get(g) {
                Some(p) => p.log10(),
                None => NEVER,
            };
            if k < n {
                if let Some(s) = stats[k].get(g.as_slice()) {
                    if s.total > 0 {
                        e.backoff = s.gamma(&all_d[k]).log10();
                    }
                }
            }
        }
        tables.push(table);
    }
    Ok(NGramModel { order: n, vocab, tables })
}

impl NGramModel {
    pub fn entry(&self, ngram: &[u32]) -> Option<&NGramEntry> {
        self.tables.get(ngram.len().wrapping_sub(1))?.get(ngram)
    }

    /// log10 P(word | context) with ARPA backoff. Only the last `order - 1`
    /// context ids are used.
    pub fn logprob_ids(&self, word: u32, context: &[u32]) -> f64 {
        let start = context.len().saturating_sub(self.order - 1);
        let mut ctx = &context[start..];
        let mut key = Vec::with_capacity(self.order);
        let mut acc = 0.0;
        loop {
            key.clear();
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(e) = self.entry(&key) {
                return acc + e.prob;
            }
            if ctx.is_empty() {
                // only reachable for ids outside the unigram table
                return acc + self.unk_unigram();
            }
            if let Some(e) = self.entry(ctx) {
                acc += e.backoff;
            }
            ctx = &ctx[1..];
        }
    }

    pub fn logprob(&self, word: &str, context: &[&str]) -> f64 {
        let ids: Vec<u32> = context.iter().map(|t| self.vocab.id(t)).collect();
        self.logprob_ids(self.vocab.id(word), &ids)
    }

    /// log10 unigram probability of `<unk>`.
    pub fn unk_unigram(&self) -> f64 {
        self.entry(&[Vocabulary::UNK_ID]).map(|e| e.prob).unwrap_or(NEVER)
    }

    /// Lower bound on `logprob(<unk>, ctx)` for any context: the unigram
    /// probability plus the most negative backoff at every lower order.
    pub fn unk_floor(&self) -> f64 {
        let worst: f64 = self.tables[..self.order - 1]
            .iter()
            .map(|t| t.values().map(|e| e.backoff).fold(0.0, f64::min))
            .sum();
        self.unk_unigram() + worst
    }

    /// Context of `order - 1` sentence-start tokens.
    pub fn start_context(&self) -> Vec<u32> {
        vec![Vocabulary::BOS_ID; self.order - 1]
    }

    /// log10 probability of a whole sentence including `</s>`.
    pub fn sentence_logprob(&self, sentence: &[String]) -> f64 {
        let mut ctx = self.start_context();
        let mut total = 0.0;
        for id in sentence.iter().map(|t| self.vocab.id(t)).chain(std::iter::once(Vocabulary::EOS_ID)) {
            total += self.logprob_ids(id, &ctx);
            ctx.push(id);
        }
        total
    }

    pub fn num_ngrams(&self) -> Vec<usize> {
        self.tables.iter().map(HashMap::len).collect()
    }
}

/// `10^(-mean log10 prob)` over every token and `</s>`.
pub fn perplexity(model: &NGramModel, heldout: &[Vec<String>]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for s in heldout {
        total += model.sentence_logprob(s);
        tokens += s.len() + 1;
    }
    Ok(10f64.powf(-total / tokens as f64))
}

/// Counts and estimates in one step.
pub fn train_lm(corpus: &[Vec<String>], order: usize) -> Result<NGramModel> {
    estimate_kn(&count_ngrams(corpus, order)?, None)
}

#[cfg(test)]
mod tests;
