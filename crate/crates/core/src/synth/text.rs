//! Synthetic answer text: a filler lexicon, per-question keyword rubrics and
//! answers whose rank is the number of distinct keywords they contain.

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, Rng64};

use super::glyph::GlyphAtlas;
use super::SynthError;

/// Characters reserved for rubric keywords; never used by filler words.
pub const KEYWORD_SYMBOLS: &str = "アイウエオカキクコ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub question_id: u32,
    pub keywords: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
}

impl Rubric {
    pub fn n_ranks(&self) -> usize {
        self.keywords.len() + 1
    }

    /// Rank of a text under this rubric: count of keywords present.
    pub fn rank_of(&self, text: &str) -> usize {
        self.keywords.iter().filter(|k| text.contains(k.as_str())).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerText {
    pub text: String,
    pub rank: usize,
    pub question_id: u32,
}

#[derive(Clone, Debug)]
pub struct TextGenerator {
    filler_words: Vec<String>,
    /// Cumulative Zipf weights over `filler_words`.
    cumulative: Vec<f64>,
    pub rubric: Rubric,
}

impl TextGenerator {
    /// Builds a lexicon of `n_words` filler words (2-5 symbols) over the
    /// non-keyword part of the atlas, plus three 4-symbol keywords built from
    /// disjoint triples of reserved symbols.
    pub fn new(atlas: &GlyphAtlas, n_words: usize, seed: u64) -> Result<Self, SynthError> {
        let reserved: Vec<char> = KEYWORD_SYMBOLS.chars().collect();
        for &c in &reserved {
            atlas.index_of(c).ok_or_else(|| SynthError::Spec(format!("keyword symbol {c} missing from alphabet")))?;
        }
        let filler: Vec<char> = atlas.labels().iter().copied().filter(|c| !reserved.contains(c)).collect();
        if filler.len() < 4 {
            return Err(SynthError::Spec("alphabet too small for a filler lexicon".into()));
        }
        let mut rng = Rng64::new(derive_seed(seed, "lexicon"));
        let mut filler_words: Vec<String> = Vec::with_capacity(n_words);
        while filler_words.len() < n_words {
            let len = 2 + rng.below(4);
            let w: String = (0..len).map(|_| filler[rng.below(filler.len())]).collect();
            if !filler_words.contains(&w) {
                filler_words.push(w);
            }
        }
        let mut acc = 0.0;
        let cumulative = (0..n_words)
            .map(|i| {
                acc += 1.0 / (i as f64 + 1.0);
                acc
            })
            .collect();
        let keywords = reserved
            .chunks(3)
            .map(|triple| {
                let mut sym: Vec<char> = triple.to_vec();
                rng.shuffle(&mut sym);
                sym.insert(1 + rng.below(3), filler[rng.below(filler.len())]);
                sym.into_iter().collect()
            })
            .collect();
        Ok(Self { filler_words, cumulative, rubric: Rubric { question_id: 0, keywords, min_len: 22, max_len: 30 } })
    }

    pub fn filler_words(&self) -> &[String] {
        &self.filler_words
    }

    fn filler(&self, rng: &mut Rng64) -> &str {
        let total = *self.cumulative.last().expect("non-empty lexicon");
        let u = rng.next_f64() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.filler_words.len() - 1);
        &self.filler_words[i]
    }

    /// An answer containing exactly `rank` keywords, padded with filler words
    /// to a length in `[min_len, max_len]`.
    pub fn answer(&self, rank: usize, rng: &mut Rng64) -> AnswerText {
        let r = &self.rubric;
        let mut kw: Vec<usize> = (0..r.keywords.len()).collect();
        rng.shuffle(&mut kw);
        let mut words: Vec<String> = kw[..rank.min(kw.len())].iter().map(|&i| r.keywords[i].clone()).collect();
        let target = r.min_len + rng.below(r.max_len - r.min_len + 1);
        let mut len: usize = words.iter().map(|w| w.chars().count()).sum();
        let mut attempts = 0;
        while len < target && attempts < 100 {
            attempts += 1;
            let w = self.filler(rng);
            let wl = w.chars().count();
            if len + wl <= r.max_len {
                words.push(w.to_string());
                len += wl;
            }
        }
        rng.shuffle(&mut words);
        let text: String = words.concat();
        // filler words cannot contain reserved symbols, so the rank is exact
        let rank = r.rank_of(&text);
        AnswerText { text, rank, question_id: r.question_id }
    }

    /// `n` answers with ranks drawn uniformly.
    pub fn answers(&self, n: usize, seed: u64) -> Vec<AnswerText> {
        let mut rng = Rng64::new(derive_seed(seed, "answers"));
        (0..n)
            .map(|_| {
                let rank = rng.below(self.rubric.n_ranks());
                self.answer(rank, &mut rng)
            })
            .collect()
    }

    /// Sentences for language-model training, drawn from the same generator.
    pub fn lm_corpus(&self, n: usize, seed: u64) -> Vec<String> {
        self.answers(n, derive_seed(seed, "lm-corpus")).into_iter().map(|a| a.text).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_respect_rubric() {
        let atlas = GlyphAtlas::default();
        let gen = TextGenerator::new(&atlas, 120, 1).unwrap();
        let answers = gen.answers(200, 2);
        let mut seen = [0usize; 4];
        for a in &answers {
            let n = a.text.chars().count();
            assert!(n <= 30, "{n}");
            assert!(n >= 18, "{n}: {}", a.text);
            assert_eq!(gen.rubric.rank_of(&a.text), a.rank);
            seen[a.rank] += 1;
        }
        assert!(seen.iter().all(|&c| c > 20), "{seen:?}");
    }

    #[test]
    fn keywords_are_disjoint() {
        let atlas = GlyphAtlas::default();
        let gen = TextGenerator::new(&atlas, 50, 3).unwrap();
        let k = &gen.rubric.keywords;
        assert_eq!(k.len(), 3);
        for w in gen.filler_words() {
            assert!(!w.chars().any(|c| KEYWORD_SYMBOLS.contains(c)));
        }
    }
}
