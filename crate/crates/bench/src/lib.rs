//! Fixtures shared by the benchmarks.

use inkgrade_core::lm::{char_tokens, train_lm, NGramModel};
use inkgrade_core::synth::{GlyphAtlas, TextGenerator};

/// A character 5-gram model over generated answer text.
pub fn answer_lm(sentences: usize, seed: u64) -> (TextGenerator, NGramModel) {
    let gen = TextGenerator::new(&GlyphAtlas::default(), 120, seed).expect("default atlas");
    let corpus: Vec<Vec<String>> = gen.lm_corpus(sentences, seed).iter().map(|s| char_tokens(s)).collect();
    let lm = train_lm(&corpus, 5).expect("non-empty corpus");
    (gen, lm)
}
