use super::*;
use crate::rng::Rng64;
use proptest::prelude::*;

#[path = "../../tests/oracles/kn.rs"]
mod kn_oracle;
#[path = "../../tests/oracles/arpa.rs"]
mod naive_arpa;

use kn_oracle::KnOracle;

fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
}

fn ten_sentences() -> Vec<Vec<String>> {
    corpus(&[
        "a b c a b",
        "b c a",
        "a a b",
        "c b a c",
        "a b c",
        "b b",
        "c a b a",
        "a",
        "b c c a b c",
        "c a",
    ])
}

#[test]
fn bigram_counts_by_hand() {
    let c = count_ngrams(&corpus(&["a b"]), 2).unwrap();
    let v = &c.vocab;
    let (s, a, b, e) = (Vocabulary::BOS_ID, v.id("a"), v.id("b"), Vocabulary::EOS_ID);
    assert_eq!(c.counts[1].len(), 3);
    assert_eq!(c.get(&[s, a]), 1);
    assert_eq!(c.get(&[a, b]), 1);
    assert_eq!(c.get(&[b, e]), 1);
}

#[test]
fn duplicated_corpus_doubles_counts() {
    let one = ten_sentences();
    let two: Vec<Vec<String>> = one.iter().chain(&one).cloned().collect();
    let c1 = count_ngrams(&one, 3).unwrap();
    let c2 = count_ngrams(&two, 3).unwrap();
    for (t1, t2) in c1.counts.iter().zip(&c2.counts) {
        assert_eq!(t1.len(), t2.len());
        for (g, &n) in t1 {
            assert_eq!(t2[g], 2 * n);
        }
    }
}

fn random_corpus(rng: &mut Rng64, n: usize, vocab: &[&str], max_len: usize) -> Vec<Vec<String>> {
    (0..n).map(|_| (0..rng.below(max_len + 1)).map(|_| vocab[rng.below(vocab.len())].to_string()).collect()).collect()
}

proptest! {
    #[test]
    fn counts_match_sliding_window(seed in any::<u64>(), order in 1usize..5) {
        let mut rng = Rng64::new(seed);
        let c = random_corpus(&mut rng, 100, &["x", "y", "z", "w"], 7);
        let counts = count_ngrams(&c, order).unwrap();
        let oracle = KnOracle::new(&c, order);
        for k in 1..=order {
            for (g, &n) in &counts.counts[k - 1] {
                let words: Vec<String> = g.iter().map(|&id| counts.vocab.symbol(id).to_string()).collect();
                prop_assert_eq!(oracle.raw(&words), n);
            }
            let total: u64 = counts.counts[k - 1].values().sum();
            let windows: usize = c.iter().map(|s| (s.len() + order).saturating_sub(k - 1)).sum();
            prop_assert_eq!(total as usize, windows);
        }
    }
}

#[test]
fn unigram_hand_derivation() {
    // counts a:2 b:1 </s>:2, so t1=1 t2=2, Y=0.2, D1=0.2, D2=2, D3=3
    let m = train_lm(&corpus(&["a b", "a"]), 1).unwrap();
    let p = |w: &str| 10f64.powf(m.logprob(w, &[]));
    assert!((p("a") - 0.21).abs() < 1e-12);
    assert!((p("b") - 0.37).abs() < 1e-12);
    assert!((p("</s>") - 0.21).abs() < 1e-12);
    assert!((p("<unk>") - 0.21).abs() < 1e-12);
}

fn check_against_oracle(c: &[Vec<String>], order: usize) {
    let m = train_lm(c, order).unwrap();
    let oracle = KnOracle::new(c, order);
    for k in 1..=order {
        assert_eq!(m.tables[k - 1].len(), m.num_ngrams()[k - 1]);
        for (g, e) in &m.tables[k - 1] {
            let words: Vec<String> = g.iter().map(|&id| m.vocab.symbol(id).to_string()).collect();
            let (ctx, w) = words.split_at(k - 1);
            if w[0] == BOS {
                assert_eq!(e.prob, NEVER);
                continue;
            }
            let want = oracle.log10_prob(&w[0], ctx);
            assert!((e.prob - want).abs() <= 1e-10, "{words:?}: {} vs {want}", e.prob);
        }
    }
    // arbitrary contexts exercise the backoff chain
    let mut rng = Rng64::new(order as u64);
    let tokens: Vec<&str> = m.vocab.symbols().iter().map(String::as_str).filter(|t| *t != BOS).collect();
    for _ in 0..300 {
        let len = rng.below(order);
        let mut ctx: Vec<String> = (0..len).map(|_| tokens[rng.below(tokens.len())].to_string()).collect();
        if rng.bernoulli(0.3) {
            ctx.insert(0, BOS.to_string());
        }
        let w = tokens[rng.below(tokens.len())];
        let refs: Vec<&str> = ctx.iter().map(String::as_str).collect();
        let got = m.logprob(w, &refs);
        let want = oracle.log10_prob(w, &ctx);
        assert!((got - want).abs() <= 1e-10, "{ctx:?} {w}: {got} vs {want}");
    }
}

#[test]
fn matches_brute_force_trigram() {
    check_against_oracle(&ten_sentences(), 3);
}

#[test]
fn matches_brute_force_five_gram() {
    check_against_oracle(&ten_sentences(), 5);
}

#[test]
fn discounts_match_oracle() {
    let c = ten_sentences();
    let counts = count_ngrams(&c, 3).unwrap();
    let adjusted = adjusted_counts(&counts);
    let oracle = KnOracle::new(&c, 3);
    for k in 1..=3 {
        let mut t = [0u64; 5];
        for (g, &a) in &adjusted[k - 1] {
            if *g.last().unwrap() != Vocabulary::BOS_ID && (1..=4).contains(&a) {
                t[a as usize] += 1;
            }
        }
        let d = discounts_from_count_of_counts(t);
        let o = oracle.discounts(k);
        for j in 0..3 {
            assert!((d[j] - o[j]).abs() < 1e-12);
            assert!(d[j] >= 0.0 && d[j] <= (j + 1) as f64);
        }
    }
}

#[test]
fn conditionals_are_normalized() {
    let mut rng = Rng64::new(5);
    let c = random_corpus(&mut rng, 200, &["p", "q", "r", "s", "t"], 9);
    let m = train_lm(&c, 5).unwrap();
    let ids: Vec<u32> = (0..m.vocab.len() as u32).filter(|&i| i != Vocabulary::BOS_ID).collect();
    for _ in 0..100 {
        let len = rng.below(5);
        let mut ctx: Vec<u32> = (0..len).map(|_| ids[rng.below(ids.len())]).collect();
        if rng.bernoulli(0.5) {
            let pad = rng.below(4) + 1;
            ctx.splice(0..0, std::iter::repeat_n(Vocabulary::BOS_ID, pad));
        }
        let total: f64 = ids.iter().map(|&w| 10f64.powf(m.logprob_ids(w, &ctx))).sum();
        assert!((total - 1.0).abs() < 1e-6, "{ctx:?}: {total}");
    }
}

#[test]
fn unseen_successor_has_positive_probability() {
    let m = train_lm(&ten_sentences(), 3).unwrap();
    // "b" never follows "b a"
    let lp = m.logprob("b", &["b", "a"]);
    assert!(lp.is_finite() && lp > NEVER);
    assert!(m.logprob(UNK, &["a"]) >= m.unk_floor());
    assert!(m.logprob("zzz", &[]) >= m.unk_floor());
}

#[test]
fn stored_ngram_is_returned_exactly() {
    let m = train_lm(&ten_sentences(), 3).unwrap();
    let v = &m.vocab;
    let key = vec![v.id("a"), v.id("b"), v.id("c")];
    assert_eq!(m.logprob("c", &["a", "b"]), m.entry(&key).unwrap().prob);
}

#[test]
fn prefixes_of_stored_ngrams_are_stored() {
    let m = train_lm(&ten_sentences(), 5).unwrap();
    for k in 2..=5 {
        for g in m.tables[k - 1].keys() {
            assert!(m.entry(&g[..k - 1]).is_some());
        }
    }
}

#[test]
fn degenerate_counts_are_rejected() {
    let c = corpus(&["a", "a", "a", "a", "a"]);
    assert!(matches!(train_lm(&c, 1), Err(LmError::DegenerateCounts { order: 1 })));
    assert!(matches!(count_ngrams(&[], 3), Err(LmError::EmptyCorpus)));
    assert!(matches!(count_ngrams(&c, 0), Err(LmError::InvalidOrder)));
}

#[test]
fn estimation_is_deterministic() {
    let a = train_lm(&ten_sentences(), 4).unwrap();
    let b = train_lm(&ten_sentences(), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(ArpaText::render(&a), ArpaText::render(&b));
}

#[test]
fn arpa_roundtrip_and_naive_reader() {
    let m = train_lm(&ten_sentences(), 3).unwrap();
    let text = ArpaText::render(&m);
    let back = ArpaText::parse(&text).unwrap();
    assert_eq!(back.vocab, m.vocab);
    for (t1, t2) in m.tables.iter().zip(&back.tables) {
        assert_eq!(t1.len(), t2.len());
        for (g, e) in t1 {
            assert!((t2[g].prob - e.prob).abs() <= 1e-4);
            assert!((t2[g].backoff - e.backoff).abs() <= 1e-4);
        }
    }
    let naive = naive_arpa::parse(&text).unwrap();
    assert_eq!(naive.header, naive.section_sizes);
    assert_eq!(naive.header, m.num_ngrams());
    for (words, (prob, backoff)) in &naive.entries {
        let ids: Vec<u32> = words.iter().map(|w| m.vocab.get(w).unwrap()).collect();
        let e = m.entry(&ids).unwrap();
        assert!((prob - e.prob).abs() <= 1e-4);
        assert!((backoff.unwrap_or(0.0) - e.backoff).abs() <= 1e-4);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.arpa");
    write_arpa(&m, &path).unwrap();
    assert_eq!(read_arpa(&path).unwrap(), back);
}

#[test]
fn malformed_arpa_is_rejected() {
    assert!(matches!(ArpaText::parse("nothing here"), Err(LmError::Format { .. })));
    let bad = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\ta\n\n\\end\\\n";
    assert!(matches!(ArpaText::parse(bad), Err(LmError::Format { .. })));
}

#[test]
fn perplexity_of_deterministic_corpus_is_near_one() {
    let c = corpus(&["x x x", "x x x", "x x x", "x x x x", "x x"]);
    let m = train_lm(&c, 5).unwrap();
    let ppl = perplexity(&m, &corpus(&["x x x"])).unwrap();
    assert!(ppl < 1.5, "{ppl}");
    assert!(matches!(perplexity(&m, &[]), Err(LmError::EmptyCorpus)));
}

#[test]
fn uniform_unigram_perplexity_is_vocab_size() {
    let lp = (1.0f64 / 4.0).log10();
    let text = format!(
        "\\data\\\nngram 1=5\n\n\\1-grams:\n{lp}\t<unk>\n-99\t<s>\n{lp}\t</s>\n{lp}\ta\n{lp}\tb\n\n\\end\\\n"
    );
    let m = ArpaText::parse(&text).unwrap();
    let ppl = perplexity(&m, &corpus(&["a b a", "b"])).unwrap();
    assert!((ppl - 4.0).abs() < 1e-6);
}

#[test]
fn training_text_has_lower_perplexity_than_disjoint_text() {
    let mut rng = Rng64::new(8);
    let vocab = ["a", "b", "c", "d", "e", "f", "g", "h"];
    // sparse sample of a first-order Markov source
    let mut gen = |n: usize| -> Vec<Vec<String>> {
        (0..n)
            .map(|_| {
                let mut cur = rng.below(8);
                (0..8)
                    .map(|_| {
                        cur = if rng.bernoulli(0.6) { (cur + 1) % 8 } else { rng.below(8) };
                        vocab[cur].to_string()
                    })
                    .collect()
            })
            .collect()
    };
    let train = gen(40);
    let held = gen(40);
    let m = train_lm(&train, 3).unwrap();
    let (pt, ph) = (perplexity(&m, &train).unwrap(), perplexity(&m, &held).unwrap());
    assert!(pt <= ph, "{pt} vs {ph}");
}

#[test]
fn char_tokens_split_characters() {
    assert_eq!(char_tokens("ab c"), vec!["a", "b", "c"]);
}
