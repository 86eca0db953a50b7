//! Brute-force interpolated modified Kneser-Ney, recomputed from padded
//! sentences on every query.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

pub struct KnOracle {
    pub order: usize,
    sentences: Vec<Vec<String>>,
    vocab_prime: usize,
}

impl KnOracle {
    pub fn new(corpus: &[Vec<String>], order: usize) -> Self {
        let sentences: Vec<Vec<String>> = corpus
            .iter()
            .map(|s| {
                let mut p: Vec<String> = vec!["<s>".to_string(); order - 1];
                p.extend(s.iter().cloned());
                p.push("</s>".to_string());
                p
            })
            .collect();
        let mut vocab: BTreeSet<String> = corpus.iter().flatten().cloned().collect();
        vocab.insert("</s>".into());
        vocab.insert("<unk>".into());
        vocab.remove("<s>");
        Self { order, sentences, vocab_prime: vocab.len() }
    }

    /// Every distinct k-gram window and its raw count.
    fn raw_table(&self, k: usize) -> BTreeMap<Vec<String>, u64> {
        let mut m = BTreeMap::new();
        for s in &self.sentences {
            if s.len() < k {
                continue;
            }
            for i in 0..=s.len() - k {
                *m.entry(s[i..i + k].to_vec()).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn raw(&self, g: &[String]) -> u64 {
        self.raw_table(g.len()).get(g).copied().unwrap_or(0)
    }

    pub fn adjusted(&self, g: &[String]) -> u64 {
        if g.len() == self.order || g[0] == "<s>" {
            return self.raw(g);
        }
        let left: BTreeSet<&String> = self
            .sentences
            .iter()
            .flat_map(|s| s.windows(g.len() + 1))
            .filter(|w| &w[1..] == g)
            .map(|w| &w[0])
            .collect();
        left.len() as u64
    }

    pub fn discounts(&self, k: usize) -> [f64; 3] {
        let mut t = [0u64; 5];
        for g in self.raw_table(k).keys() {
            if g.last().unwrap() == "<s>" {
                continue;
            }
            let a = self.adjusted(g);
            if (1..=4).contains(&a) {
                t[a as usize] += 1;
            }
        }
        if t[1..].iter().all(|&x| x == 0) {
            return [0.5, 1.0, 1.5];
        }
        let y = if t[1] + 2 * t[2] == 0 { 0.0 } else { t[1] as f64 / (t[1] as f64 + 2.0 * t[2] as f64) };
        let mut d = [0.0; 3];
        for j in 1..=3usize {
            let r = if t[j] == 0 { 0.0 } else { t[j + 1] as f64 / t[j] as f64 };
            let v = j as f64 - (j as f64 + 1.0) * y * r;
            d[j - 1] = v.max(0.0).min(j as f64);
        }
        d
    }

    fn d_of(d: &[f64; 3], a: u64) -> f64 {
        if a == 0 {
            0.0
        } else if a >= 3 {
            d[2]
        } else {
            d[a as usize - 1]
        }
    }

    /// Linear P(w | ctx); `ctx` is truncated to the last `order - 1` tokens.
    pub fn prob(&self, w: &str, ctx: &[String]) -> f64 {
        let ctx = &ctx[ctx.len().saturating_sub(self.order - 1)..];
        let k = ctx.len() + 1;
        let d = self.discounts(k);
        let table = self.raw_table(k);
        let mut total = 0u64;
        let mut mass = 0.0;
        let mut a_w = 0u64;
        for g in table.keys() {
            if &g[..k - 1] != ctx || g.last().unwrap() == "<s>" {
                continue;
            }
            let a = self.adjusted(g);
            total += a;
            mass += Self::d_of(&d, a);
            if g.last().unwrap() == w {
                a_w = a;
            }
        }
        let lower = if ctx.is_empty() { 1.0 / self.vocab_prime as f64 } else { self.prob(w, &ctx[1..]) };
        if total == 0 {
            return lower;
        }
        (a_w as f64 - Self::d_of(&d, a_w)) / total as f64 + mass / total as f64 * lower
    }

    pub fn log10_prob(&self, w: &str, ctx: &[String]) -> f64 {
        self.prob(w, ctx).log10()
    }
}
