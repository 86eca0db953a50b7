//! Textbook forms of weighted kappa and edit distance, kept deliberately
//! literal.

#![allow(dead_code)]

pub fn brute_qwk(system: &[usize], human: &[usize], n: usize) -> f64 {
    let total = system.len() as f64;
    let mut o = vec![vec![0.0f64; n]; n];
    for k in 0..system.len() {
        o[human[k]][system[k]] += 1.0;
    }
    let mut hist_h = vec![0.0f64; n];
    let mut hist_s = vec![0.0f64; n];
    for k in 0..system.len() {
        hist_h[human[k]] += 1.0;
        hist_s[system[k]] += 1.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = ((i as f64 - j as f64) * (i as f64 - j as f64)) / (((n - 1) * (n - 1)) as f64);
            let e = hist_h[i] * hist_s[j] / total;
            num += w * o[i][j];
            den += w * e;
        }
    }
    1.0 - num / den
}

/// Full-matrix edit distance.
pub fn dp_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        d[i][0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}
