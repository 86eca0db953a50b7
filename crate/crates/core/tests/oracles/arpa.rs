//! Naive ARPA reader: header counts plus a flat n-gram map.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub struct NaiveArpa {
    pub header: Vec<usize>,
    pub entries: BTreeMap<Vec<String>, (f64, Option<f64>)>,
    pub section_sizes: Vec<usize>,
}

pub fn parse(text: &str) -> Result<NaiveArpa, String> {
    let mut header = Vec::new();
    let mut entries = BTreeMap::new();
    let mut section_sizes: Vec<usize> = Vec::new();
    let mut current: Option<usize> = None;
    let mut saw_end = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "\\data\\" {
            continue;
        }
        if line == "\\end\\" {
            saw_end = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let parts: Vec<&str> = rest.split('=').collect();
            header.push(parts[1].parse::<usize>().map_err(|e| e.to_string())?);
            continue;
        }
        if line.starts_with('\\') && line.ends_with("-grams:") {
            let k: usize = line[1..line.len() - 7].parse().map_err(|_| format!("bad section {line}"))?;
            current = Some(k);
            section_sizes.push(0);
            continue;
        }
        let k = current.ok_or("entry before any section")?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < k + 1 {
            return Err(format!("short line {line}"));
        }
        let prob: f64 = cols[0].parse().map_err(|_| format!("bad prob in {line}"))?;
        let words: Vec<String> = cols[1..=k].iter().map(|s| s.to_string()).collect();
        let backoff = cols.get(k + 1).map(|b| b.parse::<f64>()).transpose().map_err(|_| format!("bad backoff in {line}"))?;
        *section_sizes.last_mut().unwrap() += 1;
        entries.insert(words, (prob, backoff));
    }
    if !saw_end {
        return Err("missing \\end\\".into());
    }
    Ok(NaiveArpa { header, entries, section_sizes })
}
