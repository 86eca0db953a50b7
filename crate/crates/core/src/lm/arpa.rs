use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LmError, NGramEntry, NGramModel, Result, Vocabulary, NEVER};

/// Text conversion without touching the filesystem.
pub struct ArpaText;

impl ArpaText {
    pub fn render(model: &NGramModel) -> String {
        let mut out = String::from("\n\\data\\\n");
        for (k, t) in model.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, t.len());
        }
        for (k, table) in model.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            let mut keys: Vec<&Vec<u32>> = table.keys().collect();
            keys.sort();
            for g in keys {
                let e = table[g];
                let words: Vec<&str> = g.iter().map(|&id| model.vocab.symbol(id)).collect();
                let _ = write!(out, "{}\t{}", e.prob, words.join(" "));
                if k + 1 < model.order {
                    let _ = write!(out, "\t{}", e.backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn parse(text: &str) -> Result<NGramModel> {
        let err = |line: usize, msg: &str| LmError::Format { line: line + 1, msg: msg.to_string() };
        let lines: Vec<&str> = text.lines().collect();
        let mut i = lines.iter().position(|l| l.trim() == "\\data\\").ok_or_else(|| err(0, "missing \\data\\"))? + 1;
        let mut declared = Vec::new();
        while i < lines.len() {
            let l = lines[i].trim();
            i += 1;
            if l.is_empty() {
                if declared.is_empty() {
                    continue;
                }
                break;
            }
            let rest = l.strip_prefix("ngram ").ok_or_else(|| err(i - 1, "expected 'ngram k=count'"))?;
            let (k, c) = rest.split_once('=').ok_or_else(|| err(i - 1, "expected 'ngram k=count'"))?;
            let k: usize = k.trim().parse().map_err(|_| err(i - 1, "bad order"))?;
            let c: usize = c.trim().parse().map_err(|_| err(i - 1, "bad count"))?;
            if k != declared.len() + 1 {
                return Err(err(i - 1, "orders must be listed 1..n"));
            }
            declared.push(c);
        }
        let order = declared.len();
        if order == 0 {
            return Err(err(i, "no ngram counts in header"));
        }
        let mut raw: Vec<Vec<(f64, Vec<&str>, f64)>> = Vec::with_capacity(order);
        for k in 1..=order {
            let header = format!("\\{k}-grams:");
            while i < lines.len() && lines[i].trim().is_empty() {
                i += 1;
            }
            if i >= lines.len() || lines[i].trim() != header {
                return Err(err(i, &format!("expected {header}")));
            }
            i += 1;
            let mut section = Vec::with_capacity(declared[k - 1]);
            while i < lines.len() && !lines[i].trim().is_empty() && !lines[i].starts_with('\\') {
                let fields: Vec<&str> = lines[i].split_whitespace().collect();
                if fields.len() != k + 1 && fields.len() != k + 2 {
                    return Err(err(i, &format!("expected {} or {} fields", k + 1, k + 2)));
                }
                let prob: f64 = fields[0].parse().map_err(|_| err(i, "bad probability"))?;
                let backoff: f64 = match fields.get(k + 1) {
                    Some(b) => b.parse().map_err(|_| err(i, "bad backoff"))?,
                    None => 0.0,
                };
                section.push((prob, fields[1..=k].to_vec(), backoff));
                i += 1;
            }
            if section.len() != declared[k - 1] {
                return Err(err(i, &format!("{k}-gram section has {} entries, header says {}", section.len(), declared[k - 1])));
            }
            raw.push(section);
        }
        while i < lines.len() && lines[i].trim().is_empty() {
            i += 1;
        }
        if i >= lines.len() || lines[i].trim() != "\\end\\" {
            return Err(err(i, "missing \\end\\"));
        }

        let vocab = Vocabulary::new(raw[0].iter().map(|(_, w, _)| w[0]));
        let mut tables: Vec<HashMap<Vec<u32>, NGramEntry>> = Vec::with_capacity(order);
        for (k, section) in raw.iter().enumerate() {
            let mut table = HashMap::with_capacity(section.len());
            for (prob, words, backoff) in section {
                let ids: Option<Vec<u32>> = words.iter().map(|w| vocab.get(w)).collect();
                let ids = ids.ok_or_else(|| err(0, &format!("{}-gram uses a word missing from the unigrams", k + 1)))?;
                table.insert(ids, NGramEntry { prob: *prob, backoff: *backoff });
            }
            tables.push(table);
        }
        for id in [Vocabulary::UNK_ID, Vocabulary::BOS_ID, Vocabulary::EOS_ID] {
            tables[0].entry(vec![id]).or_insert(NGramEntry { prob: NEVER, backoff: 0.0 });
        }
        Ok(NGramModel { order, vocab, tables })
    }
}

pub fn write_arpa(model: &NGramModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ArpaText::render(model)).map_err(|source| LmError::Io { path: path.display().to_string(), source })
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NGramModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LmError::Io { path: path.display().to_string(), source })?;
    ArpaText::parse(&text)
}
