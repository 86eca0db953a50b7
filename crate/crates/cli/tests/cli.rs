use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inkgrade_core::image::{save_image, GrayImage};
use inkgrade_core::lm::read_arpa;
use serde_json::Value;

const TINY: &str = r#"
seed = 11
out_dir = "run"

[synthgen]
pretrain_per_class = 5
exam_per_class = 5
answers = 60
lm_sentences = 80
exam_sheets = 2

[recognizer]
members = [[1, 1, 1, 1]]
bootstrap_per_class = 1

[recognizer.train]
epochs = 1

[recognizer.finetune]
epochs = 1

[lm]
order = 3

[scorer]
d_model = 16
n_layers = 1
n_heads = 2
ffn_dim = 32
epochs = 1
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.toml"), TINY).unwrap();
        Self { dir }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_inkgrade"))
            .arg("--config")
            .arg(self.dir.path().join("config.toml"))
            .arg("--deterministic")
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join("run").join(rel)
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn generate_splits_and_is_reproducible() {
    let a = Workspace::new();
    a.ok(&["generate"]);
    let n = |name: &str| lines(&a.path(&format!("data/{name}.jsonl"))).len();
    assert_eq!((n("pretrain_train"), n("pretrain_val"), n("pretrain_test")), (120, 40, 40));
    assert_eq!((n("exam_train"), n("exam_val"), n("exam_test")), (120, 40, 40));
    let answers = lines(&a.path("data/answers.jsonl"));
    assert_eq!(answers.len(), 60);
    assert_eq!(answers.iter().filter(|r| r["split"] == "train").count(), 36);

    let b = Workspace::new();
    b.ok(&["generate"]);
    assert_eq!(a.json("manifests/generate.json")["outputs"], b.json("manifests/generate.json")["outputs"]);

    let c = Workspace::new();
    c.ok(&["--seed", "12", "generate"]);
    assert_ne!(a.json("manifests/generate.json")["outputs"], c.json("manifests/generate.json")["outputs"]);
}

#[test]
fn unknown_label_is_reported() {
    let w = Workspace::new();
    w.ok(&["generate"]);
    let p = w.path("data/pretrain_train.jsonl");
    let text = fs::read_to_string(&p).unwrap();
    let first = lines(&p)[0]["label"].as_str().unwrap().to_string();
    let bad = text.replacen(&format!("\"label\":\"{first}\""), "\"label\":\"§\"", 1);
    fs::write(&p, bad).unwrap();
    let out = w.run(&["train-recognizer"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains('§'));
}

#[test]
fn finetune_needs_a_pretrained_checkpoint() {
    let w = Workspace::new();
    w.ok(&["generate"]);
    let out = w.run(&["finetune"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pretrained.ckpt") && err.contains("train-recognizer"), "{err}");
}

#[test]
fn eval_of_identical_ranks_is_one() {
    let w = Workspace::new();
    let ranks = "{\"rank\": 0}\n{\"rank\": 2}\n{\"rank\": 3}\n{\"rank\": 1}\n";
    let p = w.dir.path().join("ranks.jsonl");
    fs::write(&p, ranks).unwrap();
    let p = p.to_str().unwrap();
    w.ok(&["eval", "--system", p, "--human", p]);
    assert_eq!(w.json("results/eval_scores.json")["qwk"], 1.0);
    assert!(!w.run(&["eval", "--system", p]).status.success());
}

#[test]
fn arpa_output_round_trips() {
    let w = Workspace::new();
    w.ok(&["generate"]);
    let out = w.ok(&["train-lm"]);
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    let lm = read_arpa(w.path("models/lm.arpa")).unwrap();
    assert_eq!(serde_json::to_value(lm.num_ngrams()).unwrap(), metrics["ngrams"]);
    assert!(metrics["heldout_perplexity"].as_f64().unwrap().is_finite());
}

#[test]
fn pipeline_skips_unreadable_sheets() {
    let w = Workspace::new();
    for c in ["generate", "train-recognizer", "finetune", "train-lm", "train-scorer"] {
        w.ok(&[c]);
    }
    let mut blank = GrayImage::blank(400, 300);
    for y in 100..140 {
        for x in 150..200 {
            blank.set(x, y, 0);
        }
    }
    save_image(&blank, w.path("data/sheets/no_grid.png")).unwrap();
    let mut manifest = fs::read_to_string(w.path("data/sheets.jsonl")).unwrap();
    manifest.push_str("{\"path\":\"sheets/no_grid.png\",\"label_sequence\":[\"x\"],\"split\":\"test\",\"seed\":0}\n");
    fs::write(w.path("data/sheets.jsonl"), manifest).unwrap();

    w.ok(&["pipeline"]);
    let rows = lines(&w.path("results/pipeline.jsonl"));
    assert_eq!(rows.len(), 3);
    let failed: Vec<&Value> = rows.iter().filter(|r| r.get("error").is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["sheet"], "sheets/no_grid.png");
    assert_eq!(failed[0]["error"], "GridNotFound");
    let report = w.json("results/pipeline_report.json");
    assert_eq!(report["failed_sheets"], 1);
    assert!(rows.iter().filter(|r| r.get("error").is_none()).all(|r| r["rank"].is_u64()));
}
