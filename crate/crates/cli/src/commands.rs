//! Command implementations. Each writes its artifacts under the configured
//! output root and finishes with a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use inkgrade_core::image::{load_image, save_image, GrayImage};
use inkgrade_core::lm::{char_tokens, perplexity, read_arpa, train_lm, write_arpa};
use inkgrade_core::metrics::{confusion, corpus_char_accuracy, qwk, EvalReport, RatingPair};
use inkgrade_core::recognizer::{bootstrap_labels, fine_tune, train, Dataset, Ensemble, History};
use inkgrade_core::rng::derive_seed;
use inkgrade_core::scorer::{evaluate_qwk, split_dataset, train_scorer, ScoreDataset, ScoreItem, Scorer, ScorerConfig};
use inkgrade_core::synth::{
    generate_glyph_set, generate_sheet, split_indices, BlockSpec, GlyphAtlas, GlyphSample, SheetSpec, Split, TextGenerator,
    GLYPH_SIZE,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::manifest::{read_jsonl, write_json, write_jsonl, ManifestBuilder, RunManifest};
use crate::pipeline::read_sheet;

const SPLITS: [(Split, &str); 3] = [(Split::Train, "train"), (Split::Val, "val"), (Split::Test, "test")];

/// One glyph image in a dataset manifest. `path` is relative to the data dir.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphRecord {
    pub path: String,
    pub label: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub text: String,
    pub rank: usize,
    pub question_id: u32,
    pub split: Split,
}

/// One sheet image with the answer text and rank of each block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRecord {
    pub path: String,
    pub label_sequence: Vec<String>,
    #[serde(default)]
    pub ranks: Vec<usize>,
    pub split: Split,
    pub seed: u64,
}

/// A result row of the pipeline command: either a reading or an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub sheet: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greedy_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(flatten)]
    pub eval: EvalReport,
    pub greedy_char_accuracy: Option<f64>,
    pub sheets: usize,
    pub failed_sheets: usize,
    pub segmentation_failure_rate: f64,
    pub failures: BTreeMap<String, usize>,
}

/// Shared state for one invocation.
pub struct RunContext {
    pub cfg: PipelineConfig,
    pub deterministic: bool,
}

impl RunContext {
    pub fn new(cfg: PipelineConfig, deterministic: bool) -> Self {
        Self { cfg, deterministic }
    }

    fn manifest(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::new(&self.cfg.root(), command, &self.cfg.to_toml(), self.cfg.seed, self.deterministic)
    }

    fn finish(&self, b: ManifestBuilder, metrics: serde_json::Value) -> Result<RunManifest> {
        b.finish(&self.cfg.out(&self.cfg.paths.manifests_dir), metrics)
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.seed, tag)
    }

    fn require(&self, path: &Path, hint: &str) -> Result<()> {
        if !path.exists() {
            bail!("{} not found; {hint}", path.display());
        }
        Ok(())
    }

    fn text_generator(&self, atlas: &GlyphAtlas) -> Result<TextGenerator> {
        Ok(TextGenerator::new(atlas, self.cfg.synthgen.lexicon_words, self.seed("generate/lexicon"))?)
    }

    fn load_glyphs(&self, name: &str, atlas: &GlyphAtlas, b: &mut ManifestBuilder) -> Result<Vec<GlyphSample>> {
        let path = self.cfg.data(format!("{name}.jsonl"));
        self.require(&path, "run `inkgrade generate` first")?;
        b.input(&path)?;
        let records: Vec<GlyphRecord> = read_jsonl(&path)?;
        records
            .par_iter()
            .map(|r| {
                let c = r.label.chars().next().ok_or_else(|| anyhow!("empty label in {}", path.display()))?;
                let label = atlas.index_of(c).ok_or_else(|| anyhow!("label {c:?} in {} is not in the alphabet", path.display()))?;
                let image = load_image(self.cfg.data(&r.path))?;
                Ok(GlyphSample { image, label, seed: r.seed })
            })
            .collect()
    }

    fn load_ensemble(&self, path: &Path, hint: &str, b: &mut ManifestBuilder) -> Result<Ensemble> {
        self.require(path, hint)?;
        b.input(path)?;
        Ensemble::load(path).with_context(|| format!("loading {}", path.display()))
    }

    fn load_answers(&self, b: &mut ManifestBuilder) -> Result<ScoreDataset> {
        let path = self.cfg.data("answers.jsonl");
        self.require(&path, "run `inkgrade generate` first")?;
        b.input(&path)?;
        let mut data = ScoreDataset::default();
        for r in read_jsonl::<AnswerRecord>(&path)? {
            let item = ScoreItem { text: r.text, rank: r.rank, question_id: r.question_id };
            match r.split {
                Split::Train => data.train.push(item),
                Split::Val => data.val.push(item),
                Split::Test => data.test.push(item),
            }
        }
        Ok(data)
    }
}

pub fn generate(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let sg = &cfg.synthgen;
    let atlas = cfg.atlas();
    let mut b = ctx.manifest("generate");
    let mut metrics = serde_json::Map::new();

    for (pool, per_class, aug) in [("pretrain", sg.pretrain_per_class, &sg.pretrain_augment), ("exam", sg.exam_per_class, &sg.exam_augment)] {
        let samples = generate_glyph_set(&atlas, aug, per_class * atlas.len(), ctx.seed(&format!("generate/{pool}")));
        let splits = split_indices(samples.len(), ctx.seed(&format!("generate/{pool}/split")));
        let dir = cfg.data(format!("glyphs/{pool}"));
        fs::create_dir_all(&dir)?;
        let mut digest = Sha256::new();
        let mut by_split: BTreeMap<&str, Vec<GlyphRecord>> = BTreeMap::new();
        for (i, (s, split)) in samples.iter().zip(&splits).enumerate() {
            let rel = format!("glyphs/{pool}/{i:05}.png");
            let path = cfg.data(&rel);
            save_image(&s.image, &path)?;
            digest.update(fs::read(&path)?);
            let name = SPLITS.iter().find(|(sp, _)| sp == split).map(|x| x.1).expect("known split");
            by_split.entry(name).or_default().push(GlyphRecord {
                path: rel,
                label: atlas.labels()[s.label].to_string(),
                split: *split,
                seed: s.seed,
            });
        }
        b.output_digest(&format!("data/glyphs/{pool}/*.png"), hex::encode(digest.finalize()));
        for (_, name) in SPLITS {
            let rows = by_split.remove(name).unwrap_or_default();
            let path = cfg.data(format!("{pool}_{name}.jsonl"));
            metrics.insert(format!("{pool}_{name}"), json!(rows.len()));
            write_jsonl(&path, &rows)?;
            b.output(&path)?;
        }
    }

    let gen = ctx.text_generator(&atlas)?;
    let items: Vec<ScoreItem> = gen
        .answers(sg.answers, ctx.seed("generate/answers"))
        .into_iter()
        .map(|a| ScoreItem { text: a.text, rank: a.rank, question_id: a.question_id })
        .collect();
    let data = split_dataset(&items, ctx.seed("generate/answer-split"))?;
    let mut answers = Vec::with_capacity(items.len());
    for (split, set) in [(Split::Train, &data.train), (Split::Val, &data.val), (Split::Test, &data.test)] {
        answers.extend(set.iter().map(|i| AnswerRecord { text: i.text.clone(), rank: i.rank, question_id: i.question_id, split }));
    }
    let answers_path = cfg.data("answers.jsonl");
    write_jsonl(&answers_path, &answers)?;
    b.output(&answers_path)?;
    write_json(&cfg.data("rubric.json"), &gen.rubric)?;
    b.output(&cfg.data("rubric.json"))?;

    let lm_path = cfg.data("lm_corpus.txt");
    let mut lm_text = gen.lm_corpus(sg.lm_sentences, ctx.seed("generate/lm")).join("\n");
    lm_text.push('\n');
    fs::write(&lm_path, lm_text)?;
    b.output(&lm_path)?;

    let mut sheets = Vec::with_capacity(sg.exam_sheets);
    if !data.test.is_empty() {
        for i in 0..sg.exam_sheets {
            let picked: Vec<&ScoreItem> =
                (0..sg.blocks_per_sheet).map(|j| &data.test[(i * sg.blocks_per_sheet + j) % data.test.len()]).collect();
            let spec = SheetSpec {
                blocks: picked
                    .iter()
                    .map(|it| BlockSpec { rows: sg.sheet_rows, cols: sg.sheet_cols, cell_px: GLYPH_SIZE, text: it.text.chars().collect() })
                    .collect(),
                inter_block_gap: 40,
                margin: 20,
                line_thickness: 2,
            };
            let seed = ctx.seed(&format!("generate/sheet/{i}"));
            let (img, truth) = generate_sheet(&spec, &atlas, &sg.exam_augment, seed)?;
            let rel = format!("sheets/sheet_{i:04}.png");
            crate::manifest::ensure_parent(&cfg.data(&rel))?;
            save_image(&img, cfg.data(&rel))?;
            write_json(&cfg.data(format!("sheets/sheet_{i:04}.json")), &truth)?;
            sheets.push(SheetRecord {
                path: rel,
                label_sequence: picked.iter().map(|it| it.text.clone()).collect(),
                ranks: picked.iter().map(|it| it.rank).collect(),
                split: Split::Test,
                seed,
            });
        }
    }
    let sheets_path = cfg.data("sheets.jsonl");
    write_jsonl(&sheets_path, &sheets)?;
    b.output(&sheets_path)?;
    metrics.insert("answers".into(), json!(answers.len()));
    metrics.insert("sheets".into(), json!(sheets.len()));
    ctx.finish(b, serde_json::Value::Object(metrics))
}

#[derive(Serialize)]
struct MemberReport {
    conv_layers: usize,
    history: History,
}

pub fn train_recognizer(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let atlas = cfg.atlas();
    let mut b = ctx.manifest("train-recognizer");
    let train_set = ctx.load_glyphs("pretrain_train", &atlas, &mut b)?;
    let val = ctx.load_glyphs("pretrain_val", &atlas, &mut b)?;
    let data = Dataset { alphabet: atlas.labels(), samples: &train_set };
    let mut members = Vec::new();
    let mut reports = Vec::new();
    for (i, spec) in cfg.recognizer.specs(atlas.len()).into_iter().enumerate() {
        log::info!("training member {i} ({} conv layers)", spec.conv_layers());
        let conv_layers = spec.conv_layers();
        let (m, history) = train(spec, data, &val, &cfg.recognizer.train, ctx.seed(&format!("recognizer/member{i}")))?;
        reports.push(MemberReport { conv_layers, history });
        members.push(m);
    }
    let ens = Ensemble::new(members)?;
    let val_acc = ens.accuracy(&val)?;
    let path = cfg.out(&cfg.paths.pretrained);
    crate::manifest::ensure_parent(&path)?;
    ens.save(&path)?;
    b.output(&path)?;
    let report = cfg.results("train_recognizer.json");
    write_json(&report, &json!({ "members": reports, "ensemble_val_accuracy": val_acc }))?;
    b.output(&report)?;
    ctx.finish(b, json!({ "ensemble_val_accuracy": val_acc }))
}

pub fn finetune(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let atlas = cfg.atlas();
    let mut b = ctx.manifest("finetune");
    let pre = ctx.load_ensemble(&cfg.out(&cfg.paths.pretrained), "run `inkgrade train-recognizer` first to create the pretrained ensemble", &mut b)?;
    let train_set = ctx.load_glyphs("exam_train", &atlas, &mut b)?;
    let val = ctx.load_glyphs("exam_val", &atlas, &mut b)?;
    let data = Dataset { alphabet: atlas.labels(), samples: &train_set };
    let before = pre.accuracy(&val)?;
    let mut members = Vec::new();
    let mut reports = Vec::new();
    for (i, m) in pre.members().iter().enumerate() {
        let (ft, history) = fine_tune(m, data, &val, &cfg.recognizer.finetune, ctx.seed(&format!("finetune/member{i}")))?;
        reports.push(MemberReport { conv_layers: m.spec.conv_layers(), history });
        members.push(ft);
    }
    let ens = Ensemble::new(members)?;
    let after = ens.accuracy(&val)?;
    let path = cfg.out(&cfg.paths.finetuned);
    crate::manifest::ensure_parent(&path)?;
    ens.save(&path)?;
    b.output(&path)?;
    let report = cfg.results("finetune.json");
    write_json(&report, &json!({ "members": reports, "exam_val_accuracy_before": before, "exam_val_accuracy_after": after }))?;
    b.output(&report)?;
    ctx.finish(b, json!({ "exam_val_accuracy_before": before, "exam_val_accuracy_after": after }))
}

pub fn bootstrap(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let atlas = cfg.atlas();
    let mut b = ctx.manifest("bootstrap");
    let path = cfg.data("exam_train.jsonl");
    let pool = ctx.load_glyphs("exam_train", &atlas, &mut b)?;
    let records: Vec<GlyphRecord> = read_jsonl(&path)?;
    let mut seen = vec![0usize; atlas.len()];
    let mut small = Vec::new();
    let mut rest = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        if seen[s.label] < cfg.recognizer.bootstrap_per_class {
            seen[s.label] += 1;
            small.push(s.clone());
        } else {
            rest.push(i);
        }
    }
    let images: Vec<GrayImage> = rest.iter().map(|&i| pool[i].image.clone()).collect();
    let spec = cfg.recognizer.specs(atlas.len()).swap_remove(0);
    let outcome = bootstrap_labels(
        Dataset { alphabet: atlas.labels(), samples: &small },
        &images,
        spec,
        &cfg.recognizer.train,
        ctx.seed("bootstrap"),
    )?;
    let agree = outcome.labels.iter().filter(|l| l.label == pool[rest[l.index]].label).count();
    let rows: Vec<serde_json::Value> = outcome
        .review_manifest()
        .iter()
        .map(|l| json!({ "path": records[rest[l.index]].path, "label": l.symbol.to_string(), "confidence": l.confidence }))
        .collect();
    let out = cfg.results("bootstrap_review.jsonl");
    write_jsonl(&out, &rows)?;
    b.output(&out)?;
    let agreement = if rest.is_empty() { 1.0 } else { agree as f64 / rest.len() as f64 };
    ctx.finish(b, json!({ "labelled": small.len(), "pseudo_labelled": rest.len(), "agreement": agreement }))
}

pub fn train_language_model(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let mut b = ctx.manifest("train-lm");
    let corpus_path = cfg.data("lm_corpus.txt");
    ctx.require(&corpus_path, "run `inkgrade generate` first")?;
    b.input(&corpus_path)?;
    let corpus: Vec<Vec<String>> = fs::read_to_string(&corpus_path)?.lines().filter(|l| !l.is_empty()).map(char_tokens).collect();
    let model = train_lm(&corpus, cfg.lm.order)?;
    let path = cfg.out(&cfg.paths.arpa);
    crate::manifest::ensure_parent(&path)?;
    write_arpa(&model, &path)?;
    let back = read_arpa(&path)?;
    if back.num_ngrams() != model.num_ngrams() {
        bail!("ARPA round trip changed the n-gram counts");
    }
    b.output(&path)?;
    let mut metrics = json!({ "order": cfg.lm.order, "ngrams": model.num_ngrams() });
    let answers = cfg.data("answers.jsonl");
    if answers.exists() {
        let held: Vec<Vec<String>> = read_jsonl::<AnswerRecord>(&answers)?
            .into_iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| char_tokens(&r.text))
            .collect();
        if !held.is_empty() {
            metrics["heldout_perplexity"] = json!(perplexity(&back, &held)?);
        }
    }
    ctx.finish(b, metrics)
}

pub fn train_score_model(ctx: &RunContext) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let mut b = ctx.manifest("train-scorer");
    let data = ctx.load_answers(&mut b)?;
    let scfg = ScorerConfig { seed: ctx.seed("scorer"), ..cfg.scorer.clone() };
    let (scorer, history) = train_scorer(&scfg, &data)?;
    let test_qwk = evaluate_qwk(&scorer, &data.test);
    let path = cfg.out(&cfg.paths.scorer);
    crate::manifest::ensure_parent(&path)?;
    scorer.save(&path)?;
    b.output(&path)?;
    let report = cfg.results("train_scorer.json");
    write_json(&report, &json!({ "history": history, "test_qwk": test_qwk }))?;
    b.output(&report)?;
    ctx.finish(b, json!({ "test_qwk": test_qwk, "best_epoch": history.best_epoch }))
}

pub fn pipeline(ctx: &RunContext, sheets: Option<&Path>) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let mut b = ctx.manifest("pipeline");
    let ens = ctx.load_ensemble(&cfg.out(&cfg.paths.finetuned), "run `inkgrade finetune` first", &mut b)?;
    let arpa = cfg.out(&cfg.paths.arpa);
    ctx.require(&arpa, "run `inkgrade train-lm` first")?;
    b.input(&arpa)?;
    let lm = read_arpa(&arpa)?;
    let scorer_path = cfg.out(&cfg.paths.scorer);
    let scorer = if scorer_path.exists() {
        b.input(&scorer_path)?;
        Some(Scorer::load(&scorer_path)?)
    } else {
        log::warn!("no scorer at {}; ranks are omitted", scorer_path.display());
        None
    };
    let manifest_path: PathBuf = sheets.map(Path::to_path_buf).unwrap_or_else(|| cfg.data("sheets.jsonl"));
    ctx.require(&manifest_path, "pass --sheets or run `inkgrade generate` first")?;
    b.input(&manifest_path)?;
    let records: Vec<SheetRecord> = read_jsonl(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let per_sheet: Vec<Vec<PipelineRow>> = records
        .par_iter()
        .map(|r| {
            let fail = |kind: &str| {
                vec![PipelineRow {
                    sheet: r.path.clone(),
                    block: None,
                    text: None,
                    greedy_text: None,
                    rank: None,
                    truth_text: None,
                    truth_rank: None,
                    error: Some(kind.to_string()),
                }]
            };
            let img = match load_image(base.join(&r.path)) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("{}: {e}", r.path);
                    return fail("ImageError");
                }
            };
            match read_sheet(&img, &cfg.segmenter, &ens, &lm, &cfg.decoder, scorer.as_ref()) {
                Ok(blocks) => blocks
                    .into_iter()
                    .map(|br| PipelineRow {
                        sheet: r.path.clone(),
                        block: Some(br.block),
                        text: Some(br.text),
                        greedy_text: Some(br.greedy_text),
                        rank: br.rank,
                        truth_text: r.label_sequence.get(br.block).cloned(),
                        truth_rank: r.ranks.get(br.block).copied(),
                        error: None,
                    })
                    .collect(),
                Err(e) => {
                    log::warn!("{}: {e}", r.path);
                    fail(e.kind())
                }
            }
        })
        .collect();
    let rows: Vec<PipelineRow> = per_sheet.into_iter().flatten().collect();

    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rows {
        if let Some(e) = &r.error {
            *failures.entry(e.clone()).or_default() += 1;
        }
    }
    let failed = failures.values().sum::<usize>();
    let read: Vec<&PipelineRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let pairs = |f: fn(&PipelineRow) -> &Option<String>| -> Vec<(Vec<char>, Vec<char>)> {
        read.iter()
            .filter_map(|r| Some((f(r).as_ref()?.chars().collect(), r.truth_text.as_ref()?.chars().collect())))
            .collect()
    };
    let char_accuracy = corpus_char_accuracy(&pairs(|r| &r.text)).ok();
    let greedy_char_accuracy = corpus_char_accuracy(&pairs(|r| &r.greedy_text)).ok();
    let ranked: Vec<(usize, usize)> = read.iter().filter_map(|r| Some((r.rank?, r.truth_rank?))).collect();
    let mut kappa = None;
    let mut confusion_path = None;
    if let Some(s) = &scorer {
        let n = s.cfg.n_ranks;
        if !ranked.is_empty() {
            let pair = RatingPair::new(ranked.iter().map(|p| p.0).collect(), ranked.iter().map(|p| p.1).collect(), n)?;
            kappa = qwk(&pair).ok();
            if cfg.metrics.write_confusion {
                let path = cfg.results("confusion.json");
                write_json(&path, &confusion(&ranked, n))?;
                b.output(&path)?;
                confusion_path = Some("confusion.json".to_string());
            }
        }
    }
    let results_path = cfg.results("pipeline.jsonl");
    write_jsonl(&results_path, &rows)?;
    b.output(&results_path)?;
    let report = PipelineReport {
        eval: EvalReport::new(char_accuracy, kappa, read.len(), confusion_path),
        greedy_char_accuracy,
        sheets: records.len(),
        failed_sheets: failed,
        segmentation_failure_rate: if records.is_empty() { 0.0 } else { failed as f64 / records.len() as f64 },
        failures,
    };
    let report_path = cfg.results("pipeline_report.json");
    write_json(&report_path, &report)?;
    b.output(&report_path)?;
    ctx.finish(b, serde_json::to_value(&report)?)
}

/// Reads ranks from a JSON-lines file with a `rank` field, or one integer per line.
pub fn read_ranks(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: serde_json::Value = serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            let r = v.get("rank").unwrap_or(&v);
            r.as_u64().map(|x| x as usize).ok_or_else(|| anyhow!("{}:{}: no integer rank", path.display(), i + 1))
        })
        .collect()
}

/// With score files, reports agreement; otherwise evaluates the recognizers
/// on the exam-domain test glyphs.
pub fn eval(ctx: &RunContext, system: Option<&Path>, human: Option<&Path>) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let mut b = ctx.manifest("eval");
    match (system, human) {
        (Some(sys), Some(hum)) => {
            b.input(sys)?;
            b.input(hum)?;
            let s = read_ranks(sys)?;
            let h = read_ranks(hum)?;
            let n = s.iter().chain(&h).copied().max().map_or(1, |m| m + 1).max(cfg.scorer.n_ranks);
            let pair = RatingPair::new(s, h, n)?;
            let k = qwk(&pair)?;
            let mut confusion_path = None;
            if cfg.metrics.write_confusion {
                let pairs: Vec<(usize, usize)> = pair.system.iter().copied().zip(pair.human.iter().copied()).collect();
                let path = cfg.results("eval_confusion.json");
                write_json(&path, &confusion(&pairs, n))?;
                b.output(&path)?;
                confusion_path = Some("eval_confusion.json".to_string());
            }
            let report = EvalReport::new(None, Some(k), pair.system.len(), confusion_path);
            let path = cfg.results("eval_scores.json");
            write_json(&path, &report)?;
            b.output(&path)?;
            ctx.finish(b, serde_json::to_value(&report)?)
        }
        (None, None) => {
            let atlas = cfg.atlas();
            let test = ctx.load_glyphs("exam_test", &atlas, &mut b)?;
            let mut report = serde_json::Map::new();
            for (key, rel) in [("pretrain_only_accuracy", &cfg.paths.pretrained), ("finetuned_accuracy", &cfg.paths.finetuned)] {
                let path = cfg.out(rel);
                if path.exists() {
                    let ens = ctx.load_ensemble(&path, "", &mut b)?;
                    report.insert(key.into(), json!(ens.accuracy(&test)?));
                }
            }
            if report.is_empty() {
                bail!("no recognizer checkpoints found; run `inkgrade train-recognizer` first");
            }
            let path = cfg.results("eval_recognizer.json");
            write_json(&path, &report)?;
            b.output(&path)?;
            ctx.finish(b, serde_json::Value::Object(report))
        }
        _ => bail!("--system and --human must be given together"),
    }
}
