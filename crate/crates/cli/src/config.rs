//! TOML run configuration. Every section is optional and unknown keys are
//! rejected. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use inkgrade_core::decoder::DecoderConfig;
use inkgrade_core::nn::AdamConfig;
use inkgrade_core::recognizer::{ConvNetSpec, TrainConfig};
use inkgrade_core::scorer::ScorerConfig;
use inkgrade_core::segment::SegmenterConfig;
use inkgrade_core::synth::{AugmentParams, GlyphAtlas, DEFAULT_SYMBOLS};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; every module seed is derived from it with a tag.
    pub seed: u64,
    /// Root of all outputs, relative to `base_dir`.
    pub out_dir: PathBuf,
    /// Directory of the config file; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
    pub paths: PathsConfig,
    pub synthgen: SynthgenConfig,
    pub segmenter: SegmenterConfig,
    pub recognizer: RecognizerSection,
    pub lm: LmSection,
    pub decoder: DecoderConfig,
    pub scorer: ScorerConfig,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("run"),
            base_dir: PathBuf::new(),
            paths: PathsConfig::default(),
            synthgen: SynthgenConfig::default(),
            segmenter: SegmenterConfig::default(),
            recognizer: RecognizerSection::default(),
            lm: LmSection::default(),
            decoder: DecoderConfig::default(),
            scorer: ScorerConfig::default(),
            metrics: MetricsSection::default(),
        }
    }
}

/// Artifact locations, relative to `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub pretrained: PathBuf,
    pub finetuned: PathBuf,
    pub arpa: PathBuf,
    pub scorer: PathBuf,
    pub results_dir: PathBuf,
    pub manifests_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            pretrained: "models/pretrained.ckpt".into(),
            finetuned: "models/finetuned.ckpt".into(),
            arpa: "models/lm.arpa".into(),
            scorer: "models/scorer.ckpt".into(),
            results_dir: "results".into(),
            manifests_dir: "manifests".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthgenConfig {
    pub symbols: String,
    /// Pretraining glyphs per class, split 60/20/20.
    pub pretrain_per_class: usize,
    /// Exam-domain glyphs per class, split 60/20/20.
    pub exam_per_class: usize,
    pub pretrain_augment: AugmentParams,
    pub exam_augment: AugmentParams,
    pub lexicon_words: usize,
    /// Scored answers, split 3:1:1.
    pub answers: usize,
    /// Sentences in the language-model corpus.
    pub lm_sentences: usize,
    /// Exam sheets rendered from test-split answers.
    pub exam_sheets: usize,
    pub blocks_per_sheet: usize,
    pub sheet_rows: usize,
    pub sheet_cols: usize,
}

impl Default for SynthgenConfig {
    fn default() -> Self {
        Self {
            symbols: DEFAULT_SYMBOLS.to_string(),
            pretrain_per_class: 100,
            exam_per_class: 40,
            pretrain_augment: AugmentParams::pretrain(),
            exam_augment: AugmentParams::exam_domain(),
            lexicon_words: 120,
            answers: 2000,
            lm_sentences: 5000,
            exam_sheets: 50,
            blocks_per_sheet: 1,
            sheet_rows: 10,
            sheet_cols: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerSection {
    /// Conv layers per stage for each ensemble member.
    pub members: Vec<[usize; 4]>,
    pub residual: bool,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    /// Labelled glyphs per class used to seed label bootstrapping.
    pub bootstrap_per_class: usize,
}

impl Default for RecognizerSection {
    fn default() -> Self {
        let adam = AdamConfig { lr: 3e-3, ..AdamConfig::default() };
        Self {
            members: vec![[1, 1, 1, 1], [1, 1, 2, 2], [2, 2, 2, 2], [2, 2, 3, 3], [3, 3, 3, 3]],
            residual: false,
            train: TrainConfig { epochs: 10, batch_size: 16, adam },
            finetune: TrainConfig { epochs: 10, batch_size: 16, adam },
            bootstrap_per_class: 5,
        }
    }
}

impl RecognizerSection {
    pub fn specs(&self, num_classes: usize) -> Vec<ConvNetSpec> {
        self.members
            .iter()
            .map(|&d| ConvNetSpec { residual: self.residual, ..ConvNetSpec::with_depths(d, num_classes) })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        Self { order: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub write_confusion: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { write_confusion: true }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a config; a relative `out_dir` resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        GlyphAtlas::from_symbols(&self.synthgen.symbols).context("synthgen.symbols")?;
        for (name, a) in [("pretrain_augment", &self.synthgen.pretrain_augment), ("exam_augment", &self.synthgen.exam_augment)] {
            a.validate().map_err(|e| anyhow::anyhow!("synthgen.{name}: {e}"))?;
        }
        if self.recognizer.members.is_empty() {
            bail!("recognizer.members must list at least one member");
        }
        if self.lm.order == 0 {
            bail!("lm.order must be at least 1");
        }
        if self.synthgen.blocks_per_sheet == 0 {
            bail!("synthgen.blocks_per_sheet must be at least 1");
        }
        self.decoder.validate().context("decoder")?;
        self.scorer.validate().context("scorer")?;
        Ok(())
    }

    pub fn atlas(&self) -> GlyphAtlas {
        GlyphAtlas::from_symbols(&self.synthgen.symbols).expect("validated symbols")
    }

    pub fn root(&self) -> PathBuf {
        self.base_dir.join(&self.out_dir)
    }

    pub fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root().join(rel)
    }

    pub fn data(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out(&self.paths.data_dir).join(rel)
    }

    pub fn results(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out(&self.paths.results_dir).join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[lm]\norder = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.lm.order, 3);
        assert_eq!(cfg.scorer, ScorerConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sead = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[lm]\nordr = 3\n").is_err());
    }

    #[test]
    fn bad_symbol_is_named() {
        let err = PipelineConfig::from_toml("[synthgen]\nsymbols = \"01§\"\n").unwrap_err();
        assert!(format!("{err:#}").contains('§'), "{err:#}");
    }
}
