//! Convolutional character classifiers, training, fine-tuning, ensembles and
//! label bootstrapping.

mod net;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;
use crate::nn::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Checkpoint, CheckpointError, ParamSet, Tensor};
use crate::rng::{derive_seed, Rng64};
use crate::synth::GlyphSample;

/// Standard deviation of the head weights at initialization.
pub const HEAD_INIT_STD: f64 = 0.01;
/// Samples per gradient shard. Shards are reduced in index order.
const SHARD: usize = 8;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("expected a {expected}x{expected} image, got {width}x{height}")]
    ShapeMismatch { expected: usize, width: usize, height: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("alphabet mismatch: model has {model:?}, data has {data:?}")]
    AlphabetMismatch { model: String, data: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, RecognizerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub channels: usize,
    pub convs: usize,
}

/// 3x3 convolutions grouped in stages, 2x2 max pooling after each stage,
/// global average pooling and a linear head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvNetSpec {
    pub stages: Vec<Stage>,
    pub num_classes: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    /// Identity skips around every conv after the first in a stage.
    #[serde(default)]
    pub residual: bool,
}

fn default_input_size() -> usize {
    crate::synth::GLYPH_SIZE
}

impl ConvNetSpec {
    /// Four stages of `[4, 8, 16, 32]` channels with `convs` layers each.
    pub fn with_depths(convs: [usize; 4], num_classes: usize) -> Self {
        let stages = [4, 8, 16, 32].iter().zip(convs).map(|(&channels, convs)| Stage { channels, convs }).collect();
        Self { stages, num_classes, input_size: default_input_size(), residual: false }
    }

    /// Five members with 4, 6, 8, 10 and 12 conv layers.
    pub fn ensemble_defaults(num_classes: usize) -> Vec<Self> {
        [[1, 1, 1, 1], [1, 1, 2, 2], [2, 2, 2, 2], [2, 2, 3, 3], [3, 3, 3, 3]]
            .into_iter()
            .map(|d| Self::with_depths(d, num_classes))
            .collect()
    }

    pub fn conv_layers(&self) -> usize {
        self.stages.iter().map(|s| s.convs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RecognizerError::InvalidSpec(m));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.convs == 0) {
            return bad("every stage needs at least one channel and one conv".into());
        }
        let div = 1usize << self.stages.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return bad(format!("input size {} not divisible by {div}", self.input_size));
        }
        Ok(())
    }
}

/// Per-label probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probs: Vec<f64>,
}

impl Posterior {
    pub fn from_logits(logits: &[f32]) -> Self {
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Self { probs }
    }

    /// Highest-probability label; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        top_k(self, 1)[0].0
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

/// `k` best labels with natural-log probabilities, descending, ties by id.
pub fn top_k(post: &Posterior, k: usize) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = (0..post.probs.len()).collect();
    ids.sort_by(|&a, &b| post.probs[b].total_cmp(&post.probs[a]).then(a.cmp(&b)));
    ids.truncate(k.min(post.probs.len()));
    ids.into_iter().map(|i| (i, post.probs[i].max(f64::MIN_POSITIVE).ln())).collect()
}

/// Maps intensities to `[0, 1]`.
pub fn image_to_input(image: &GrayImage) -> Vec<f32> {
    image.data().iter().map(|&v| v as f32 / 255.0).collect()
}

/// A trained (or freshly initialized) classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognizer {
    pub spec: ConvNetSpec,
    pub alphabet: Vec<char>,
    pub params: ParamSet,
}

impl Recognizer {
    pub fn init(spec: ConvNetSpec, alphabet: &[char], seed: u64) -> Result<Self> {
        spec.validate()?;
        if alphabet.len() != spec.num_classes {
            return Err(RecognizerError::InvalidSpec(format!(
                "alphabet has {} symbols but spec has {} classes",
                alphabet.len(),
                spec.num_classes
            )));
        }
        let params = net::init_params(&spec, &mut Rng64::new(derive_seed(seed, "recognizer/init")));
        Ok(Self { spec, alphabet: alphabet.to_vec(), params })
    }

    pub fn alphabet_string(&self) -> String {
        self.alphabet.iter().collect()
    }

    pub fn check_image(&self, image: &GrayImage) -> Result<()> {
        let s = self.spec.input_size;
        if image.width() != s || image.height() != s {
            return Err(RecognizerError::ShapeMismatch { expected: s, width: image.width(), height: image.height() });
        }
        Ok(())
    }

    pub fn forward(&self, image: &GrayImage) -> Result<Posterior> {
        self.check_image(image)?;
        Ok(self.forward_input(&image_to_input(image)))
    }

    pub fn forward_input(&self, input: &[f32]) -> Posterior {
        Posterior::from_logits(&net::forward_trace(&self.spec, &self.params, input).logits)
    }

    pub fn logits(&self, input: &[f32]) -> Vec<f32> {
        net::forward_trace(&self.spec, &self.params, input).logits
    }

    /// Gradient of the mean cross-entropy over `batch` and the mean loss.
    pub fn backward(&self, batch: &[(Vec<f32>, usize)]) -> (ParamSet, f64) {
        let refs: Vec<(&[f32], usize)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let (mut grads, losses) = self.batch_gradient(&refs);
        grads.scale(1.0 / batch.len() as f32);
        (grads, losses.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Summed gradient and per-sample losses. Shards run in parallel and are
    /// reduced in a fixed order so the result does not depend on thread count.
    fn batch_gradient(&self, batch: &[(&[f32], usize)]) -> (ParamSet, Vec<f64>) {
        let shards: Vec<(ParamSet, Vec<f64>)> = batch
            .par_chunks(SHARD)
            .map(|shard| {
                let mut grads = self.params.zeros_like();
                let mut losses = Vec::with_capacity(shard.len());
                for &(x, y) in shard {
                    let trace = net::forward_trace(&self.spec, &self.params, x);
                    let post = Posterior::from_logits(&trace.logits);
                    losses.push(-post.probs[y].max(f64::MIN_POSITIVE).ln());
                    let dlogits: Vec<f32> = post
                        .probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| (p - if i == y { 1.0 } else { 0.0 }) as f32)
                        .collect();
                    net::backward_trace(&self.spec, &self.params, &trace, &dlogits, &mut grads);
                }
                (grads, losses)
            })
            .collect();
        let mut iter = shards.into_iter();
        let (mut grads, mut losses) = iter.next().expect("non-empty batch");
        for (g, l) in iter {
            grads.add_assign(&g);
            losses.extend(l);
        }
        (grads, losses)
    }

    pub fn predict_all(&self, images: &[GrayImage]) -> Result<Vec<Posterior>> {
        for im in images {
            self.check_image(im)?;
        }
        Ok(images.par_iter().map(|im| self.forward_input(&image_to_input(im))).collect())
    }

    pub fn accuracy(&self, samples: &[GlyphSample]) -> Result<f64> {
        let images: Vec<GrayImage> = samples.iter().map(|s| s.image.clone()).collect();
        let posts = self.predict_all(&images)?;
        Ok(accuracy_of(&posts, samples))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "recognizer".into(),
            spec: serde_json::to_value(&self.spec).expect("spec serializes"),
            alphabet: self.alphabet_string(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != "recognizer" {
            return Err(CheckpointError::Format(format!("expected a recognizer checkpoint, got {:?}", ckpt.kind)).into());
        }
        let spec: ConvNetSpec =
            serde_json::from_value(ckpt.spec).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let expected = Recognizer::init(spec.clone(), &ckpt.alphabet.chars().collect::<Vec<_>>(), 0)?;
        if !expected.params.same_layout(&ckpt.params) {
            return Err(CheckpointError::Format("tensor layout does not match spec".into()).into());
        }
        Ok(Self { spec, alphabet: expected.alphabet, params: ckpt.params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_checkpoint(&self.to_checkpoint(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

fn accuracy_of(posts: &[Posterior], samples: &[GlyphSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = posts.iter().zip(samples).filter(|(p, s)| p.argmax() == s.label).count();
    hits as f64 / samples.len() as f64
}

/// Labelled images plus the alphabet their labels index into.
#[derive(Clone, Copy, Debug)]
pub struct Dataset<'a> {
    pub alphabet: &'a [char],
    pub samples: &'a [GlyphSample],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 32, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub held_out_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

/// Initializes a model from `seed` and trains it.
pub fn train(
    spec: ConvNetSpec,
    data: Dataset<'_>,
    held_out: &[GlyphSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Recognizer, History)> {
    let mut model = Recognizer::init(spec, data.alphabet, seed)?;
    let history = fit(&mut model, data.samples, held_out, cfg, seed)?;
    Ok((model, history))
}

/// Continues training every layer of `pretrained` on `data`.
pub fn fine_tune(
    pretrained: &Recognizer,
    data: Dataset<'_>,
    held_out: &[GlyphSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Recognizer, History)> {
    if pretrained.alphabet != data.alphabet {
        return Err(RecognizerError::AlphabetMismatch {
            model: pretrained.alphabet_string(),
            data: data.alphabet.iter().collect(),
        });
    }
    let mut model = pretrained.clone();
    let history = fit(&mut model, data.samples, held_out, cfg, derive_seed(seed, "finetune"))?;
    Ok((model, history))
}

fn fit(
    model: &mut Recognizer,
    samples: &[GlyphSample],
    held_out: &[GlyphSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<History> {
    if samples.is_empty() {
        return Err(RecognizerError::EmptyDataset);
    }
    for s in samples.iter().chain(held_out) {
        model.check_image(&s.image)?;
        if s.label >= model.spec.num_classes {
            return Err(RecognizerError::LabelOutOfRange { label: s.label, classes: model.spec.num_classes });
        }
    }
    let inputs: Vec<Vec<f32>> = samples.iter().map(|s| image_to_input(&s.image)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = Rng64::new(derive_seed(seed, "recognizer/shuffle"));
    let mut adam = Adam::new(cfg.adam, &model.params);
    let batch_size = cfg.batch_size.max(1);
    let mut history = History::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sample_loss = vec![0.0; samples.len()];
        for idx in order.chunks(batch_size) {
            let batch: Vec<(&[f32], usize)> = idx.iter().map(|&i| (inputs[i].as_slice(), samples[i].label)).collect();
            let (mut grads, losses) = model.batch_gradient(&batch);
            if losses.iter().any(|l| l.is_nan()) {
                return Err(RecognizerError::Divergence { epoch, step });
            }
            for (&i, l) in idx.iter().zip(losses) {
                sample_loss[i] = l;
            }
            grads.scale(1.0 / idx.len() as f32);
            adam.step(&mut model.params, &grads);
            if !model.params.all_finite() {
                return Err(RecognizerError::Divergence { epoch, step });
            }
            step += 1;
        }
        let train_loss = sample_loss.iter().sum::<f64>() / samples.len() as f64;
        let held_out_accuracy = if held_out.is_empty() { None } else { Some(model.accuracy(held_out)?) };
        log::debug!("epoch {epoch}: loss {train_loss:.4} held-out {held_out_accuracy:?}");
        history.epochs.push(EpochStats { epoch, train_loss, held_out_accuracy });
    }
    Ok(history)
}

/// Models of varying depth whose posteriors are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<Recognizer>,
}

impl Ensemble {
    pub fn new(members: Vec<Recognizer>) -> Result<Self> {
        let first = members.first().ok_or(RecognizerError::EmptyDataset)?;
        for m in &members[1..] {
            if m.alphabet != first.alphabet {
                return Err(RecognizerError::AlphabetMismatch {
                    model: first.alphabet_string(),
                    data: m.alphabet_string(),
                });
            }
            if m.spec.input_size != first.spec.input_size {
                return Err(RecognizerError::InvalidSpec("members disagree on input size".into()));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Recognizer] {
        &self.members
    }

    pub fn alphabet(&self) -> &[char] {
        &self.members[0].alphabet
    }

    pub fn predict_all(&self, images: &[GrayImage]) -> Result<Vec<Posterior>> {
        let per_member = self.members.iter().map(|m| m.predict_all(images)).collect::<Result<Vec<_>>>()?;
        Ok((0..images.len()).map(|i| average(per_member.iter().map(|p| &p[i]))).collect())
    }

    pub fn accuracy(&self, samples: &[GlyphSample]) -> Result<f64> {
        let images: Vec<GrayImage> = samples.iter().map(|s| s.image.clone()).collect();
        Ok(accuracy_of(&self.predict_all(&images)?, samples))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = ParamSet::default();
        for (i, m) in self.members.iter().enumerate() {
            for t in &m.params.tensors {
                params.push(Tensor { name: format!("member{i}.{}", t.name), ..t.clone() });
            }
        }
        let specs: Vec<&ConvNetSpec> = self.members.iter().map(|m| &m.spec).collect();
        Checkpoint {
            kind: "ensemble".into(),
            spec: serde_json::json!({ "members": specs }),
            alphabet: self.members[0].alphabet_string(),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let fmt = |m: String| RecognizerError::Checkpoint(CheckpointError::Format(m));
        if ckpt.kind == "recognizer" {
            return Self::new(vec![Recognizer::from_checkpoint(ckpt)?]);
        }
        if ckpt.kind != "ensemble" {
            return Err(fmt(format!("expected an ensemble checkpoint, got {:?}", ckpt.kind)));
        }
        let specs: Vec<ConvNetSpec> = serde_json::from_value(ckpt.spec["members"].clone()).map_err(|e| fmt(e.to_string()))?;
        let mut tensors = ckpt.params.tensors.into_iter();
        let mut members = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let prefix = format!("member{i}.");
            let n = 2 * (spec.conv_layers() + 1);
            let mut params = ParamSet::default();
            for _ in 0..n {
                let t = tensors.next().ok_or_else(|| fmt("missing member tensors".into()))?;
                let name = t.name.strip_prefix(&prefix).ok_or_else(|| fmt(format!("unexpected tensor {}", t.name)))?;
                params.push(Tensor { name: name.to_string(), ..t.clone() });
            }
            members.push(Recognizer::from_checkpoint(Checkpoint {
                kind: "recognizer".into(),
                spec: serde_json::to_value(&spec).expect("spec serializes"),
                alphabet: ckpt.alphabet.clone(),
                params,
            })?);
        }
        Self::new(members)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_checkpoint(&self.to_checkpoint(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

/// Arithmetic mean of posteriors.
pub fn average<'a>(posts: impl IntoIterator<Item = &'a Posterior>) -> Posterior {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0;
    for p in posts {
        if sum.is_empty() {
            sum = vec![0.0; p.probs.len()];
        }
        for (s, v) in sum.iter_mut().zip(&p.probs) {
            *s += v;
        }
        n += 1;
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    Posterior { probs: sum }
}

pub fn ensemble_predict(ens: &Ensemble, image: &GrayImage) -> Result<Posterior> {
    let posts = ens.members.iter().map(|m| m.forward(image)).collect::<Result<Vec<_>>>()?;
    Ok(average(&posts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapLabel {
    pub index: usize,
    pub label: usize,
    pub symbol: char,
    pub confidence: f64,
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub model: Recognizer,
    /// One prediction per unlabeled image, in input order.
    pub labels: Vec<BootstrapLabel>,
}

impl BootstrapOutcome {
    /// Predictions ordered for human review: least confident first.
    pub fn review_manifest(&self) -> Vec<BootstrapLabel> {
        let mut out = self.labels.clone();
        out.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.index.cmp(&b.index)));
        out
    }
}

/// Trains on a small labelled set and pseudo-labels a larger unlabelled one.
pub fn bootstrap_labels(
    small: Dataset<'_>,
    large: &[GrayImage],
    spec: ConvNetSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BootstrapOutcome> {
    let (model, _) = train(spec, small, &[], cfg, seed)?;
    let posts = model.predict_all(large)?;
    let labels = posts
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let label = p.argmax();
            BootstrapLabel { index, label, symbol: model.alphabet[label], confidence: p.probs[label] }
        })
        .collect();
    Ok(BootstrapOutcome { model, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::cross_entropy;

    fn tiny_spec() -> ConvNetSpec {
        ConvNetSpec {
            stages: vec![Stage { channels: 2, convs: 1 }, Stage { channels: 3, convs: 2 }],
            num_classes: 2,
            input_size: 8,
            residual: false,
        }
    }

    fn random_batch(n: usize, size: usize, classes: usize, seed: u64) -> Vec<(Vec<f32>, usize)> {
        let mut rng = Rng64::new(seed);
        (0..n).map(|i| ((0..size * size).map(|_| rng.next_f64() as f32).collect(), i % classes)).collect()
    }

    fn mean_loss(model: &Recognizer, batch: &[(Vec<f32>, usize)]) -> f64 {
        batch.iter().map(|(x, y)| cross_entropy(&model.logits(x), *y)).sum::<f64>() / batch.len() as f64
    }

    fn gradient_check(spec: ConvNetSpec) {
        let mut model = Recognizer::init(spec, &['a', 'b'], 3).unwrap();
        // a larger head makes every layer's gradient visible above f32 noise
        for v in &mut model.params.tensors.iter_mut().rev().nth(1).unwrap().data {
            *v *= 100.0;
        }
        let batch = random_batch(3, 8, 2, 11);
        let (grads, _) = model.backward(&batch);
        let eps = 1e-3f32;
        for (ti, t) in model.params.tensors.iter().enumerate() {
            let (mut num_sq, mut diff_sq, mut ana_sq) = (0.0f64, 0.0f64, 0.0f64);
            for j in 0..t.len() {
                let mut plus = model.clone();
                plus.params.tensors[ti].data[j] += eps;
                let mut minus = model.clone();
                minus.params.tensors[ti].data[j] -= eps;
                let num = (mean_loss(&plus, &batch) - mean_loss(&minus, &batch)) / (2.0 * eps as f64);
                let ana = grads.tensors[ti].data[j] as f64;
                num_sq += num * num;
                ana_sq += ana * ana;
                diff_sq += (num - ana).powi(2);
            }
            let rel = diff_sq.sqrt() / num_sq.sqrt().max(ana_sq.sqrt()).max(1e-12);
            assert!(rel < 1e-2, "{}: relative error {rel}", t.name);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(tiny_spec());
    }

    #[test]
    fn residual_gradients_match_finite_differences() {
        gradient_check(ConvNetSpec { residual: true, ..tiny_spec() });
    }

    #[test]
    fn duplicated_sample_gives_same_gradient() {
        let model = Recognizer::init(tiny_spec(), &['a', 'b'], 5).unwrap();
        let one = random_batch(1, 8, 2, 2);
        let two = vec![one[0].clone(), one[0].clone()];
        let (g1, _) = model.backward(&one);
        let (g2, _) = model.backward(&two);
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_head_bias_gradient_is_closed_form() {
        let mut model = Recognizer::init(tiny_spec(), &['a', 'b'], 5).unwrap();
        let n = model.params.tensors.len();
        model.params.tensors[n - 2].data.fill(0.0);
        let batch = vec![random_batch(1, 8, 2, 9)[0].0.clone()].into_iter().map(|x| (x, 1)).collect::<Vec<_>>();
        let (g, _) = model.backward(&batch);
        assert_eq!(g.tensors[n - 1].data, vec![0.5, -0.5]);
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        let k = 40;
        let alphabet: Vec<char> = crate::synth::DEFAULT_SYMBOLS.chars().collect();
        for (i, spec) in ConvNetSpec::ensemble_defaults(k).into_iter().enumerate() {
            let model = Recognizer::init(spec, &alphabet, i as u64).unwrap();
            let img = crate::synth::GlyphAtlas::default().render_index(i, 7);
            let post = model.forward(&img).unwrap();
            assert!((post.probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            for &p in &post.probs {
                assert!(p >= 1.0 / (4.0 * k as f64) && p <= 4.0 / k as f64, "{p}");
            }
        }
    }

    #[test]
    fn wrong_size_is_rejected() {
        let model = Recognizer::init(tiny_spec(), &['a', 'b'], 0).unwrap();
        assert!(matches!(model.forward(&GrayImage::blank(9, 8)), Err(RecognizerError::ShapeMismatch { .. })));
    }

    #[test]
    fn top_k_order_and_ties() {
        let p = Posterior { probs: vec![0.2, 0.5, 0.3] };
        assert_eq!(top_k(&p, 2).iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2]);
        let u = Posterior { probs: vec![0.25; 4] };
        assert_eq!(top_k(&u, 3).iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        let all: Vec<usize> = top_k(&p, 3).iter().map(|x| x.0).collect();
        assert_eq!(all, vec![1, 2, 0]);
        assert!((top_k(&p, 1)[0].1 - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn averaging_is_arithmetic_mean() {
        let a = Posterior { probs: vec![0.8, 0.2] };
        let b = Posterior { probs: vec![0.4, 0.6] };
        let m = average([&a, &b]);
        assert!((m.probs[0] - 0.6).abs() < 1e-12 && (m.probs[1] - 0.4).abs() < 1e-12);
        assert_eq!(average([&a]), a);
    }

    fn toy_glyphs(n: usize, seed: u64) -> Vec<GlyphSample> {
        // class 0: dark left half, class 1: dark right half
        let mut rng = Rng64::new(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut img = GrayImage::filled(8, 8, 255);
                for y in 0..8 {
                    for x in 0..8 {
                        let dark = (x < 4) == (label == 0);
                        let v = if dark { rng.uniform(0.0, 60.0) } else { rng.uniform(190.0, 255.0) };
                        img.set(x, y, v as u8);
                    }
                }
                GlyphSample { image: img, label, seed: i as u64 }
            })
            .collect()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = toy_glyphs(64, 1);
        let cfg = TrainConfig { epochs: 5, batch_size: 8, adam: AdamConfig { lr: 1e-2, ..Default::default() } };
        let (model, hist) = train(tiny_spec(), Dataset { alphabet: &['L', 'R'], samples: &data }, &[], &cfg, 4).unwrap();
        assert_eq!(hist.epochs.len(), 5);
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn zero_lr_keeps_params_and_loss() {
        let data = toy_glyphs(20, 2);
        let cfg = TrainConfig { epochs: 3, batch_size: 6, adam: AdamConfig { lr: 0.0, ..Default::default() } };
        let init = Recognizer::init(tiny_spec(), &['L', 'R'], 4).unwrap();
        let (model, hist) = train(tiny_spec(), Dataset { alphabet: &['L', 'R'], samples: &data }, &[], &cfg, 4).unwrap();
        assert_eq!(model, init);
        let l0 = hist.epochs[0].train_loss;
        assert!(hist.epochs.iter().all(|e| e.train_loss == l0));
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_glyphs(24, 3);
        let cfg = TrainConfig { epochs: 2, batch_size: 5, ..Default::default() };
        let ds = Dataset { alphabet: &['L', 'R'], samples: &data };
        let (a, _) = train(tiny_spec(), ds, &data, &cfg, 9).unwrap();
        let (b, _) = train(tiny_spec(), ds, &data, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infinite_lr_reports_divergence() {
        let data = toy_glyphs(16, 5);
        let cfg = TrainConfig { epochs: 2, batch_size: 4, adam: AdamConfig { lr: f32::INFINITY, ..Default::default() } };
        let r = train(tiny_spec(), Dataset { alphabet: &['L', 'R'], samples: &data }, &[], &cfg, 1);
        assert!(matches!(r, Err(RecognizerError::Divergence { .. })));
    }

    #[test]
    fn fine_tune_checks_alphabet_and_zero_steps() {
        let data = toy_glyphs(8, 6);
        let base = Recognizer::init(tiny_spec(), &['L', 'R'], 1).unwrap();
        let zero = TrainConfig { epochs: 0, ..Default::default() };
        let (same, _) = fine_tune(&base, Dataset { alphabet: &['L', 'R'], samples: &data }, &[], &zero, 1).unwrap();
        assert_eq!(same, base);
        let err = fine_tune(&base, Dataset { alphabet: &['X', 'R'], samples: &data }, &[], &zero, 1);
        assert!(matches!(err, Err(RecognizerError::AlphabetMismatch { .. })));
    }

    #[test]
    fn bootstrap_manifest_is_sorted_and_self_consistent() {
        let data = toy_glyphs(32, 7);
        let cfg = TrainConfig { epochs: 5, batch_size: 8, adam: AdamConfig { lr: 1e-2, ..Default::default() } };
        let images: Vec<GrayImage> = data.iter().map(|s| s.image.clone()).collect();
        let out = bootstrap_labels(Dataset { alphabet: &['L', 'R'], samples: &data }, &images, tiny_spec(), &cfg, 2).unwrap();
        let train_acc = out.model.accuracy(&data).unwrap();
        let agree = out.labels.iter().zip(&data).filter(|(l, s)| l.label == s.label).count() as f64 / data.len() as f64;
        assert_eq!(agree, train_acc);
        let manifest = out.review_manifest();
        assert!(manifest.windows(2).all(|w| w[0].confidence <= w[1].confidence));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = Recognizer::init(tiny_spec(), &['L', 'R'], 1).unwrap();
        let b = Recognizer::init(ConvNetSpec { residual: true, ..tiny_spec() }, &['L', 'R'], 2).unwrap();
        let back = Recognizer::from_checkpoint(Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, a);
        let ens = Ensemble::new(vec![a, b]).unwrap();
        let back = Ensemble::from_checkpoint(Checkpoint::from_bytes(&ens.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn single_member_ensemble_is_identity() {
        let a = Recognizer::init(tiny_spec(), &['L', 'R'], 1).unwrap();
        let img = toy_glyphs(1, 1)[0].image.clone();
        let ens = Ensemble::new(vec![a.clone()]).unwrap();
        assert_eq!(ensemble_predict(&ens, &img).unwrap(), a.forward(&img).unwrap());
    }
}
