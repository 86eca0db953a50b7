use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::rng::{derive_seed, Rng64};

use super::augment::{augment, AugmentParams};
use super::glyph::GlyphAtlas;

/// One labelled 64x64 glyph image.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphSample {
    pub image: GrayImage,
    /// Index into the atlas alphabet.
    pub label: usize,
    pub seed: u64,
}

/// Renders `n` augmented glyphs with a balanced label assignment: every label
/// gets `floor(n/k)` or `ceil(n/k)` samples, in shuffled order.
pub fn generate_glyph_set(atlas: &GlyphAtlas, aug: &AugmentParams, n: usize, seed: u64) -> Vec<GlyphSample> {
    let k = atlas.len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    Rng64::new(derive_seed(seed, "labels")).shuffle(&mut labels);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let sample_seed = derive_seed(seed, &format!("sample/{i}"));
            let glyph = atlas.render_index(label, sample_seed);
            let image = augment(&glyph, aug, derive_seed(sample_seed, "augment"));
            GlyphSample { image, label, seed: sample_seed }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub pretrain_train: usize,
    pub pretrain_test: usize,
    pub exam_train: usize,
    pub exam_test: usize,
}

/// Pretraining sets drawn with `aug` and exam-domain sets drawn with
/// `domain_shift`, each from its own derived seed.
#[derive(Clone, Debug)]
pub struct GlyphCorpus {
    pub pretrain_train: Vec<GlyphSample>,
    pub pretrain_test: Vec<GlyphSample>,
    pub exam_train: Vec<GlyphSample>,
    pub exam_test: Vec<GlyphSample>,
}

pub fn generate_corpus(atlas: &GlyphAtlas, aug: &AugmentParams, sizes: CorpusSizes, seed: u64, domain_shift: &AugmentParams) -> GlyphCorpus {
    GlyphCorpus {
        pretrain_train: generate_glyph_set(atlas, aug, sizes.pretrain_train, derive_seed(seed, "pretrain/train")),
        pretrain_test: generate_glyph_set(atlas, aug, sizes.pretrain_test, derive_seed(seed, "pretrain/test")),
        exam_train: generate_glyph_set(atlas, domain_shift, sizes.exam_train, derive_seed(seed, "exam/train")),
        exam_test: generate_glyph_set(atlas, domain_shift, sizes.exam_test, derive_seed(seed, "exam/test")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Seeded shuffle, then 60/20/20 slicing; remainder items go to train.
pub fn split_indices(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng64::new(derive_seed(seed, "split")).shuffle(&mut order);
    let n_val = n / 5;
    let n_test = n / 5;
    let mut out = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels() {
        let atlas = GlyphAtlas::from_symbols("0123456789").unwrap();
        let set = generate_glyph_set(&atlas, &AugmentParams::identity(), 1003, 1);
        let mut counts = [0usize; 10];
        for s in &set {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100 || c == 101), "{counts:?}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let atlas = GlyphAtlas::from_symbols("0123").unwrap();
        let sizes = CorpusSizes { pretrain_train: 8, pretrain_test: 4, exam_train: 4, exam_test: 4 };
        let a = generate_corpus(&atlas, &AugmentParams::pretrain(), sizes, 3, &AugmentParams::exam_domain());
        let b = generate_corpus(&atlas, &AugmentParams::pretrain(), sizes, 3, &AugmentParams::exam_domain());
        assert_eq!(a.exam_test, b.exam_test);
        assert_eq!(a.pretrain_train, b.pretrain_train);
        assert_ne!(a.pretrain_test[0].seed, a.exam_test[0].seed);
    }

    #[test]
    fn split_proportions() {
        let count = |s: &[Split], k| s.iter().filter(|&&x| x == k).count();
        let s = split_indices(100, 0);
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (60, 20, 20));
        let s = split_indices(5, 0);
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (3, 1, 1));
        assert_eq!(split_indices(37, 9), split_indices(37, 9));
    }
}
