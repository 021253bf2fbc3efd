//! Deterministic synthetic corpora and their manifests.
//!
//! Manifest grammar:
//!
//! ```text
//! eyecorpus 1
//! seed <u64>
//! count <n> test <m>
//! item <index> <train|test> <sha256 of pixels> <image file name>
//! ...
//! digest <sha256 over all preceding lines>
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::annotation::EyeAnnotation;
use crate::data::image::GrayImage;
use crate::data::synth::{SynthParams, SyntheticSample, SyntheticScene};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    pub pixel_digest: String,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub test_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn body(&self) -> String {
        let mut s = format!(
            "eyecorpus {MANIFEST_VERSION}\nseed {}\ncount {} test {}\n",
            self.seed,
            self.entries.len(),
            self.test_count
        );
        for e in &self.entries {
            s.push_str(&format!(
                "item {} {} {} {}\n",
                e.index,
                e.split.as_str(),
                e.pixel_digest,
                e.file_name
            ));
        }
        s
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.body().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.body();
        s.push_str(&format!("digest {}\n", self.digest()));
        s
    }
}

pub struct CorpusItem {
    pub sample: SyntheticSample,
    pub split: Split,
}

impl CorpusItem {
    pub fn image(&self) -> &GrayImage {
        &self.sample.image
    }
    pub fn annotation(&self) -> &EyeAnnotation {
        &self.sample.annotation
    }
}

pub struct Corpus {
    pub items: Vec<CorpusItem>,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

/// SplitMix64 finalizer; mixes a seed and an index into an independent stream seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn pixel_digest(img: &GrayImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width.to_le_bytes());
    h.update(img.height.to_le_bytes());
    h.update(&img.pixels);
    hex::encode(h.finalize())
}

/// Renders a single corpus item; item `i` depends only on `(params.seed, i)`.
pub fn render_item(params: &SynthParams, index: usize) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, index as u64));
    let scene = SyntheticScene::sample(params, &mut rng)?;
    Ok(scene.render(item_file_name(index)))
}

pub fn item_file_name(index: usize) -> String {
    format!("img_{index:05}.png")
}

/// Indices assigned to the test split: the `test_count` items with the
/// smallest seed-derived hash.
pub fn test_indices(seed: u64, count: usize, test_count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (derive_seed(seed ^ 0x5EED_5EED, i as u64), i));
    let mut is_test = vec![false; count];
    for &i in order.iter().take(test_count) {
        is_test[i] = true;
    }
    is_test
}

/// Renders `count` items, `test_count` of which form a disjoint test split.
pub fn build_corpus(params: &SynthParams, count: usize, test_count: usize) -> Result<Corpus> {
    params.validate()?;
    if test_count > count {
        return Err(Error::InvalidInput(format!(
            "test split of {test_count} exceeds corpus size {count}"
        )));
    }
    let is_test = test_indices(params.seed, count, test_count);
    let mut items = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for (index, &test) in is_test.iter().enumerate() {
        let sample = render_item(params, index)?;
        let split = if test { Split::Test } else { Split::Train };
        entries.push(ManifestEntry {
            index,
            split,
            pixel_digest: pixel_digest(&sample.image),
            file_name: item_file_name(index),
        });
        items.push(CorpusItem { sample, split });
    }
    Ok(Corpus {
        items,
        manifest: Manifest {
            seed: params.seed,
            test_count,
            entries,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            image_size: (160, 120),
            interocular_px: (40.0, 60.0),
            seed: 17,
            ..SynthParams::default()
        }
    }

    #[test]
    fn counts_and_split_sizes_are_exact() {
        let c = build_corpus(&small(), 30, 7).unwrap();
        assert_eq!(c.items.len(), 30);
        assert_eq!(c.split(Split::Test).count(), 7);
        assert_eq!(c.split(Split::Train).count(), 23);
    }

    #[test]
    fn manifest_digest_is_reproducible() {
        let a = build_corpus(&small(), 12, 3).unwrap();
        let b = build_corpus(&small(), 12, 3).unwrap();
        assert_eq!(a.manifest.digest(), b.manifest.digest());
        assert_eq!(a.manifest.to_text(), b.manifest.to_text());
        let mut p = small();
        p.seed = 18;
        let c = build_corpus(&p, 12, 3).unwrap();
        assert_ne!(a.manifest.digest(), c.manifest.digest());
    }

    #[test]
    fn large_count_manifest() {
        let is_test = test_indices(5, 2000, 500);
        assert_eq!(is_test.len(), 2000);
        assert_eq!(is_test.iter().filter(|t| **t).count(), 500);
    }
}
