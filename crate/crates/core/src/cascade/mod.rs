//! Cascaded regression of the two eye centers in the face-normalized frame.
//!
//! Each level of the cascade is a gradient-boosted forest of shallow trees.
//! A level reads one HoG descriptor per eye, taken at the current estimate
//! mapped back into the image, and adds the summed leaf increments of all its
//! trees to the shape.

mod io;
mod prior;
mod train;
mod tree;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{EyeAnchor, NormalizationTransform, Shape};
use crate::hog::{HogConfig, ScaledView};

pub use self::io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use self::prior::{build_shape_prior, sample_initial_shapes, PcaShapeModel};
pub use self::train::{mean_normalized_error, train_cascade, TrainConfig, TrainReport, TrainingItem};
pub use self::tree::{leaf_count, split_count, RegressionTree};

/// One cascade level: trees whose outputs are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestLevel {
    pub trees: Vec<RegressionTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub format_version: u32,
    pub hog: HogConfig,
    /// Learning rate applied to leaf values during training.
    pub shrinkage: f64,
    pub prior: PcaShapeModel,
    pub levels: Vec<ForestLevel>,
}

/// Work counters and intermediate shapes of one prediction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictStats {
    /// Split tests evaluated (one subtraction and one comparison each).
    pub comparisons: usize,
    /// Scalar additions of leaf increments.
    pub additions: usize,
    /// Shape after each level, starting with the reference shape.
    pub trace: Vec<Shape>,
    /// Summed increment of each level.
    pub level_deltas: Vec<[f64; 4]>,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        self.hog.validate().map_err(|e| Error::Invariant(e.to_string()))?;
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Invariant("shrinkage must lie in (0, 1]".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Invariant("model has no levels".into()));
        }
        self.prior.validate()?;
        let len = self.hog.descriptor_len();
        let depth = self.levels[0].trees.first().map(|t| t.depth);
        for level in &self.levels {
            for tree in &level.trees {
                if Some(tree.depth) != depth {
                    return Err(Error::Invariant("trees of different depths".into()));
                }
                tree.validate(len).map_err(|e| match e {
                    Error::Invariant(m) => Error::ModelMismatch(m),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn tree_count(&self) -> usize {
        self.levels.iter().map(|l| l.trees.len()).sum()
    }

    /// Both descriptors at `shape`, packed as `[right | left]`.
    pub fn features(&self, view: &ScaledView<'_>, transform: &NormalizationTransform, shape: &Shape) -> Vec<f32> {
        let len = self.hog.descriptor_len();
        let mut packed = vec![0.0; 2 * len];
        let mut scratch = Vec::new();
        let (r, l) = transform.shape_to_image(shape);
        view.descriptor_into(r, &mut scratch, &mut packed[..len]);
        view.descriptor_into(l, &mut scratch, &mut packed[len..]);
        packed
    }

    /// Runs the cascade from the reference shape and returns the normalized shape.
    pub fn predict(
        &self,
        image: &GrayImage,
        anchor: &EyeAnchor,
        transform: &NormalizationTransform,
    ) -> Result<Shape> {
        self.predict_with_stats(image, anchor, transform).map(|(s, _)| s)
    }

    pub fn predict_with_stats(
        &self,
        image: &GrayImage,
        anchor: &EyeAnchor,
        transform: &NormalizationTransform,
    ) -> Result<(Shape, PredictStats)> {
        self.validate()?;
        let view = ScaledView::new(image, anchor, &self.hog)?;
        let len = self.hog.descriptor_len();
        let mut shape = Shape::REFERENCE;
        let mut stats = PredictStats {
            trace: vec![shape],
            ..PredictStats::default()
        };
        for level in &self.levels {
            let packed = self.features(&view, transform, &shape);
            let mut delta = [0.0f64; 4];
            for tree in &level.trees {
                let leaf = tree.predict(&packed, len);
                for (d, v) in delta.iter_mut().zip(leaf) {
                    *d += *v as f64;
                }
                stats.comparisons += tree.depth - 1;
                stats.additions += 4;
            }
            let mut v = shape.to_array();
            for (s, d) in v.iter_mut().zip(&delta) {
                *s += d;
            }
            shape = Shape::from_array(v);
            stats.trace.push(shape);
            stats.level_deltas.push(delta);
        }
        if !shape.is_finite() {
            return Err(Error::NonFinite("predicted shape"));
        }
        Ok((shape, stats))
    }

    /// Predicted eye centers in image pixels, `(right, left)`.
    pub fn predict_image(
        &self,
        image: &GrayImage,
        anchor: &EyeAnchor,
        transform: &NormalizationTransform,
    ) -> Result<(crate::geometry::Point2, crate::geometry::Point2)> {
        let shape = self.predict(image, anchor, transform)?;
        Ok(transform.shape_to_image(&shape))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::synth::{SynthParams, SyntheticScene};
    use crate::geometry::build_transform;
    use crate::hog::{DiffFeature, Eye};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feature() -> DiffFeature {
        DiffFeature { eye: Eye::Right, dim_a: 0, dim_b: 1, threshold: 0.0 }
    }

    pub(crate) fn constant_model(levels: usize, trees: usize, depth: usize, delta: [f32; 4]) -> CascadeModel {
        CascadeModel {
            format_version: MODEL_FORMAT_VERSION,
            hog: HogConfig::default(),
            shrinkage: 0.1,
            prior: PcaShapeModel::fixed(&Shape::REFERENCE),
            levels: (0..levels)
                .map(|_| ForestLevel {
                    trees: (0..trees).map(|_| RegressionTree::constant(depth, feature(), delta)).collect(),
                })
                .collect(),
        }
    }

    fn sample() -> (GrayImage, EyeAnchor, NormalizationTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = SyntheticScene::sample(&SynthParams::default(), &mut rng).unwrap();
        let (anchor, t) = build_transform(&scene.corners()).unwrap();
        (scene.rasterize(), anchor, t)
    }

    #[test]
    fn zero_model_returns_reference_shape() {
        let (img, a, t) = sample();
        let m = constant_model(3, 5, 4, [0.0; 4]);
        assert_eq!(m.predict(&img, &a, &t).unwrap(), Shape::REFERENCE);
    }

    #[test]
    fn single_constant_tree_adds_its_delta() {
        let (img, a, t) = sample();
        let d = [0.01f32, -0.02, 0.03, 0.005];
        let m = constant_model(1, 1, 4, d);
        let s = m.predict(&img, &a, &t).unwrap().to_array();
        let want = Shape::REFERENCE.to_array();
        for k in 0..4 {
            assert!((s[k] - (want[k] + d[k] as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn default_sized_model_counts() {
        let (img, a, t) = sample();
        let m = constant_model(10, 200, 4, [0.0; 4]);
        let (_, stats) = m.predict_with_stats(&img, &a, &t).unwrap();
        assert_eq!(stats.comparisons, 6000);
        assert_eq!(stats.additions, 8000);
        assert_eq!(stats.trace.len(), 11);
    }

    #[test]
    fn mismatched_feature_dimension_is_rejected() {
        let (img, a, t) = sample();
        let mut m = constant_model(1, 1, 2, [0.0; 4]);
        m.levels[0].trees[0].splits[0].dim_b = 200;
        assert!(matches!(m.predict(&img, &a, &t), Err(Error::ModelMismatch(_))));
    }
}
