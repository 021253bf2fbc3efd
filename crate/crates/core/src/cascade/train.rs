use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::io::canonical;
use super::prior::{build_shape_prior, sample_initial_shapes, PcaShapeModel};
use super::tree::{leaf_count, split_count, RegressionTree};
use super::{CascadeModel, ForestLevel, MODEL_FORMAT_VERSION};
use crate::data::{EyeAnnotation, GrayImage};
use crate::error::{Error, Result};
use crate::geometry::{build_transform, NormalizationTransform, Point2, Shape};
use crate::hog::{sample_pool, DiffFeature, HogConfig, ScaledView};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub levels: usize,
    pub trees_per_level: usize,
    /// Node levels per tree, leaves included.
    pub tree_depth: usize,
    pub shrinkage: f64,
    /// Candidate split features drawn per node.
    pub pool_size: usize,
    /// Initial shapes drawn per training image.
    pub oversample: usize,
    pub translation_x: (f64, f64),
    pub translation_y: (f64, f64),
    pub threshold_range: (f32, f32),
    /// Draw initial shapes from the PCA prior; otherwise start every sample
    /// from the reference shape (plus the random translation).
    pub init_from_prior: bool,
    pub hog: HogConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            levels: 10,
            trees_per_level: 200,
            tree_depth: 4,
            shrinkage: 0.1,
            pool_size: 20,
            oversample: 50,
            translation_x: (-0.1, 0.1),
            translation_y: (-0.03, 0.03),
            threshold_range: (-0.3, 0.3),
            init_from_prior: true,
            hog: HogConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("training config: {m}")));
        if self.levels == 0 || self.trees_per_level == 0 || self.pool_size == 0 || self.oversample == 0 {
            return bad("counts must be at least 1");
        }
        if self.tree_depth == 0 || self.tree_depth > 16 {
            return bad("tree depth must lie in [1, 16]");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ordered(self.translation_x) || !ordered(self.translation_y) {
            return bad("translation ranges must be well-ordered");
        }
        let (a, b) = self.threshold_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return bad("threshold range must be well-ordered");
        }
        self.hog.validate()
    }
}

/// One image with its landmarks and ground-truth centers.
#[derive(Debug, Clone, Copy)]
pub struct TrainingItem<'a> {
    pub image: &'a GrayImage,
    pub annotation: &'a EyeAnnotation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub samples: usize,
    /// Mean normalized error of the initial shapes.
    pub initial_error: f64,
    /// Mean normalized error after each level.
    pub level_errors: Vec<f64>,
    /// Sum of squared residuals after each tree, per level.
    pub tree_sse: Vec<Vec<f64>>,
}

/// Mean over samples of `max(e_right, e_left) / d`, with `d` the distance
/// between the target centers.
pub fn mean_normalized_error(current: &[Shape], targets: &[Shape]) -> f64 {
    let total: f64 = current
        .iter()
        .zip(targets)
        .map(|(c, t)| {
            let d = t.right.distance(t.left);
            c.right.distance(t.right).max(c.left.distance(t.left)) / d
        })
        .sum();
    total / current.len().max(1) as f64
}

fn canonical_prior(p: PcaShapeModel) -> PcaShapeModel {
    PcaShapeModel {
        mean: p.mean.map(canonical),
        basis: p.basis.into_iter().map(|b| b.map(canonical)).collect(),
        variances: p.variances.into_iter().map(canonical).collect(),
    }
}

struct Prepared {
    transforms: Vec<NormalizationTransform>,
    views_anchor: Vec<crate::geometry::EyeAnchor>,
    targets: Vec<Shape>,
}

fn prepare(items: &[TrainingItem<'_>]) -> Result<Prepared> {
    let mut out = Prepared {
        transforms: Vec::with_capacity(items.len()),
        views_anchor: Vec::with_capacity(items.len()),
        targets: Vec::with_capacity(items.len()),
    };
    for (index, item) in items.iter().enumerate() {
        let bad = |reason: String| Error::BadItem { index, reason };
        if item.image.width == 0 || item.image.height == 0 {
            return Err(bad("empty image".into()));
        }
        let (anchor, t) = build_transform(&item.annotation.corners)
            .map_err(|e| bad(format!("{}: {e}", item.annotation.image_id)))?;
        let (r, l) = item.annotation.centers;
        if !r.is_finite() || !l.is_finite() || r == l {
            return Err(bad(format!("{}: invalid eye centers", item.annotation.image_id)));
        }
        out.transforms.push(t);
        out.views_anchor.push(anchor);
        out.targets.push(t.shape_from_image(r, l));
    }
    Ok(out)
}

/// Fits a cascade by gradient boosting on `items`.
pub fn train_cascade(items: &[TrainingItem<'_>], cfg: &TrainConfig) -> Result<(CascadeModel, TrainReport)> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("empty training corpus".into()));
    }
    let prep = prepare(items)?;
    let prior = canonical_prior(if prep.targets.len() >= 2 {
        build_shape_prior(&prep.targets)?
    } else {
        PcaShapeModel::fixed(&prep.targets[0])
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = cfg.oversample;
    let n = items.len() * per;
    let mut current: Vec<Shape> = Vec::with_capacity(n);
    let mut targets: Vec<Shape> = Vec::with_capacity(n);
    let start = if cfg.init_from_prior {
        prior.clone()
    } else {
        PcaShapeModel::fixed(&Shape::REFERENCE)
    };
    for target in &prep.targets {
        current.extend(sample_initial_shapes(&start, per, cfg.translation_x, cfg.translation_y, &mut rng));
        targets.extend(std::iter::repeat_n(*target, per));
    }

    let len = cfg.hog.descriptor_len();
    let stride = 2 * len;
    let mut features = vec![0.0f32; n * stride];
    let mut residuals = vec![[0.0f32; 4]; n];
    let mut report = TrainReport {
        samples: n,
        initial_error: mean_normalized_error(&current, &targets),
        ..TrainReport::default()
    };
    log::info!(
        "training on {} images x {} initializations, initial error {:.4}",
        items.len(),
        per,
        report.initial_error
    );
    let mut levels = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        compute_features(items, &prep, &current, cfg, &mut features)?;
        for (r, (c, t)) in residuals.iter_mut().zip(current.iter().zip(&targets)) {
            let (c, t) = (c.to_array(), t.to_array());
            *r = [0, 1, 2, 3].map(|k| (t[k] - c[k]) as f32);
        }
        let mut trees = Vec::with_capacity(cfg.trees_per_level);
        let mut sse = Vec::with_capacity(cfg.trees_per_level);
        let mut grower = TreeGrower::new(n, cfg, len);
        for _ in 0..cfg.trees_per_level {
            let (tree, leaf_of) = grower.grow(&features, &residuals, &mut rng);
            let mut total = 0.0f64;
            for (s, &leaf) in leaf_of.iter().enumerate() {
                let delta = tree.leaves[leaf as usize];
                let mut c = current[s].to_array();
                for k in 0..4 {
                    residuals[s][k] -= delta[k];
                    c[k] += delta[k] as f64;
                    total += (residuals[s][k] as f64).powi(2);
                }
                current[s] = Shape::from_array(c);
            }
            sse.push(total);
            trees.push(tree);
        }
        let err = mean_normalized_error(&current, &targets);
        log::info!("level {} done, training error {:.4}", level + 1, err);
        report.level_errors.push(err);
        report.tree_sse.push(sse);
        levels.push(ForestLevel { trees });
    }
    let model = CascadeModel {
        format_version: MODEL_FORMAT_VERSION,
        hog: cfg.hog,
        shrinkage: canonical(cfg.shrinkage),
        prior,
        levels,
    };
    model.validate()?;
    Ok((model, report))
}

fn compute_features(
    items: &[TrainingItem<'_>],
    prep: &Prepared,
    current: &[Shape],
    cfg: &TrainConfig,
    features: &mut [f32],
) -> Result<()> {
    let per = cfg.oversample;
    let len = cfg.hog.descriptor_len();
    let stride = 2 * len;
    features
        .par_chunks_mut(per * stride)
        .enumerate()
        .try_for_each(|(i, chunk)| -> Result<()> {
            let view = ScaledView::new(items[i].image, &prep.views_anchor[i], &cfg.hog)
                .map_err(|e| Error::BadItem { index: i, reason: e.to_string() })?;
            let t = &prep.transforms[i];
            let mut scratch = Vec::new();
            for (o, row) in chunk.chunks_exact_mut(stride).enumerate() {
                let (r, l): (Point2, Point2) = t.shape_to_image(&current[i * per + o]);
                let (right, left) = row.split_at_mut(len);
                view.descriptor_into(r, &mut scratch, right);
                view.descriptor_into(l, &mut scratch, left);
            }
            Ok(())
        })
}

struct TreeGrower {
    order: Vec<u32>,
    depth: usize,
    pool_size: usize,
    threshold_range: (f32, f32),
    shrinkage: f32,
    len: usize,
}

impl TreeGrower {
    fn new(n: usize, cfg: &TrainConfig, len: usize) -> Self {
        TreeGrower {
            order: (0..n as u32).collect(),
            depth: cfg.tree_depth,
            pool_size: cfg.pool_size,
            threshold_range: cfg.threshold_range,
            shrinkage: cfg.shrinkage as f32,
            len,
        }
    }

    /// Grows one tree on the current residuals; returns it with the leaf
    /// index reached by every sample.
    fn grow(&mut self, features: &[f32], residuals: &[[f32; 4]], rng: &mut impl Rng) -> (RegressionTree, Vec<u32>) {
        let n = residuals.len();
        let stride = 2 * self.len;
        for (i, o) in self.order.iter_mut().enumerate() {
            *o = i as u32;
        }
        let n_splits = split_count(self.depth);
        let mut ranges = vec![(0usize, 0usize); n_splits + leaf_count(self.depth)];
        ranges[0] = (0, n);
        let mut splits = Vec::with_capacity(n_splits);
        for node in 0..n_splits {
            let (lo, hi) = ranges[node];
            let pool = sample_pool(rng, self.pool_size, self.threshold_range, self.len);
            let best = best_split(&pool, &self.order[lo..hi], features, residuals, stride, self.len);
            let f = pool[best];
            let mid = partition(&mut self.order[lo..hi], |s| {
                f.eval_packed(&features[s as usize * stride..][..stride], self.len)
            }) + lo;
            ranges[2 * node + 1] = (lo, mid);
            ranges[2 * node + 2] = (mid, hi);
            splits.push(f);
        }
        let mut leaf_of = vec![0u32; n];
        let mut leaves = Vec::with_capacity(leaf_count(self.depth));
        for (j, &(lo, hi)) in ranges[n_splits..].iter().enumerate() {
            let mut sum = [0.0f64; 4];
            for &s in &self.order[lo..hi] {
                leaf_of[s as usize] = j as u32;
                for k in 0..4 {
                    sum[k] += residuals[s as usize][k] as f64;
                }
            }
            let count = (hi - lo) as f64;
            leaves.push(if hi > lo {
                sum.map(|v| self.shrinkage * (v / count) as f32)
            } else {
                [0.0; 4]
            });
        }
        (
            RegressionTree {
                depth: self.depth,
                splits,
                leaves,
            },
            leaf_of,
        )
    }
}

/// In-place partition putting samples that pass `pred` first; returns their count.
fn partition(xs: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut k = 0;
    for i in 0..xs.len() {
        if pred(xs[i]) {
            xs.swap(i, k);
            k += 1;
        }
    }
    k
}

/// Index of the candidate with the largest reduction of squared residual
/// error, i.e. maximal `|sum_true|^2 / n_true + |sum_false|^2 / n_false`.
/// Ties go to the earlier candidate.
fn best_split(
    pool: &[DiffFeature],
    samples: &[u32],
    features: &[f32],
    residuals: &[[f32; 4]],
    stride: usize,
    len: usize,
) -> usize {
    let k = pool.len();
    let offsets: Vec<(usize, usize, f32)> = pool
        .iter()
        .map(|f| {
            let base = f.eye.index() * len;
            (base + f.dim_a as usize, base + f.dim_b as usize, f.threshold)
        })
        .collect();
    let mut sums = vec![[0.0f64; 4]; k];
    let mut counts = vec![0.0f64; k];
    let mut total = [0.0f64; 4];
    for &s in samples {
        let row = &features[s as usize * stride..][..stride];
        let r = residuals[s as usize].map(|v| v as f64);
        for j in 0..4 {
            total[j] += r[j];
        }
        for ((a, b, thr), (sum, count)) in offsets.iter().zip(sums.iter_mut().zip(counts.iter_mut())) {
            let m = f64::from(u8::from(row[*a] - row[*b] > *thr));
            *count += m;
            for j in 0..4 {
                sum[j] += m * r[j];
            }
        }
    }
    let n = samples.len() as f64;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..k {
        let nt = counts[c];
        let nf = n - nt;
        let mut score = 0.0;
        if nt > 0.0 {
            score += sums[c].iter().map(|v| v * v).sum::<f64>() / nt;
        }
        if nf > 0.0 {
            score += (0..4).map(|j| (total[j] - sums[c][j]).powi(2)).sum::<f64>() / nf;
        }
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}
