use nalgebra::{Matrix4, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape};

/// Linear shape model over `[right.x, right.y, left.x, left.y]`, used to draw
/// plausible initial shapes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaShapeModel {
    pub mean: [f64; 4],
    /// Orthonormal principal directions, by decreasing variance.
    pub basis: Vec<[f64; 4]>,
    pub variances: Vec<f64>,
}

impl PcaShapeModel {
    /// A prior that always returns `shape`.
    pub fn fixed(shape: &Shape) -> Self {
        PcaShapeModel {
            mean: shape.to_array(),
            basis: Vec::new(),
            variances: Vec::new(),
        }
    }

    pub fn mean_shape(&self) -> Shape {
        Shape::from_array(self.mean)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis.len() != self.variances.len() || self.basis.len() > 4 {
            return Err(Error::Invariant("shape prior basis and variances disagree".into()));
        }
        if self.mean.iter().chain(self.basis.iter().flatten()).chain(&self.variances).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite shape prior".into()));
        }
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::Invariant("shape prior basis is not orthonormal".into()));
                }
            }
        }
        if self.variances.iter().any(|v| *v < 0.0) || self.variances.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invariant(
                "shape prior variances must be non-negative and non-increasing".into(),
            ));
        }
        Ok(())
    }

    /// Draws one shape: random coefficients within two standard deviations of
    /// each component, re-centred on the mean shape's centroid.
    pub fn sample(&self, rng: &mut impl Rng) -> Shape {
        let mut v = self.mean;
        for (b, var) in self.basis.iter().zip(&self.variances) {
            let bound = 2.0 * var.max(0.0).sqrt();
            if bound == 0.0 {
                continue;
            }
            let c = rng.random_range(-bound..bound);
            for k in 0..4 {
                v[k] += c * b[k];
            }
        }
        let shape = Shape::from_array(v);
        shape.translated(self.mean_shape().centroid() - shape.centroid())
    }
}

/// Fits the prior to training shapes after removing each shape's translation
/// relative to the mean shape.
pub fn build_shape_prior(shapes: &[Shape]) -> Result<PcaShapeModel> {
    if shapes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "shape prior needs at least 2 shapes, got {}",
            shapes.len()
        )));
    }
    if shapes.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("training shape"));
    }
    let n = shapes.len() as f64;
    let mut mean = [0.0; 4];
    for s in shapes {
        for (m, v) in mean.iter_mut().zip(s.to_array()) {
            *m += v / n;
        }
    }
    let mean_centroid = Shape::from_array(mean).centroid();
    let aligned: Vec<[f64; 4]> = shapes
        .iter()
        .map(|s| s.translated(mean_centroid - s.centroid()).to_array())
        .collect();
    let mut cov = Matrix4::<f64>::zeros();
    for a in &aligned {
        for i in 0..4 {
            for j in 0..4 {
                cov[(i, j)] += (a[i] - mean[i]) * (a[j] - mean[j]);
            }
        }
    }
    cov /= n - 1.0;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = Vec::with_capacity(4);
    let mut variances = Vec::with_capacity(4);
    for k in order {
        let col = eig.eigenvectors.column(k);
        let mut v = [col[0], col[1], col[2], col[3]];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Fix the sign so the largest component is positive.
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|x| *x *= sign / norm);
        basis.push(v);
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaShapeModel { mean, basis, variances })
}

/// Draws `count` initial shapes, each shifted by one translation shared by
/// both eyes and drawn from the given ranges.
pub fn sample_initial_shapes(
    prior: &PcaShapeModel,
    count: usize,
    translation_x: (f64, f64),
    translation_y: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<Shape> {
    let draw = |rng: &mut dyn rand::RngCore, r: (f64, f64)| {
        if r.0 < r.1 {
            rng.random_range(r.0..=r.1)
        } else {
            r.0
        }
    };
    (0..count)
        .map(|_| {
            let s = prior.sample(rng);
            let t = Point2::new(draw(rng, translation_x), draw(rng, translation_y));
            s.translated(t)
        })
        .collect()
}
