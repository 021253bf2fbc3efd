use crate::error::{Error, Result};
use crate::hog::DiffFeature;

/// A complete binary regression tree stored in breadth-first arrays.
///
/// `depth` counts node levels including the leaves, so a tree of depth `d`
/// has `2^(d-1) - 1` split nodes and `2^(d-1)` leaves, and routing a sample
/// takes `d - 1` comparisons. Split node `i` sends samples that pass its test
/// to node `2i + 1` and the rest to `2i + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub depth: usize,
    pub splits: Vec<DiffFeature>,
    /// Shape increments `[right.x, right.y, left.x, left.y]`, normalized units.
    pub leaves: Vec<[f32; 4]>,
}

pub fn split_count(depth: usize) -> usize {
    (1usize << (depth - 1)) - 1
}

pub fn leaf_count(depth: usize) -> usize {
    1usize << (depth - 1)
}

impl RegressionTree {
    /// A tree whose every leaf holds `delta`.
    pub fn constant(depth: usize, split: DiffFeature, delta: [f32; 4]) -> Self {
        RegressionTree {
            depth,
            splits: vec![split; split_count(depth)],
            leaves: vec![delta; leaf_count(depth)],
        }
    }

    /// Index of the leaf reached by a packed `[right | left]` descriptor pair.
    #[inline]
    pub fn leaf_index(&self, packed: &[f32], len: usize) -> usize {
        let mut node = 0;
        while node < self.splits.len() {
            node = if self.splits[node].eval_packed(packed, len) {
                2 * node + 1
            } else {
                2 * node + 2
            };
        }
        node - self.splits.len()
    }

    #[inline]
    pub fn predict(&self, packed: &[f32], len: usize) -> &[f32; 4] {
        &self.leaves[self.leaf_index(packed, len)]
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.depth == 0 || self.depth > 24 {
            return Err(Error::Invariant(format!("unsupported tree depth {}", self.depth)));
        }
        if self.splits.len() != split_count(self.depth) || self.leaves.len() != leaf_count(self.depth) {
            return Err(Error::Invariant(format!(
                "tree of depth {} is not complete",
                self.depth
            )));
        }
        for f in &self.splits {
            f.validate(len)?;
        }
        if self.leaves.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite leaf delta".into()));
        }
        Ok(())
    }
}
