//! Versioned text format for cascade models.
//!
//! ```text
//! eyecenter-model 1
//! hog <e_hog> <patch_fraction> <cells_per_side> <orientation_bins> <soft_binning 0|1>
//! shrinkage <nu>
//! prior <components>
//! mean <rx> <ry> <lx> <ly>
//! basis <variance> <b0> <b1> <b2> <b3>        (one line per component)
//! levels <count> depth <tree depth>
//! level <trees>
//! split <r|l> <dim_a> <dim_b> <threshold>     (2^(depth-1) - 1 lines per tree)
//! leaf <rx> <ry> <lx> <ly>                    (2^(depth-1) lines per tree)
//! ...
//! end
//! ```
//!
//! Scalars are written with 9 significant digits. Single-precision values
//! round-trip exactly at that precision, and double-precision fields are
//! rounded to it when a model is built, so saving and loading is lossless.

use std::io::Write;
use std::path::Path;

use super::prior::PcaShapeModel;
use super::tree::{leaf_count, split_count, RegressionTree};
use super::{CascadeModel, ForestLevel};
use crate::error::{Error, Result};
use crate::hog::{DiffFeature, Eye, HogConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "eyecenter-model";

/// Rounds to the 9 significant digits used by the model format.
pub(crate) fn canonical(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn write_model(model: &CascadeModel, sink: &mut impl Write) -> Result<()> {
    let h = &model.hog;
    writeln!(sink, "{MAGIC} {}", model.format_version)?;
    writeln!(
        sink,
        "hog {:.8e} {:.8e} {} {} {}",
        h.e_hog,
        h.patch_fraction,
        h.cells_per_side,
        h.orientation_bins,
        u8::from(h.soft_binning)
    )?;
    writeln!(sink, "shrinkage {:.8e}", model.shrinkage)?;
    let p = &model.prior;
    writeln!(sink, "prior {}", p.basis.len())?;
    writeln!(sink, "mean {}", join(&p.mean))?;
    for (b, v) in p.basis.iter().zip(&p.variances) {
        writeln!(sink, "basis {v:.8e} {}", join(b))?;
    }
    let depth = model.levels.first().and_then(|l| l.trees.first()).map_or(1, |t| t.depth);
    writeln!(sink, "levels {} depth {}", model.levels.len(), depth)?;
    for level in &model.levels {
        writeln!(sink, "level {}", level.trees.len())?;
        for tree in &level.trees {
            for s in &tree.splits {
                let eye = match s.eye {
                    Eye::Right => 'r',
                    Eye::Left => 'l',
                };
                writeln!(sink, "split {eye} {} {} {:.8e}", s.dim_a, s.dim_b, s.threshold)?;
            }
            for leaf in &tree.leaves {
                writeln!(
                    sink,
                    "leaf {:.8e} {:.8e} {:.8e} {:.8e}",
                    leaf[0], leaf[1], leaf[2], leaf[3]
                )?;
            }
        }
    }
    writeln!(sink, "end")?;
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.8e}")).collect::<Vec<_>>().join(" ")
}

pub fn save_model(model: &CascadeModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CascadeModel> {
    read_model(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    /// Next non-empty line split into its tag and remaining tokens.
    fn next(&mut self, expected: &str) -> Result<Vec<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let tokens: Vec<&str> = l.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens[0] != expected {
                return Err(Error::parse(
                    self.line,
                    format!("expected '{expected}', found '{}'", tokens[0]),
                ));
            }
            return Ok(tokens[1..].to_vec());
        }
        Err(Error::Truncated(format!(
            "model stream ended while expecting '{expected}'"
        )))
    }

    fn num<T: std::str::FromStr>(&self, tok: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| Error::parse(self.line, format!("invalid number '{tok}'")))
    }

    fn nums<T: std::str::FromStr, const N: usize>(&self, toks: &[&str]) -> Result<[T; N]> {
        if toks.len() != N {
            return Err(Error::parse(
                self.line,
                format!("expected {N} values, found {}", toks.len()),
            ));
        }
        let v: Vec<T> = toks.iter().map(|t| self.num(t)).collect::<Result<_>>()?;
        v.try_into().map_err(|_| Error::parse(self.line, "wrong value count"))
    }
}

pub fn read_model(text: &str) -> Result<CascadeModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.next(MAGIC).map_err(|e| match e {
        Error::Truncated(_) => Error::Truncated("empty model stream".into()),
        other => other,
    })?;
    let [version]: [u32; 1] = lines.nums(&header)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let t = lines.next("hog")?;
    if t.len() != 5 {
        return Err(Error::parse(lines.line, "hog line needs 5 values"));
    }
    let hog = HogConfig {
        e_hog: lines.num(t[0])?,
        patch_fraction: lines.num(t[1])?,
        cells_per_side: lines.num(t[2])?,
        orientation_bins: lines.num(t[3])?,
        soft_binning: match t[4] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(lines.line, format!("invalid flag '{other}'"))),
        },
    };
    let t = lines.next("shrinkage")?;
    let [shrinkage]: [f64; 1] = lines.nums(&t)?;
    let t = lines.next("prior")?;
    let [components]: [usize; 1] = lines.nums(&t)?;
    if components > 4 {
        return Err(Error::Invariant(format!("{components} prior components")));
    }
    let t = lines.next("mean")?;
    let mean: [f64; 4] = lines.nums(&t)?;
    let mut basis = Vec::with_capacity(components);
    let mut variances = Vec::with_capacity(components);
    for _ in 0..components {
        let t = lines.next("basis")?;
        let v: [f64; 5] = lines.nums(&t)?;
        variances.push(v[0]);
        basis.push([v[1], v[2], v[3], v[4]]);
    }
    let t = lines.next("levels")?;
    if t.len() != 3 || t[1] != "depth" {
        return Err(Error::parse(lines.line, "expected 'levels <n> depth <d>'"));
    }
    let n_levels: usize = lines.num(t[0])?;
    let depth: usize = lines.num(t[2])?;
    if depth == 0 || depth > 24 {
        return Err(Error::Invariant(format!("unsupported tree depth {depth}")));
    }
    let mut levels = Vec::with_capacity(n_levels.min(1 << 16));
    for _ in 0..n_levels {
        let t = lines.next("level")?;
        let [n_trees]: [usize; 1] = lines.nums(&t)?;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let mut splits = Vec::with_capacity(split_count(depth));
            for _ in 0..split_count(depth) {
                let t = lines.next("split")?;
                if t.len() != 4 {
                    return Err(Error::parse(lines.line, "split needs 4 values"));
                }
                let eye = match t[0] {
                    "r" => Eye::Right,
                    "l" => Eye::Left,
                    other => return Err(Error::parse(lines.line, format!("invalid eye '{other}'"))),
                };
                splits.push(DiffFeature {
                    eye,
                    dim_a: lines.num(t[1])?,
                    dim_b: lines.num(t[2])?,
                    threshold: lines.num(t[3])?,
                });
            }
            let mut leaves = Vec::with_capacity(leaf_count(depth));
            for _ in 0..leaf_count(depth) {
                let t = lines.next("leaf")?;
                leaves.push(lines.nums::<f32, 4>(&t)?);
            }
            trees.push(RegressionTree { depth, splits, leaves });
        }
        levels.push(ForestLevel { trees });
    }
    lines.next("end")?;
    let model = CascadeModel {
        format_version: version,
        hog,
        shrinkage,
        prior: PcaShapeModel { mean, basis, variances },
        levels,
    };
    model.validate().map_err(|e| match e {
        Error::ModelMismatch(m) => Error::Invariant(m),
        other => other,
    })?;
    Ok(model)
}
