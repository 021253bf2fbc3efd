//! Eye center localization from facial landmarks.
//!
//! The crate combines three detectors that share one geometric frame:
//!
//! * [`cascade`]: a cascade of gradient-boosted regression forests whose split
//!   tests compare two components of a per-eye HoG descriptor. Shapes live in a
//!   face-normalized frame where the right eye-corner midpoint sits at the
//!   origin and the left one at `(1, 0)`.
//! * [`circlefit`]: sub-pixel refinement by fitting a circle to iris edge points
//!   with a Tukey-weighted Gauss-Newton solver.
//! * [`voting`]: a hand-crafted gradient-voting detector, used on its own and as
//!   an automatic annotator for training the cascade.
//!
//! [`pipeline`] composes them with closed-eye gating, [`data`] provides I/O and a
//! synthetic face renderer, and [`eval`] implements the normalized-error metric.

pub mod cascade;
pub mod circlefit;
pub mod data;
mod error;
pub mod eval;
pub mod geometry;
pub mod hog;
pub mod imgproc;
pub mod pipeline;
pub mod voting;

pub use cascade::{CascadeModel, PcaShapeModel, TrainConfig, TrainReport};
pub use circlefit::{CircleEstimate, EdgePointSet, FitStatus, RobustFitConfig};
pub use data::{EyeAnnotation, GrayImage, Landmarks, SynthParams};
pub use error::{Error, Result};
pub use eval::{AccuracyCurve, ErrorRecord};
pub use geometry::{EyeAnchor, EyeContour, EyeCorners, NormalizationTransform, Point2, Shape};
pub use hog::{DiffFeature, Eye, HogConfig, HogDescriptor};
pub use pipeline::{DetectionResult, PipelineConfig, Stage};
pub use voting::{Candidate, VoteConfig};
