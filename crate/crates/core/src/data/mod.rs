//! Images, annotation file formats, dataset adapters and the synthetic renderer.

pub mod annotation;
pub mod corpus;
pub mod datasets;
pub mod image;
pub mod synth;

pub use self::annotation::{AnnotationSource, EyeAnnotation, Landmarks, NativeRecord};
pub use self::corpus::{build_corpus, Corpus, CorpusItem, Manifest, Split};
pub use self::datasets::{load_annotations, load_bioid_eyes, AnnotationFormat};
pub use self::image::{load_image, GrayImage};
pub use self::synth::{render_synthetic_eye, SynthParams, SyntheticSample, SyntheticScene};
