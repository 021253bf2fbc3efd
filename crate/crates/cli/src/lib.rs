//! The `eyecenter` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod args;
mod output;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use rayon::prelude::*;
use serde_json::{json, Value};

use eyecenter::cascade::{load_model, train_cascade, write_model, TrainingItem};
use eyecenter::data::annotation::{read_native, write_annotations, AnnotationSource};
use eyecenter::data::corpus::{build_corpus, item_file_name, Split};
use eyecenter::data::{load_annotations, load_image, AnnotationFormat};
use eyecenter::eval::{
    accuracy_at, accuracy_table_header, accuracy_table_row, compare_methods, mean_error, median_error,
    records_from_predictions, ComparisonReport, EvalItem, Method, MethodReport,
};
use eyecenter::pipeline::{self, auto_annotate, train_from_auto, with_flipped, LandmarkedImage};
use eyecenter::voting::detect_handcrafted;
use eyecenter::{
    DetectionResult, EyeAnnotation, GrayImage, Landmarks, PipelineConfig, Point2, RobustFitConfig, SynthParams,
    TrainConfig, TrainReport, VoteConfig,
};

pub use args::{Cli, Command, Format};
use args::{InputFormat, TrainingArgs, VoteArgs};
use output::{render_overlay, write_atomic, Mark};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<eyecenter::Error> for CliError {
    fn from(e: eyecenter::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match args::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Runs a parsed invocation and returns what it prints to stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Detect(a) => detect(cli, a),
        Command::Handcrafted(a) => handcrafted(cli, a),
        Command::Train(a) => train(cli, a),
        Command::AutoAnnotate(a) => auto_annotate_cmd(cli, a),
        Command::AutoTrain(a) => auto_train(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Synth(a) => synth(cli, a),
    })
}

// ------------------------------------------------------------------ inputs

struct Input {
    id: String,
    image: GrayImage,
    landmarks: Landmarks,
    centers: Option<(Point2, Point2)>,
}

fn annotation_format(f: InputFormat) -> AnnotationFormat {
    match f {
        InputFormat::Native => AnnotationFormat::Native,
        InputFormat::Bioid => AnnotationFormat::Bioid,
        InputFormat::Gi4e => AnnotationFormat::Gi4e,
    }
}

fn image_root(file: &Path, images: Option<&Path>) -> PathBuf {
    match images {
        Some(dir) => dir.to_path_buf(),
        None if file.is_dir() => file.to_path_buf(),
        None => file.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

/// Reads landmark records and their images. Native files may omit centers;
/// the dataset formats always carry them.
fn load_inputs(file: &Path, format: InputFormat, images: Option<&Path>) -> Result<Vec<Input>, CliError> {
    type Record = (String, Landmarks, Option<(Point2, Point2)>);
    let records: Vec<Record> = match format {
        InputFormat::Native => read_native(file)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| Ok((r.image_id.clone(), r.landmarks(i)?, r.centers)))
            .collect::<eyecenter::Result<_>>()?,
        f => load_annotations(file, annotation_format(f))?
            .into_iter()
            .map(|a| (a.image_id.clone(), a.landmarks(), Some(a.centers)))
            .collect(),
    };
    if records.is_empty() {
        return Err(CliError::Data(format!("{} contains no records", file.display())));
    }
    let root = image_root(file, images);
    records
        .into_par_iter()
        .map(|(id, landmarks, centers)| {
            let image = load_image(root.join(&id))?;
            Ok(Input { id, image, landmarks, centers })
        })
        .collect()
}

fn with_centers(inputs: Vec<Input>) -> Result<Vec<(GrayImage, EyeAnnotation)>, CliError> {
    inputs
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let centers = it
                .centers
                .ok_or_else(|| CliError::Data(format!("record {i} ('{}') has no centers", it.id)))?;
            let annotation = EyeAnnotation {
                image_id: it.id,
                image_size: Some((it.image.width, it.image.height)),
                corners: it.landmarks.corners,
                contours: it.landmarks.contours,
                centers,
                source: AnnotationSource::Manual,
            };
            Ok((it.image, annotation))
        })
        .collect()
}

fn vote_config(a: &VoteArgs) -> Result<VoteConfig, CliError> {
    let mut cfg = VoteConfig::default();
    if let Some(band) = a.vote_band {
        cfg.radius_band = band;
    }
    cfg.refine_from_ring_radius = a.refine_from_ring;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_config(a: &TrainingArgs, seed: u64) -> Result<TrainConfig, CliError> {
    let cfg = TrainConfig {
        levels: a.levels,
        trees_per_level: a.trees,
        tree_depth: a.depth,
        shrinkage: a.shrinkage,
        oversample: a.oversample,
        pool_size: a.pool,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

// ------------------------------------------------------------- detections

fn detection_json(id: &str, d: &DetectionResult) -> Value {
    let eye = |e: &pipeline::EyeResult| {
        json!({
            "x": e.center.x,
            "y": e.center.y,
            "radius": e.radius,
            "stage": e.stage.as_str(),
            "closure_ratio": e.closure_ratio,
            "clamped": e.clamped,
        })
    };
    json!({ "image": id, "right": eye(&d.right), "left": eye(&d.left) })
}

/// Prints detections and writes the optional annotation file and overlays.
fn emit_detections(
    cli: &Cli,
    inputs: &[Input],
    detections: &[DetectionResult],
    out: Option<&Path>,
    overlay: Option<&Path>,
) -> Result<String, CliError> {
    let annotations: Vec<EyeAnnotation> = inputs
        .iter()
        .zip(detections)
        .map(|(it, d)| EyeAnnotation {
            image_id: it.id.clone(),
            image_size: Some((it.image.width, it.image.height)),
            corners: it.landmarks.corners,
            contours: it.landmarks.contours.clone(),
            centers: d.centers(),
            source: AnnotationSource::Auto,
        })
        .collect();
    if let Some(dir) = overlay {
        let pngs: Vec<Vec<u8>> = inputs
            .par_iter()
            .zip(detections)
            .map(|(it, d)| {
                let marks = [&d.right, &d.left].map(|e| Mark { center: e.center, radius: e.radius });
                render_overlay(&it.image, &marks)
            })
            .collect::<Result<_, _>>()?;
        for (it, png) in inputs.iter().zip(pngs) {
            let name = Path::new(&it.id).with_extension("overlay.png");
            write_atomic(&dir.join(name), &png)?;
        }
    }
    if let Some(path) = out {
        write_atomic(path, write_annotations(&annotations).as_bytes())?;
    }
    Ok(match cli.format {
        Format::Json => {
            let v: Vec<Value> = inputs.iter().zip(detections).map(|(it, d)| detection_json(&it.id, d)).collect();
            format!("{}\n", json!({ "detections": v }))
        }
        Format::Text => {
            let mut s = String::new();
            for (it, d) in inputs.iter().zip(detections) {
                let (r, l) = d.centers();
                let _ = writeln!(
                    s,
                    "{} {:.3} {:.3} {:.3} {:.3} {} {}",
                    it.id,
                    r.x,
                    r.y,
                    l.x,
                    l.y,
                    d.right.stage.as_str(),
                    d.left.stage.as_str()
                );
            }
            s
        }
    })
}

fn detect(cli: &Cli, a: &args::DetectArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let inputs = load_inputs(&a.input.landmarks, a.input.input_format, a.input.images.as_deref())?;
    let cfg = PipelineConfig { use_refinement: !a.no_refine, ..PipelineConfig::default() };
    let detections: Vec<DetectionResult> = inputs
        .par_iter()
        .map(|it| pipeline::detect(&model, &it.image, &it.landmarks, &cfg))
        .collect::<eyecenter::Result<_>>()?;
    emit_detections(cli, &inputs, &detections, a.out.as_deref(), a.overlay.as_deref())
}

fn handcrafted(cli: &Cli, a: &args::HandcraftedArgs) -> Result<String, CliError> {
    let vote = vote_config(&a.vote)?;
    let fit = RobustFitConfig::default();
    let inputs = load_inputs(&a.input.landmarks, a.input.input_format, a.input.images.as_deref())?;
    let detections: Vec<DetectionResult> = inputs
        .par_iter()
        .map(|it| {
            let h = detect_handcrafted(&it.image, &it.landmarks, &vote, &fit)?;
            DetectionResult::from_handcrafted(&h, &it.landmarks, (it.image.width, it.image.height))
        })
        .collect::<eyecenter::Result<_>>()?;
    emit_detections(cli, &inputs, &detections, a.out.as_deref(), a.overlay.as_deref())
}

// ---------------------------------------------------------------- training

fn train_summary(cli: &Cli, report: &TrainReport, model_path: &Path, extra: Value) -> String {
    match cli.format {
        Format::Json => {
            let mut v = json!({
                "model": model_path.display().to_string(),
                "samples": report.samples,
                "initial_error": report.initial_error,
                "level_errors": report.level_errors,
            });
            if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
                m.extend(e);
            }
            format!("{v}\n")
        }
        Format::Text => {
            let mut s = String::new();
            if let Value::Object(e) = extra {
                for (k, v) in e {
                    let _ = writeln!(s, "{k}: {v}");
                }
            }
            let _ = writeln!(s, "samples: {}", report.samples);
            let _ = writeln!(s, "initial error: {:.5}", report.initial_error);
            for (i, e) in report.level_errors.iter().enumerate() {
                let _ = writeln!(s, "level {}: {e:.5}", i + 1);
            }
            let _ = writeln!(s, "model written to {}", model_path.display());
            s
        }
    }
}

fn save_model_atomic(model: &eyecenter::CascadeModel, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    write_atomic(path, &buf)
}

fn train(cli: &Cli, a: &args::TrainArgs) -> Result<String, CliError> {
    let cfg = train_config(&a.training, cli.seed)?;
    let inputs = load_inputs(&a.annotations, a.input_format, a.images.as_deref())?;
    let mut pairs = with_centers(inputs)?;
    if a.training.flip {
        pairs = with_flipped(pairs);
    }
    let items: Vec<TrainingItem<'_>> = pairs.iter().map(|(image, annotation)| TrainingItem { image, annotation }).collect();
    let (model, report) = train_cascade(&items, &cfg)?;
    save_model_atomic(&model, &a.out)?;
    Ok(train_summary(cli, &report, &a.out, json!({})))
}

fn landmarked(inputs: &[Input]) -> Vec<LandmarkedImage<'_>> {
    inputs
        .iter()
        .map(|it| LandmarkedImage { id: &it.id, image: &it.image, landmarks: &it.landmarks })
        .collect()
}

fn auto_annotate_cmd(cli: &Cli, a: &args::AutoAnnotateArgs) -> Result<String, CliError> {
    let vote = vote_config(&a.vote)?;
    let inputs = load_inputs(&a.input.landmarks, a.input.input_format, a.input.images.as_deref())?;
    let report = auto_annotate(&landmarked(&inputs), &vote, &RobustFitConfig::default());
    let annotations: Vec<EyeAnnotation> = report.annotations.iter().map(|x| x.annotation.clone()).collect();
    write_atomic(&a.out, write_annotations(&annotations).as_bytes())?;
    let excluded: Vec<&str> = report.excluded.iter().map(|&i| inputs[i].id.as_str()).collect();
    let failed: Vec<Value> = report
        .failed
        .iter()
        .map(|(i, why)| json!({ "image": inputs[*i].id, "reason": why }))
        .collect();
    Ok(match cli.format {
        Format::Json => format!(
            "{}\n",
            json!({ "annotated": annotations.len(), "excluded": excluded, "failed": failed })
        ),
        Format::Text => {
            let mut s = format!(
                "annotated {} of {} images ({} excluded after fallback, {} failed)\n",
                annotations.len(),
                inputs.len(),
                excluded.len(),
                failed.len()
            );
            for (i, why) in &report.failed {
                let _ = writeln!(s, "failed {}: {why}", inputs[*i].id);
            }
            s
        }
    })
}

fn auto_train(cli: &Cli, a: &args::AutoTrainArgs) -> Result<String, CliError> {
    let vote = vote_config(&a.vote)?;
    let cfg = train_config(&a.training, cli.seed)?;
    let inputs = load_inputs(&a.input.landmarks, a.input.input_format, a.input.images.as_deref())?;
    let (model, report, auto) =
        train_from_auto(&landmarked(&inputs), &vote, &RobustFitConfig::default(), &cfg, a.training.flip)?;
    if let Some(path) = &a.annotations_out {
        let annotations: Vec<EyeAnnotation> = auto.annotations.iter().map(|x| x.annotation.clone()).collect();
        write_atomic(path, write_annotations(&annotations).as_bytes())?;
    }
    save_model_atomic(&model, &a.out)?;
    let extra = json!({
        "annotated": auto.annotations.len(),
        "excluded": auto.excluded.len(),
        "failed": auto.failed.len(),
    });
    Ok(train_summary(cli, &report, &a.out, extra))
}

// -------------------------------------------------------------- evaluation

fn check_thresholds(t: &[f64]) -> Result<(), CliError> {
    if t.is_empty() || t.iter().any(|x| !x.is_finite() || *x < 0.0) || t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--thresholds must be non-negative and strictly ascending".into()));
    }
    Ok(())
}

fn curve_text(report: &ComparisonReport, max: f64, points: usize) -> Result<String, CliError> {
    let points = points.max(1);
    let thresholds: Vec<f64> = (1..=points).map(|k| max * k as f64 / points as f64).collect();
    let curves = report
        .methods
        .iter()
        .map(|m| accuracy_at(&m.records, &thresholds))
        .collect::<eyecenter::Result<Vec<_>>>()?;
    let mut s = String::from("threshold");
    for m in &report.methods {
        let _ = write!(s, " {}", m.name);
    }
    s.push('\n');
    for (i, t) in thresholds.iter().enumerate() {
        let _ = write!(s, "{t:.6}");
        for c in &curves {
            let _ = write!(s, " {:.6}", c.fractions[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

fn evaluate(cli: &Cli, a: &args::EvaluateArgs) -> Result<String, CliError> {
    check_thresholds(&a.thresholds)?;
    let report = if let Some(pred_path) = &a.predictions {
        let truth = load_annotations(&a.truth, annotation_format(a.input_format))?;
        let predictions = load_annotations(pred_path, AnnotationFormat::Native)?;
        let records = records_from_predictions(&predictions, &truth)?;
        let name = pred_path.file_stem().map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
        ComparisonReport {
            methods: vec![MethodReport {
                name,
                curve: accuracy_at(&records, &a.thresholds)?,
                mean: mean_error(&records),
                median: median_error(&records),
                seconds_per_image: 0.0,
                stages: BTreeMap::new(),
                records,
            }],
        }
    } else {
        let model_path = a.model.as_ref().expect("clap requires --model without --predictions");
        let model = load_model(model_path)?;
        let inputs = load_inputs(&a.truth, a.input_format, a.images.as_deref())?;
        let truth: Vec<(Point2, Point2)> = inputs
            .iter()
            .enumerate()
            .map(|(i, it)| it.centers.ok_or_else(|| CliError::Data(format!("record {i} ('{}') has no centers", it.id))))
            .collect::<Result<_, _>>()?;
        let items: Vec<EvalItem<'_>> = inputs
            .iter()
            .zip(&truth)
            .map(|(it, t)| EvalItem { id: &it.id, image: &it.image, landmarks: &it.landmarks, truth: *t })
            .collect();
        let refined = PipelineConfig::default();
        let unrefined = PipelineConfig { use_refinement: false, ..PipelineConfig::default() };
        let mut methods = vec![Method::new("refined", |img: &GrayImage, lm: &Landmarks| {
            pipeline::detect(&model, img, lm, &refined)
        })];
        if a.compare_unrefined {
            methods.push(Method::new("unrefined", |img: &GrayImage, lm: &Landmarks| {
                pipeline::detect(&model, img, lm, &unrefined)
            }));
        }
        compare_methods(&items, &methods, &a.thresholds)?
    };
    let mut table = accuracy_table_header(&a.thresholds);
    for m in &report.methods {
        table += &accuracy_table_row(&m.name, &m.curve);
    }
    if let Some(path) = &a.table {
        write_atomic(path, table.as_bytes())?;
    }
    if let Some(path) = &a.curve {
        let max = *a.thresholds.last().expect("thresholds checked non-empty");
        write_atomic(path, curve_text(&report, max, a.curve_points)?.as_bytes())?;
    }
    Ok(match cli.format {
        Format::Text => report.to_text(),
        Format::Json => {
            let methods: Vec<Value> = report
                .methods
                .iter()
                .map(|m| {
                    let stages: BTreeMap<&str, usize> = m.stages.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                    json!({
                        "name": m.name,
                        "images": m.records.len(),
                        "thresholds": m.curve.thresholds,
                        "accuracy": m.curve.fractions,
                        "mean": m.mean,
                        "median": m.median,
                        "ms_per_image": 1e3 * m.seconds_per_image,
                        "stages": stages,
                    })
                })
                .collect();
            format!("{}\n", json!({ "methods": methods }))
        }
    })
}

// ------------------------------------------------------------------- synth

fn synth(cli: &Cli, a: &args::SynthArgs) -> Result<String, CliError> {
    let mut params = SynthParams { seed: cli.seed, ..SynthParams::default() };
    if let Some(s) = a.size {
        params.image_size = s;
    }
    if let Some(r) = a.interocular {
        params.interocular_px = r;
    }
    if let Some(r) = a.closure {
        params.closure_range = r;
    }
    if let Some(r) = a.gaze {
        params.gaze_offset_range = r;
    }
    if let Some(r) = a.roll {
        params.roll_deg = r;
    }
    if let Some(r) = a.noise {
        params.noise_sigma = r;
    }
    if let Some(r) = a.blur {
        params.blur_sigma = r;
    }
    if let Some(g) = a.illumination {
        params.illumination_gradient = g;
    }
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let corpus = build_corpus(&params, a.count, a.test_count).map_err(|e| CliError::Usage(e.to_string()))?;
    // Encode everything before touching the output directory.
    let pngs: Vec<Vec<u8>> = corpus
        .items
        .par_iter()
        .map(|it| it.image().encode_png())
        .collect::<eyecenter::Result<_>>()?;
    let all: Vec<EyeAnnotation> = corpus.items.iter().map(|i| i.annotation().clone()).collect();
    let split = |s: Split| -> Vec<EyeAnnotation> { corpus.split(s).map(|i| i.annotation().clone()).collect() };
    for (i, png) in pngs.iter().enumerate() {
        write_atomic(&a.out.join(item_file_name(i)), png)?;
    }
    write_atomic(&a.out.join("annotations.eyeann"), write_annotations(&all).as_bytes())?;
    if a.test_count > 0 {
        write_atomic(&a.out.join("train.eyeann"), write_annotations(&split(Split::Train)).as_bytes())?;
        write_atomic(&a.out.join("test.eyeann"), write_annotations(&split(Split::Test)).as_bytes())?;
    }
    write_atomic(&a.out.join("manifest.txt"), corpus.manifest.to_text().as_bytes())?;
    let digest = corpus.manifest.digest();
    Ok(match cli.format {
        Format::Json => format!(
            "{}\n",
            json!({ "count": a.count, "test": a.test_count, "seed": cli.seed, "digest": digest })
        ),
        Format::Text => format!(
            "{} images ({} test) written to {}\ndigest {digest}\n",
            a.count,
            a.test_count,
            a.out.display()
        ),
    })
}
