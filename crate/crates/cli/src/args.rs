//! Command-line grammar and config-file merging.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "eyecenter", version, about = "Eye center localization toolkit", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice; equal seeds give identical outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// TOML file whose keys mirror the flags; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Format of reports printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Native,
    Bioid,
    Gi4e,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Locate eye centers with a trained cascade.
    Detect(DetectArgs),
    /// Train a cascade from annotated images.
    Train(TrainArgs),
    /// Label images with the hand-crafted detector.
    AutoAnnotate(AutoAnnotateArgs),
    /// Auto-annotate, then train a cascade on the labels.
    AutoTrain(AutoTrainArgs),
    /// Score predictions or a model against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a synthetic corpus.
    Synth(SynthArgs),
    /// Locate eye centers with the hand-crafted detector.
    Handcrafted(HandcraftedArgs),
}

impl Command {
    pub const NAMES: [&'static str; 7] =
        ["detect", "train", "auto-annotate", "auto-train", "evaluate", "synth", "handcrafted"];
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Landmark or annotation file.
    #[arg(long, value_name = "FILE")]
    pub landmarks: PathBuf,

    #[arg(long, value_enum, default_value_t = InputFormat::Native)]
    pub input_format: InputFormat,

    /// Directory image ids are relative to (default: the landmark file's directory).
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    /// Voting annulus as fractions of the eye width, `LO,HI`.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub vote_band: Option<(f64, f64)>,

    /// Start circle refinement from the climbed ring radius instead of 0.2E.
    #[arg(long)]
    pub refine_from_ring: bool,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 10)]
    pub levels: usize,
    #[arg(long, default_value_t = 200)]
    pub trees: usize,
    /// Node levels per tree, leaves included.
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub shrinkage: f64,
    /// Initial shapes drawn per training image.
    #[arg(long, default_value_t = 50)]
    pub oversample: usize,
    /// Candidate split features per node.
    #[arg(long, default_value_t = 20)]
    pub pool: usize,
    /// Add a horizontally mirrored copy of every training image.
    #[arg(long)]
    pub flip: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Write detections as a native annotation file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Write one PNG per image with the centers and fitted circles drawn.
    #[arg(long, value_name = "DIR")]
    pub overlay: Option<PathBuf>,
    /// Skip circle refinement.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Args)]
pub struct HandcraftedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub vote: VoteArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Annotation file with centers.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Native)]
    pub input_format: InputFormat,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct AutoAnnotateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub vote: VoteArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AutoTrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub vote: VoteArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Model output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the automatic annotations.
    #[arg(long, value_name = "FILE")]
    pub annotations_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth annotation file.
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Native)]
    pub input_format: InputFormat,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Native annotation file of detected centers.
    #[arg(long, value_name = "FILE", conflicts_with = "model", required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    /// Run this model on the ground-truth images instead.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Also report the model without circle refinement.
    #[arg(long, requires = "model")]
    pub compare_unrefined: bool,
    /// Accuracy thresholds on the normalized error.
    #[arg(long, value_delimiter = ',', default_values_t = eyecenter::eval::TABLE_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    /// Write the threshold table here.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Write the accuracy curve as columns for plotting.
    #[arg(long, value_name = "FILE")]
    pub curve: Option<PathBuf>,
    /// Thresholds sampled for `--curve`.
    #[arg(long, default_value_t = 100)]
    pub curve_points: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Items in the test split.
    #[arg(long, default_value_t = 0)]
    pub test_count: usize,
    #[arg(long, value_name = "W,H", value_parser = parse_size)]
    pub size: Option<(u32, u32)>,
    /// Interocular distance range in pixels.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub interocular: Option<(f64, f64)>,
    /// Eye openness range within [0, 1].
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub closure: Option<(f64, f64)>,
    /// Maximum gaze offset `(horizontal, vertical)` as fractions of the eye width.
    #[arg(long, value_name = "H,V", value_parser = parse_pair)]
    pub gaze: Option<(f64, f64)>,
    /// Head roll range in degrees.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub roll: Option<(f64, f64)>,
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub noise: Option<(f64, f64)>,
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub blur: Option<(f64, f64)>,
    #[arg(long, value_name = "LEVELS")]
    pub illumination: Option<f64>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    Ok((a, b))
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected W,H, got '{s}'"))?;
    let a: u32 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: u32 = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    Ok((a, b))
}

/// Flags that consume the following token.
const GLOBAL_VALUE_FLAGS: [&str; 4] = ["--seed", "--threads", "--config", "--format"];

/// Finds the `--config` path and the position of the subcommand token
/// without a full parse, so that required flags may come from the file.
fn scan(argv: &[String]) -> (Option<String>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if a == "--config" {
            config = argv.get(i + 1).cloned();
            i += 1;
        } else if GLOBAL_VALUE_FLAGS.contains(&a.as_str()) {
            i += 1;
        } else if a == "--" {
            break;
        } else if sub.is_none() && !a.starts_with('-') && Command::NAMES.contains(&a.as_str()) {
            sub = Some(i);
        } else if sub.is_none() && !a.starts_with('-') {
            // Unknown subcommand; leave it to the parser to report.
            break;
        }
        i += 1;
    }
    (config, sub)
}

fn value_to_arg(key: &str, value: &toml::Value, out: &mut Vec<String>) -> Result<(), CliError> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &toml::Value| -> Result<String, CliError> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(CliError::Usage(format!("config key '{key}': unsupported value {other}"))),
        }
    };
    match value {
        toml::Value::Boolean(true) => out.push(flag),
        toml::Value::Boolean(false) => {}
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            out.push(flag);
            out.push(parts.join(","));
        }
        v => {
            out.push(flag);
            out.push(scalar(v)?);
        }
    }
    Ok(())
}

/// Turns a config file into flags. Top-level keys apply to every subcommand;
/// a table named after a subcommand applies to that subcommand only.
/// Relative paths inside the file are not rewritten; they resolve against
/// the working directory like flags do.
pub fn config_args(path: &Path, subcommand: &str) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(sub) => {
                if !Command::NAMES.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!("config table [{key}] is not a subcommand")));
                }
                if key == subcommand {
                    for (k, v) in sub {
                        value_to_arg(k, v, &mut out)?;
                    }
                }
            }
            _ if key == "config" => {
                return Err(CliError::Usage("config files cannot include other config files".into()))
            }
            v => value_to_arg(key, v, &mut out)?,
        }
    }
    Ok(out)
}

/// Places config-derived flags directly after the subcommand and moves the
/// user's own flags after them, so the user's values override the file's.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let (config, sub) = scan(&argv);
    let (Some(config), Some(sub)) = (config, sub) else {
        return Ok(argv);
    };
    let name = argv[sub].clone();
    let from_file = config_args(Path::new(&config), &name)?;
    let mut merged = vec![argv[0].clone(), name];
    merged.extend(from_file);
    merged.extend(argv.iter().enumerate().filter(|&(i, _)| i != 0 && i != sub).map(|(_, a)| a.clone()));
    Ok(merged)
}
