//! `instasplat` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "instasplat", version, about = "Panoptic labeling of Gaussian-splat scenes")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "INSTASPLAT_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic benchmark scene with its assets.
    Synth(SynthArgs),
    /// Propagate per-view masks into a globally labeled point cloud.
    Split(SplitArgs),
    /// Refine masks with a segmenter and merge instances into one scene.
    Splat(SplatArgs),
    /// Open-vocabulary query over instance descriptors.
    Query(QueryArgs),
    /// Edit one instance of a labeled scene.
    Edit(EditArgs),
    /// Score predicted labels against ground-truth points.
    Eval(EvalArgs),
    /// Answer segmenter requests from a directory of masks.
    SegmenterServe(ServeArgs),
}

/// Thresholds shared by the pipeline stages. Unset flags fall back to the
/// manifest's overrides, then to the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct Thresholds {
    /// Depth tolerance in meters for surface consistency [default: 0.02].
    #[arg(long)]
    pub tau_depth: Option<f64>,
    /// Minimum normalized vote to keep a point's label [default: 0.7].
    #[arg(long)]
    pub tau_label: Option<f64>,
    /// Minimum IoU with the rendered silhouette to accept a mask [default: 0.95].
    #[arg(long)]
    pub tau_iou: Option<f64>,
    /// Score margin to the best match for query results [default: 0.02].
    #[arg(long)]
    pub tau_corr: Option<f64>,
    /// Bonus weight of a point's first observation, in (0, 1) [default: 0.5].
    #[arg(long)]
    pub lambda_init: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives manifest.json and all assets.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 400)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 20)]
    pub cameras: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Distance between neighboring object centers.
    #[arg(long, default_value_t = 0.7)]
    pub spacing: f64,
    /// Keep ground-truth ids in the raw masks.
    #[arg(long)]
    pub no_permute: bool,
    #[arg(long, default_value_t = 0.0)]
    pub split_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub dilation: usize,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Asset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for labeled.ply and the propagated masks.
    #[arg(long)]
    pub out: PathBuf,
    /// Use every Nth view.
    #[arg(long, default_value_t = 1)]
    pub subsample: usize,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Args, Debug)]
pub struct SplatArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of a previous `split` run.
    #[arg(long)]
    pub split: PathBuf,
    /// Gaussian scene to label and merge.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for scene.ply, refined masks and merges.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Must match the subsampling of the split run.
    #[arg(long, default_value_t = 1)]
    pub subsample: usize,
    /// External segmenter command speaking the wire protocol on stdio,
    /// split on whitespace.
    #[arg(long, conflicts_with_all = ["segmenter_addr", "segmenter_masks"])]
    pub segmenter_cmd: Option<String>,
    /// Address of a segmenter speaking the wire protocol over TCP.
    #[arg(long, conflicts_with = "segmenter_masks")]
    pub segmenter_addr: Option<String>,
    /// Directory of precomputed candidate masks.
    #[arg(long)]
    pub segmenter_masks: Option<PathBuf>,
    /// Segmenter reply timeout in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Prompt points per instance and view.
    #[arg(long, default_value_t = instasplat::refinement::DEFAULT_PROMPTS)]
    pub prompts: usize,
    /// Gradient steps per merge round.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Descriptor file.
    #[arg(long)]
    pub descriptors: PathBuf,
    /// Text embedding as a JSON array of numbers.
    #[arg(long)]
    pub text: PathBuf,
    /// Labeled scene; with --manifest and --masks-out, writes per-view
    /// masks of the matched instances.
    #[arg(long, requires_all = ["manifest", "masks_out"])]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub masks_out: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(subcommand)]
    pub op: EditOp,
}

#[derive(Subcommand, Debug)]
pub enum EditOp {
    Remove {
        #[arg(long)]
        label: u32,
    },
    /// Copy an instance under a fresh label.
    Duplicate {
        #[arg(long)]
        label: u32,
        /// Translation of the copy as x,y,z.
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
        offset: [f64; 3],
    },
    /// Apply a rigid motion, given as a 4x4 row-major matrix or as a
    /// rotation (axis times angle in radians) followed by a translation.
    Transform {
        #[arg(long)]
        label: u32,
        #[arg(long, value_parser = parse_matrix, conflicts_with_all = ["rotate", "translate"])]
        matrix: Option<[f64; 16]>,
        #[arg(long, value_parser = parse_vec3)]
        rotate: Option<[f64; 3]>,
        #[arg(long, value_parser = parse_vec3)]
        translate: Option<[f64; 3]>,
    },
    Recolor {
        #[arg(long)]
        label: u32,
        /// Color as r,g,b in [0, 1].
        #[arg(long, value_parser = parse_vec3)]
        rgb: [f64; 3],
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Labeled points or a labeled Gaussian scene.
    #[arg(long)]
    pub pred: PathBuf,
    /// Labeled ground-truth points.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = MatchingArg::OneToOne)]
    pub matching: MatchingArg,
    /// Also write the report as key=value lines.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MatchingArg {
    OneToOne,
    ManyToOne,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Directory of mask sets named by view.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, value_enum, default_value_t = ServeMode::Oracle)]
    pub mode: ServeMode,
    /// Listen on this address instead of stdio; serves one client.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ServeMode {
    /// The mask containing the first prompt.
    Oracle,
    /// The mask containing the most prompts.
    Bank,
}

fn parse_numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; N]>::try_from(v).map_err(|v| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    parse_numbers(s)
}

fn parse_matrix(s: &str) -> Result<[f64; 16], String> {
    parse_numbers(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(anyhow::Error::from)
        .and_then(|_| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
