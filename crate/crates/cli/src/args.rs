use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "warpdepth", version, about = "Self-supervised stereo/temporal depth by direct optimisation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene and write its images, calibration and ground truth.
    Synth(SynthArgs),
    /// Recover depth, poses and the explainability mask of one or more scenes.
    Optimize(OptimizeArgs),
    /// Merge a disparity map with the one computed from the flipped input.
    Postprocess(PostprocessArgs),
    /// Score a predicted depth or disparity map against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on random scenes.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Plane,
    Slanted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML scene description; defaults to the chosen preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Plane)]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the texture seed of the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

/// Loss and optimiser overrides shared by `optimize` and `gradcheck`.
#[derive(Debug, Args, Clone)]
pub struct LossArgs {
    /// SSIM share of the photometric loss, in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Term weights as `key=value`, keys image, ds, lr, exp; comma
    /// separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalView {
    Right,
    Left,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Scene manifests (calibration, l, r, l1, r1).
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    /// Output directory; with several manifests one subdirectory per scene.
    #[arg(long)]
    pub out: PathBuf,
    /// Adam steps per scale.
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=16))]
    pub scales: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Disparity ceiling as a fraction of the image width.
    #[arg(long, default_value_t = 0.3)]
    pub dmax: f64,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Seed for augmentation draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Serial reductions on one thread per scene.
    #[arg(long)]
    pub deterministic: bool,
    /// Keep the stereo pose at its calibrated value.
    #[arg(long)]
    pub freeze_stereo_pose: bool,
    /// Apply a seeded random photometric augmentation and flip.
    #[arg(long)]
    pub augment: bool,
    /// Which disparity map to export as `depth.pgm`.
    #[arg(long, value_enum, default_value_t = EvalView::Right)]
    pub eval_view: EvalView,
    /// Scenes optimised concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Disparity map (16-bit PGM).
    pub disp: PathBuf,
    /// Disparity map computed from the flipped input.
    pub disp_flipped: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// The second map is still in flipped orientation; flip it back first.
    #[arg(long)]
    pub reflip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapKind {
    Depth,
    Disparity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = MapKind::Depth)]
    pub kind: MapKind,
    /// Depth cap in metres (50 and 80 are the usual choices).
    #[arg(long, default_value_t = 80.0)]
    pub cap: f64,
    /// Calibration used to convert between depth and disparity; enables
    /// D1-all for depth maps and is required for disparity maps.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Central-difference step. Bilinear sampling has kinks at integer
    /// coordinates; a small step rarely straddles one.
    #[arg(long, default_value_t = 1e-7)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Negate one analytic gradient block (harness self-test).
    #[arg(long, hide = true)]
    pub inject_sign_flip: Option<String>,
}
