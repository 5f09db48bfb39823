use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "otoar", version, about = "Ear CT landmark regression and endoscopic overlay")]
pub struct Cli {
    /// Worker threads for training and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,

    /// Also write the run manifest to this path.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic CT corpus with landmark annotations.
    Synth(SynthArgs),
    /// Train one model per cross-validation fold and report held-out errors.
    Train(TrainArgs),
    /// Re-score a trained run on its held-out folds.
    Eval(EvalArgs),
    /// Predict the seven landmarks of one case with a checkpoint.
    Predict(PredictArgs),
    /// Resect the camera from 2D/3D correspondences.
    Register(RegisterArgs),
    /// Track a frame sequence and render the overlay for every frame.
    Track(TrackArgs),
    /// Render a synthetic endoscopic sequence for a case.
    Scene(SceneArgs),
    /// Serve the session HTTP API.
    Serve(ServeArgs),
    /// Parse a network description and print its shape table.
    NetspecCheck(NetspecArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

pub fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("invalid value `{p}` in `{s}`"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn dims(s: &str) -> Result<[usize; 3], String> {
    let d = parse_triple::<usize>(s)?;
    if d.contains(&0) {
        return Err(format!("dimensions must be positive, got `{s}`"));
    }
    Ok(d)
}

fn spacing(s: &str) -> Result<[f64; 3], String> {
    let v = parse_triple::<f64>(s)?;
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(format!("spacing must be positive, got `{s}`"));
    }
    Ok(v)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for sidecars, payloads and annotations.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub cases: usize,
    /// Volume extents in voxels, `X,Y,Z`.
    #[arg(long, default_value = "32,32,16", value_parser = dims)]
    pub dims: [usize; 3],
    /// Voxel spacing in millimetres, `X,Y,Z`.
    #[arg(long, default_value = "0.3,0.3,0.6", value_parser = spacing)]
    pub spacing: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training flags. Explicit flags override values from `--config`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of case sidecars.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; keys match config.json of a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the CPU-sized preset (32,32,16 inputs, 300 epochs).
    #[arg(long)]
    pub desk_scale: bool,
    #[arg(long, default_value_t = 3500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub batch_size: usize,
    #[arg(long, alias = "lr", default_value_t = 0.0005)]
    pub learning_rate: f64,
    #[arg(long, alias = "dropout", default_value_t = 0.2)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// ROI extents fed to the network, `X,Y,Z`.
    #[arg(long, default_value = "200,200,100", value_parser = dims)]
    pub input_dims: [usize; 3],
    /// Network description file; defaults to the reference architecture.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Assign folds per case instead of per patient.
    #[arg(long)]
    pub ungrouped: bool,
    /// Print the training loss every this many epochs.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of case sidecars used for training.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Report directory; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Case sidecar.
    #[arg(long)]
    pub case: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Correspondences, one `NAME X Y Z U V` per line.
    #[arg(long)]
    pub picks: PathBuf,
    /// Write the camera matrix here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Directory of `frame_NNNNNN.pgm` files.
    #[arg(long)]
    pub frames: PathBuf,
    /// Camera matrix written by `register`.
    #[arg(long)]
    pub camera: PathBuf,
    /// Case sidecar providing the landmarks.
    #[arg(long)]
    pub case: PathBuf,
    /// Directory for overlays and track.log.
    #[arg(long)]
    pub out: PathBuf,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value = "2.0")]
    pub ransac_threshold: f64,
    #[arg(long, default_value_t = 0.995)]
    pub ransac_confidence: f64,
    #[arg(long, default_value_t = 1000)]
    pub ransac_max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub ransac_seed: u64,
    /// Fewer inliers than this marks the frame lost.
    #[arg(long, default_value_t = 12)]
    pub min_inliers: usize,
    #[arg(long, default_value_t = 500)]
    pub max_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrajectoryKind {
    Smooth,
    Translation,
    Still,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Case sidecar providing the landmarks.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 120)]
    pub frames: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    /// Additive noise standard deviation, intensity units in [0, 1].
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = TrajectoryKind::Smooth)]
    pub trajectory: TrajectoryKind,
    /// Per-frame shift for the translation trajectory.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub dy: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "OTOAR_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "OTOAR_HOST", default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Root for all case and frame paths in requests.
    #[arg(long, env = "OTOAR_DATA_ROOT")]
    pub data_root: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetspecArgs {
    /// Network description, or `-` for stdin. Without it the reference
    /// architecture for `--input-dims` is checked.
    pub file: Option<PathBuf>,
    #[arg(long, default_value = "200,200,100", value_parser = dims)]
    pub input_dims: [usize; 3],
    #[arg(long, default_value_t = 0.2)]
    pub dropout_rate: f64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
