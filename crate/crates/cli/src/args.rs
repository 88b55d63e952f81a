use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lic_core::codec::{Activation, CodecKind};

#[derive(Parser, Debug)]
#[command(name = "lic", version, about = "Learned image compression runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded stand-in weights and print their digest.
    Genweights(GenArgs),
    /// Encode one image into a frame file.
    Encode(EncodeArgs),
    /// Decode one frame file into an image.
    Decode(DecodeArgs),
    /// Measure pipelined (or serial) encoder and decoder throughput.
    Bench(BenchArgs),
    /// Encode a clip and stream it to a receiver.
    Send(SendArgs),
    /// Accept one stream, decode it and report stream health.
    Recv(RecvArgs),
}

/// Model selection. With `--weights`, the file decides every model field and
/// the model flags may only repeat what it says.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// factorized | hyper [default: factorized]
    #[arg(long)]
    pub codec: Option<CodecKind>,
    /// gdn | 1dn [default: gdn]
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Transform channels N [default: 128]
    #[arg(long = "conv-channels")]
    pub n: Option<usize>,
    /// Bottleneck channels M [default: 192]
    #[arg(long = "bottleneck-channels")]
    pub m: Option<usize>,
    /// Symbol support bound L [default: 32]
    #[arg(long = "support-bound")]
    pub bound: Option<i32>,
    /// Seed for generated weights when no weight file is given.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Scale on the generated conv weight range.
    #[arg(long, default_value_t = 1.0)]
    pub init_gain: f32,
    /// Run conv and normalization kernels on one thread.
    #[arg(long)]
    pub sequential_kernels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 3)]
    pub entropy_workers: usize,
    #[arg(long, default_value_t = 4)]
    pub queue_capacity: usize,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub pool: Toggle,
}

#[derive(Args, Debug, Clone)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// PPM image, or raw planar f32 (`.f32`/`.raw`, needs --height/--width).
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long)]
    pub input: PathBuf,
    /// `.ppm` writes PPM, anything else raw planar f32.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Fail with the verification exit code unless the recovered latent has
    /// this SHA-256 (hex).
    #[arg(long)]
    pub expect_latent_digest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    Encoder,
    Decoder,
    Both,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, conflicts_with = "seconds")]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub warmup: usize,
    /// Run every stage of a frame before starting the next.
    #[arg(long)]
    pub serial: bool,
    #[arg(long, value_enum, default_value_t = Direction::Both)]
    pub direction: Direction,
    /// Append the key=value records to this file.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SendArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long)]
    pub connect: SocketAddr,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, conflicts_with = "seconds")]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Repeat this PPM instead of the synthetic clip.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Skip frames once more than one period behind schedule.
    #[arg(long)]
    pub drop_late: bool,
    /// Write one hex latent digest per sent frame.
    #[arg(long)]
    pub latent_digests: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SinkKind {
    Ppm,
    Raw,
}

#[derive(Args, Debug)]
pub struct RecvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long)]
    pub listen: SocketAddr,
    /// Directory for decoded frames; nothing is written without it.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SinkKind::Ppm)]
    pub format: SinkKind,
    /// Fail with the verification exit code unless exactly this many frames
    /// arrive, in order, all decoded.
    #[arg(long)]
    pub expect_frames: Option<u64>,
    /// Write `sequence hex-digest` per decoded frame.
    #[arg(long)]
    pub latent_digests: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}
