use crate::policies::PolicySpec;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "simeval", version, about = "Splat-based real-to-sim scene building and policy evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a splat scene to posed images.
    Reconstruct(ReconstructArgs),
    /// Fuse rendered depth into a TSDF and extract a mesh.
    ExtractMesh(ExtractMeshArgs),
    /// Align a reconstruction to the board frame with a similarity transform.
    Align(AlignArgs),
    /// Split robot splats by link and write an articulated bundle.
    Articulate(ArticulateArgs),
    /// Resolve a scene descriptor, check it, and optionally hash and preview it.
    Compose(ComposeArgs),
    /// Run policies on scenes and write episode records and scores.
    Evaluate(EvaluateArgs),
    /// Open-loop replay error of a recorded trajectory.
    ReplayAnalyze(ReplayArgs),
    /// Faithfulness report from real and sim score tables.
    Metrics(MetricsArgs),
    /// Co-training datasets.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Scene-composition HTTP service.
    Serve(ServeArgs),
    /// Serve a policy over the `/act` protocol.
    ServePolicy(ServePolicyArgs),
    /// Write the bundled synthetic inputs (images, robot, assets, scene).
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Directory of `<camera id>.png` images.
    #[arg(long)]
    pub images: PathBuf,
    /// Camera pose file.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_dist: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_norm: f64,
    /// Starting scene; random disks around the cameras' focus otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Disk count for the random start.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame label written to the output.
    #[arg(long, default_value = "recon")]
    pub frame: String,
}

#[derive(Debug, Args)]
pub struct ExtractMeshArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub voxel: f64,
    #[arg(long, default_value_t = 0.02)]
    pub tau: f64,
    /// `.obj` or `.ply`.
    #[arg(long)]
    pub out: PathBuf,
    /// Volume bounds `minx,miny,minz,maxx,maxy,maxz`; splat extent plus 2τ otherwise.
    #[arg(long, value_delimiter = ',', num_args = 6)]
    pub bounds: Option<Vec<f64>>,
    /// Also write the raw TSDF grid here (with a `.txt` header beside it).
    #[arg(long)]
    pub tsdf_dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub board_coords: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the aligned camera poses here.
    #[arg(long)]
    pub poses_out: Option<PathBuf>,
    /// Mesh to carry along into the board frame.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, requires = "mesh")]
    pub mesh_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArticulateArgs {
    #[arg(long)]
    pub robot: PathBuf,
    #[arg(long)]
    pub splats: PathBuf,
    /// Whitespace- or comma-separated joint values at scan time.
    #[arg(long)]
    pub qscan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `<link>.obj` link-local meshes.
    #[arg(long)]
    pub link_meshes: Option<PathBuf>,
    /// Splats farther than this from every link are dropped.
    #[arg(long, default_value_t = simeval_core::articulation::DEFAULT_CUTOFF)]
    pub cutoff: f64,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Scene descriptor.
    #[arg(long)]
    pub spec: PathBuf,
    /// Background directory overriding the descriptor's path.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Robot bundle overriding the descriptor's path.
    #[arg(long)]
    pub robot: Option<PathBuf>,
    /// Root holding one directory per asset id.
    #[arg(long)]
    pub objects: Option<PathBuf>,
    /// Only check; write nothing.
    #[arg(long)]
    pub validate: bool,
    /// Write the descriptor with fresh content hashes here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render every camera at the scan pose into this directory.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scene descriptors; repeat for several environments.
    #[arg(long, required = true)]
    pub scene: Vec<PathBuf>,
    /// Policies; repeat to compare several.
    #[arg(long, required = true)]
    pub policy: Vec<PolicySpec>,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 400)]
    pub max_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Policy request timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Execute this many actions of each chunk before asking again.
    #[arg(long)]
    pub replan: Option<usize>,
    /// Standard deviation of per-step joint disturbances (rad).
    #[arg(long, default_value_t = 0.0)]
    pub joint_noise: f64,
    #[arg(long, default_value_t = 1.5)]
    pub v_max: f64,
    #[arg(long)]
    pub save_renders: bool,
    /// `source` column of the written scores.
    #[arg(long, default_value = "sim")]
    pub source: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub recording: PathBuf,
    #[arg(long, default_value = "position")]
    pub mode: simeval_core::eval::ReplayMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    pub v_max: f64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Score CSVs; duplicates across files must agree.
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = simeval_core::metrics::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Roll out a policy with renders and store the episodes.
    Write(DatasetWriteArgs),
    /// Summarize a dataset.
    Inspect {
        #[arg(long)]
        root: PathBuf,
    },
    /// Draw a mixed stream and report its statistics.
    Sample(DatasetSampleArgs),
}

#[derive(Debug, Args)]
pub struct DatasetWriteArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub policy: PolicySpec,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value_t = 400)]
    pub max_steps: usize,
    #[arg(long, default_value = "sim")]
    pub source: String,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
}

#[derive(Debug, Args)]
pub struct DatasetSampleArgs {
    /// Pretraining dataset.
    #[arg(long)]
    pub pre: Option<PathBuf>,
    /// Simulation dataset.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Also write the first batches' indices as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Descriptor sessions start from (background, robot, cameras, rubric).
    #[arg(long)]
    pub template: PathBuf,
    /// Asset library root; the template's assets are always available.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Session drafts are autosaved here.
    #[arg(long)]
    pub sessions_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServePolicyArgs {
    /// `zero`, `scripted:<skill>` or `replay:<file>`.
    #[arg(long)]
    pub policy: PolicySpec,
    /// Scene the policy acts in; kept in step with the client's actions.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
    /// Episode seed of the first episode; later episodes count up.
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Image size of the scene cameras.
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 48)]
    pub height: u32,
}
