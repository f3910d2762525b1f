//! Command-line interface. Exit codes: 0 success, 2 invalid input, 3
//! registration not converged, 4 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundmesh::depth::median_scale_align;
use groundmesh::metrics::{compare_meshes, MetricsConfig};
use groundmesh::registration::{register_object_with, IcpConfig, PipelineConfig, RansacConfig};
use groundmesh::sdf::{dense_decode, hierarchical_decode, marching_cubes, HierarchicalConfig};
use groundmesh::Transformable;
use serde_json::json;

use crate::depth_io::{read_depth, read_mask, write_depth};
use crate::error::{BenchError, Result};
use crate::pipeline::RunConfig;
use crate::ply::{read_cloud, read_mesh, write_cloud, write_mesh, PlyFormat};
use crate::scene::{decode_domain, synth_scene, SceneSpec, ShapeSpec};
use crate::suite::{render_report, run_suite, SuiteSpec};
use crate::transform_json::{read_transform, write_transform};

#[derive(Debug, Parser)]
#[command(name = "groundmesh", version, about = "Mesh registration, SDF decoding and evaluation tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic scene generation.
    Scene {
        #[command(subcommand)]
        command: SceneCommand,
    },
    /// Register a canonical mesh to a sensor-frame point cloud.
    Register(RegisterArgs),
    /// Decode an analytic SDF to a mesh.
    Decode(DecodeArgs),
    /// Depth raster tools.
    Depth {
        #[command(subcommand)]
        command: DepthCommand,
    },
    /// Chamfer distance and F-score between a mesh and a posed reference.
    Eval(EvalArgs),
    /// Run a benchmark suite.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Write source.ply, target.ply, gt_transform.json and scene.json.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeName {
    Sphere,
    Box,
    Torus,
    Union,
}

impl ShapeName {
    fn spec(self) -> ShapeSpec {
        let name = self.to_possible_value().expect("no skipped variants");
        ShapeSpec::from_name(name.get_name()).expect("every variant is a known shape")
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeName,
    /// Object bounding-box diagonal, meters.
    #[arg(long, default_value_t = 0.15)]
    pub diag: f64,
    /// Gaussian noise sigma, meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of target points replaced by outliers.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    /// Keep only the camera-facing half of the surface.
    #[arg(long)]
    pub partial: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Canonical mesh (PLY).
    #[arg(long)]
    pub source: PathBuf,
    /// Sensor-frame point cloud (PLY).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub ransac_iters: usize,
    /// RANSAC inlier threshold, meters (default 1.5 voxels).
    #[arg(long)]
    pub inlier_thresh: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub icp_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Downsampling voxel edge, meters.
    #[arg(long, default_value_t = 0.005)]
    pub voxel: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeMode {
    Dense,
    Hier,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeName,
    #[arg(long, default_value_t = 384)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value_t = DecodeMode::Hier)]
    pub mode: DecodeMode,
    /// Coarse resolution for hierarchical mode (default resolution / 8).
    #[arg(long)]
    pub coarse: Option<usize>,
    /// Refinement band half-width, in voxel diagonals.
    #[arg(long, default_value_t = 1.5)]
    pub band: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DepthCommand {
    /// Scale predicted depth so its in-mask median matches the sensor's.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub sensor: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mesh, sensor frame.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference mesh, canonical frame.
    #[arg(long)]
    pub gt: PathBuf,
    /// Pose applied to the reference mesh.
    #[arg(long)]
    pub gt_transform: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub tau: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `default`, or `clean` for the noise-free variant.
    #[arg(long, default_value = "default")]
    pub suite: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Pipeline repetitions per scene for timing.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n";
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        object_diagonal: a.diag,
        noise_sigma: a.noise,
        outlier_fraction: a.outliers,
        partial: a.partial,
        ..SceneSpec::new(a.shape.spec(), a.seed)
    };
    let scene = synth_scene(&spec)?;
    create_dir(&a.out)?;
    write_mesh(&a.out.join("source.ply"), &scene.source_mesh, PlyFormat::BinaryLittleEndian)?;
    write_cloud(&a.out.join("target.ply"), &scene.target_cloud, PlyFormat::BinaryLittleEndian)?;
    write_transform(&a.out.join("gt_transform.json"), &scene.gt_transform)?;
    let v = scene.view_direction;
    write_json(
        &a.out.join("scene.json"),
        &json!({
            "spec": spec,
            "view_direction": [v.x, v.y, v.z],
            "target_points": scene.target_cloud.len(),
            "inlier_points": scene.inlier_count,
            "retained_fraction": scene.retained_fraction,
        }),
    )?;
    println!(
        "{} target points ({:.1}% of samples kept), scale {:.6}",
        scene.target_cloud.len(),
        100.0 * scene.retained_fraction,
        scene.gt_transform.scale()
    );
    Ok(())
}

fn register(a: &RegisterArgs) -> Result<()> {
    let mesh = read_mesh(&a.source)?;
    let target = read_cloud(&a.target)?;
    let mut cfg = PipelineConfig::for_voxel(a.voxel);
    cfg.ransac = RansacConfig {
        max_iterations: a.ransac_iters,
        seed: a.seed,
        ..RansacConfig::new(a.inlier_thresh.unwrap_or(1.5 * a.voxel))
    };
    cfg.icp = IcpConfig {
        max_iterations: a.icp_iters,
        ..IcpConfig::new(3.0 * a.voxel)
    };
    cfg.ransac.validate()?;
    cfg.icp.validate()?;
    let out = register_object_with(&mesh, &target, &cfg)?;
    write_transform(&a.out, &out.result.transform)?;
    for r in &out.trace {
        eprintln!("{:<13} {:>9.2} ms  {}", r.stage.name(), r.elapsed.as_secs_f64() * 1e3, r.note);
    }
    let res = &out.result;
    println!(
        "scale {:.6}, {} inliers, rmse {:.3e} m, converged {}",
        res.transform.scale(),
        res.inlier_count,
        res.inlier_rmse,
        res.converged
    );
    if res.converged {
        Ok(())
    } else {
        Err(BenchError::NotConverged)
    }
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let oracle = a.shape.spec().to_oracle()?;
    let bounds = decode_domain(&oracle)?;
    let (grid, stats) = match a.mode {
        DecodeMode::Dense => {
            if a.coarse.is_some() {
                return Err(BenchError::Invalid("--coarse applies to hierarchical mode only".into()));
            }
            dense_decode(&oracle, a.resolution, &bounds)?
        }
        DecodeMode::Hier => {
            let cfg = HierarchicalConfig {
                coarse_resolution: a.coarse,
                band_halfwidth_voxels: a.band,
                ..HierarchicalConfig::default()
            };
            hierarchical_decode(&oracle, a.resolution, &bounds, &cfg)?
        }
    };
    let mesh = marching_cubes(&grid, 0.0);
    write_mesh(&a.out, &mesh, PlyFormat::BinaryLittleEndian)?;
    let summary = json!({
        "mode": match a.mode { DecodeMode::Dense => "dense", DecodeMode::Hier => "hier" },
        "resolution": a.resolution,
        "queries_issued": stats.queries_issued,
        "dense_equivalent": stats.dense_equivalent,
        "reduction": stats.reduction,
        "wall_time_ms": stats.wall_time.as_secs_f64() * 1e3,
        "surface_found": stats.surface_found,
        "vertices": mesh.vertices().len(),
        "faces": mesh.faces().len(),
    });
    if let Some(p) = &a.stats {
        write_json(p, &summary)?;
    }
    println!(
        "{} queries of {} ({:.2}% fewer), {} faces",
        stats.queries_issued,
        stats.dense_equivalent,
        100.0 * stats.reduction,
        mesh.faces().len()
    );
    Ok(())
}

fn align(a: &AlignArgs) -> Result<()> {
    let (sensor, intr) = read_depth(&a.sensor)?;
    let (pred, _) = read_depth(&a.pred)?;
    let mask = read_mask(&a.mask)?;
    let out = median_scale_align(&sensor, &pred, &mask)?;
    write_depth(&a.out, &out.metric, &intr)?;
    println!("{}", out.scale);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let pred = read_mesh(&a.pred)?;
    let gt = read_mesh(&a.gt)?.transformed(&read_transform(&a.gt_transform)?);
    let cfg = MetricsConfig {
        fscore_threshold: a.tau,
        sample_count: a.samples,
        seed: a.seed,
    };
    let m = compare_meshes(&pred, &gt, &cfg)?;
    let out = json!({
        "chamfer_mm": m.chamfer_mm,
        "fscore_pct": m.fscore_pct,
        "precision_pct": m.precision_pct,
        "recall_pct": m.recall_pct,
        "tau": a.tau,
        "samples": a.samples,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("JSON values serialize"));
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let suite = SuiteSpec::by_name(&a.suite, a.seed)?;
    let cfg = RunConfig::default();
    let run = || run_suite(&suite, &cfg, a.runs, Some(&a.out));
    let report = match a.threads {
        Some(0) => return Err(BenchError::Invalid("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::Invalid(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    print!("{}", render_report(&report));
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Scene {
            command: SceneCommand::Synth(a),
        } => synth(a),
        Command::Register(a) => register(a),
        Command::Decode(a) => decode(a),
        Command::Depth {
            command: DepthCommand::Align(a),
        } => align(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}
