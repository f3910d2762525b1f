//! The benchmark suite: scene list, execution, CSV rows and the text report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::pipeline::{run_pipeline, PipelineOutcome, RunConfig, StageTiming};
use crate::ply::{write_cloud, write_mesh, PlyFormat};
use crate::scene::{synth_scene, SceneSpec, ShapeSpec};
use crate::transform_json::{write_transform, TransformJson};
use groundmesh::Transformable;

/// Suite-wide scene parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub seed: u64,
    pub object_diagonal: f64,
    /// Noise sigma as a fraction of the object diagonal.
    pub noise_fraction: f64,
    pub outlier_fraction: f64,
    pub partial: bool,
    pub shapes: Vec<ShapeSpec>,
}

fn sphere_at(center: [f64; 3], radius: f64) -> ShapeSpec {
    ShapeSpec::Sphere { center, radius }
}

fn box_at(center: [f64; 3], half_extents: [f64; 3]) -> ShapeSpec {
    ShapeSpec::Box {
        center,
        half_extents,
    }
}

/// 25 shapes: 3 spheres, 6 boxes, 6 tori and 10 two-part unions placed at
/// generic offsets so that they have no rotational symmetry.
pub fn default_shapes() -> Vec<ShapeSpec> {
    let mut v = vec![ShapeSpec::sphere(); 3];
    for h in [
        [1.0, 0.6, 0.4],
        [1.0, 1.0, 0.3],
        [0.8, 0.5, 0.5],
        [1.0, 0.7, 0.2],
        [0.6, 0.6, 1.0],
        [1.0, 0.4, 0.3],
    ] {
        v.push(ShapeSpec::cuboid(h));
    }
    for (major, minor) in [(1.0, 0.3), (1.0, 0.45), (1.0, 0.2), (1.0, 0.35), (0.8, 0.4), (1.0, 0.25)] {
        v.push(ShapeSpec::torus(major, minor));
    }
    let unions = [
        (ShapeSpec::cuboid([0.8, 0.5, 0.4]), sphere_at([0.7, 0.35, 0.3], 0.5)),
        (ShapeSpec::cuboid([0.6, 0.6, 0.3]), sphere_at([-0.5, 0.2, 0.45], 0.4)),
        (ShapeSpec::cuboid([1.0, 0.3, 0.3]), sphere_at([0.9, -0.1, 0.2], 0.45)),
        (ShapeSpec::cuboid([0.5, 0.7, 0.5]), sphere_at([0.3, -0.6, -0.35], 0.5)),
        (ShapeSpec::torus(1.0, 0.3), sphere_at([0.8, 0.5, 0.4], 0.45)),
        (ShapeSpec::torus(0.9, 0.35), sphere_at([-0.3, 0.95, 0.2], 0.5)),
        (ShapeSpec::torus(1.0, 0.25), sphere_at([0.2, -0.4, 0.5], 0.4)),
        (ShapeSpec::cuboid([1.0, 0.3, 0.2]), box_at([0.6, 0.4, 0.25], [0.3, 0.6, 0.35])),
        (ShapeSpec::cuboid([0.7, 0.7, 0.15]), box_at([-0.3, 0.25, 0.35], [0.2, 0.3, 0.4])),
        (ShapeSpec::cuboid([0.8, 0.4, 0.4]), box_at([0.1, 0.55, -0.2], [0.5, 0.3, 0.25])),
    ];
    v.extend(unions.into_iter().map(|(a, b)| ShapeSpec::union(a, b)));
    v
}

impl SuiteSpec {
    /// Noise 0.5% of a 15 cm diagonal, partial views, no outliers.
    pub fn default_suite(seed: u64) -> Self {
        Self {
            seed,
            object_diagonal: 0.15,
            noise_fraction: 0.005,
            outlier_fraction: 0.0,
            partial: true,
            shapes: default_shapes(),
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<Self> {
        match name {
            "default" => Ok(Self::default_suite(seed)),
            "clean" => Ok(Self {
                noise_fraction: 0.0,
                ..Self::default_suite(seed)
            }),
            other => Err(BenchError::Invalid(format!(
                "unknown suite '{other}', expected default or clean"
            ))),
        }
    }

    /// Seed of scene `index`: first draw of stream `index` of the suite seed.
    pub fn scene_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng.random()
    }

    pub fn scenes(&self) -> Vec<SceneSpec> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| SceneSpec {
                object_diagonal: self.object_diagonal,
                noise_sigma: self.noise_fraction * self.object_diagonal,
                outlier_fraction: self.outlier_fraction,
                partial: self.partial,
                ..SceneSpec::new(shape.clone(), self.scene_seed(i))
            })
            .collect()
    }
}

/// One deterministic row of `results.csv`. Metric fields are empty when the
/// scene failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub index: usize,
    pub name: String,
    pub shape: String,
    pub seed: u64,
    pub rotation_ambiguous: bool,
    pub target_points: Option<usize>,
    pub gt_scale: Option<f64>,
    pub est_scale: Option<f64>,
    pub converged: bool,
    pub correspondences: Option<usize>,
    pub ransac_inliers: Option<usize>,
    pub final_inliers: Option<usize>,
    pub final_rmse_mm: Option<f64>,
    /// ADD-S for rotation-ambiguous shapes, ADD otherwise.
    pub pose_error_mm: Option<f64>,
    pub pose_error_pct_diag: Option<f64>,
    pub translation_error_mm: Option<f64>,
    pub scale_error_pct: Option<f64>,
    pub chamfer_mm: Option<f64>,
    pub fscore_pct: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub success: bool,
    pub error: String,
}

impl SceneRow {
    fn failed(index: usize, spec: &SceneSpec, error: String) -> Self {
        Self {
            index,
            name: scene_name(index, &spec.shape),
            shape: spec.shape.kind().into(),
            seed: spec.seed,
            rotation_ambiguous: spec.shape.rotation_ambiguous(),
            target_points: None,
            gt_scale: None,
            est_scale: None,
            converged: false,
            correspondences: None,
            ransac_inliers: None,
            final_inliers: None,
            final_rmse_mm: None,
            pose_error_mm: None,
            pose_error_pct_diag: None,
            translation_error_mm: None,
            scale_error_pct: None,
            chamfer_mm: None,
            fscore_pct: None,
            precision_pct: None,
            recall_pct: None,
            success: false,
            error,
        }
    }
}

/// Wall times of one scene, averaged over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTiming {
    pub index: usize,
    pub name: String,
    pub runs: Vec<StageTiming>,
}

impl SceneTiming {
    /// Mean over runs of the per-run total.
    pub fn mean_total_ms(&self) -> Option<f64> {
        (!self.runs.is_empty()).then(|| self.runs.iter().map(|r| r.total_ms()).sum::<f64>() / self.runs.len() as f64)
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

/// Aggregates recomputable from `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub failed: usize,
    pub succeeded: usize,
    pub success_rate_pct: f64,
    pub chamfer_mm: MeanStd,
    pub fscore_pct: MeanStd,
    /// Mean F-score counting failed scenes as zero.
    pub fscore_pct_all: f64,
    pub pose_error_pct_diag: MeanStd,
}

impl Summary {
    pub fn from_rows(rows: &[SceneRow]) -> Self {
        let collect = |f: fn(&SceneRow) -> Option<f64>| rows.iter().filter_map(f).collect::<Vec<f64>>();
        let succeeded = rows.iter().filter(|r| r.success).count();
        let fs = collect(|r| r.fscore_pct);
        Self {
            scenes: rows.len(),
            failed: rows.iter().filter(|r| !r.error.is_empty()).count(),
            succeeded,
            success_rate_pct: 100.0 * succeeded as f64 / rows.len().max(1) as f64,
            chamfer_mm: MeanStd::of(&collect(|r| r.chamfer_mm)),
            fscore_pct: MeanStd::of(&fs),
            fscore_pct_all: fs.iter().sum::<f64>() / rows.len().max(1) as f64,
            pose_error_pct_diag: MeanStd::of(&collect(|r| r.pose_error_pct_diag)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<SceneRow>,
    pub timings: Vec<SceneTiming>,
    pub summary: Summary,
}

pub fn scene_name(index: usize, shape: &ShapeSpec) -> String {
    format!("{index:02}_{}", shape.kind())
}

fn row_from(index: usize, spec: &SceneSpec, target_points: usize, gt_scale: f64, o: &PipelineOutcome) -> SceneRow {
    let r = &o.registration;
    SceneRow {
        target_points: Some(target_points),
        gt_scale: Some(gt_scale),
        est_scale: Some(r.result.transform.scale()),
        converged: r.result.converged,
        correspondences: Some(r.correspondences),
        ransac_inliers: r.ransac.map(|x| x.inlier_count),
        final_inliers: Some(r.result.inlier_count),
        final_rmse_mm: Some(1e3 * r.result.inlier_rmse),
        pose_error_mm: Some(1e3 * o.pose_error.distance),
        pose_error_pct_diag: Some(100.0 * o.pose_error.relative),
        translation_error_mm: Some(1e3 * o.pose_error.translation_error),
        scale_error_pct: Some(100.0 * o.pose_error.scale_error),
        chamfer_mm: Some(o.metrics.chamfer_mm),
        fscore_pct: Some(o.metrics.fscore_pct),
        precision_pct: Some(o.metrics.precision_pct),
        recall_pct: Some(o.metrics.recall_pct),
        success: o.success,
        error: String::new(),
        ..SceneRow::failed(index, spec, String::new())
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

/// Runs every scene (sequentially, so that stage timings are not
/// contaminated) and, when `out` is given, writes the artifacts.
///
/// Each scene is executed `runs` times; metrics come from the first run and
/// timings from all of them. Scene failures are recorded, never fatal.
pub fn run_suite(suite: &SuiteSpec, cfg: &RunConfig, runs: usize, out: Option<&Path>) -> Result<BenchReport> {
    if suite.shapes.is_empty() {
        return Err(BenchError::Invalid("suite has no scenes".into()));
    }
    if runs == 0 {
        return Err(BenchError::Invalid("run count must be positive".into()));
    }
    if let Some(dir) = out {
        create_dir(&dir.join("scenes"))?;
    }
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (index, spec) in suite.scenes().iter().enumerate() {
        let name = scene_name(index, &spec.shape);
        let mut timing = SceneTiming {
            index,
            name: name.clone(),
            runs: Vec::new(),
        };
        let scene = match synth_scene(spec) {
            Ok(s) => s,
            Err(e) => {
                rows.push(SceneRow::failed(index, spec, format!("scene: {e}")));
                timings.push(timing);
                continue;
            }
        };
        let mut first: Option<PipelineOutcome> = None;
        let mut error = None;
        for _ in 0..runs {
            match run_pipeline(&scene, cfg) {
                Ok(o) => {
                    timing.runs.push(o.timing.clone());
                    first.get_or_insert(o);
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let row = match (&first, error) {
            (Some(o), None) => row_from(index, spec, scene.target_cloud.len(), scene.gt_transform.scale(), o),
            (_, Some(e)) => SceneRow::failed(index, spec, e),
            (None, None) => unreachable!("runs > 0"),
        };
        if let Some(dir) = out {
            let sdir = dir.join("scenes").join(&name);
            create_dir(&sdir)?;
            write_cloud(&sdir.join("target.ply"), &scene.target_cloud, PlyFormat::BinaryLittleEndian)?;
            write_transform(&sdir.join("gt_transform.json"), &scene.gt_transform)?;
            if let Some(o) = &first {
                let est = o.registration.result.transform;
                write_transform(&sdir.join("transform.json"), &est)?;
                write_mesh(
                    &sdir.join("registered.ply"),
                    &scene.source_mesh.transformed(&est),
                    PlyFormat::BinaryLittleEndian,
                )?;
            }
        }
        rows.push(row);
        timings.push(timing);
    }
    let summary = Summary::from_rows(&rows);
    let report = BenchReport {
        rows,
        timings,
        summary,
    };
    if let Some(dir) = out {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

pub fn rows_to_csv(rows: &[SceneRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::Invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SceneRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| BenchError::Invalid(format!("results CSV: {e}")))
}

pub fn timings_to_csv(timings: &[SceneTiming]) -> String {
    let mut s = String::from("index,name,run,stage,ms,share_pct\n");
    for t in timings {
        for (run, st) in t.runs.iter().enumerate() {
            for (stage, ms, share) in &st.stages {
                let _ = writeln!(s, "{},{},{run},{stage},{ms:.4},{share:.4}", t.index, t.name);
            }
        }
    }
    s
}

/// Mean per-stage time over all scenes and runs, in first-seen stage order.
pub fn stage_breakdown(timings: &[SceneTiming]) -> StageTiming {
    let mut order: Vec<String> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for st in timings.iter().flat_map(|t| &t.runs) {
        n += 1;
        for (stage, ms, _) in &st.stages {
            match order.iter().position(|s| s == stage) {
                Some(i) => sums[i] += ms,
                None => {
                    order.push(stage.clone());
                    sums.push(*ms);
                }
            }
        }
    }
    let n = n.max(1) as f64;
    StageTiming::from_millis(order.into_iter().zip(sums).map(|(s, t)| (s, t / n)).collect())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

fn fmt_ms(m: &MeanStd, prec: usize) -> String {
    format!("{:.prec$} ± {:.prec$}", m.mean, m.std)
}

/// Human-readable per-scene table, aggregate rows and stage breakdown.
pub fn render_report(report: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>10} {:>12} {:>8}",
        "scene", "time (ms)", "CD (mm)", "F (%)", "ADD (%diag)", "success"
    );
    for (row, t) in report.rows.iter().zip(&report.timings) {
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>10} {:>10} {:>12} {:>8}{}",
            row.name,
            fmt_opt(t.mean_total_ms(), 1),
            fmt_opt(row.chamfer_mm, 3),
            fmt_opt(row.fscore_pct, 2),
            fmt_opt(row.pose_error_pct_diag, 3),
            if row.success { "yes" } else { "no" },
            if row.error.is_empty() {
                String::new()
            } else {
                format!("  [{}]", row.error)
            }
        );
    }
    let times: Vec<f64> = report.timings.iter().filter_map(|t| t.mean_total_ms()).collect();
    let sm = &report.summary;
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:>20} {:>20} {:>20}", "", "Time (ms)", "CD (mm)", "F-Score (%)");
    let _ = writeln!(
        s,
        "{:<24} {:>20} {:>20} {:>20}",
        "mean ± std",
        fmt_ms(&MeanStd::of(&times), 1),
        fmt_ms(&sm.chamfer_mm, 3),
        fmt_ms(&sm.fscore_pct, 2)
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "success (pose error < 2% diag): {}/{} ({:.1}%), failed runs: {}",
        sm.succeeded, sm.scenes, sm.success_rate_pct, sm.failed
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:>12} {:>10}", "stage", "mean (ms)", "share (%)");
    let breakdown = stage_breakdown(&report.timings);
    for (stage, ms, share) in &breakdown.stages {
        let _ = writeln!(s, "{stage:<16} {ms:>12.2} {share:>10.2}");
    }
    let _ = writeln!(s, "{:<16} {:>12.2} {:>10.2}", "total", breakdown.total_ms(), breakdown.share_sum());
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub fn write_outputs(report: &BenchReport, dir: &Path) -> Result<()> {
    write_text(&dir.join("results.csv"), &rows_to_csv(&report.rows)?)?;
    write_text(&dir.join("timings.csv"), &timings_to_csv(&report.timings))?;
    write_text(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&report.summary).expect("summary serializes") + "\n"),
    )?;
    write_text(&dir.join("report.txt"), &render_report(report))
}

/// Transform of a finished scene as written to its `transform.json`.
pub fn scene_transform_json(dir: &Path, name: &str) -> Result<TransformJson> {
    let path = dir.join("scenes").join(name).join("transform.json");
    let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::parse(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_has_25_distinct_seeds() {
        let s = SuiteSpec::default_suite(42);
        let scenes = s.scenes();
        assert_eq!(scenes.len(), 25);
        let mut seeds: Vec<u64> = scenes.iter().map(|x| x.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 25);
        assert_eq!(s.scene_seed(3), SuiteSpec::default_suite(42).scene_seed(3));
    }

    #[test]
    fn mean_std_examples() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let spec = SceneSpec::new(ShapeSpec::sphere(), 9);
        let mut a = SceneRow::failed(0, &spec, "boom, with comma".into());
        a.chamfer_mm = Some(0.1 + 0.2);
        let b = SceneRow::failed(1, &spec, String::new());
        let text = rows_to_csv(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(rows_from_csv(&text).unwrap(), vec![a, b]);
    }
}
