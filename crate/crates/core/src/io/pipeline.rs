//! Staged batch pipeline: simulate → compress → image → suppress → evaluate.
//!
//! Every stage reads its inputs from, and writes its outputs to, the output
//! directory, so any stage can be rerun on its own.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::{self, EvaluationError, SuppressionReport};
use crate::imaging::{self, ComplexImage, ImageGrid, ImagingError, RangeProfileSet};
use crate::io::array::{self, ArrayFileError, AxisMeta, ComplexArray};
use crate::io::config::{ConfigError, PipelineConfig};
use crate::io::export::{self, ExportError};
use crate::model::{self, Aperture, EchoData, ModelError, RadarParams, Saturation, Scene};
use crate::suppression::{self, SuppressionError};
use crate::CMatrix;

pub const ECHO_FILE: &str = "echo.nfsc";
pub const PROFILES_FILE: &str = "profiles.nfsc";
pub const RAW_IMAGE_FILE: &str = "image_raw.nfsc";
pub const TARGET_FILE: &str = "target_x.nfsc";
pub const INTERFERENCE_FILE: &str = "interference_c.nfsc";
pub const SUPPRESS_META_FILE: &str = "suppress_meta.json";
pub const REFERENCE_FILE: &str = "reference.nfsc";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".nfsar.lock";

/// Offset applied to the seed for the target-free background acquisition.
pub const BACKGROUND_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` needs {path}, which does not exist")]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("output directory is locked by {0}; remove it if no other run is active")]
    Locked(PathBuf),
    #[error("unknown stage `{0}` (expected simulate, compress, image, suppress, evaluate)")]
    UnknownStage(String),
    #[error("{what} in {path} has extents {got:?}, expected {expected:?}")]
    ArtifactShape {
        what: &'static str,
        path: PathBuf,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Model(#[from] ModelError),
    #[error("imaging: {0}")]
    Imaging(#[from] ImagingError),
    #[error("suppression: {0}")]
    Suppression(#[from] SuppressionError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("array file: {0}")]
    Array(#[from] ArrayFileError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Compress,
    Image,
    Suppress,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Simulate,
        Stage::Compress,
        Stage::Image,
        Stage::Suppress,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Compress => "compress",
            Stage::Image => "image",
            Stage::Suppress => "suppress",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Parses a comma-separated list; the result is in execution order without repeats.
    pub fn parse_list(list: &str) -> Result<Vec<Stage>> {
        let mut stages = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Stage::from_str)
            .collect::<Result<Vec<_>>>()?;
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::UnknownStage(s.to_string()))
    }
}

/// Which stages to run, and optional input overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub stages: Vec<Stage>,
    /// Image consumed by `suppress` instead of the raw image in the output directory.
    pub input_image: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stages: Stage::ALL.to_vec(),
            input_image: None,
        }
    }
}

/// Files written by one run, in write order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    pub report: Option<SuppressionReport>,
}

/// Per-run solver diagnostics written by the suppress stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRunMeta {
    pub mu: f64,
    pub rho: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressMeta {
    pub input: String,
    pub unfolding: suppression::Unfolding,
    pub runs: Vec<SolverRunMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    /// Array extents for `NFSC` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<Vec<usize>>,
    /// `NFSC` format version for array files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, file: &str) -> Option<&ManifestEntry> {
        self.artifacts.iter().find(|e| e.file == file)
    }
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(path))
            }
            Err(e) => Err(io_error(&path)(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Echo of `scene` after the receiver transfer function.
pub fn acquire(
    radar: &RadarParams,
    aperture: &Aperture,
    scene: &Scene,
    saturation: &Saturation,
    seed: u64,
) -> Result<EchoData> {
    let echo = model::synthesize_echo(radar, aperture, scene, seed)?;
    Ok(model::apply_saturation(&echo, saturation)?)
}

/// Back-projects onto a 2D or 3D grid, whichever `grid` is.
pub fn form_image(profiles: &RangeProfileSet, grid: &ImageGrid) -> Result<ComplexImage> {
    let (image, outside) = match grid.dimensionality() {
        3 => imaging::backproject_3d_counted(profiles, grid)?,
        _ => imaging::backproject_2d_counted(profiles, grid)?,
    };
    if outside > 0 {
        warn!("{outside} voxel/position pairs fell outside the range swath");
    }
    Ok(image)
}

/// In-memory acquisition, range compression and back-projection of one scene.
pub fn image_scene(config: &PipelineConfig, scene: &Scene, seed: u64) -> Result<ComplexImage> {
    let echo = acquire(
        &config.radar,
        &config.aperture,
        scene,
        &config.saturation,
        seed,
    )?;
    let profiles = imaging::range_compress(&echo, config.oversample)?;
    form_image(&profiles, &config.image_grid())
}

/// Target-free reference image used for background subtraction.
pub fn background_image(config: &PipelineConfig) -> Result<ComplexImage> {
    image_scene(
        config,
        &config.scene.background(),
        config.seed.wrapping_add(BACKGROUND_SEED_OFFSET),
    )
}

fn matrix_to_array(m: &CMatrix, axes: [AxisMeta; 2]) -> ComplexArray {
    let values: Vec<_> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    ComplexArray::from_complex(vec![m.nrows(), m.ncols()], axes.to_vec(), &values)
        .expect("matrix shape is consistent")
}

fn array_to_matrix(a: &ComplexArray) -> CMatrix {
    CMatrix::from_row_slice(a.extents[0], a.extents[1], &a.to_complex())
}

fn require(stage: Stage, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn check_extents(
    what: &'static str,
    path: &Path,
    expected: Vec<usize>,
    got: &[usize],
) -> Result<()> {
    if expected != got {
        return Err(PipelineError::ArtifactShape {
            what,
            path: path.to_path_buf(),
            expected,
            got: got.to_vec(),
        });
    }
    Ok(())
}

fn read_image_checked(stage: Stage, path: &Path, grid: Option<&ImageGrid>) -> Result<ComplexImage> {
    require(stage, path)?;
    let image = array::read_image(path)?;
    if let Some(g) = grid {
        check_extents("image", path, g.shape(), &image.shape())?;
    }
    Ok(image)
}

/// Runs the selected stages in order, then refreshes the manifest.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_error(out))?;
    let _lock = DirLock::acquire(out)?;

    let mut stages = options.stages.clone();
    stages.sort();
    stages.dedup();

    let grid = config.image_grid();
    let mut summary = RunSummary::default();
    let written = |p: PathBuf| {
        info!("wrote {}", p.display());
        p
    };
    for stage in stages {
        info!("stage {stage}");
        match stage {
            Stage::Simulate => {
                let echo = acquire(
                    &config.radar,
                    &config.aperture,
                    &config.scene,
                    &config.saturation,
                    config.seed,
                )?;
                let path = out.join(ECHO_FILE);
                let axes = [
                    AxisMeta {
                        start: config.radar.f0,
                        spacing: config.radar.delta_f,
                    },
                    AxisMeta::default(),
                ];
                array::write_array(&path, &matrix_to_array(&echo.samples, axes))?;
                summary.written.push(written(path));
            }
            Stage::Compress => {
                let path = out.join(ECHO_FILE);
                require(stage, &path)?;
                let a = array::read_array(&path)?;
                let expected = vec![config.radar.num_freq, config.aperture.slow_time_count()];
                check_extents("echo", &path, expected, &a.extents)?;
                let echo = EchoData::new(array_to_matrix(&a), config.radar, config.aperture)?;
                let profiles = imaging::range_compress(&echo, config.oversample)?;
                let path = out.join(PROFILES_FILE);
                let axes = [
                    AxisMeta {
                        start: 0.0,
                        spacing: profiles.tau_spacing(),
                    },
                    AxisMeta::default(),
                ];
                array::write_array(&path, &matrix_to_array(&profiles.profiles, axes))?;
                summary.written.push(written(path));
            }
            Stage::Image => {
                let path = out.join(PROFILES_FILE);
                require(stage, &path)?;
                let a = array::read_array(&path)?;
                let expected = vec![
                    config.radar.num_freq * config.oversample,
                    config.aperture.slow_time_count(),
                ];
                check_extents("range profiles", &path, expected, &a.extents)?;
                let profiles = RangeProfileSet::new(
                    array_to_matrix(&a),
                    config.oversample,
                    config.radar,
                    config.aperture,
                )?;
                let image = form_image(&profiles, &grid)?;
                let path = out.join(RAW_IMAGE_FILE);
                array::write_image(&path, &image)?;
                summary.written.push(written(path));
            }
            Stage::Suppress => {
                let input = options
                    .input_image
                    .clone()
                    .unwrap_or_else(|| out.join(RAW_IMAGE_FILE));
                let image = read_image_checked(stage, &input, None)?;
                let result = suppression::decompose_image(&image, &config.solver)?;
                for (i, run) in result.runs.iter().enumerate() {
                    info!(
                        "solver run {i}: {} iterations, converged = {}, mu = {:.4e}, rho = {:.4e}",
                        run.iterations_run, run.converged, run.mu, run.rho
                    );
                }
                let x_path = out.join(TARGET_FILE);
                array::write_image(&x_path, &result.target)?;
                summary.written.push(written(x_path));
                let c_path = out.join(INTERFERENCE_FILE);
                array::write_image(&c_path, &result.interference)?;
                summary.written.push(written(c_path));

                let meta = SuppressMeta {
                    // Relative to the output directory when possible, so the
                    // metadata does not depend on where the run lives.
                    input: input
                        .strip_prefix(out)
                        .unwrap_or(&input)
                        .display()
                        .to_string(),
                    unfolding: config.solver.unfolding,
                    runs: result
                        .runs
                        .iter()
                        .map(|r| SolverRunMeta {
                            mu: r.mu,
                            rho: r.rho,
                            iterations_run: r.iterations_run,
                            converged: r.converged,
                            objective_trace: r.objective_trace.clone(),
                        })
                        .collect(),
                };
                let meta_path = out.join(SUPPRESS_META_FILE);
                let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
                fs::write(&meta_path, json).map_err(io_error(&meta_path))?;
                summary.written.push(written(meta_path));
            }
            Stage::Evaluate => {
                let raw = read_image_checked(stage, &out.join(RAW_IMAGE_FILE), Some(&grid))?;
                let target = read_image_checked(stage, &out.join(TARGET_FILE), Some(&grid))?;
                let background = background_image(config)?;
                let reference = evaluation::background_subtract(&raw, &background)?;
                let ref_path = out.join(REFERENCE_FILE);
                array::write_image(&ref_path, &reference)?;
                summary.written.push(written(ref_path));

                let positions: Vec<_> = config.scene.targets.iter().map(|t| t.position).collect();
                let report = evaluation::suppression_metrics(
                    &raw,
                    &target,
                    &reference,
                    &positions,
                    config.evaluation.guard_cells,
                )?;
                let path = out.join(REPORT_FILE);
                fs::write(&path, report.to_key_value()).map_err(io_error(&path))?;
                summary.written.push(written(path));
                let path = out.join(REPORT_CSV_FILE);
                let csv = format!("{}\n{}\n", report.csv_header(), report.to_csv_row());
                fs::write(&path, csv).map_err(io_error(&path))?;
                summary.written.push(written(path));

                let slice = Some(config.evaluation.export_slice);
                let floor = config.evaluation.floor_db;
                let mut exports = vec![
                    ("image_raw_db", raw),
                    ("target_x_db", target),
                    ("reference_db", reference),
                ];
                let c_path = out.join(INTERFERENCE_FILE);
                if c_path.exists() {
                    exports.push(("interference_c_db", array::read_image(&c_path)?));
                }
                for (stem, image) in exports {
                    let stem = out.join(stem);
                    export::export_db_image(&image, floor, slice, &stem)?;
                    summary.written.push(written(stem.with_extension("pgm")));
                    summary.written.push(written(stem.with_extension("csv")));
                }
                summary.report = Some(report);
            }
        }
    }

    let manifest = build_manifest(config)?;
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(io_error(&path))?;
    summary.written.push(written(path));
    Ok(summary)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Manifest over every known artifact present in the output directory.
pub fn build_manifest(config: &PipelineConfig) -> Result<Manifest> {
    let out = &config.output_dir;
    let arrays = [
        ECHO_FILE,
        PROFILES_FILE,
        RAW_IMAGE_FILE,
        TARGET_FILE,
        INTERFERENCE_FILE,
        REFERENCE_FILE,
    ];
    let others = [SUPPRESS_META_FILE, REPORT_FILE, REPORT_CSV_FILE];
    let mut artifacts = Vec::new();
    for name in arrays.iter().chain(&others) {
        let path = out.join(name);
        if !path.exists() {
            continue;
        }
        let (extents, format_version) = if arrays.contains(name) {
            (
                Some(array::read_array(&path)?.extents),
                Some(array::VERSION),
            )
        } else {
            (None, None)
        };
        artifacts.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_file(&path)?,
            extents,
            format_version,
        });
    }
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        artifacts,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists() {
        assert_eq!(
            Stage::parse_list("evaluate, simulate,simulate").unwrap(),
            vec![Stage::Simulate, Stage::Evaluate]
        );
        assert!(matches!(
            Stage::parse_list("simulate,bogus"),
            Err(PipelineError::UnknownStage(s)) if s == "bogus"
        ));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        {
            let _held = DirLock::acquire(dir.path()).unwrap();
            assert!(matches!(
                DirLock::acquire(dir.path()),
                Err(PipelineError::Locked(_))
            ));
        }
        assert!(!dir.path().join(LOCK_FILE).exists());
        DirLock::acquire(dir.path()).unwrap();
    }
}
