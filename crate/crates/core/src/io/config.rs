//! JSON pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::DEFAULT_GUARD_CELLS;
use crate::imaging::{GridAxis, ImageGrid, ImagingError};
use crate::model::{Aperture, ApertureKind, ModelError, RadarParams, Saturation, Scene};
use crate::suppression::{SolverConfig, SuppressionError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Offending field path of a validation error.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

fn default_oversample() -> usize {
    8
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("nfsar_out")
}

fn default_guard_cells() -> usize {
    DEFAULT_GUARD_CELLS
}

fn default_floor_db() -> f64 {
    -60.0
}

/// Which 2D view of a 3D image is exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSelector {
    /// Per range/azimuth cell, the largest magnitude over height.
    #[default]
    MaxProjection,
    /// A single height index.
    Height(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_guard_cells")]
    pub guard_cells: usize,
    /// Lower end of exported dB images.
    #[serde(default = "default_floor_db")]
    pub floor_db: f64,
    #[serde(default)]
    pub export_slice: SliceSelector,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            guard_cells: default_guard_cells(),
            floor_db: default_floor_db(),
            export_slice: SliceSelector::default(),
        }
    }
}

/// Complete description of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub radar: RadarParams,
    pub aperture: Aperture,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default)]
    pub saturation: Saturation,
    /// Imaging grid; derived from the scene and aperture when omitted.
    #[serde(default)]
    pub grid: Option<ImageGrid>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    /// Minimal config with defaults for every optional section.
    pub fn new(radar: RadarParams, aperture: Aperture, scene: Scene) -> Self {
        PipelineConfig {
            radar,
            aperture,
            scene,
            saturation: Saturation::None,
            grid: None,
            solver: SolverConfig::default(),
            oversample: default_oversample(),
            output_dir: default_output_dir(),
            seed: 0,
            evaluation: EvaluationConfig::default(),
        }
    }

    /// The explicit grid, or the default one.
    pub fn image_grid(&self) -> ImageGrid {
        self.grid
            .unwrap_or_else(|| default_grid(&self.radar, &self.aperture, &self.scene))
    }

    /// Checks every section; errors carry a dotted field path.
    pub fn validate(&self) -> Result<()> {
        fn model(prefix: &'static str) -> impl Fn(ModelError) -> ConfigError {
            move |e| match e.within(prefix) {
                ModelError::InvalidParameter { field, reason } => {
                    ConfigError::invalid(field, reason)
                }
                other => ConfigError::invalid(prefix, other.to_string()),
            }
        }
        self.radar.validate().map_err(model("radar"))?;
        self.aperture.validate().map_err(model("aperture"))?;
        self.scene.validate().map_err(model("scene"))?;
        self.saturation.validate().map_err(model("saturation"))?;

        let grid = self.image_grid();
        grid.validate().map_err(|e| match e {
            ImagingError::InvalidGrid { field, reason } => {
                ConfigError::invalid(format!("grid.{field}"), reason)
            }
            other => ConfigError::invalid("grid", other.to_string()),
        })?;
        let expected = match self.aperture.kind {
            ApertureKind::Linear => 2,
            ApertureKind::Planar => 3,
        };
        if grid.dimensionality() != expected {
            return Err(ConfigError::invalid(
                "grid",
                format!(
                    "a {:?} aperture images onto a {expected}D grid, got {}D",
                    self.aperture.kind,
                    grid.dimensionality()
                ),
            ));
        }

        self.solver.validate().map_err(|e| match e {
            SuppressionError::InvalidConfig { field, reason } => {
                ConfigError::invalid(format!("solver.{field}"), reason)
            }
            other => ConfigError::invalid("solver", other.to_string()),
        })?;
        if self.oversample < 1 {
            return Err(ConfigError::invalid("oversample", "must be >= 1"));
        }
        if !(self.evaluation.floor_db.is_finite() && self.evaluation.floor_db < 0.0) {
            return Err(ConfigError::invalid(
                "evaluation.floor_db",
                format!("must be finite and < 0, got {}", self.evaluation.floor_db),
            ));
        }
        if let SliceSelector::Height(o) = self.evaluation.export_slice {
            if grid.height.is_some_and(|h| o >= h.count) {
                return Err(ConfigError::invalid(
                    "evaluation.export_slice",
                    format!("height index {o} outside the grid"),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.grid = Some(self.image_grid());
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Parses and validates a config; the grid is resolved to an explicit value.
pub fn parse_config(text: &str, origin: &str) -> Result<PipelineConfig> {
    let mut config: PipelineConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    config.validate()?;
    config.grid = Some(config.image_grid());
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Grid used when a config omits one.
///
/// Spacing is a quarter of the range resolution on every axis. The range
/// axis spans the targets with 0.5 m margins, azimuth and height span the
/// aperture footprint.
pub fn default_grid(radar: &RadarParams, aperture: &Aperture, scene: &Scene) -> ImageGrid {
    let spacing = radar.c / (4.0 * radar.bandwidth());
    let axis = |lo: f64, hi: f64| {
        let count = ((hi - lo) / spacing).floor().max(0.0) as usize + 1;
        GridAxis::centered((lo + hi) / 2.0, spacing, count)
    };
    let (lo, hi) = if scene.targets.is_empty() {
        (0.5, 0.5 + radar.unambiguous_range().min(10.0))
    } else {
        scene
            .targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(t.position.y), hi.max(t.position.y))
            })
    };
    let range = axis((lo - 0.5).max(spacing), hi + 0.5);

    let first = aperture.position(0, 0);
    let last = aperture.position(aperture.azimuth_count - 1, aperture.height_count - 1);
    let azimuth = axis(first.x, last.x);
    match aperture.kind {
        ApertureKind::Linear => ImageGrid::two_d(range, azimuth),
        ApertureKind::Planar => ImageGrid::three_d(range, azimuth, axis(first.z, last.z)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "radar": {"f0": 9e9, "delta_f": 11718750.0, "num_freq": 256},
        "aperture": {"kind": "linear", "origin": [-2.5, 0.0, 0.0], "azimuth_count": 128, "azimuth_spacing": 0.03937007874015748},
        "scene": {"targets": [{"position": [0.0, 4.5, 0.0], "amplitude": 1.0}]}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL, "minimal").unwrap();
        assert_eq!(cfg.oversample, 8);
        assert_eq!(cfg.solver.alpha, 1.0);
        assert_eq!(cfg.solver.beta, 1.0);
        assert_eq!(cfg.solver.tol, 1e-6);
        assert_eq!(cfg.solver.max_iter, 500);
        assert!(cfg.solver.auto_weights);
        assert_eq!(cfg.saturation, Saturation::None);
        let grid = cfg.grid.unwrap();
        assert_eq!(grid.dimensionality(), 2);
        assert!((grid.range.spacing - 0.025).abs() < 1e-3);
        assert!(grid.range.start < 4.5 && grid.range.end() > 4.5);
        assert!((cfg.radar.bandwidth() - 3e9).abs() < 1.0);
        assert!((cfg.radar.f0 + cfg.radar.bandwidth() / 2.0 - 10.5e9).abs() < 1.0);
    }

    #[test]
    fn zero_step_names_field() {
        let text = MINIMAL.replace("11718750.0", "0");
        let err = parse_config(&text, "x").unwrap_err();
        assert_eq!(err.field(), Some("radar.delta_f"));
    }

    #[test]
    fn nested_field_paths() {
        let text = MINIMAL.replace(r#""scene""#, r#""solver": {"alpha": 2.0}, "scene""#);
        assert_eq!(
            parse_config(&text, "x").unwrap_err().field(),
            Some("solver.alpha")
        );
        let text = MINIMAL.replace("[0.0, 4.5, 0.0]", "[0.0, -1.0, 0.0]");
        assert_eq!(
            parse_config(&text, "x").unwrap_err().field(),
            Some("scene.targets[0].position")
        );
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_config("{\n  \"radar\": ,\n}", "bad.json").unwrap_err();
        match err {
            ConfigError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config(&MINIMAL.replace("\"scene\"", "\"scenery\""), "x"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn hash_tracks_semantics_only() {
        let a = parse_config(MINIMAL, "a").unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.grid = None;
        assert_eq!(a.hash(), c.hash());
        c.scene.noise_sigma = 0.1;
        assert_ne!(a.hash(), c.hash());
    }
}
