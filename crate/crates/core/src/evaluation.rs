//! Interference and suppression analysis.
//!
//! Peak and comb detection on dB profiles, singular spectra, the
//! background-subtraction reference and region-based suppression metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ComplexImage, ImagingError};
use crate::suppression::{self, SuppressionError};
use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("comb spacing needs at least 3 peaks, got {0}")]
    TooFewPeaks(usize),
    #[error("image grids differ")]
    GridMismatch,
    #[error("target {index} at {position:?} lies outside the image grid")]
    TargetOutsideGrid { index: usize, position: [f64; 3] },
    #[error("the {0} region is empty")]
    EmptyRegion(&'static str),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Suppression(#[from] SuppressionError),
}

pub type Result<T, E = EvaluationError> = std::result::Result<T, E>;

/// Default guard radius around each target, in grid cells.
pub const DEFAULT_GUARD_CELLS: usize = 3;

/// Energy floor keeping every logarithmic metric finite.
/// Metric dB values are clamped to this magnitude so exact zeros stay finite.
const DB_LIMIT: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Position in axis units.
    pub position: f64,
    /// Sample index in the analysed profile.
    pub index: usize,
    /// Level relative to the profile maximum; always `<= 0`.
    pub magnitude_db: f64,
    /// Topographic prominence.
    pub prominence_db: f64,
}

/// Peaks sorted by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    /// Peaks at given positions, all at 0 dB (e.g. predicted harmonic ranges).
    pub fn from_positions(positions: &[f64]) -> Self {
        let mut peaks: Vec<Peak> = positions
            .iter()
            .enumerate()
            .map(|(index, &position)| Peak {
                position,
                index,
                magnitude_db: 0.0,
                prominence_db: f64::INFINITY,
            })
            .collect();
        peaks.sort_by(|a, b| a.position.total_cmp(&b.position));
        PeakList { peaks }
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.position).collect()
    }

    /// Keeps only peaks whose position lies in `[lo, hi]`.
    pub fn within(&self, lo: f64, hi: f64) -> PeakList {
        PeakList {
            peaks: self
                .peaks
                .iter()
                .copied()
                .filter(|p| p.position >= lo && p.position <= hi)
                .collect(),
        }
    }
}

/// Peak detection with positions in sample indices.
pub fn peak_detect(
    profile_db: &[f64],
    min_prominence_db: f64,
    min_separation_cells: usize,
) -> PeakList {
    peak_detect_on_axis(
        profile_db,
        0.0,
        1.0,
        min_prominence_db,
        min_separation_cells,
    )
}

/// Peak detection on a regular axis `start + i·spacing`.
///
/// Candidates are strict local maxima whose topographic prominence reaches
/// `min_prominence_db`; plateaus are never reported. Candidates closer than `min_separation_cells` to a
/// stronger accepted peak are dropped.
pub fn peak_detect_on_axis(
    profile_db: &[f64],
    start: f64,
    spacing: f64,
    min_prominence_db: f64,
    min_separation_cells: usize,
) -> PeakList {
    let n = profile_db.len();
    if n < 3 {
        return PeakList::default();
    }
    let max = profile_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut candidates = Vec::new();
    for i in 1..n - 1 {
        let v = profile_db[i];
        if v > profile_db[i - 1] && v > profile_db[i + 1] {
            let prominence = prominence(profile_db, i);
            if prominence >= min_prominence_db {
                candidates.push((i, prominence));
            }
        }
    }

    candidates.sort_by(|a, b| {
        profile_db[b.0]
            .total_cmp(&profile_db[a.0])
            .then(a.0.cmp(&b.0))
    });
    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for (i, prom) in candidates {
        if accepted
            .iter()
            .all(|&(j, _)| i.abs_diff(j) >= min_separation_cells)
        {
            accepted.push((i, prom));
        }
    }
    accepted.sort_by_key(|&(i, _)| i);

    PeakList {
        peaks: accepted
            .into_iter()
            .map(|(i, prominence_db)| Peak {
                position: start + i as f64 * spacing,
                index: i,
                magnitude_db: (profile_db[i] - max).min(0.0),
                prominence_db,
            })
            .collect(),
    }
}

/// Height above the higher of the two bases reached before a taller sample.
fn prominence(x: &[f64], i: usize) -> f64 {
    let v = x[i];
    let mut left_min = v;
    for &s in x[..i].iter().rev() {
        if s > v {
            break;
        }
        left_min = left_min.min(s);
    }
    let mut right_min = v;
    for &s in &x[i + 1..] {
        if s > v {
            break;
        }
        right_min = right_min.min(s);
    }
    v - left_min.max(right_min)
}

/// Mean and population standard deviation of successive peak spacings.
pub fn comb_spacing(peaks: &PeakList) -> Result<(f64, f64)> {
    if peaks.len() < 3 {
        return Err(EvaluationError::TooFewPeaks(peaks.len()));
    }
    let diffs: Vec<f64> = peaks
        .peaks
        .windows(2)
        .map(|w| w[1].position - w[0].position)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Complex elementwise difference `with_targets − without_targets`.
pub fn background_subtract(
    with_targets: &ComplexImage,
    without_targets: &ComplexImage,
) -> Result<ComplexImage> {
    if with_targets.grid != without_targets.grid {
        return Err(EvaluationError::GridMismatch);
    }
    let values = with_targets
        .values
        .iter()
        .zip(&without_targets.values)
        .map(|(a, b)| a - b)
        .collect();
    Ok(ComplexImage::new(with_targets.grid, values)?)
}

/// Descending singular values of a 2D image, or of the mode-1 unfolding of a 3D one.
pub fn singular_spectrum(image: &ComplexImage) -> Result<Vec<f64>> {
    let matrix = match image.grid.dimensionality() {
        3 => suppression::matricize_3d(image)?,
        _ => image.to_matrix()?,
    };
    Ok(suppression::singular_values(&matrix)?)
}

/// Flat indices of local maxima of `|image|` over the full 3^d neighborhood, strongest first.
///
/// Ties between equal neighbors are broken towards the lower flat index, so
/// each plateau yields at most one maximum. Zero voxels are never maxima.
pub fn local_maxima(image: &ComplexImage) -> Vec<usize> {
    let mags = image.magnitudes();
    let shape = image.shape();
    let mut out: Vec<usize> = (0..mags.len())
        .filter(|&flat| {
            let v = mags[flat];
            if v <= 0.0 {
                return false;
            }
            let idx = image.grid.unravel(flat);
            let is_max = neighbors(&idx, &shape).all(|nb| {
                let f = image.grid.flat_index(&nb);
                mags[f] < v || (mags[f] == v && f > flat)
            });
            is_max
        })
        .collect();
    out.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    out
}

fn neighbors<'a>(idx: &'a [usize], shape: &'a [usize]) -> impl Iterator<Item = Vec<usize>> + 'a {
    let d = idx.len();
    (0..3usize.pow(d as u32)).filter_map(move |code| {
        let mut nb = Vec::with_capacity(d);
        let mut c = code;
        let mut is_self = true;
        for k in 0..d {
            let off = (c % 3) as isize - 1;
            c /= 3;
            is_self &= off == 0;
            let j = idx[k] as isize + off;
            if j < 0 || j >= shape[k] as isize {
                return None;
            }
            nb.push(j as usize);
        }
        (!is_self).then_some(nb)
    })
}

/// Suppression quality of one decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionReport {
    /// Per target `|20·log10(peak_suppressed / peak_reference)|` over its region.
    pub target_peak_error_db: Vec<f64>,
    /// `10·log10(E_suppressed / E_raw)` over the interference region.
    pub interference_residual_db: f64,
    /// Change in target-region to off-target energy ratio, suppressed vs raw.
    pub sinr_gain_db: f64,
    pub guard_cells: usize,
    /// Flat-index mask of the union of target neighborhoods.
    pub target_mask: Vec<bool>,
    /// Flat-index mask of the interference-dominated region.
    pub interference_mask: Vec<bool>,
}

impl SuppressionReport {
    pub fn max_target_peak_error_db(&self) -> f64 {
        self.target_peak_error_db
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn target_region_cells(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    pub fn interference_region_cells(&self) -> usize {
        self.interference_mask.iter().filter(|&&m| m).count()
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.target_peak_error_db.iter().enumerate() {
            let _ = writeln!(s, "target_peak_error_db[{i}] = {e}");
        }
        let _ = writeln!(
            s,
            "max_target_peak_error_db = {}",
            self.max_target_peak_error_db()
        );
        let _ = writeln!(
            s,
            "interference_residual_db = {}",
            self.interference_residual_db
        );
        let _ = writeln!(s, "sinr_gain_db = {}", self.sinr_gain_db);
        let _ = writeln!(s, "guard_cells = {}", self.guard_cells);
        let _ = writeln!(s, "target_region_cells = {}", self.target_region_cells());
        let _ = writeln!(
            s,
            "interference_region_cells = {}",
            self.interference_region_cells()
        );
        s
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = (0..self.target_peak_error_db.len())
            .map(|i| format!("target_peak_error_db_{i}"))
            .collect();
        cols.extend(
            [
                "max_target_peak_error_db",
                "interference_residual_db",
                "sinr_gain_db",
                "guard_cells",
                "target_region_cells",
                "interference_region_cells",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols: Vec<String> = self
            .target_peak_error_db
            .iter()
            .map(|e| e.to_string())
            .collect();
        cols.push(self.max_target_peak_error_db().to_string());
        cols.push(self.interference_residual_db.to_string());
        cols.push(self.sinr_gain_db.to_string());
        cols.push(self.guard_cells.to_string());
        cols.push(self.target_region_cells().to_string());
        cols.push(self.interference_region_cells().to_string());
        cols.join(",")
    }
}

fn db10(ratio_num: f64, ratio_den: f64) -> f64 {
    if ratio_num == ratio_den {
        return 0.0;
    }
    (10.0 * (ratio_num / ratio_den).log10()).clamp(-DB_LIMIT, DB_LIMIT)
}

/// Region-based suppression metrics.
///
/// Target regions are the voxels within `guard_cells` (Chebyshev distance)
/// of each target's nearest voxel. The interference region is the raw
/// image's top-decile energy voxels outside all target regions.
pub fn suppression_metrics(
    raw: &ComplexImage,
    suppressed: &ComplexImage,
    reference: &ComplexImage,
    target_positions: &[Vec3],
    guard_cells: usize,
) -> Result<SuppressionReport> {
    if raw.grid != suppressed.grid || raw.grid != reference.grid {
        return Err(EvaluationError::GridMismatch);
    }
    let grid = raw.grid;
    let n = grid.len();
    let shape = grid.shape();

    let mut target_mask = vec![false; n];
    let mut regions = Vec::with_capacity(target_positions.len());
    for (index, pos) in target_positions.iter().enumerate() {
        let center = grid
            .nearest_index(pos)
            .ok_or(EvaluationError::TargetOutsideGrid {
                index,
                position: [pos.x, pos.y, pos.z],
            })?;
        let region: Vec<usize> = (0..n)
            .filter(|&flat| {
                grid.unravel(flat)
                    .iter()
                    .zip(&center)
                    .all(|(&i, &c)| i.abs_diff(c) <= guard_cells)
            })
            .collect();
        debug_assert!(region.len() <= (2 * guard_cells + 1).pow(shape.len() as u32));
        for &f in &region {
            target_mask[f] = true;
        }
        regions.push(region);
    }
    if target_mask.iter().all(|&m| !m) {
        return Err(EvaluationError::EmptyRegion("target"));
    }

    let raw_energy: Vec<f64> = raw.values.iter().map(|v| v.norm_sqr()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw_energy[b].total_cmp(&raw_energy[a]).then(a.cmp(&b)));
    let top = n.div_ceil(10);
    let mut interference_mask = vec![false; n];
    for &f in &order[..top] {
        if !target_mask[f] {
            interference_mask[f] = true;
        }
    }
    if interference_mask.iter().all(|&m| !m) {
        return Err(EvaluationError::EmptyRegion("interference"));
    }
    if target_mask.iter().all(|&m| m) {
        return Err(EvaluationError::EmptyRegion("off-target"));
    }

    let peak = |img: &ComplexImage, region: &[usize]| {
        region
            .iter()
            .map(|&f| img.values[f].norm())
            .fold(0.0, f64::max)
    };
    let target_peak_error_db = regions
        .iter()
        .map(|region| {
            let (s, r) = (peak(suppressed, region), peak(reference, region));
            db10(s * s, r * r).abs()
        })
        .collect();

    let energy = |img: &ComplexImage, mask: &[bool], want: bool| {
        img.values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m == want)
            .map(|(v, _)| v.norm_sqr())
            .sum::<f64>()
    };
    let interference_residual_db = db10(
        energy(suppressed, &interference_mask, true),
        energy(raw, &interference_mask, true),
    );
    let sinr = |img: &ComplexImage| {
        db10(
            energy(img, &target_mask, true),
            energy(img, &target_mask, false),
        )
    };
    let sinr_gain_db = sinr(suppressed) - sinr(raw);

    Ok(SuppressionReport {
        target_peak_error_db,
        interference_residual_db,
        sinr_gain_db,
        guard_cells,
        target_mask,
        interference_mask,
    })
}
