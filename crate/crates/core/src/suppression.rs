//! Low-rank + sparse decomposition of an interfered image.
//!
//! The image `I` is split into a sparse target part `X` and a low-rank
//! interference part `C` by minimizing
//!
//! ```text
//! ½‖I − C − X‖_F² + ρ‖C‖_* + μ‖X‖_1
//! ```
//!
//! with cyclic coordinate descent. The `X` step is entrywise complex soft
//! thresholding, the `C` step is singular value thresholding. With unit
//! steps each block update is an exact minimization, so the objective never
//! increases.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ComplexImage, ImageGrid, ImagingError};
use crate::{CMatrix, Complex};

/// Iteration cap handed to the SVD before it reports non-convergence.
pub const SVD_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SuppressionError {
    #[error("dimension mismatch: {what} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("threshold must be >= 0, got {0}")]
    NegativeThreshold(f64),
    #[error("SVD of a {rows}x{cols} matrix did not converge within {max_iterations} iterations")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        max_iterations: usize,
    },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("non-finite values appeared at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },
    #[error("automatic weights need a non-zero input")]
    ZeroInput,
    #[error("invalid solver setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T, E = SuppressionError> = std::result::Result<T, E>;

fn default_step() -> f64 {
    1.0
}
fn default_max_iter() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

/// How a 3D volume is presented to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unfolding {
    /// One matrix: range rows, (azimuth, height) columns.
    #[default]
    Mode1,
    /// An independent range × azimuth decomposition per height slice.
    PerHeightSlice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Sparsity weight (used when `auto_weights` is off).
    #[serde(default)]
    pub mu: f64,
    /// Low-rank weight (used when `auto_weights` is off).
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_step")]
    pub alpha: f64,
    #[serde(default = "default_step")]
    pub beta: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Derive `mu`, `rho` from the input with [`default_params`].
    #[serde(default = "default_true")]
    pub auto_weights: bool,
    #[serde(default)]
    pub unfolding: Unfolding,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: 0.0,
            rho: 0.0,
            alpha: 1.0,
            beta: 1.0,
            max_iter: 500,
            tol: 1e-6,
            auto_weights: true,
            unfolding: Unfolding::Mode1,
        }
    }
}

impl SolverConfig {
    /// Fixed weights, automatic selection off.
    pub fn with_weights(mu: f64, rho: f64) -> Self {
        SolverConfig {
            mu,
            rho,
            auto_weights: false,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid =
            |field, reason: String| Err(SuppressionError::InvalidConfig { field, reason });
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid("alpha", format!("must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return invalid("beta", format!("must lie in (0, 1], got {}", self.beta));
        }
        if self.max_iter < 1 {
            return invalid("max_iter", "must be >= 1".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return invalid("tol", format!("must be > 0, got {}", self.tol));
        }
        if !self.auto_weights {
            if !(self.mu.is_finite() && self.mu >= 0.0) {
                return invalid("mu", format!("must be >= 0, got {}", self.mu));
            }
            if !(self.rho.is_finite() && self.rho >= 0.0) {
                return invalid("rho", format!("must be >= 0, got {}", self.rho));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    /// Sparse target component `X`.
    pub target: CMatrix,
    /// Low-rank interference component `C`.
    pub interference: CMatrix,
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Weights actually used.
    pub mu: f64,
    pub rho: f64,
}

impl DecompositionResult {
    /// `I − X − C`.
    pub fn residual(&self, interfered: &CMatrix) -> CMatrix {
        interfered - &self.target - &self.interference
    }
}

fn check_shape(what: &'static str, reference: &CMatrix, m: &CMatrix) -> Result<()> {
    if reference.shape() != m.shape() {
        return Err(SuppressionError::DimensionMismatch {
            what,
            expected: reference.shape(),
            got: m.shape(),
        });
    }
    Ok(())
}

fn l1_norm(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).sum()
}

/// Full singular spectrum, descending.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = m
        .clone()
        .try_svd(false, false, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(SuppressionError::SvdNoConvergence {
            rows: m.nrows(),
            cols: m.ncols(),
            max_iterations: SVD_MAX_ITERATIONS,
        })?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn nuclear_norm(m: &CMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// `½‖I − C − X‖_F² + ρ‖C‖_* + μ‖X‖_1`.
pub fn objective(
    interfered: &CMatrix,
    target: &CMatrix,
    interference: &CMatrix,
    mu: f64,
    rho: f64,
) -> Result<f64> {
    check_shape("target", interfered, target)?;
    check_shape("interference", interfered, interference)?;
    let residual = interfered - target - interference;
    let penalty_c = if rho != 0.0 {
        rho * nuclear_norm(interference)?
    } else {
        0.0
    };
    Ok(0.5 * residual.norm_squared() + penalty_c + mu * l1_norm(target))
}

/// Entrywise complex shrinkage `v ↦ (v/|v|)·max(|v| − t, 0)`.
pub fn soft_threshold_entries(matrix: &CMatrix, threshold: f64) -> Result<CMatrix> {
    if !(threshold >= 0.0) {
        return Err(SuppressionError::NegativeThreshold(threshold));
    }
    Ok(matrix.map(|v| shrink(v, threshold)))
}

#[inline]
fn shrink(v: Complex, threshold: f64) -> Complex {
    let mag = v.norm();
    if mag <= threshold {
        Complex::new(0.0, 0.0)
    } else {
        v * ((mag - threshold) / mag)
    }
}

/// Proximal gradient step on `X` with threshold `α·μ`.
pub fn update_target(
    target_prev: &CMatrix,
    interference_prev: &CMatrix,
    interfered: &CMatrix,
    alpha: f64,
    mu: f64,
) -> Result<CMatrix> {
    check_shape("target", interfered, target_prev)?;
    check_shape("interference", interfered, interference_prev)?;
    let z = if alpha == 1.0 {
        interfered - interference_prev
    } else {
        target_prev + (interfered - interference_prev - target_prev) * Complex::new(alpha, 0.0)
    };
    soft_threshold_entries(&z, alpha * mu)
}

/// Singular value thresholding: `U·diag(max(σ − t, 0))·V^H` where `Z = U·diag(σ)·V^H`.
pub fn singular_value_threshold(matrix: &CMatrix, threshold: f64) -> Result<CMatrix> {
    if !(threshold >= 0.0) {
        return Err(SuppressionError::NegativeThreshold(threshold));
    }
    let (rows, cols) = matrix.shape();
    if matrix.is_empty() {
        return Ok(matrix.clone());
    }
    let svd = matrix
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(SuppressionError::SvdNoConvergence {
            rows,
            cols,
            max_iterations: SVD_MAX_ITERATIONS,
        })?;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^H requested");

    let kept: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter_map(|(l, &s)| {
            let g = s - threshold;
            (g > 0.0).then_some((l, g))
        })
        .collect();
    if kept.is_empty() {
        return Ok(CMatrix::zeros(rows, cols));
    }
    let scaled_u = CMatrix::from_fn(rows, kept.len(), |i, k| u[(i, kept[k].0)] * kept[k].1);
    let v_kept = CMatrix::from_fn(kept.len(), cols, |k, j| v_t[(kept[k].0, j)]);
    Ok(scaled_u * v_kept)
}

/// Proximal gradient step on `C` with threshold `β·ρ`.
pub fn update_interference(
    interference_prev: &CMatrix,
    target_new: &CMatrix,
    interfered: &CMatrix,
    beta: f64,
    rho: f64,
) -> Result<CMatrix> {
    check_shape("interference", interfered, interference_prev)?;
    check_shape("target", interfered, target_new)?;
    let z = if beta == 1.0 {
        interfered - target_new
    } else {
        interference_prev + (interfered - interference_prev - target_new) * Complex::new(beta, 0.0)
    };
    singular_value_threshold(&z, beta * rho)
}

/// Automatic weights `ρ = σ_1(I)/4`, `μ = ρ/√max(rows, cols)`; returns `(mu, rho)`.
pub fn default_params(interfered: &CMatrix) -> Result<(f64, f64)> {
    let sigma1 = singular_values(interfered)?.first().copied().unwrap_or(0.0);
    if !(sigma1 > 0.0) {
        return Err(SuppressionError::ZeroInput);
    }
    let rho = sigma1 / 4.0;
    let mu = rho / (interfered.nrows().max(interfered.ncols()) as f64).sqrt();
    Ok((mu, rho))
}

fn relative_change(delta: f64, new: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else if new == 0.0 {
        f64::INFINITY
    } else {
        delta / new
    }
}

fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Decomposes `interfered` starting from `X = C = 0`.
pub fn decompose(interfered: &CMatrix, config: &SolverConfig) -> Result<DecompositionResult> {
    decompose_from(interfered, config, None)
}

/// Decomposes `interfered`, optionally warm-started from `(X, C)`.
pub fn decompose_from(
    interfered: &CMatrix,
    config: &SolverConfig,
    init: Option<(CMatrix, CMatrix)>,
) -> Result<DecompositionResult> {
    config.validate()?;
    if !all_finite(interfered) {
        return Err(SuppressionError::NonFiniteInput);
    }
    let (rows, cols) = interfered.shape();
    let zero = || CMatrix::zeros(rows, cols);

    if interfered.iter().all(|v| v.norm_sqr() == 0.0) && init.is_none() {
        return Ok(DecompositionResult {
            target: zero(),
            interference: zero(),
            objective_trace: vec![0.0],
            iterations_run: 1,
            converged: true,
            mu: if config.auto_weights { 0.0 } else { config.mu },
            rho: if config.auto_weights { 0.0 } else { config.rho },
        });
    }

    let (mu, rho) = if config.auto_weights {
        default_params(interfered)?
    } else {
        (config.mu, config.rho)
    };

    let (mut x, mut c) = match init {
        Some((x0, c0)) => {
            check_shape("initial target", interfered, &x0)?;
            check_shape("initial interference", interfered, &c0)?;
            (x0, c0)
        }
        None => (zero(), zero()),
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=config.max_iter {
        iterations = iteration;
        let x_new = update_target(&x, &c, interfered, config.alpha, mu)?;
        let c_new = update_interference(&c, &x_new, interfered, config.beta, rho)?;
        if !(all_finite(&x_new) && all_finite(&c_new)) {
            return Err(SuppressionError::NonFiniteIterate { iteration });
        }
        let change = relative_change((&x_new - &x).norm(), x_new.norm())
            .max(relative_change((&c_new - &c).norm(), c_new.norm()));
        x = x_new;
        c = c_new;
        trace.push(objective(interfered, &x, &c, mu, rho)?);
        if change < config.tol {
            converged = true;
            break;
        }
    }

    Ok(DecompositionResult {
        target: x,
        interference: c,
        objective_trace: trace,
        iterations_run: iterations,
        converged,
        mu,
        rho,
    })
}

/// Mode-1 unfolding of a 3D image: rows are range cells, column `q + n_az·o`.
pub fn matricize_3d(volume: &ComplexImage) -> Result<CMatrix> {
    let (np, nq, no) = volume_shape(&volume.grid)?;
    Ok(DMatrix::from_fn(np, nq * no, |p, col| {
        volume.get(&[p, col % nq, col / nq])
    }))
}

/// Inverse of [`matricize_3d`].
pub fn fold_3d(matrix: &CMatrix, grid: &ImageGrid) -> Result<ComplexImage> {
    let (np, nq, no) = volume_shape(grid)?;
    if matrix.shape() != (np, nq * no) {
        return Err(SuppressionError::DimensionMismatch {
            what: "unfolded volume",
            expected: (np, nq * no),
            got: matrix.shape(),
        });
    }
    let mut image = ComplexImage::zeros(*grid);
    for p in 0..np {
        for col in 0..nq * no {
            let idx = grid.flat_index(&[p, col % nq, col / nq]);
            image.values[idx] = matrix[(p, col)];
        }
    }
    Ok(image)
}

fn volume_shape(grid: &ImageGrid) -> Result<(usize, usize, usize)> {
    match (grid.azimuth, grid.height) {
        (Some(a), Some(h)) => Ok((grid.range.count, a.count, h.count)),
        _ => Err(ImagingError::Dimensionality {
            expected: 3,
            got: grid.dimensionality(),
        }
        .into()),
    }
}

/// Image-domain decomposition result.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDecomposition {
    pub target: ComplexImage,
    pub interference: ComplexImage,
    /// One entry per solver run (one for 2D and mode-1, one per slice otherwise).
    pub runs: Vec<DecompositionResult>,
}

/// Decomposes a 2D or 3D image; 3D volumes follow `config.unfolding`.
pub fn decompose_image(image: &ComplexImage, config: &SolverConfig) -> Result<ImageDecomposition> {
    match image.grid.dimensionality() {
        2 => {
            let matrix = image.to_matrix()?;
            let run = decompose(&matrix, config)?;
            Ok(ImageDecomposition {
                target: ComplexImage::from_matrix(image.grid, &run.target)?,
                interference: ComplexImage::from_matrix(image.grid, &run.interference)?,
                runs: vec![run],
            })
        }
        3 => match config.unfolding {
            Unfolding::Mode1 => {
                let matrix = matricize_3d(image)?;
                let run = decompose(&matrix, config)?;
                Ok(ImageDecomposition {
                    target: fold_3d(&run.target, &image.grid)?,
                    interference: fold_3d(&run.interference, &image.grid)?,
                    runs: vec![run],
                })
            }
            Unfolding::PerHeightSlice => {
                let (_, _, no) = volume_shape(&image.grid)?;
                let mut target = ComplexImage::zeros(image.grid);
                let mut interference = ComplexImage::zeros(image.grid);
                let mut runs = Vec::with_capacity(no);
                for o in 0..no {
                    let slice = image.height_slice(o)?;
                    let run = decompose(&slice.to_matrix()?, config)?;
                    for p in 0..run.target.nrows() {
                        for q in 0..run.target.ncols() {
                            let idx = image.grid.flat_index(&[p, q, o]);
                            target.values[idx] = run.target[(p, q)];
                            interference.values[idx] = run.interference[(p, q)];
                        }
                    }
                    runs.push(run);
                }
                Ok(ImageDecomposition {
                    target,
                    interference,
                    runs,
                })
            }
        },
        got => Err(ImagingError::Dimensionality { expected: 2, got }.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::GridAxis;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn diag(values: &[f64]) -> CMatrix {
        let n = values.len();
        CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c(values[i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 3, 4);
        let cc = random_matrix(&mut rng, 3, 4);
        let i = &x + &cc;
        assert_abs_diff_eq!(
            objective(&i, &x, &cc, 0.0, 0.0).unwrap(),
            0.0,
            epsilon = 1e-28
        );

        let zero = CMatrix::zeros(2, 2);
        let v = objective(&zero, &zero, &diag(&[2.0, 3.0]), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 11.5, epsilon = 1e-12);

        let i = random_matrix(&mut rng, 3, 4);
        let (mu, rho) = (0.3, 0.7);
        let fit = 0.5 * (&i - &x - &cc).norm_squared();
        let pen = objective(&i, &x, &cc, mu, rho).unwrap() - fit;
        let two = c(2.0, 0.0);
        let scaled = objective(&(&i * two), &(&x * two), &(&cc * two), mu, rho).unwrap();
        assert_abs_diff_eq!(scaled, 4.0 * fit + 2.0 * pen, epsilon = 1e-10);

        assert!(matches!(
            objective(&i, &CMatrix::zeros(2, 2), &cc, mu, rho),
            Err(SuppressionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn soft_threshold_examples() {
        let m = CMatrix::from_row_slice(1, 3, &[c(3.0, 4.0), c(0.0, 0.0), c(0.5, -0.5)]);
        let out = soft_threshold_entries(&m, 2.0).unwrap();
        assert_abs_diff_eq!((out[(0, 0)] - c(1.8, 2.4)).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(out[(0, 1)], c(0.0, 0.0));
        assert_eq!(out[(0, 2)], c(0.0, 0.0));
        assert_eq!(soft_threshold_entries(&m, 0.0).unwrap(), m);
        assert_eq!(
            soft_threshold_entries(&m, -1.0),
            Err(SuppressionError::NegativeThreshold(-1.0))
        );
    }

    #[test]
    fn target_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let i = random_matrix(&mut rng, 3, 3);
        let x0 = CMatrix::zeros(3, 3);
        assert_eq!(
            update_target(&x0, &i, &i, 0.5, 0.2).unwrap(),
            CMatrix::zeros(3, 3)
        );

        let xk = random_matrix(&mut rng, 3, 3);
        let out = update_target(&xk, &CMatrix::zeros(3, 3), &i, 1.0, 0.3).unwrap();
        assert_eq!(out, soft_threshold_entries(&i, 0.3).unwrap());
    }

    #[test]
    fn target_update_matches_per_entry_grid_search() {
        // α = 1: minimize ½|x − z|² + μ|x| per entry by brute force over a polar grid.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let i = random_matrix(&mut rng, 2, 2);
        let cc = random_matrix(&mut rng, 2, 2) * c(0.3, 0.0);
        let mu = 0.25;
        let out = update_target(&CMatrix::zeros(2, 2), &cc, &i, 1.0, mu).unwrap();
        let z = &i - &cc;
        for k in 0..4 {
            let zk = z[k];
            let mut best = (f64::INFINITY, c(0.0, 0.0));
            for ri in 0..=2000 {
                let r = ri as f64 * 2.0 / 2000.0;
                for ai in 0..720 {
                    let x = Complex::from_polar(r, ai as f64 * std::f64::consts::PI / 360.0);
                    let f = 0.5 * (x - zk).norm_sqr() + mu * x.norm();
                    if f < best.0 {
                        best = (f, x);
                    }
                }
            }
            assert!(
                (out[k] - best.1).norm() < 5e-3,
                "entry {k}: {} vs {}",
                out[k],
                best.1
            );
            let f_out = 0.5 * (out[k] - zk).norm_sqr() + mu * out[k].norm();
            assert!(f_out <= best.0 + 1e-12);
        }
    }

    #[test]
    fn svt_examples() {
        let out = singular_value_threshold(&diag(&[5.0, 1.0]), 2.0).unwrap();
        assert_abs_diff_eq!((out - diag(&[3.0, 0.0])).norm(), 0.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(&mut rng, 6, 4);
        let same = singular_value_threshold(&z, 0.0).unwrap();
        assert!((same - &z).norm() <= 1e-10 * z.norm());
        assert!(singular_value_threshold(&z, -0.1).is_err());
    }

    #[test]
    fn svt_matches_brute_force_over_scaled_truncations() {
        // Among Y = Σ γ_l u_l v_lᴴ, the objective separates into 1D problems in γ_l.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(&mut rng, 4, 4);
        let t = 0.6;
        let out = singular_value_threshold(&z, t).unwrap();
        let svd = z.clone().svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut gammas = Vec::new();
        for &s in svd.singular_values.iter() {
            let mut best = (f64::INFINITY, 0.0);
            for gi in 0..=40_000 {
                let g = gi as f64 * 4.0 / 40_000.0;
                let f = 0.5 * (g - s).powi(2) + t * g;
                if f < best.0 {
                    best = (f, g);
                }
            }
            gammas.push(best.1);
        }
        let brute = CMatrix::from_fn(4, 4, |i, j| {
            (0..4).map(|l| u[(i, l)] * gammas[l] * v_t[(l, j)]).sum()
        });
        assert!((out - brute).norm() < 1e-3);
    }

    #[test]
    fn interference_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let i = random_matrix(&mut rng, 4, 3);
        let zero = CMatrix::zeros(4, 3);
        assert_eq!(update_interference(&zero, &i, &i, 0.7, 0.1).unwrap(), zero);

        let a = random_matrix(&mut rng, 4, 1);
        let b = random_matrix(&mut rng, 3, 1);
        let rank1 = &a * b.adjoint();
        let s1 = singular_values(&rank1).unwrap()[0];
        let out = update_interference(&zero, &zero, &rank1, 1.0, 0.4 * s1).unwrap();
        let s = singular_values(&out).unwrap();
        assert_abs_diff_eq!(s[0], 0.6 * s1, epsilon = 1e-10);
        assert!(s[1] < 1e-10);
        let expected = &rank1 * c(0.6, 0.0);
        assert!((out - expected).norm() < 1e-10);

        let killed = update_interference(&zero, &zero, &rank1, 1.0, s1 * 1.0001).unwrap();
        assert_eq!(killed, zero);
    }

    #[test]
    fn default_params_examples() {
        let (mu, rho) = default_params(&diag(&[8.0, 0.0])).unwrap();
        assert_abs_diff_eq!(rho, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mu, 2.0 / 2f64.sqrt(), epsilon = 1e-12);
        let (mu, rho) = default_params(&diag(&[1.0; 4])).unwrap();
        assert_abs_diff_eq!(rho, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(mu, 0.125, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let i = random_matrix(&mut rng, 5, 3);
        let (mu1, rho1) = default_params(&i).unwrap();
        let (mu3, rho3) = default_params(&(&i * c(3.0, 0.0))).unwrap();
        assert_abs_diff_eq!(mu3, 3.0 * mu1, epsilon = 1e-12);
        assert_abs_diff_eq!(rho3, 3.0 * rho1, epsilon = 1e-12);
        assert_eq!(
            default_params(&CMatrix::zeros(3, 3)),
            Err(SuppressionError::ZeroInput)
        );
    }

    #[test]
    fn decompose_zero_input() {
        let r = decompose(&CMatrix::zeros(4, 5), &SolverConfig::default()).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert!(r.converged);
        assert_eq!(r.target, CMatrix::zeros(4, 5));
        assert_eq!(r.interference, CMatrix::zeros(4, 5));
    }

    #[test]
    fn decompose_rank_one_plus_spike() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, m) = (24, 20);
        let u = random_matrix(&mut rng, n, 1).normalize();
        let v = random_matrix(&mut rng, m, 1).normalize();
        let low_rank = &u * v.adjoint() * c(10.0, 0.0);
        let mut i = low_rank.clone();
        i[(7, 11)] += Complex::from_polar(5.0, 0.4);
        let r = decompose(&i, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        let argmax = r
            .target
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        assert_eq!((argmax % n, argmax / n), (7, 11));
        let s = singular_values(&r.interference).unwrap();
        assert!(s[1] / s[0] < 0.05);
    }

    #[test]
    fn decompose_pure_low_rank_leaves_small_sparse_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 16, 2);
        let b = random_matrix(&mut rng, 12, 2);
        let i = &a * b.adjoint();
        let (_, rho) = default_params(&i).unwrap();
        let mu = 10.0 * rho;
        let r = decompose(&i, &SolverConfig::with_weights(mu, rho)).unwrap();
        assert!(r.converged);
        assert!(r.target.iter().all(|v| v.norm() < mu));
        assert_eq!(r.target, CMatrix::zeros(16, 12));
    }

    #[test]
    fn decompose_rejects_bad_input() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(f64::NAN, 0.0);
        assert_eq!(
            decompose(&m, &SolverConfig::default()),
            Err(SuppressionError::NonFiniteInput)
        );
        let cfg = SolverConfig {
            alpha: 1.5,
            ..SolverConfig::default()
        };
        assert!(matches!(
            decompose(&CMatrix::zeros(2, 2), &cfg),
            Err(SuppressionError::InvalidConfig { field: "alpha", .. })
        ));
    }

    #[test]
    fn warm_start_at_fixed_point_stops_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let i = random_matrix(&mut rng, 10, 8);
        let cfg = SolverConfig {
            tol: 1e-10,
            max_iter: 2000,
            ..SolverConfig::with_weights(0.3, 1.0)
        };
        let first = decompose(&i, &cfg).unwrap();
        assert!(first.converged);
        let second = decompose_from(
            &i,
            &cfg,
            Some((first.target.clone(), first.interference.clone())),
        )
        .unwrap();
        assert_eq!(second.iterations_run, 1);
        assert!((&second.target - &first.target).norm() <= 1e-8 * first.target.norm().max(1.0));
    }

    #[test]
    fn unfolding_round_trip() {
        let grid = ImageGrid::three_d(
            GridAxis::new(0.0, 1.0, 2),
            GridAxis::new(0.0, 1.0, 2),
            GridAxis::new(0.0, 1.0, 2),
        );
        let values: Vec<Complex> = (1..=8).map(|k| c(k as f64, 0.0)).collect();
        let vol = ComplexImage::new(grid, values).unwrap();
        let m = matricize_3d(&vol).unwrap();
        assert_eq!(m.shape(), (2, 4));
        // storage (p, q, o) -> column q + 2·o
        assert_eq!(m[(0, 0)], c(1.0, 0.0));
        assert_eq!(m[(0, 2)], c(2.0, 0.0));
        assert_eq!(m[(0, 1)], c(3.0, 0.0));
        assert_eq!(m[(1, 3)], c(8.0, 0.0));
        assert_eq!(fold_3d(&m, &grid).unwrap(), vol);
        let flat = ImageGrid::two_d(GridAxis::new(0.0, 1.0, 2), GridAxis::new(0.0, 1.0, 2));
        assert!(matricize_3d(&ComplexImage::zeros(flat)).is_err());
    }

    #[test]
    fn per_slice_mode_matches_independent_slices() {
        let grid = ImageGrid::three_d(
            GridAxis::new(0.0, 1.0, 6),
            GridAxis::new(0.0, 1.0, 5),
            GridAxis::new(0.0, 1.0, 3),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<Complex> = (0..grid.len())
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let vol = ComplexImage::new(grid, values).unwrap();
        let cfg = SolverConfig {
            unfolding: Unfolding::PerHeightSlice,
            ..SolverConfig::default()
        };
        let out = decompose_image(&vol, &cfg).unwrap();
        assert_eq!(out.runs.len(), 3);
        let slice = vol.height_slice(2).unwrap();
        let direct = decompose(&slice.to_matrix().unwrap(), &cfg).unwrap();
        let got = out.target.height_slice(2).unwrap().to_matrix().unwrap();
        assert_eq!(got, direct.target);
    }
}
