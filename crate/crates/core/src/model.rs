//! Scene and waveform data model plus interfered echo synthesis.
//!
//! A stepped-frequency radar transmits `num_freq` tones `f0 + m·Δf` from
//! every aperture position. After demodulation each tone yields one complex
//! sample per position, so an echo is a `num_freq × slow_time` matrix.
//! Point targets contribute a range history that changes with the antenna
//! position; interferers (antenna coupling, nadir returns) contribute the
//! same delay at every position.

use std::f64::consts::PI;

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{CMatrix, Complex, Vec3, SPEED_OF_LIGHT};

/// Default cap on synthesized echo size, in complex samples (2 GiB of `Complex64`).
pub const DEFAULT_MAX_SAMPLES: usize = 1 << 27;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error(
        "echo of {num_freq} frequencies x {slow_time} positions ({samples} samples, {bytes} bytes) \
         exceeds the budget of {max_samples} samples"
    )]
    TooLarge {
        num_freq: usize,
        slow_time: usize,
        samples: u128,
        bytes: u128,
        max_samples: usize,
    },
    #[error("non-finite echo sample at frequency {freq_index}, position {slow_time_index}")]
    NonFiniteSample {
        freq_index: usize,
        slow_time_index: usize,
    },
    #[error("polynomial fit is degenerate: {0}")]
    DegenerateFit(String),
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the offending field path, e.g. `delta_f` -> `radar.delta_f`.
    pub fn within(self, prefix: &str) -> Self {
        match self {
            ModelError::InvalidParameter { field, reason } => ModelError::InvalidParameter {
                field: format!("{prefix}.{field}"),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Complex values serialize as `[re, im]`; a bare number is accepted as a real value.
pub mod complex_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Complex;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Real(f64),
        Pair([f64; 2]),
    }

    pub fn serialize<S: Serializer>(value: &Complex, serializer: S) -> Result<S::Ok, S::Error> {
        [value.re, value.im].serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Complex, D::Error> {
        Ok(match Repr::deserialize(deserializer)? {
            Repr::Real(re) => Complex::new(re, 0.0),
            Repr::Pair([re, im]) => Complex::new(re, im),
        })
    }
}

fn default_speed() -> f64 {
    SPEED_OF_LIGHT
}

/// Stepped-frequency waveform: tones `f0 + m·delta_f` for `m in 0..num_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarParams {
    /// Starting frequency (Hz).
    pub f0: f64,
    /// Frequency step (Hz).
    pub delta_f: f64,
    /// Number of frequency steps.
    pub num_freq: usize,
    /// Propagation speed (m/s).
    #[serde(default = "default_speed")]
    pub c: f64,
}

impl RadarParams {
    pub fn new(f0: f64, delta_f: f64, num_freq: usize) -> Result<Self> {
        let params = RadarParams {
            f0,
            delta_f,
            num_freq,
            c: SPEED_OF_LIGHT,
        };
        params.validate()?;
        Ok(params)
    }

    /// Waveform covering `bandwidth` Hz centred on `center` Hz with `num_freq` steps.
    ///
    /// The step is `bandwidth / num_freq` so that [`RadarParams::bandwidth`]
    /// returns `bandwidth`; the start is `center - bandwidth / 2`.
    pub fn centered(center: f64, bandwidth: f64, num_freq: usize) -> Result<Self> {
        Self::new(
            center - bandwidth / 2.0,
            bandwidth / num_freq as f64,
            num_freq,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(ModelError::invalid(
                "f0",
                format!("must be > 0, got {}", self.f0),
            ));
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return Err(ModelError::invalid(
                "delta_f",
                format!("must be > 0, got {}", self.delta_f),
            ));
        }
        if self.num_freq < 2 {
            return Err(ModelError::invalid(
                "num_freq",
                format!("must be >= 2, got {}", self.num_freq),
            ));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(ModelError::invalid(
                "c",
                format!("must be > 0, got {}", self.c),
            ));
        }
        Ok(())
    }

    /// Synthetic bandwidth `num_freq · delta_f`.
    pub fn bandwidth(&self) -> f64 {
        self.num_freq as f64 * self.delta_f
    }

    /// Largest range that maps to a unique fast-time delay, `c / (2·delta_f)`.
    pub fn unambiguous_range(&self) -> f64 {
        self.c / (2.0 * self.delta_f)
    }

    /// Nominal range resolution `c / (2·B)`.
    pub fn range_resolution(&self) -> f64 {
        self.c / (2.0 * self.bandwidth())
    }

    pub fn frequency(&self, m: usize) -> f64 {
        self.f0 + m as f64 * self.delta_f
    }

    /// Two-way phase `4π f_m R / c` accumulated over range `range` at tone `m`.
    pub fn two_way_phase(&self, m: usize, range: f64) -> f64 {
        4.0 * PI * self.frequency(m) * range / self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureKind {
    Linear,
    Planar,
}

fn one() -> usize {
    1
}

fn unit_spacing() -> f64 {
    1.0
}

/// Regular linear or planar grid of antenna positions.
///
/// Position `(a, h)` sits at `origin + a·azimuth_spacing·x̂ + h·height_spacing·ẑ`.
/// Slow time is flattened azimuth-major: `index = a + azimuth_count·h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aperture {
    pub kind: ApertureKind,
    pub origin: Vec3,
    pub azimuth_count: usize,
    #[serde(default = "one")]
    pub height_count: usize,
    pub azimuth_spacing: f64,
    #[serde(default = "unit_spacing")]
    pub height_spacing: f64,
}

impl Aperture {
    pub fn linear(origin: Vec3, count: usize, spacing: f64) -> Result<Self> {
        let aperture = Aperture {
            kind: ApertureKind::Linear,
            origin,
            azimuth_count: count,
            height_count: 1,
            azimuth_spacing: spacing,
            height_spacing: 1.0,
        };
        aperture.validate()?;
        Ok(aperture)
    }

    pub fn planar(
        origin: Vec3,
        azimuth_count: usize,
        height_count: usize,
        azimuth_spacing: f64,
        height_spacing: f64,
    ) -> Result<Self> {
        let aperture = Aperture {
            kind: ApertureKind::Planar,
            origin,
            azimuth_count,
            height_count,
            azimuth_spacing,
            height_spacing,
        };
        aperture.validate()?;
        Ok(aperture)
    }

    /// Linear aperture of total `length` along x, centred on x = 0 at height `z`.
    pub fn centered_linear(length: f64, count: usize, z: f64) -> Result<Self> {
        let spacing = if count > 1 {
            length / (count - 1) as f64
        } else {
            1.0
        };
        Self::linear(Vec3::new(-length / 2.0, 0.0, z), count, spacing)
    }

    /// Planar `width × height` aperture centred on the origin of the x–z plane.
    pub fn centered_planar(
        width: f64,
        height: f64,
        azimuth_count: usize,
        height_count: usize,
    ) -> Result<Self> {
        let pitch = |extent: f64, n: usize| if n > 1 { extent / (n - 1) as f64 } else { 1.0 };
        Self::planar(
            Vec3::new(-width / 2.0, 0.0, -height / 2.0),
            azimuth_count,
            height_count,
            pitch(width, azimuth_count),
            pitch(height, height_count),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(ModelError::invalid("origin", "coordinates must be finite"));
        }
        if self.azimuth_count < 1 {
            return Err(ModelError::invalid("azimuth_count", "must be >= 1"));
        }
        if self.height_count < 1 {
            return Err(ModelError::invalid("height_count", "must be >= 1"));
        }
        if self.kind == ApertureKind::Linear && self.height_count != 1 {
            return Err(ModelError::invalid(
                "height_count",
                format!("linear aperture requires 1, got {}", self.height_count),
            ));
        }
        if !(self.azimuth_spacing.is_finite() && self.azimuth_spacing > 0.0) {
            return Err(ModelError::invalid("azimuth_spacing", "must be > 0"));
        }
        if !(self.height_spacing.is_finite() && self.height_spacing > 0.0) {
            return Err(ModelError::invalid("height_spacing", "must be > 0"));
        }
        Ok(())
    }

    pub fn slow_time_count(&self) -> usize {
        self.azimuth_count * self.height_count
    }

    pub fn position(&self, a: usize, h: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                a as f64 * self.azimuth_spacing,
                0.0,
                h as f64 * self.height_spacing,
            )
    }

    /// Position of flattened slow-time index `a + azimuth_count·h`.
    pub fn position_at(&self, index: usize) -> Vec3 {
        self.position(index % self.azimuth_count, index / self.azimuth_count)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.slow_time_count())
            .map(|i| self.position_at(i))
            .collect()
    }

    /// Geometric centre of the scanned positions.
    pub fn center(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.azimuth_count - 1) as f64 * self.azimuth_spacing / 2.0,
                0.0,
                (self.height_count - 1) as f64 * self.height_spacing / 2.0,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointTarget {
    pub position: Vec3,
    #[serde(with = "complex_serde")]
    pub amplitude: Complex,
}

impl PointTarget {
    pub fn new(position: Vec3, amplitude: impl Into<Complex>) -> Self {
        PointTarget {
            position,
            amplitude: amplitude.into(),
        }
    }
}

/// Constant-delay return: identical range `delay_range` at every antenna position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interferer {
    pub delay_range: f64,
    #[serde(with = "complex_serde")]
    pub amplitude: Complex,
}

impl Interferer {
    pub fn new(delay_range: f64, amplitude: impl Into<Complex>) -> Self {
        Interferer {
            delay_range,
            amplitude: amplitude.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub targets: Vec<PointTarget>,
    #[serde(default)]
    pub interferers: Vec<Interferer>,
    /// Standard deviation of circular complex Gaussian noise per sample.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.targets.iter().enumerate() {
            if !t.position.iter().all(|v| v.is_finite()) {
                return Err(ModelError::invalid(
                    format!("targets[{i}].position"),
                    "coordinates must be finite",
                ));
            }
            if t.position.y <= 0.0 {
                return Err(ModelError::invalid(
                    format!("targets[{i}].position"),
                    format!("range component must be > 0, got {}", t.position.y),
                ));
            }
            if !(t.amplitude.re.is_finite() && t.amplitude.im.is_finite()) {
                return Err(ModelError::invalid(
                    format!("targets[{i}].amplitude"),
                    "must be finite",
                ));
            }
        }
        for (i, itf) in self.interferers.iter().enumerate() {
            if !(itf.delay_range.is_finite() && itf.delay_range >= 0.0) {
                return Err(ModelError::invalid(
                    format!("interferers[{i}].delay_range"),
                    format!("must be >= 0, got {}", itf.delay_range),
                ));
            }
            if !(itf.amplitude.re.is_finite() && itf.amplitude.im.is_finite()) {
                return Err(ModelError::invalid(
                    format!("interferers[{i}].amplitude"),
                    "must be finite",
                ));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ModelError::invalid(
                "noise_sigma",
                format!("must be >= 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }

    /// Copy of the scene with the point targets removed.
    pub fn background(&self) -> Scene {
        Scene {
            targets: Vec::new(),
            interferers: self.interferers.clone(),
            noise_sigma: self.noise_sigma,
        }
    }

    /// Farthest range seen by the aperture: targets over all positions, interferer delays.
    pub fn max_range(&self, aperture: &Aperture) -> f64 {
        let positions = aperture.positions();
        let target_max = self
            .targets
            .iter()
            .flat_map(|t| positions.iter().map(move |p| range_history(p, &t.position)))
            .fold(0.0, f64::max);
        self.interferers
            .iter()
            .map(|i| i.delay_range)
            .fold(target_max, f64::max)
    }
}

/// Receiver transfer function applied to every echo sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Saturation {
    #[default]
    None,
    /// Magnitude clipped to `threshold`, phase kept.
    HardClip {
        threshold: f64,
    },
    /// Memoryless power series `Σ H_n xⁿ` in the complex sample.
    Polynomial {
        coefficients: Vec<f64>,
    },
}

impl Saturation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Saturation::None => Ok(()),
            Saturation::HardClip { threshold } => {
                if threshold.is_finite() && *threshold > 0.0 {
                    Ok(())
                } else {
                    Err(ModelError::invalid(
                        "threshold",
                        format!("must be > 0, got {threshold}"),
                    ))
                }
            }
            Saturation::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(ModelError::invalid("coefficients", "must not be empty"));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(ModelError::invalid("coefficients", "must be finite"));
                }
                Ok(())
            }
        }
    }

    /// Transfer applied to a single sample.
    pub fn apply(&self, x: Complex) -> Complex {
        match self {
            Saturation::None => x,
            Saturation::HardClip { threshold } => clip_magnitude(x, *threshold),
            Saturation::Polynomial { coefficients } => polynomial_transfer(coefficients, x),
        }
    }
}

/// Demodulated samples, `num_freq` rows by `slow_time_count` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoData {
    pub samples: CMatrix,
    pub radar: RadarParams,
    pub aperture: Aperture,
}

impl EchoData {
    pub fn new(samples: CMatrix, radar: RadarParams, aperture: Aperture) -> Result<Self> {
        if samples.nrows() != radar.num_freq || samples.ncols() != aperture.slow_time_count() {
            return Err(ModelError::invalid(
                "samples",
                format!(
                    "shape {}x{} does not match {} frequencies x {} positions",
                    samples.nrows(),
                    samples.ncols(),
                    radar.num_freq,
                    aperture.slow_time_count()
                ),
            ));
        }
        Ok(EchoData {
            samples,
            radar,
            aperture,
        })
    }

    pub fn num_freq(&self) -> usize {
        self.samples.nrows()
    }

    pub fn slow_time_count(&self) -> usize {
        self.samples.ncols()
    }
}

/// Euclidean distance between an antenna position and a scatterer.
pub fn range_history(aperture_position: &Vec3, target_position: &Vec3) -> f64 {
    (target_position - aperture_position).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub max_samples: usize,
    /// Highest harmonic order the echo will be analysed for; only used for
    /// the unambiguous-range warning.
    pub max_harmonic_order: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            max_samples: DEFAULT_MAX_SAMPLES,
            max_harmonic_order: 1,
        }
    }
}

/// Synthesizes the target + interferer echo with the default options.
pub fn synthesize_echo(
    radar: &RadarParams,
    aperture: &Aperture,
    scene: &Scene,
    seed: u64,
) -> Result<EchoData> {
    synthesize_echo_with(radar, aperture, scene, seed, &SynthesisOptions::default())
}

pub fn synthesize_echo_with(
    radar: &RadarParams,
    aperture: &Aperture,
    scene: &Scene,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<EchoData> {
    radar.validate().map_err(|e| e.within("radar"))?;
    aperture.validate().map_err(|e| e.within("aperture"))?;
    scene.validate().map_err(|e| e.within("scene"))?;

    let num_freq = radar.num_freq;
    let slow_time = aperture.slow_time_count();
    let samples = num_freq as u128 * slow_time as u128;
    if samples > options.max_samples as u128 {
        return Err(ModelError::TooLarge {
            num_freq,
            slow_time,
            samples,
            bytes: samples * std::mem::size_of::<Complex>() as u128,
            max_samples: options.max_samples,
        });
    }

    let needed = scene.max_range(aperture) * options.max_harmonic_order.max(1) as f64;
    if needed >= radar.unambiguous_range() {
        warn!(
            "scene range {:.3} m x order {} reaches the unambiguous range {:.3} m; responses will wrap",
            scene.max_range(aperture),
            options.max_harmonic_order,
            radar.unambiguous_range()
        );
    }

    // Interferers are position independent: evaluate them once.
    let interference: Vec<Complex> = (0..num_freq)
        .map(|m| {
            scene
                .interferers
                .iter()
                .map(|itf| itf.amplitude * Complex::cis(-radar.two_way_phase(m, itf.delay_range)))
                .sum()
        })
        .collect();

    let noise = if scene.noise_sigma > 0.0 {
        Some(Normal::new(0.0, scene.noise_sigma / std::f64::consts::SQRT_2).expect("sigma >= 0"))
    } else {
        None
    };

    let columns: Vec<Vec<Complex>> = (0..slow_time)
        .into_par_iter()
        .map(|s| {
            let antenna = aperture.position_at(s);
            let ranges: Vec<f64> = scene
                .targets
                .iter()
                .map(|t| range_history(&antenna, &t.position))
                .collect();
            let mut column: Vec<Complex> = (0..num_freq)
                .map(|m| {
                    let mut acc = Complex::new(0.0, 0.0);
                    for (t, &r) in scene.targets.iter().zip(&ranges) {
                        acc += t.amplitude * Complex::cis(-radar.two_way_phase(m, r));
                    }
                    acc + interference[m]
                })
                .collect();
            if let Some(dist) = &noise {
                // One independent stream per column keeps the draw schedule-independent.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                for v in column.iter_mut() {
                    *v += Complex::new(dist.sample(&mut rng), dist.sample(&mut rng));
                }
            }
            column
        })
        .collect();

    let samples = DMatrix::from_fn(num_freq, slow_time, |m, s| columns[s][m]);
    EchoData::new(samples, *radar, *aperture)
}

/// Magnitude clip with phase preserved; the result never exceeds `threshold`.
pub fn clip_magnitude(x: Complex, threshold: f64) -> Complex {
    let mag = x.norm();
    if mag < threshold {
        return x;
    }
    let mut y = x * (threshold / mag);
    // Rounding can leave |y| an ulp above the threshold.
    while y.norm() > threshold {
        y *= 1.0 - f64::EPSILON;
    }
    y
}

/// Applies the receiver transfer function sample by sample.
pub fn apply_saturation(echo: &EchoData, sat: &Saturation) -> Result<EchoData> {
    sat.validate().map_err(|e| e.within("saturation"))?;
    if let Some((idx, _)) = echo
        .samples
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.re.is_finite() && v.im.is_finite()))
    {
        let rows = echo.samples.nrows();
        return Err(ModelError::NonFiniteSample {
            freq_index: idx % rows,
            slow_time_index: idx / rows,
        });
    }
    let samples = echo.samples.map(|x| sat.apply(x));
    Ok(EchoData {
        samples,
        radar: echo.radar,
        aperture: echo.aperture,
    })
}

/// Horner evaluation of `Σ coefficients[n]·xⁿ`. An empty list evaluates to zero.
pub fn polynomial_transfer(coefficients: &[f64], x: Complex) -> Complex {
    coefficients
        .iter()
        .rev()
        .fold(Complex::new(0.0, 0.0), |acc, &h| acc * x + h)
}

/// Least-squares polynomial approximation of the clipper magnitude map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipperFit {
    /// `H_0 … H_order`, lowest order first.
    pub coefficients: Vec<f64>,
    /// Root-mean-square error over the fit samples.
    pub rms_residual: f64,
    /// Largest absolute error over a dense check grid of the fit domain.
    pub max_residual: f64,
    /// Upper end of the fitted domain `[0, domain_max]`.
    pub domain_max: f64,
}

/// Fits `t ↦ min(t, threshold)` on `[0, 2·threshold]`.
pub fn fit_clipper_polynomial(
    threshold: f64,
    order: usize,
    sample_count: usize,
) -> Result<ClipperFit> {
    fit_clipper_polynomial_on(threshold, order, sample_count, 2.0 * threshold)
}

/// Fits `t ↦ min(t, threshold)` on `[0, domain_max]` sampled uniformly.
pub fn fit_clipper_polynomial_on(
    threshold: f64,
    order: usize,
    sample_count: usize,
    domain_max: f64,
) -> Result<ClipperFit> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(ModelError::invalid("threshold", "must be > 0"));
    }
    if order < 1 {
        return Err(ModelError::invalid("order", "must be >= 1"));
    }
    if sample_count <= order {
        return Err(ModelError::invalid(
            "sample_count",
            format!("must exceed order {order}, got {sample_count}"),
        ));
    }
    if !(domain_max.is_finite() && domain_max > 0.0) {
        return Err(ModelError::invalid("domain_max", "must be > 0"));
    }

    // Solve in the normalized variable s = t / domain_max ∈ [0, 1], then rescale.
    let clip = |t: f64| t.min(threshold);
    let n = order + 1;
    let step = domain_max / (sample_count - 1) as f64;
    let vandermonde = DMatrix::<f64>::from_fn(sample_count, n, |i, j| {
        (i as f64 * step / domain_max).powi(j as i32)
    });
    let rhs = nalgebra::DVector::<f64>::from_fn(sample_count, |i, _| clip(i as f64 * step));

    let qr = vandermonde.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diag_min = r
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(diag_min > diag_max * 1e-13) {
        return Err(ModelError::DegenerateFit(format!(
            "order {order} with {sample_count} samples: |R| diagonal spans {diag_min:e}..{diag_max:e}"
        )));
    }
    let qt_b = qr.q().transpose() * &rhs;
    let normalized = r
        .solve_upper_triangular(&qt_b)
        .ok_or_else(|| ModelError::DegenerateFit("triangular solve failed".into()))?;

    let coefficients: Vec<f64> = normalized
        .iter()
        .enumerate()
        .map(|(j, a)| a / domain_max.powi(j as i32))
        .collect();

    let eval = |t: f64| polynomial_transfer(&coefficients, Complex::new(t, 0.0)).re;
    let sq: f64 = (0..sample_count)
        .map(|i| {
            let t = i as f64 * step;
            (eval(t) - clip(t)).powi(2)
        })
        .sum();
    let rms_residual = (sq / sample_count as f64).sqrt();

    let dense = (sample_count * 16).max(65_536);
    let max_residual = (0..dense)
        .map(|i| {
            let t = domain_max * i as f64 / (dense - 1) as f64;
            (eval(t) - clip(t)).abs()
        })
        .fold(0.0, f64::max);

    Ok(ClipperFit {
        coefficients,
        rms_residual,
        max_residual,
        domain_max,
    })
}

/// Origin of one line in the harmonic comb of a saturated echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HarmonicTerm {
    Dc,
    TargetHarmonic {
        target: usize,
        order: usize,
    },
    InterferenceHarmonic {
        interferer: usize,
        order: usize,
    },
    Cross {
        target: usize,
        interferer: usize,
        target_order: usize,
        interference_order: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicLine {
    pub apparent_range: f64,
    pub terms: Vec<HarmonicTerm>,
}

/// Apparent ranges at which a memoryless nonlinearity of order up to
/// `max_order` places energy: DC, `k·R_t`, `l·R_i` and `k·R_t + l·R_i`
/// with `k + l ≤ max_order`. Coincident ranges are merged.
pub fn predict_harmonic_ranges(
    target_ranges: &[f64],
    interferer_ranges: &[f64],
    max_order: usize,
) -> Vec<HarmonicLine> {
    let mut raw: Vec<(f64, HarmonicTerm)> = vec![(0.0, HarmonicTerm::Dc)];
    for k in 1..=max_order {
        for (t, &r) in target_ranges.iter().enumerate() {
            raw.push((
                k as f64 * r,
                HarmonicTerm::TargetHarmonic {
                    target: t,
                    order: k,
                },
            ));
        }
        for (i, &r) in interferer_ranges.iter().enumerate() {
            raw.push((
                k as f64 * r,
                HarmonicTerm::InterferenceHarmonic {
                    interferer: i,
                    order: k,
                },
            ));
        }
    }
    for k in 1..max_order {
        for l in 1..=(max_order - k) {
            for (t, &rt) in target_ranges.iter().enumerate() {
                for (i, &ri) in interferer_ranges.iter().enumerate() {
                    raw.push((
                        k as f64 * rt + l as f64 * ri,
                        HarmonicTerm::Cross {
                            target: t,
                            interferer: i,
                            target_order: k,
                            interference_order: l,
                        },
                    ));
                }
            }
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut lines: Vec<HarmonicLine> = Vec::new();
    for (range, term) in raw {
        match lines.last_mut() {
            Some(last) if (range - last.apparent_range).abs() <= 1e-9 * range.abs().max(1.0) => {
                last.terms.push(term)
            }
            _ => lines.push(HarmonicLine {
                apparent_range: range,
                terms: vec![term],
            }),
        }
    }
    lines
}
