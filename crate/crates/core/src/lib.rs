//! Near-field SAR interference toolkit.
//!
//! The crate covers the whole chain from a synthetic scene to an
//! interference-free image:
//!
//! - [`model`]: stepped-frequency echo synthesis with constant-delay
//!   interferers and receiver saturation.
//! - [`imaging`]: range compression and time-domain back-projection in 2D/3D.
//! - [`suppression`]: low-rank + sparse image decomposition solved by cyclic
//!   proximal updates (soft thresholding and singular value thresholding).
//! - [`evaluation`]: peak/comb analysis, singular spectra, background
//!   subtraction and suppression metrics.
//! - [`io`]: JSON configuration, the `NFSC` binary array format, dB image
//!   export and the staged batch pipeline behind the `nfsar` binary.

pub mod evaluation;
pub mod imaging;
pub mod io;
pub mod model;
pub mod suppression;

/// Complex sample type used throughout the crate.
pub type Complex = num_complex::Complex64;

/// 3D position in meters: `x` azimuth, `y` range, `z` height.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Dense complex matrix (column-major, nalgebra).
pub type CMatrix = nalgebra::DMatrix<Complex>;

/// Vacuum propagation speed used as the default for [`model::RadarParams`].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub use evaluation::{PeakList, SuppressionReport};
pub use imaging::{ComplexImage, GridAxis, ImageGrid, RangeProfileSet};
pub use model::{
    Aperture, ApertureKind, EchoData, Interferer, PointTarget, RadarParams, Saturation, Scene,
};
pub use suppression::{DecompositionResult, SolverConfig};
