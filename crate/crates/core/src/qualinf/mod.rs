//! Qualitative inference: the unscented Kalman filter steered by Lyapunov
//! spectra toward a target attractor type, plus parameter-space sweeps.

mod inference;
mod sweep;
mod target;

pub use inference::*;
pub use sweep::*;
pub use target::*;
