//! Lyapunov spectrum estimation for ODE models and qualitative parameter
//! inference with the unscented Kalman filter.

pub mod dsl;
pub mod error;
pub mod lyapunov;
pub mod models;
pub mod odeint;
pub mod qualinf;
pub mod rng;
pub mod ukf;

pub use error::{Error, Result};
pub use lyapunov::{AttractorClass, Classification, LeConfig, LyapunovSpectrum, SpectrumReport};
pub use models::{builtin, builtin_source, ModelSystem, BUILTIN_MODELS};
