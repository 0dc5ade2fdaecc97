//! Diffusion-weighted MRI toolkit: mono-exponential ADC fitting and high-b
//! extrapolation, the preprocessing/normalization pipeline, b-value-aware
//! dynamic convolution filters with their loss dispatch rules, the full
//! lesion-detection evaluation protocol (candidates, matching, FROC,
//! bootstrapped case-level AUC, image quality, zone attribution), and a
//! synthetic phantom generator that closes the verification loop.
//!
//! Volumes are carried as f64 in memory and stored as f32 in the HVOL
//! interchange format.

pub mod dynfilter;
pub mod error;
pub mod eval;
pub mod hvol;
pub mod losses;
pub mod phantom;
pub mod preprocess;
pub mod sidecar;
pub mod signal;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{MaskVolume, Volume3D};
