//! Simulation and evaluation toolkit for coded-aperture dual-pixel imaging.

pub mod camera;
pub mod conv;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod optimize;
pub mod psf;
pub mod recon;
pub mod registry;
pub mod render;
pub mod synth;

pub use camera::CameraConfig;
pub use error::{Error, Result};
pub use mask::{MaskPattern, MaskSpec};
pub use psf::{DpPsfModelParams, PsfPlane, PsfStack, Side};
pub use recon::{CostVolume, DefocusMap};
pub use render::{DualPixelCapture, MpiScene, NoiseParams};
