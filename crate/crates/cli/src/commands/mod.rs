pub mod eval;
pub mod gen_psf;
pub mod optimize;
pub mod recon;
pub mod render;
pub mod synth;

use codedpix::{CameraConfig, Error, PsfStack, Result};

/// Reject a stack whose planes were generated for a different camera.
pub fn check_stack_matches(stack: &PsfStack, camera: &CameraConfig) -> Result<()> {
    let expected = camera.plane_blurs();
    let got = stack.blurs();
    let tol = 1e-6 * camera.max_blur_px.max(1.0);
    if expected.len() != got.len() || expected.iter().zip(&got).any(|(a, b)| (a - b).abs() > tol) {
        return Err(Error::Validation(format!(
            "stack has {} planes spanning {:?} px, camera expects {} planes up to {} px",
            got.len(),
            got.first().zip(got.last()),
            expected.len(),
            camera.max_blur_px
        )));
    }
    Ok(())
}
