//! PSF stacks on disk. A stack directory holds `stack.bin` (exact float64
//! kernels), one 16-bit PNG per plane and view scaled to its own peak, and
//! `manifest.txt`.
//!
//! `stack.bin` layout, all little-endian:
//! `b"DPSF"`, version `u32`, plane count `u32`, extent `u32`, coded flag `u8`,
//! plane blurs as `f64`, then for each plane the left and the right kernel
//! as row-major `f64`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{create_dir, image_io::save_png16, read_file, write_file};
use crate::error::{Error, Result};
use crate::psf::{PsfPlane, PsfStack};

const MAGIC: &[u8; 4] = b"DPSF";
pub const STACK_VERSION: u32 = 1;

pub fn encode_stack(stack: &PsfStack) -> Vec<u8> {
    let e = stack.extent();
    let mut out = Vec::with_capacity(17 + stack.len() * (8 + 16 * e * e));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&STACK_VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.len() as u32).to_le_bytes());
    out.extend_from_slice(&(e as u32).to_le_bytes());
    out.push(stack.is_coded() as u8);
    for p in stack.planes() {
        out.extend_from_slice(&p.signed_blur_px.to_le_bytes());
    }
    for p in stack.planes() {
        for k in [&p.left, &p.right] {
            for v in k.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_stack(bytes: &[u8], path: &Path) -> Result<PsfStack> {
    let bad = |r: &str| Error::format(path, r);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated stack"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != STACK_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32_at(take(4)?) as usize;
    let e = u32_at(take(4)?) as usize;
    let coded = match take(1)?[0] {
        0 => false,
        1 => true,
        _ => return Err(bad("bad coded flag")),
    };
    let mut f64s = |count: usize| -> Result<Vec<f64>> {
        Ok(take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let blurs = f64s(n)?;
    let mut planes = Vec::with_capacity(n);
    for b in blurs {
        let left = Array2::from_shape_vec((e, e), f64s(e * e)?).unwrap();
        let right = Array2::from_shape_vec((e, e), f64s(e * e)?).unwrap();
        planes.push(PsfPlane {
            signed_blur_px: b,
            left,
            right,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    PsfStack::from_planes(planes, e, coded)
}

pub fn manifest_text(stack: &PsfStack) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = dpsf");
    let _ = writeln!(s, "version = {STACK_VERSION}");
    let _ = writeln!(s, "planes = {}", stack.len());
    let _ = writeln!(s, "extent = {}", stack.extent());
    let _ = writeln!(s, "coded = {}", stack.is_coded());
    let _ = writeln!(s, "normalization = each view sums to 0.5 before coding; PNGs scaled to their own peak");
    let _ = writeln!(s, "# index blur_px left_sum right_sum left_peak right_peak");
    for (i, p) in stack.planes().iter().enumerate() {
        let peak = |k: &Array2<f64>| k.fold(0.0f64, |a, &b| a.max(b));
        let _ = writeln!(
            s,
            "plane {i} {} {} {} {} {}",
            p.signed_blur_px,
            p.left.sum(),
            p.right.sum(),
            peak(&p.left),
            peak(&p.right)
        );
    }
    s
}

pub fn save_stack_dir(dir: &Path, stack: &PsfStack) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("stack.bin"), &encode_stack(stack))?;
    for (i, p) in stack.planes().iter().enumerate() {
        for (name, k) in [("left", &p.left), ("right", &p.right)] {
            let peak = k.fold(0.0f64, |a, &b| a.max(b));
            let scaled = if peak > 0.0 { k / peak } else { k.clone() };
            save_png16(&dir.join(format!("plane_{i:02}_{name}.png")), &scaled)?;
        }
    }
    write_file(&dir.join("manifest.txt"), manifest_text(stack).as_bytes())
}

pub fn load_stack_dir(dir: &Path) -> Result<PsfStack> {
    let path = dir.join("stack.bin");
    decode_stack(&read_file(&path)?, &path)
}
