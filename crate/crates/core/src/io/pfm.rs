//! Portable float maps. Written little-endian; both byte orders are read.
//! Rows are stored bottom to top.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};

use super::{read_file, write_file};
use crate::error::{Error, Result};

/// Encode a `C x H x W` array with one or three channels.
pub fn encode_pfm(img: &Array3<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = img.dim();
    let tag = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::Shape(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(img[[ch, y, x]] as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Array3<f64>> {
    let bad = |reason: &str| Error::format(path, reason);
    // header: three whitespace-separated fields, then one whitespace byte
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1;
    let c = match fields[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("missing Pf/PF tag")),
    };
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let need = c * h * w * 4;
    let data = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated data"))?;
    let mut img = Array3::zeros((c, h, w));
    let mut chunks = data.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let b: [u8; 4] = chunks.next().unwrap().try_into().unwrap();
                let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                img[[ch, y, x]] = v as f64;
            }
        }
    }
    Ok(img)
}

pub fn write_pfm(path: &Path, img: &Array3<f64>) -> Result<()> {
    write_file(path, &encode_pfm(img)?)
}

pub fn read_pfm(path: &Path) -> Result<Array3<f64>> {
    decode_pfm(&read_file(path)?, path)
}

pub fn write_pfm_2d(path: &Path, map: &Array2<f64>) -> Result<()> {
    write_pfm(path, &map.clone().insert_axis(Axis(0)))
}

/// Read a single-channel map.
pub fn read_pfm_2d(path: &Path) -> Result<Array2<f64>> {
    let img = read_pfm(path)?;
    if img.len_of(Axis(0)) != 1 {
        return Err(Error::format(path, "expected a single-channel map"));
    }
    Ok(img.index_axis_move(Axis(0), 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_big_endian() {
        let img = Array3::from_shape_fn((3, 2, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f64 * 0.25);
        let bytes = encode_pfm(&img).unwrap();
        assert!(bytes.starts_with(b"PF\n4 2\n-1.0\n"));
        assert_eq!(decode_pfm(&bytes, Path::new("x")).unwrap(), img);

        // same content in big-endian order
        let mut be = b"PF\n4 2\n1.0\n".to_vec();
        for y in (0..2).rev() {
            for x in 0..4 {
                for c in 0..3 {
                    be.extend_from_slice(&(img[[c, y, x]] as f32).to_be_bytes());
                }
            }
        }
        assert_eq!(decode_pfm(&be, Path::new("x")).unwrap(), img);
    }

    #[test]
    fn bottom_row_first() {
        let img = Array3::from_shape_fn((1, 2, 1), |(_, y, _)| y as f64);
        let bytes = encode_pfm(&img).unwrap();
        let data = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(data[..4].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_pfm(b"P6\n1 1\n255\n", Path::new("x")).is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0", Path::new("x")).is_err());
        assert!(encode_pfm(&Array3::zeros((2, 1, 1))).is_err());
    }
}
