//! Amplitude aperture codes.
//!
//! A mask is a square grid of transmissions in `[0, 1]`. Learnable masks keep
//! their latent parameters and are generated as `sigmoid(temperature * latent)`.
//! The physical aperture is the disc inscribed in the grid; cells outside it
//! never receive light.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Zip};

use crate::error::{ensure, Error, Result};
use crate::registry::Registry;

pub const DEFAULT_MASK_SIZE: usize = 21;
pub const DEFAULT_BETA5: f64 = 1e3;

const REFERENCE_MASK: &str = include_str!("../assets/reference_mask.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPattern {
    grid: Array2<f64>,
    latent: Option<Array2<f64>>,
    temperature: f64,
    binary: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Indicator of the aperture disc inscribed in an `n x n` grid: a cell is part
/// of the aperture when any of it lies inside the circle of radius `n/2`.
pub fn aperture_disc(n: usize) -> Array2<f64> {
    disc_of_radius(n, n as f64 / 2.0)
}

fn disc_of_radius(n: usize, radius: f64) -> Array2<f64> {
    let c = n as f64 / 2.0;
    Array2::from_shape_fn((n, n), |(i, j)| {
        // nearest point of cell [i, i+1] x [j, j+1] to the grid centre
        let near = |k: usize| {
            let lo = k as f64;
            (c.clamp(lo, lo + 1.0) - c).abs()
        };
        let (dy, dx) = (near(i), near(j));
        if dy * dy + dx * dx < radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

impl MaskPattern {
    /// Fully open circular aperture.
    pub fn open(size: usize) -> Self {
        MaskPattern {
            grid: aperture_disc(size),
            latent: None,
            temperature: 0.0,
            binary: true,
        }
    }

    pub fn from_grid(grid: Array2<f64>) -> Result<Self> {
        let (h, w) = grid.dim();
        ensure(h == w && h >= 1, || format!("mask grid must be square, got {h}x{w}"))?;
        ensure(grid.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), || {
            "mask values must lie in [0, 1]".to_string()
        })?;
        let binary = grid.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(MaskPattern {
            grid,
            latent: None,
            temperature: 0.0,
            binary,
        })
    }

    /// `grid = sigmoid(temperature * latent)`.
    pub fn from_params(latent: Array2<f64>, temperature: f64) -> Result<Self> {
        let (h, w) = latent.dim();
        ensure(h == w && h >= 1, || format!("latent grid must be square, got {h}x{w}"))?;
        ensure(latent.iter().all(|v| v.is_finite()), || {
            "latent mask parameters must be finite".to_string()
        })?;
        ensure(temperature.is_finite() && temperature >= 0.0, || {
            format!("temperature must be finite and non-negative, got {temperature}")
        })?;
        let grid = latent.mapv(|t| sigmoid(temperature * t));
        Ok(MaskPattern {
            grid,
            latent: Some(latent),
            temperature,
            binary: false,
        })
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn latent(&self) -> Option<&Array2<f64>> {
        self.latent.as_ref()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn size(&self) -> usize {
        self.grid.nrows()
    }

    pub(crate) fn set_metadata(&mut self, temperature: f64, binary: bool) {
        self.temperature = temperature;
        self.binary = binary && self.grid.iter().all(|&v| v == 0.0 || v == 1.0);
    }

    /// Threshold to `{0, 1}`. Values exactly at the threshold open.
    pub fn binarize(&self, threshold: f64) -> MaskPattern {
        MaskPattern {
            grid: self.grid.mapv(|v| if v >= threshold { 1.0 } else { 0.0 }),
            latent: None,
            temperature: self.temperature,
            binary: true,
        }
    }

    /// Light through this mask relative to the open aperture of the same size.
    pub fn transmission(&self) -> f64 {
        transmission_of(self.grid.view())
    }

    pub fn regularizer(&self, beta5: f64) -> f64 {
        mask_regularizer(self.transmission(), beta5)
    }

    /// SHA-256 of the grid values, for provenance manifests.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.size() as u64).to_le_bytes());
        for v in self.grid.iter() {
            hasher.update(v.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// `sum(grid inside aperture) / sum(open aperture)`.
pub fn transmission_of(grid: ArrayView2<f64>) -> f64 {
    let open = aperture_disc(grid.nrows());
    let mut through = 0.0;
    Zip::from(&grid).and(&open).for_each(|&g, &o| through += g * o);
    through / open.sum()
}

/// Hinge penalty `beta5 * max(0, 0.5 - transmission)`.
pub fn mask_regularizer(transmission: f64, beta5: f64) -> f64 {
    beta5 * (0.5 - transmission).max(0.0)
}

/// Binary maximum-length sequence of period `2^degree - 1`, started from the
/// all-ones register.
pub fn m_sequence(degree: u32) -> Result<Vec<u8>> {
    // recurrence a[k] = xor of a[k - lag]
    let lags: &[usize] = match degree {
        2 => &[1, 2],
        3 => &[2, 3],
        4 => &[3, 4],
        5 => &[3, 5],
        6 => &[5, 6],
        7 => &[6, 7],
        8 => &[4, 5, 6, 8],
        9 => &[5, 9],
        10 => &[7, 10],
        _ => {
            return Err(Error::Validation(format!(
                "m-sequence degree must be in 2..=10, got {degree}"
            )))
        }
    };
    let n = degree as usize;
    let len = (1usize << n) - 1;
    let mut seq = vec![1u8; n];
    while seq.len() < len {
        let k = seq.len();
        let bit = lags.iter().fold(0u8, |acc, &l| acc ^ seq[k - l]);
        seq.push(bit);
    }
    Ok(seq)
}

/// Separable MLS code: outer product of an m-sequence with itself, cropped to
/// the aperture disc. The shortest sequence covering `size` is used.
pub fn mls_separable(size: usize) -> Result<MaskPattern> {
    ensure(size >= 3, || format!("mask size must be >= 3, got {size}"))?;
    let degree = (2..=10u32)
        .find(|d| (1usize << d) > size)
        .ok_or_else(|| Error::Validation(format!("mask size {size} too large for MLS code")))?;
    let seq = m_sequence(degree)?;
    let v = Array1::from_iter(seq[..size].iter().map(|&b| b as f64));
    let outer = Array2::from_shape_fn((size, size), |(i, j)| v[i] * v[j]);
    MaskPattern::from_grid(outer * aperture_disc(size))
}

/// Concentric open disc whose area is as close as possible to half the open
/// aperture.
pub fn open_half_area(size: usize) -> MaskPattern {
    let target = aperture_disc(size).sum() / 2.0;
    let full = size as f64 / 2.0;
    let mut best = (f64::INFINITY, aperture_disc(size));
    // radii sampled finely; the cell count is a step function of the radius
    for i in 1..=4000 {
        let r = full * i as f64 / 4000.0;
        let disc = disc_of_radius(size, r);
        let gap = (disc.sum() - target).abs();
        if gap < best.0 {
            best = (gap, disc);
        }
    }
    MaskPattern::from_grid(best.1).expect("disc is a valid mask")
}

/// Parse an ASCII mask: one row per line, `#` (or `1`) open, `.` (or `0`)
/// opaque.
pub fn parse_ascii_mask(text: &str) -> Result<MaskPattern> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .map(|l| {
            l.chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    '#' | '1' => Ok(1.0),
                    '.' | '0' => Ok(0.0),
                    other => Err(Error::Validation(format!("bad mask character '{other}'"))),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    ensure(n > 0 && rows.iter().all(|r| r.len() == n), || {
        "ascii mask must be a non-empty square".to_string()
    })?;
    let grid = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
    MaskPattern::from_grid(grid)
}

/// The shipped reference code: a horizontally elongated opening with two
/// opaque dots on the horizontal axis.
pub fn reference_mask() -> MaskPattern {
    parse_ascii_mask(REFERENCE_MASK).expect("shipped reference mask parses")
}

/// A source of aperture codes, selected by name.
pub trait MaskSource: Send + Sync {
    fn describe(&self) -> &'static str;
    fn build(&self, size: usize) -> Result<MaskPattern>;
}

struct OpenSource;
impl MaskSource for OpenSource {
    fn describe(&self) -> &'static str {
        "fully open circular aperture"
    }
    fn build(&self, size: usize) -> Result<MaskPattern> {
        ensure(size >= 1, || "mask size must be positive".to_string())?;
        Ok(MaskPattern::open(size))
    }
}

struct HalfAreaSource;
impl MaskSource for HalfAreaSource {
    fn describe(&self) -> &'static str {
        "open aperture with half the area"
    }
    fn build(&self, size: usize) -> Result<MaskPattern> {
        ensure(size >= 3, || format!("mask size must be >= 3, got {size}"))?;
        Ok(open_half_area(size))
    }
}

struct MlsSource;
impl MaskSource for MlsSource {
    fn describe(&self) -> &'static str {
        "separable maximum-length-sequence code"
    }
    fn build(&self, size: usize) -> Result<MaskPattern> {
        mls_separable(size)
    }
}

struct ReferenceSource;
impl MaskSource for ReferenceSource {
    fn describe(&self) -> &'static str {
        "shipped 21x21 reference code"
    }
    fn build(&self, size: usize) -> Result<MaskPattern> {
        let m = reference_mask();
        ensure(size == m.size(), || {
            format!("reference mask is {0}x{0}, requested {size}", m.size())
        })?;
        Ok(m)
    }
}

pub fn mask_sources() -> Registry<dyn MaskSource> {
    Registry::<dyn MaskSource>::new("mask")
        .with("open", Arc::new(OpenSource))
        .with("open_half_area", Arc::new(HalfAreaSource))
        .with("mls_separable", Arc::new(MlsSource))
        .with("reference", Arc::new(ReferenceSource))
}

/// Where a mask comes from: a registered name or an image file.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Named(String),
    File(PathBuf),
}

impl MaskSpec {
    /// `file:<path>` or any string naming an existing file selects a file;
    /// everything else is looked up by name.
    pub fn parse(s: &str) -> MaskSpec {
        if let Some(p) = s.strip_prefix("file:") {
            return MaskSpec::File(PathBuf::from(p));
        }
        if !mask_sources().contains(s) && Path::new(s).exists() {
            return MaskSpec::File(PathBuf::from(s));
        }
        MaskSpec::Named(s.to_string())
    }

    pub fn label(&self) -> String {
        match self {
            MaskSpec::Named(n) => n.clone(),
            MaskSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

/// Build a mask from a name or file. File masks keep their own size.
pub fn builtin_mask(spec: &MaskSpec, size: usize) -> Result<MaskPattern> {
    match spec {
        MaskSpec::Named(name) => mask_sources().get(name)?.build(size),
        MaskSpec::File(path) => crate::io::mask_io::load_mask_thresholded(path),
    }
}
