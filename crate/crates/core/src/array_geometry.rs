//! Uniform linear array responses and the two-aperture beam codebook.
//!
//! Angles are normalized, `theta = sin(phi)`, everywhere in this crate.
//! The physical angle `phi` never appears in the API.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Antenna count and element spacing of a uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    num_antennas: usize,
    spacing_ratio: f64,
}

impl ArrayConfig {
    /// `spacing_ratio` is the element spacing over the carrier wavelength.
    pub fn new(num_antennas: usize, spacing_ratio: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::InvalidConfig(
                "num_antennas must be at least 1".into(),
            ));
        }
        if !(spacing_ratio > 0.0 && spacing_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "spacing_ratio must be positive, got {spacing_ratio}"
            )));
        }
        Ok(Self {
            num_antennas,
            spacing_ratio,
        })
    }

    pub fn half_wavelength(num_antennas: usize) -> Result<Self> {
        Self::new(num_antennas, 0.5)
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }

    /// Period of the array response in normalized angle, `lambda / d`.
    pub fn grating_period(&self) -> f64 {
        1.0 / self.spacing_ratio
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::AngleOutOfRange(theta))
    }
}

#[inline]
fn phase_step(cfg: &ArrayConfig, theta: f64) -> f64 {
    2.0 * PI * cfg.spacing_ratio * theta
}

/// Unit-norm steering vector `a(theta)`, element `k` equal to
/// `exp(j 2 pi k (d/lambda) theta) / sqrt(N)`.
pub fn steering_vector(cfg: &ArrayConfig, theta: f64) -> Result<Vec<Complex64>> {
    check_angle(theta)?;
    Ok(steering_unchecked(cfg.num_antennas, cfg, theta))
}

fn steering_unchecked(active: usize, cfg: &ArrayConfig, theta: f64) -> Vec<Complex64> {
    let scale = 1.0 / (active as f64).sqrt();
    let step = phase_step(cfg, theta);
    (0..active)
        .map(|k| Complex64::from_polar(scale, step * k as f64))
        .collect()
}

/// Derivative of [`steering_vector`] with respect to the normalized angle.
pub fn steering_derivative(cfg: &ArrayConfig, theta: f64) -> Result<Vec<Complex64>> {
    check_angle(theta)?;
    let n = cfg.num_antennas;
    let scale = 1.0 / (n as f64).sqrt();
    let step = phase_step(cfg, theta);
    let w = 2.0 * PI * cfg.spacing_ratio;
    Ok((0..n)
        .map(|k| {
            let kf = k as f64;
            Complex64::new(0.0, w * kf) * Complex64::from_polar(scale, step * kf)
        })
        .collect())
}

/// `u^H v`.
#[inline]
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Center angle of bin `bin` on the uniform `grid_size`-point grid over `[-1, 1)`.
#[inline]
pub fn grid_angle(grid_size: usize, bin: usize) -> f64 {
    -1.0 + 2.0 * bin as f64 / grid_size as f64
}

/// Grid bin nearest to `theta`, clamped to the grid.
pub fn nearest_bin(grid_size: usize, theta: f64) -> usize {
    let pos = ((theta + 1.0) * grid_size as f64 / 2.0).round();
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(grid_size - 1)
    }
}

/// Beam width class of a codebook entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aperture {
    /// All elements active.
    Full,
    /// First half of the elements active, the rest switched off: a wider beam.
    Half,
}

impl Aperture {
    pub const ALL: [Aperture; 2] = [Aperture::Full, Aperture::Half];

    pub fn as_str(self) -> &'static str {
        match self {
            Aperture::Full => "full",
            Aperture::Half => "half",
        }
    }
}

impl std::fmt::Display for Aperture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Aperture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Aperture::Full),
            "half" => Ok(Aperture::Half),
            other => Err(Error::MalformedTable(format!(
                "unknown aperture class `{other}`"
            ))),
        }
    }
}

/// A unit-norm transmit beamformer taken from the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    pub coefficients: Vec<Complex64>,
    pub steer_angle: f64,
    pub aperture: Aperture,
    pub index: usize,
}

/// `grid_size` full-aperture steering beams followed by `grid_size`
/// half-aperture beams, both on the grid `-1 + 2k/grid_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    array: ArrayConfig,
    grid_size: usize,
    entries: Vec<BeamVector>,
}

impl Codebook {
    pub fn build(array: ArrayConfig, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "codebook grid_size must be at least 2, got {grid_size}"
            )));
        }
        let n = array.num_antennas;
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "half-aperture beams need an even antenna count, got {n}"
            )));
        }
        let mut entries = Vec::with_capacity(2 * grid_size);
        for aperture in Aperture::ALL {
            for k in 0..grid_size {
                let theta = grid_angle(grid_size, k);
                let coefficients = match aperture {
                    Aperture::Full => steering_unchecked(n, &array, theta),
                    Aperture::Half => {
                        let mut c = steering_unchecked(n / 2, &array, theta);
                        c.resize(n, Complex64::new(0.0, 0.0));
                        c
                    }
                };
                entries.push(BeamVector {
                    coefficients,
                    steer_angle: theta,
                    aperture,
                    index: entries.len(),
                });
            }
        }
        Ok(Self {
            array,
            grid_size,
            entries,
        })
    }

    pub fn array(&self) -> &ArrayConfig {
        &self.array
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn entries(&self) -> &[BeamVector] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &BeamVector {
        &self.entries[index]
    }

    pub fn index_of(&self, aperture: Aperture, bin: usize) -> usize {
        debug_assert!(bin < self.grid_size);
        match aperture {
            Aperture::Full => bin,
            Aperture::Half => self.grid_size + bin,
        }
    }

    /// Inverse of [`Codebook::index_of`].
    pub fn position(&self, index: usize) -> (Aperture, usize) {
        if index < self.grid_size {
            (Aperture::Full, index)
        } else {
            (Aperture::Half, index - self.grid_size)
        }
    }
}

/// Responses `a(theta_k)^H f_e` and `(da/dtheta)(theta_k)^H f_e` of every
/// codebook entry at every point of an angular grid.
///
/// The grid may be finer than the codebook grid. Storage is entry-major.
#[derive(Debug, Clone)]
pub struct ResponseTable {
    grid_size: usize,
    response: Vec<Complex64>,
    derivative: Vec<Complex64>,
}

impl ResponseTable {
    pub fn new(codebook: &Codebook, grid_size: usize) -> Self {
        let array = codebook.array();
        let steering: Vec<Vec<Complex64>> = (0..grid_size)
            .map(|k| steering_unchecked(array.num_antennas, array, grid_angle(grid_size, k)))
            .collect();
        let w = 2.0 * PI * array.spacing_ratio;
        let mut response = Vec::with_capacity(codebook.len() * grid_size);
        let mut derivative = Vec::with_capacity(codebook.len() * grid_size);
        for beam in codebook.entries() {
            for a in &steering {
                let mut r = Complex64::new(0.0, 0.0);
                let mut d = Complex64::new(0.0, 0.0);
                for (k, (ak, fk)) in a.iter().zip(&beam.coefficients).enumerate() {
                    let t = ak.conj() * fk;
                    r += t;
                    // conj(j w k a_k) = -j w k conj(a_k)
                    d += Complex64::new(0.0, -w * k as f64) * t;
                }
                response.push(r);
                derivative.push(d);
            }
        }
        Self {
            grid_size,
            response,
            derivative,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    #[inline]
    pub fn response(&self, entry: usize, bin: usize) -> Complex64 {
        self.response[entry * self.grid_size + bin]
    }

    #[inline]
    pub fn derivative(&self, entry: usize, bin: usize) -> Complex64 {
        self.derivative[entry * self.grid_size + bin]
    }

    /// All grid responses of one entry.
    #[inline]
    pub fn responses_of(&self, entry: usize) -> &[Complex64] {
        &self.response[entry * self.grid_size..(entry + 1) * self.grid_size]
    }
}
