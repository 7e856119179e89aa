//! Joint maximum-likelihood estimation of the AoD and path gain from one
//! training cycle.
//!
//! With the gain concentrated out by least squares, the likelihood reduces
//! to the projection residual `||(I - Q(theta)) y||^2`, minimized over the
//! bins of a search window.

use ndarray::Array2;
use num_complex::Complex64;

use crate::array_geometry::{
    grid_angle, inner, steering_vector, ArrayConfig, BeamVector, Codebook, ResponseTable,
};
use crate::channel::{Measurement, MobilityModel};
use crate::error::{Error, Result};

/// Stacked responses below this squared norm mean the beams have a null.
pub const DEGENERATE_NORM_SQ: f64 = 1e-15;

/// Multiple of `sigma_p` the search window always covers around the prior center.
pub const WINDOW_SIGMAS: f64 = 4.0;

/// Inclusive range of grid bins searched by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchWindow {
    pub lo: usize,
    pub hi: usize,
}

impl SearchWindow {
    pub fn full(grid_size: usize) -> Self {
        Self {
            lo: 0,
            hi: grid_size - 1,
        }
    }

    pub fn contains(&self, bin: usize) -> bool {
        (self.lo..=self.hi).contains(&bin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodEstimate {
    pub bin: usize,
    pub aod_hat: f64,
    pub gain_hat: Complex64,
    pub residual: f64,
    pub window: SearchWindow,
}

/// Rank-one projector `g g^H / ||g||^2` onto the stacked noiseless response
/// `g_i = a_b(theta)^H f_i` of the transmitted beams.
pub fn projection(
    cfg: &ArrayConfig,
    theta: f64,
    beams: &[&BeamVector],
) -> Result<Array2<Complex64>> {
    if beams.is_empty() {
        return Err(Error::EmptyBeamSet);
    }
    let a = steering_vector(cfg, theta)?;
    let g: Vec<Complex64> = beams.iter().map(|f| inner(&a, &f.coefficients)).collect();
    let norm_sq: f64 = g.iter().map(|c| c.norm_sqr()).sum();
    if norm_sq < DEGENERATE_NORM_SQ {
        return Err(Error::DegenerateDirection { theta, norm_sq });
    }
    let n = g.len();
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        g[r] * g[c].conj() / norm_sq
    }))
}

/// Grid-search ML estimator with the codebook responses precomputed on the
/// estimation grid.
#[derive(Debug, Clone)]
pub struct MlEstimator {
    table: ResponseTable,
}

impl MlEstimator {
    pub fn new(codebook: &Codebook, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "estimation grid must have at least 2 bins, got {grid_size}"
            )));
        }
        Ok(Self {
            table: ResponseTable::new(codebook, grid_size),
        })
    }

    pub fn grid_size(&self) -> usize {
        self.table.grid_size()
    }

    pub fn full_window(&self) -> SearchWindow {
        SearchWindow::full(self.grid_size())
    }

    /// Returns the residual-minimizing bin in `window`; ties go to the lowest bin.
    pub fn estimate(&self, m: &Measurement, window: SearchWindow) -> Result<AodEstimate> {
        let grid = self.grid_size();
        if window.lo > window.hi || window.hi >= grid {
            return Err(Error::InvalidConfig(format!(
                "window [{}, {}] invalid for a {grid}-bin grid",
                window.lo, window.hi
            )));
        }
        if m.samples.is_empty() {
            return Err(Error::EmptyBeamSet);
        }
        if m.samples.len() != m.beam_indices.len() {
            return Err(Error::InvalidConfig(format!(
                "{} samples for {} beams",
                m.samples.len(),
                m.beam_indices.len()
            )));
        }
        let rows: Vec<&[Complex64]> = m
            .beam_indices
            .iter()
            .map(|&e| self.table.responses_of(e))
            .collect();
        let y = &m.samples;

        let mut best: Option<(usize, Complex64, f64)> = None;
        for bin in window.lo..=window.hi {
            let mut norm_sq = 0.0;
            let mut corr = Complex64::new(0.0, 0.0);
            for (row, yi) in rows.iter().zip(y) {
                let g = row[bin];
                norm_sq += g.norm_sqr();
                corr += g.conj() * yi;
            }
            if norm_sq < DEGENERATE_NORM_SQ {
                continue;
            }
            let gain = corr / norm_sq;
            let residual: f64 = rows
                .iter()
                .zip(y)
                .map(|(row, yi)| (yi - gain * row[bin]).norm_sqr())
                .sum();
            if best.is_none_or(|(_, _, r)| residual < r) {
                best = Some((bin, gain, residual));
            }
        }
        let (bin, gain_hat, residual) = best.ok_or(Error::EstimationFailed {
            lo: window.lo,
            hi: window.hi,
        })?;
        Ok(AodEstimate {
            bin,
            aod_hat: grid_angle(grid, bin),
            gain_hat,
            residual,
            window,
        })
    }
}

/// One-shot ML estimate; builds the response table on every call.
pub fn ml_estimate(
    m: &Measurement,
    codebook: &Codebook,
    grid_size: usize,
    window: SearchWindow,
) -> Result<AodEstimate> {
    MlEstimator::new(codebook, grid_size)?.estimate(m, window)
}

/// Bins spanning the two beams' steer angles, widened to cover
/// `prev_aod +- 4 sigma_p`, clamped to the grid.
pub fn search_window(
    prev_aod: f64,
    beams: (&BeamVector, &BeamVector),
    model: &MobilityModel,
    grid_size: usize,
) -> SearchWindow {
    let margin = WINDOW_SIGMAS * model.sigma_p();
    let lo = beams
        .0
        .steer_angle
        .min(beams.1.steer_angle)
        .min(prev_aod - margin)
        .max(-1.0);
    let hi = beams
        .0
        .steer_angle
        .max(beams.1.steer_angle)
        .max(prev_aod + margin)
        .min(1.0);
    let scale = grid_size as f64 / 2.0;
    let lo_pos = ((lo + 1.0) * scale + 1e-9).floor().max(0.0) as usize;
    let hi_pos = ((hi + 1.0) * scale - 1e-9).ceil().max(0.0) as usize;
    let hi_bin = hi_pos.min(grid_size - 1);
    SearchWindow {
        lo: lo_pos.min(hi_bin),
        hi: hi_bin,
    }
}
