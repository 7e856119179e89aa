//! Cramer-Rao lower bound on the AoD when the complex path gain is a
//! nuisance parameter, and its average under the discretized AoD prior.
//!
//! With `g_i = a_b(theta)^H f_i` and `g'_i = (da_b/dtheta)^H f_i` the
//! bound is `[Q - 2 Re{P C P^*}]^-1` where
//!
//! ```text
//! Q = |beta|^2 ||g'||^2 / sigma^2
//! P = |beta|^2 <g, g'> / (2 sigma^2)
//! C = 2 sigma^2 / (|beta|^2 ||g||^2)
//! ```
//!
//! The subtracted term removes the part of the angle information that is
//! indistinguishable from a change of the unknown gain.

use num_complex::Complex64;

use crate::array_geometry::{
    grid_angle, inner, steering_derivative, steering_vector, ArrayConfig, BeamVector,
};
use crate::channel::AodPrior;
use crate::error::{Error, Result};
use crate::estimation::DEGENERATE_NORM_SQ;

/// Relative size below which the information bracket counts as zero.
const BRACKET_RTOL: f64 = 1e-12;

/// Deficient prior bins cost this multiple of the worst finite bin.
pub const DEFICIT_PENALTY_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy)]
pub struct CrlbInputs<'a> {
    pub gain: Complex64,
    pub noise_var: f64,
    pub theta: f64,
    pub beams: [&'a BeamVector; 2],
}

fn check_noise_and_power(gain_power: f64, noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    if !(gain_power > 0.0 && gain_power.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gain power must be positive, got {gain_power}"
        )));
    }
    Ok(())
}

/// Bound from the stacked responses `g` and their angle derivatives `dg`.
///
/// Returns `None` when the beams carry no angle information at this angle.
#[inline]
pub fn crlb_from_responses(
    gain_power: f64,
    noise_var: f64,
    g: &[Complex64],
    dg: &[Complex64],
) -> Option<f64> {
    let mut g_sq = 0.0;
    let mut dg_sq = 0.0;
    let mut cross = Complex64::new(0.0, 0.0);
    for (a, b) in g.iter().zip(dg) {
        g_sq += a.norm_sqr();
        dg_sq += b.norm_sqr();
        cross += a.conj() * b;
    }
    bound_from_moments(gain_power, noise_var, g_sq, dg_sq, cross)
}

#[inline]
pub(crate) fn bound_from_moments(
    gain_power: f64,
    noise_var: f64,
    g_sq: f64,
    dg_sq: f64,
    cross: Complex64,
) -> Option<f64> {
    if g_sq < DEGENERATE_NORM_SQ {
        return None;
    }
    let q = gain_power * dg_sq / noise_var;
    let p = cross * (gain_power / (2.0 * noise_var));
    let c = 2.0 * noise_var / (gain_power * g_sq);
    let bracket = q - 2.0 * (p * c * p.conj()).re;
    if bracket.is_nan() || bracket <= BRACKET_RTOL * q {
        return None;
    }
    Some(1.0 / bracket)
}

/// Closed-form CRLB of the AoD for the two-beam measurement.
pub fn crlb_aod(cfg: &ArrayConfig, inp: &CrlbInputs<'_>) -> Result<f64> {
    let gain_power = inp.gain.norm_sqr();
    check_noise_and_power(gain_power, inp.noise_var)?;
    let a = steering_vector(cfg, inp.theta)?;
    let da = steering_derivative(cfg, inp.theta)?;
    let g = inp.beams.map(|f| inner(&a, &f.coefficients));
    let dg = inp.beams.map(|f| inner(&da, &f.coefficients));
    crlb_from_responses(gain_power, inp.noise_var, &g, &dg)
        .ok_or(Error::InformationDeficit { theta: inp.theta })
}

/// Prior-weighted sum of per-bin bounds.
///
/// Bins where `bound_at` yields `None` are charged
/// `DEFICIT_PENALTY_FACTOR` times the largest finite bound among the
/// bins with positive mass. Bins with zero mass are never evaluated.
pub fn average_with_penalty(
    mass: &[f64],
    mut bound_at: impl FnMut(usize) -> Option<f64>,
) -> Result<f64> {
    let mut finite = 0.0;
    let mut deficit_mass = 0.0;
    let mut worst = 0.0f64;
    let mut any_finite = false;
    for (bin, &w) in mass.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        match bound_at(bin) {
            Some(v) => {
                finite += w * v;
                worst = worst.max(v);
                any_finite = true;
            }
            None => deficit_mass += w,
        }
    }
    if !any_finite {
        return Err(Error::SelectionInfeasible);
    }
    Ok(finite + deficit_mass * DEFICIT_PENALTY_FACTOR * worst)
}

/// CRLB averaged over the discretized AoD prior.
pub fn average_crlb(
    cfg: &ArrayConfig,
    beams: [&BeamVector; 2],
    prior: &AodPrior,
    gain_power: f64,
    noise_var: f64,
) -> Result<f64> {
    check_noise_and_power(gain_power, noise_var)?;
    let gain = Complex64::new(gain_power.sqrt(), 0.0);
    average_with_penalty(prior.mass(), |bin| {
        let inp = CrlbInputs {
            gain,
            noise_var,
            theta: prior.angle(bin),
            beams,
        };
        crlb_aod(cfg, &inp).ok()
    })
}

/// `(theta, bound)` at every point of a `grid_size` grid; `None` marks
/// angles where the pair carries no angle information.
pub fn crlb_curve(
    cfg: &ArrayConfig,
    beams: [&BeamVector; 2],
    gain_power: f64,
    noise_var: f64,
    grid_size: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    check_noise_and_power(gain_power, noise_var)?;
    let gain = Complex64::new(gain_power.sqrt(), 0.0);
    Ok((0..grid_size)
        .map(|k| {
            let theta = grid_angle(grid_size, k);
            let inp = CrlbInputs {
                gain,
                noise_var,
                theta,
                beams,
            };
            (theta, crlb_aod(cfg, &inp).ok())
        })
        .collect())
}

#[derive(serde::Serialize)]
struct CurveRow {
    theta: f64,
    crlb: Option<f64>,
}

/// `theta,crlb` CSV; information-deficient angles have an empty `crlb`.
pub fn write_curve_csv<W: std::io::Write>(
    curve: &[(f64, Option<f64>)],
    w: W,
) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for &(theta, crlb) in curve {
        csv.serialize(CurveRow { theta, crlb })?;
    }
    csv.flush()
}
