//! Single-path channel state, Markov AoD dynamics and the beam-training
//! observation models.
//!
//! Every measurement carries complex Gaussian noise of total variance
//! `2 * noise_var` (`noise_var` per real component). The reporting SNR is
//! `E|beta|^2 / (2 * noise_var)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::array_geometry::{
    grid_angle, inner, nearest_bin, steering_vector, ArrayConfig, BeamVector,
};
use crate::error::{Error, Result};

/// True propagation state of the line-of-sight path in one training cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub aod: f64,
    pub aoa: f64,
    pub gain: Complex64,
}

/// Gaussian random-walk mobility: `theta(t) = theta(t-1) + N(0, sigma_p^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityModel {
    sigma_p: f64,
}

impl MobilityModel {
    pub fn new(sigma_p: f64) -> Result<Self> {
        if !(sigma_p >= 0.0 && sigma_p.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_p must be nonnegative, got {sigma_p}"
            )));
        }
        Ok(Self { sigma_p })
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }
}

/// Received samples of one training cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub samples: Vec<Complex64>,
    pub beam_indices: Vec<usize>,
    pub noise_var: f64,
}

/// Discretized distribution of the next-cycle AoD over the angular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AodPrior {
    grid_size: usize,
    mass: Vec<f64>,
}

impl AodPrior {
    /// Unit mass on the bin nearest `theta`.
    pub fn point_mass(grid_size: usize, theta: f64) -> Self {
        let mut mass = vec![0.0; grid_size];
        mass[nearest_bin(grid_size, theta)] = 1.0;
        Self { grid_size, mass }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn angle(&self, bin: usize) -> f64 {
        grid_angle(self.grid_size, bin)
    }
}

/// Folds `x` into `[-1, 1)` by reflection at both ends.
pub fn reflect_into_domain(x: f64) -> f64 {
    let y = (x + 1.0).rem_euclid(4.0);
    let folded = if y < 2.0 { y - 1.0 } else { 3.0 - y };
    if folded >= 1.0 {
        // The reflection maps exactly onto the excluded endpoint.
        1.0 - f64::EPSILON
    } else {
        folded
    }
}

/// One step of the AoD random walk.
pub fn evolve_aod<R: Rng + ?Sized>(prev: f64, model: &MobilityModel, rng: &mut R) -> f64 {
    if model.sigma_p == 0.0 {
        return prev;
    }
    let step: f64 = rng.sample(StandardNormal);
    reflect_into_domain(prev + model.sigma_p * step)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that the reflected walk started at `prev` lands in `[lo, hi)`.
fn reflected_interval_mass(prev: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let gaussian =
        |a: f64, b: f64| std_normal_cdf((b - prev) / sigma) - std_normal_cdf((a - prev) / sigma);
    let images = (10.0 * sigma / 4.0).ceil() as i64 + 1;
    let mut total = 0.0;
    for n in -images..=images {
        let shift = 4.0 * n as f64;
        total += gaussian(lo + shift, hi + shift);
        total += gaussian(2.0 - hi + shift, 2.0 - lo + shift);
    }
    total
}

/// Discretizes the one-step transition density around `prev` onto the
/// `grid_size`-point grid.
///
/// Bin `k` collects the mass of the cell of angles nearest to its grid point,
/// `[theta_k - delta/2, theta_k + delta/2)`, clipped to `[-1, 1]`; the last
/// bin also takes `[1 - delta/2, 1]`. Mass leaving the domain is folded back
/// by reflection, consistent with [`evolve_aod`].
pub fn discretize_aod_prior(prev: f64, model: &MobilityModel, grid_size: usize) -> AodPrior {
    let sigma = model.sigma_p;
    if sigma == 0.0 {
        return AodPrior::point_mass(grid_size, prev);
    }
    let half = 1.0 / grid_size as f64;
    let mut mass: Vec<f64> = (0..grid_size)
        .map(|k| {
            let center = grid_angle(grid_size, k);
            let lo = (center - half).max(-1.0);
            let hi = if k + 1 == grid_size {
                1.0
            } else {
                center + half
            };
            reflected_interval_mass(prev, sigma, lo, hi).max(0.0)
        })
        .collect();
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    AodPrior { grid_size, mass }
}

/// Circularly-symmetric complex Gaussian path gain with `E|beta|^2 = 1`.
pub fn sample_gain<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `H = sqrt(N_b N_m) * sum_l beta_l a_m(aoa_l) a_b(aod_l)^H`, shape `N_m x N_b`.
pub fn channel_matrix(
    paths: &[PathState],
    tx: &ArrayConfig,
    rx: &ArrayConfig,
) -> Result<Array2<Complex64>> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig(
            "channel needs at least one path".into(),
        ));
    }
    let (nb, nm) = (tx.num_antennas(), rx.num_antennas());
    let scale = ((nb * nm) as f64).sqrt();
    let mut h = Array2::zeros((nm, nb));
    for path in paths {
        let ab = steering_vector(tx, path.aod)?;
        let am = steering_vector(rx, path.aoa)?;
        for (r, amr) in am.iter().enumerate() {
            for (c, abc) in ab.iter().enumerate() {
                h[(r, c)] += path.gain * scale * amr * abc.conj();
            }
        }
    }
    Ok(h)
}

/// Steering vectors at every point of the `grid_size` grid, one per column.
pub fn grid_dictionary(cfg: &ArrayConfig, grid_size: usize) -> Array2<Complex64> {
    let n = cfg.num_antennas();
    let mut a = Array2::zeros((n, grid_size));
    for k in 0..grid_size {
        let col = steering_vector(cfg, grid_angle(grid_size, k)).expect("grid angle in range");
        for (r, v) in col.into_iter().enumerate() {
            a[(r, k)] = v;
        }
    }
    a
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Column-major vectorization.
pub fn vectorize(m: &Array2<Complex64>) -> Vec<Complex64> {
    m.t().iter().copied().collect()
}

/// Sensing operator of the vectorized angular-domain model,
/// `F^T conj(A_b) (x) W^H A_m`, mapping `vec(H_v)` to `vec(W^H H F)`.
pub fn angular_sensing_operator(
    beams: &Array2<Complex64>,
    combiners: &Array2<Complex64>,
    tx_dictionary: &Array2<Complex64>,
    rx_dictionary: &Array2<Complex64>,
) -> Array2<Complex64> {
    let left = beams.t().dot(&tx_dictionary.mapv(|c| c.conj()));
    let right = combiners.t().mapv(|c| c.conj()).dot(rx_dictionary);
    kron(&left, &right)
}

/// Draws one complex noise sample of total variance `2 * noise_var`.
#[inline]
pub fn noise_sample<R: Rng + ?Sized>(noise_var: f64, rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * noise_var.sqrt()
}

/// Received samples `beta * a_b(aod)^H f_i + n_i` for each transmitted beam,
/// with the receiver combining ideally on the known AoA.
pub fn observe<R: Rng + ?Sized>(
    tx: &ArrayConfig,
    path: &PathState,
    beams: &[&BeamVector],
    noise_var: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if beams.is_empty() {
        return Err(Error::EmptyBeamSet);
    }
    if noise_var.is_nan() || noise_var < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise variance must be nonnegative, got {noise_var}"
        )));
    }
    let ab = steering_vector(tx, path.aod)?;
    let samples = beams
        .iter()
        .map(|f| path.gain * inner(&ab, &f.coefficients) + noise_sample(noise_var, rng))
        .collect();
    Ok(Measurement {
        samples,
        beam_indices: beams.iter().map(|f| f.index).collect(),
        noise_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::Codebook;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_mobility_is_static() {
        let m = MobilityModel::new(0.0).unwrap();
        let mut r = rng(1);
        assert_eq!(evolve_aod(0.123, &m, &mut r), 0.123);
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(MobilityModel::new(-0.1).is_err());
        assert!(MobilityModel::new(f64::NAN).is_err());
    }

    #[test]
    fn increment_std_matches_sigma() {
        let m = MobilityModel::new(0.05).unwrap();
        let mut r = rng(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| evolve_aod(0.0, &m, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        assert!((0.049..=0.051).contains(&sd), "sample std {sd}");
    }

    #[test]
    fn reflection_keeps_walk_inside() {
        assert!(reflect_into_domain(0.999 + 0.5) < 1.0);
        assert!((reflect_into_domain(1.2) - 0.8).abs() < 1e-15);
        assert!((reflect_into_domain(-1.3) + 0.7).abs() < 1e-15);
        assert!(reflect_into_domain(1.0) < 1.0);
        assert_eq!(reflect_into_domain(-1.0), -1.0);
        assert!((reflect_into_domain(5.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn long_walk_stays_in_domain() {
        let m = MobilityModel::new(0.2).unwrap();
        let mut r = rng(3);
        let mut x = 0.999;
        for _ in 0..1_000_000 {
            x = evolve_aod(x, &m, &mut r);
            assert!((-1.0..1.0).contains(&x));
        }
    }

    #[test]
    fn degenerate_prior_is_point_mass() {
        let m = MobilityModel::new(0.0).unwrap();
        let p = discretize_aod_prior(0.31, &m, 192);
        let bin = nearest_bin(192, 0.31);
        assert_eq!(p.mass()[bin], 1.0);
        assert_eq!(p.mass().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn prior_is_normalized() {
        for (prev, sigma) in [(0.0, 0.1), (0.97, 0.05), (-0.99, 0.2), (0.5, 0.01)] {
            let p = discretize_aod_prior(prev, &MobilityModel::new(sigma).unwrap(), 192);
            let s: f64 = p.mass().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.mass().iter().all(|&m| m >= 0.0));
        }
    }

    /// Midpoint-rule integration of the reflected Gaussian density.
    fn quadrature_mass(prev: f64, sigma: f64, lo: f64, hi: f64, points: usize) -> f64 {
        let density = |x: f64| {
            let g = |c: f64| {
                (-(x - c).powi(2) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            // direct term plus the two nearest mirror images
            g(prev) + g(2.0 - prev) + g(-2.0 - prev)
        };
        let h = (hi - lo) / points as f64;
        (0..points)
            .map(|i| density(lo + (i as f64 + 0.5) * h) * h)
            .sum()
    }

    #[test]
    fn prior_matches_quadrature() {
        let (prev, sigma, m) = (0.0, 0.1, 192);
        let p = discretize_aod_prior(prev, &MobilityModel::new(sigma).unwrap(), m);
        let half = 1.0 / m as f64;
        let mut worst = 0.0f64;
        for k in 0..m {
            let c = grid_angle(m, k);
            let lo = (c - half).max(-1.0);
            let hi = if k + 1 == m { 1.0 } else { c + half };
            let q = quadrature_mass(prev, sigma, lo, hi, 10_000);
            worst = worst.max((q - p.mass()[k]).abs());
        }
        assert!(worst < 1e-6, "worst bin error {worst}");
    }

    #[test]
    fn prior_near_edge_matches_quadrature() {
        let (prev, sigma, m) = (0.93, 0.05, 96);
        let p = discretize_aod_prior(prev, &MobilityModel::new(sigma).unwrap(), m);
        let half = 1.0 / m as f64;
        for k in 0..m {
            let c = grid_angle(m, k);
            let lo = (c - half).max(-1.0);
            let hi = if k + 1 == m { 1.0 } else { c + half };
            let q = quadrature_mass(prev, sigma, lo, hi, 10_000);
            assert!((q - p.mass()[k]).abs() < 1e-6, "bin {k}");
        }
    }

    #[test]
    fn prior_is_symmetric_about_on_grid_center() {
        let m = 192;
        let p = discretize_aod_prior(0.0, &MobilityModel::new(0.1).unwrap(), m);
        let c = m / 2;
        for j in 1..c {
            assert!((p.mass()[c + j] - p.mass()[c - j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_moments() {
        let mut r = rng(4);
        let n = 100_000;
        let draws: Vec<Complex64> = (0..n).map(|_| sample_gain(&mut r)).collect();
        let mean: Complex64 = draws.iter().sum::<Complex64>() / n as f64;
        let power = draws.iter().map(|b| b.norm_sqr()).sum::<f64>() / n as f64;
        let var_re = draws.iter().map(|b| b.re * b.re).sum::<f64>() / n as f64;
        let var_im = draws.iter().map(|b| b.im * b.im).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.01);
        assert!((0.99..=1.01).contains(&power), "E|b|^2 = {power}");
        assert!((var_re - 0.5).abs() < 0.01 && (var_im - 0.5).abs() < 0.01);
    }

    #[test]
    fn gain_sequence_is_seed_deterministic() {
        let a: Vec<_> = (0..10).scan(rng(9), |r, _| Some(sample_gain(r))).collect();
        let b: Vec<_> = (0..10).scan(rng(9), |r, _| Some(sample_gain(r))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn broadside_channel_is_all_ones() {
        let cfg = ArrayConfig::half_wavelength(4).unwrap();
        let path = PathState {
            aod: 0.0,
            aoa: 0.0,
            gain: Complex64::new(1.0, 0.0),
        };
        let h = channel_matrix(&[path], &cfg, &cfg).unwrap();
        for v in h.iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    /// Numerical rank from the Gram matrix eigenvalues via nalgebra.
    fn numerical_rank(h: &Array2<Complex64>, tol: f64) -> usize {
        let (r, c) = h.dim();
        let m = nalgebra::DMatrix::from_fn(r, c, |i, j| h[(i, j)]);
        let sv = m.singular_values();
        let top = sv.max();
        sv.iter().filter(|s| **s > tol * top).count()
    }

    #[test]
    fn single_path_channel_is_rank_one() {
        let tx = ArrayConfig::half_wavelength(8).unwrap();
        let rx = ArrayConfig::half_wavelength(6).unwrap();
        let path = PathState {
            aod: 0.31,
            aoa: -0.55,
            gain: Complex64::new(0.3, -1.2),
        };
        let h = channel_matrix(&[path], &tx, &rx).unwrap();
        assert_eq!(h.dim(), (6, 8));
        assert_eq!(numerical_rank(&h, 1e-9), 1);
    }

    #[test]
    fn vectorized_model_matches_direct_measurement() {
        let n = 4;
        let m = 8;
        let tx = ArrayConfig::half_wavelength(n).unwrap();
        let rx = ArrayConfig::half_wavelength(n).unwrap();
        let (aod_bin, aoa_bin) = (5, 2);
        let gain = Complex64::new(0.7, 0.4);
        let path = PathState {
            aod: grid_angle(m, aod_bin),
            aoa: grid_angle(m, aoa_bin),
            gain,
        };
        let h = channel_matrix(&[path], &tx, &rx).unwrap();
        let a_b = grid_dictionary(&tx, m);
        let a_m = grid_dictionary(&rx, m);
        let mut h_v = Array2::zeros((m, m));
        h_v[(aoa_bin, aod_bin)] = gain * ((n * n) as f64).sqrt();

        let mut r = rng(5);
        let rand_c =
            |r: &mut ChaCha8Rng| Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5);
        let f = Array2::from_shape_fn((n, 3), |_| rand_c(&mut r));
        let w = Array2::from_shape_fn((n, 3), |_| rand_c(&mut r));

        let direct = vectorize(&w.t().mapv(|c| c.conj()).dot(&h).dot(&f));
        let op = angular_sensing_operator(&f, &w, &a_b, &a_m);
        let hv = ndarray::Array1::from(vectorize(&h_v));
        let via_dictionary = op.dot(&hv);
        assert_eq!(direct.len(), via_dictionary.len());
        for (x, y) in direct.iter().zip(via_dictionary.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
        // also (F^T (x) W^H) vec(H)
        let kf = kron(&f.t().to_owned(), &w.t().mapv(|c| c.conj()));
        let via_kron = kf.dot(&ndarray::Array1::from(vectorize(&h)));
        for (x, y) in direct.iter().zip(via_kron.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    fn beams(cb: &Codebook, idx: &[usize]) -> Vec<BeamVector> {
        idx.iter().map(|&i| cb.entry(i).clone()).collect()
    }

    #[test]
    fn matched_beam_returns_gain() {
        let cfg = ArrayConfig::half_wavelength(32).unwrap();
        let cb = Codebook::build(cfg, 192).unwrap();
        let b = beams(&cb, &[40]);
        let path = PathState {
            aod: b[0].steer_angle,
            aoa: 0.0,
            gain: Complex64::new(-0.4, 0.9),
        };
        let m = observe(&cfg, &path, &[&b[0]], 0.0, &mut rng(6)).unwrap();
        assert!((m.samples[0] - path.gain).norm() < 1e-14);
        assert_eq!(m.beam_indices, vec![40]);
    }

    #[test]
    fn noiseless_sample_matches_inner_product_loop() {
        let cfg = ArrayConfig::half_wavelength(4).unwrap();
        let steer = steering_vector(&cfg, 0.5).unwrap();
        let f = BeamVector {
            coefficients: steer,
            steer_angle: 0.5,
            aperture: crate::array_geometry::Aperture::Full,
            index: 0,
        };
        let gain = Complex64::new(1.3, -0.2);
        let path = PathState {
            aod: 0.0,
            aoa: 0.0,
            gain,
        };
        let m = observe(&cfg, &path, &[&f], 0.0, &mut rng(7)).unwrap();
        // a_b(0) = [1,1,1,1]/2, f_k = exp(j pi k / 2)/2
        let mut expected = Complex64::new(0.0, 0.0);
        for k in 0..4 {
            let phase = std::f64::consts::PI * 0.5 * k as f64;
            expected += Complex64::new(phase.cos(), phase.sin()) / 4.0;
        }
        assert!((m.samples[0] - gain * expected).norm() < 1e-14);
    }

    #[test]
    fn measurement_noise_has_twice_noise_var() {
        let cfg = ArrayConfig::half_wavelength(8).unwrap();
        let cb = Codebook::build(cfg, 16).unwrap();
        let b = cb.entry(3);
        let path = PathState {
            aod: 0.1,
            aoa: 0.0,
            gain: Complex64::new(1.0, 0.0),
        };
        let mut r = rng(8);
        let n = 100_000;
        let s: Vec<Complex64> = (0..n)
            .map(|_| observe(&cfg, &path, &[b], 0.5, &mut r).unwrap().samples[0])
            .collect();
        let mean: Complex64 = s.iter().sum::<Complex64>() / n as f64;
        let var = s.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn observe_is_linear_in_gain() {
        let cfg = ArrayConfig::half_wavelength(16).unwrap();
        let cb = Codebook::build(cfg, 32).unwrap();
        let bs = beams(&cb, &[3, 40]);
        let refs: Vec<&BeamVector> = bs.iter().collect();
        let mut path = PathState {
            aod: -0.27,
            aoa: 0.0,
            gain: Complex64::new(0.25, 0.5),
        };
        let y1 = observe(&cfg, &path, &refs, 0.0, &mut rng(1)).unwrap();
        path.gain *= 2.0;
        let y2 = observe(&cfg, &path, &refs, 0.0, &mut rng(1)).unwrap();
        for (a, b) in y1.samples.iter().zip(&y2.samples) {
            assert_eq!(*a * 2.0, *b);
        }
    }

    #[test]
    fn observe_rejects_empty_beams() {
        let cfg = ArrayConfig::half_wavelength(4).unwrap();
        let path = PathState {
            aod: 0.0,
            aoa: 0.0,
            gain: Complex64::new(1.0, 0.0),
        };
        assert_eq!(
            observe(&cfg, &path, &[], 0.1, &mut rng(1)),
            Err(Error::EmptyBeamSet)
        );
    }
}
