//! Closed-loop Monte-Carlo simulation of the tracking protocol.
//!
//! A trial is one AoD trajectory of `horizon` training cycles. The proposed
//! scheme and the fixed-pair baseline start with one beam-cycling cycle and
//! then transmit two beams per cycle, steered by the estimate fed back from
//! the previous cycle. The beam-cycling baseline sweeps `n_beams` uniform
//! beams every cycle.
//!
//! All randomness is derived from `(seed, trial, cycle, stream)`, so every
//! scheme sees the same trajectories, gains and noise draws, and the
//! results do not depend on how trials are spread over worker threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::array_geometry::{grid_angle, nearest_bin, Aperture, ArrayConfig, BeamVector, Codebook};
use crate::beam_select::{BeamSelector, LookupTable, DEFAULT_LUT_SIGMAS};
use crate::channel::{
    evolve_aod, observe, reflect_into_domain, sample_gain, MobilityModel, PathState,
};
use crate::error::{Error, Result};
use crate::estimation::{search_window, AodEstimate, MlEstimator, SearchWindow};

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Two LUT-selected beams centered on the fed-back estimate.
    Proposed,
    /// `n_beams` full-aperture beams at uniformly spaced directions.
    BeamCycling { n_beams: usize },
    /// Two full-aperture beams `offset_bins` either side of the fed-back estimate.
    FixedPair { offset_bins: usize },
}

impl Scheme {
    pub fn beams_per_cycle(&self) -> usize {
        match self {
            Scheme::Proposed | Scheme::FixedPair { .. } => 2,
            Scheme::BeamCycling { n_beams } => *n_beams,
        }
    }

    /// The three schemes of the standard comparison.
    pub fn standard_set() -> [Scheme; 3] {
        [
            Scheme::Proposed,
            Scheme::BeamCycling { n_beams: 32 },
            Scheme::FixedPair { offset_bins: 5 },
        ]
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Proposed => f.write_str("proposed"),
            Scheme::BeamCycling { n_beams } => write!(f, "beam_cycling_{n_beams}"),
            Scheme::FixedPair { offset_bins } => write!(f, "fixed_pair_{offset_bins}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts `proposed`, `cycling:N` and `fixed:K`, as well as the
    /// `beam_cycling_N` / `fixed_pair_K` display names.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad scheme parameter in `{s}`")))
        };
        if s == "proposed" {
            return Ok(Scheme::Proposed);
        }
        if let Some(v) = s
            .strip_prefix("cycling:")
            .or_else(|| s.strip_prefix("beam_cycling_"))
        {
            return Ok(Scheme::BeamCycling { n_beams: num(v)? });
        }
        if let Some(v) = s
            .strip_prefix("fixed:")
            .or_else(|| s.strip_prefix("fixed_pair_"))
        {
            return Ok(Scheme::FixedPair {
                offset_bins: num(v)?,
            });
        }
        Err(Error::InvalidConfig(format!("unknown scheme `{s}`")))
    }
}

/// Where the two-beam schemes center the next cycle's beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorCenter {
    /// The estimate fed back from the previous cycle.
    #[default]
    PreviousEstimate,
    /// The true previous AoD (genie feedback, for ablation).
    PreviousTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainModel {
    /// Circularly-symmetric complex Gaussian, redrawn every cycle.
    #[default]
    Rayleigh,
    /// Unit modulus with uniform random phase.
    UnitModulus,
}

/// An extra AoD displacement applied at the start of `cycle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectedJump {
    pub cycle: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub spacing_ratio: f64,
    /// Codebook grid size M.
    pub grid_size: usize,
    /// Grid searched by the estimator; a multiple of `grid_size` keeps the
    /// codebook directions on it.
    pub estimation_grid: usize,
    pub sigma_p: f64,
    /// `f64::INFINITY` means noiseless.
    pub snr_db_list: Vec<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub cold_start_beams: usize,
    /// Leading cycles excluded from aggregate errors.
    pub warmup: usize,
    pub prior_center: PriorCenter,
    pub gain_model: GainModel,
    /// Snap the true AoD to the estimation grid after every step.
    pub on_grid: bool,
    pub injected_jump: Option<InjectedJump>,
    pub lut_sigmas: Vec<f64>,
    pub lut_noise_var: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tx: 32,
            n_rx: 32,
            spacing_ratio: 0.5,
            grid_size: 192,
            estimation_grid: 192,
            sigma_p: 0.05,
            snr_db_list: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            horizon: 100,
            trials: 1000,
            scheme: Scheme::Proposed,
            seed: 1,
            cold_start_beams: 32,
            warmup: 5,
            prior_center: PriorCenter::PreviousEstimate,
            gain_model: GainModel::Rayleigh,
            on_grid: false,
            injected_jump: None,
            lut_sigmas: DEFAULT_LUT_SIGMAS.to_vec(),
            lut_noise_var: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.estimation_grid < self.grid_size
            || !self.estimation_grid.is_multiple_of(self.grid_size)
        {
            return bad(format!(
                "estimation_grid {} must be a multiple of grid_size {}",
                self.estimation_grid, self.grid_size
            ));
        }
        if self.snr_db_list.iter().any(|s| s.is_nan()) {
            return bad("snr_db values must be numbers".into());
        }
        if self.cold_start_beams == 0 || self.cold_start_beams > self.grid_size {
            return bad(format!(
                "cold_start_beams must be in 1..={}, got {}",
                self.grid_size, self.cold_start_beams
            ));
        }
        match self.scheme {
            Scheme::BeamCycling { n_beams } if n_beams == 0 || n_beams > self.grid_size => {
                return bad(format!("beam cycling needs 1..={} beams", self.grid_size))
            }
            Scheme::FixedPair { offset_bins: 0 } => {
                return bad("fixed pair offset must be at least 1 bin".into())
            }
            _ => {}
        }
        MobilityModel::new(self.sigma_p)?;
        Ok(())
    }
}

/// Noise variance per real component for a reporting SNR of `snr_db`,
/// with `E|beta|^2 = 1`.
pub fn noise_var_for_snr(snr_db: f64) -> f64 {
    0.5 * 10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Trajectory = 1,
    Gain = 2,
    Noise = 3,
}

fn stream_rng(seed: u64, trial: u64, cycle: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(&cycle.to_le_bytes());
    key[24..].copy_from_slice(&(stream as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t: usize,
    pub true_aod: f64,
    pub est_aod: f64,
    pub abs_error: f64,
    pub out_of_window: bool,
    pub beams: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTrace {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub records: Vec<CycleRecord>,
}

impl TrackingTrace {
    pub fn mean_abs_error(&self, from_cycle: usize) -> f64 {
        let tail = &self.records[from_cycle.min(self.records.len())..];
        tail.iter().map(|r| r.abs_error).sum::<f64>() / tail.len().max(1) as f64
    }

    fn squared_error_sum(&self, from_cycle: usize) -> (f64, usize) {
        let tail = &self.records[from_cycle.min(self.records.len())..];
        (
            tail.iter().map(|r| r.abs_error * r.abs_error).sum(),
            tail.len(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub scheme: String,
    pub snr_db: f64,
    pub sigma_p: f64,
    pub mse: f64,
    pub trials: usize,
    pub beams_per_cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
}

impl MseReport {
    pub fn get(&self, scheme: Scheme, snr_db: f64) -> Option<&MseRow> {
        let name = scheme.to_string();
        self.rows
            .iter()
            .find(|r| r.scheme == name && r.snr_db == snr_db)
    }
}

/// Precomputed state shared by every trial of one configuration.
#[derive(Debug)]
pub struct Simulator {
    cfg: SimConfig,
    tx: ArrayConfig,
    codebook: Codebook,
    estimator: MlEstimator,
    lut: LookupTable,
    mobility: MobilityModel,
}

impl Simulator {
    /// Builds the codebook, the estimator and a fresh lookup table.
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let tx = ArrayConfig::new(cfg.n_tx, cfg.spacing_ratio)?;
        let codebook = Codebook::build(tx, cfg.grid_size)?;
        let lut =
            BeamSelector::new(&codebook, cfg.lut_noise_var)?.build_lookup_table(&cfg.lut_sigmas)?;
        Self::assemble(cfg, tx, codebook, lut)
    }

    pub fn with_lut(cfg: SimConfig, lut: LookupTable) -> Result<Self> {
        cfg.validate()?;
        let tx = ArrayConfig::new(cfg.n_tx, cfg.spacing_ratio)?;
        let codebook = Codebook::build(tx, cfg.grid_size)?;
        if lut.grid_size != cfg.grid_size {
            return Err(Error::InvalidConfig(format!(
                "lookup table grid {} does not match grid_size {}",
                lut.grid_size, cfg.grid_size
            )));
        }
        if lut.entries.is_empty() {
            return Err(Error::EmptyLookupTable);
        }
        Self::assemble(cfg, tx, codebook, lut)
    }

    fn assemble(
        cfg: SimConfig,
        tx: ArrayConfig,
        codebook: Codebook,
        lut: LookupTable,
    ) -> Result<Self> {
        // the receive array only needs to exist: combining is ideal
        ArrayConfig::new(cfg.n_rx, cfg.spacing_ratio)?;
        let estimator = MlEstimator::new(&codebook, cfg.estimation_grid)?;
        let mobility = MobilityModel::new(cfg.sigma_p)?;
        Ok(Self {
            cfg,
            tx,
            codebook,
            estimator,
            lut,
            mobility,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn lut(&self) -> &LookupTable {
        &self.lut
    }

    fn snap(&self, theta: f64) -> f64 {
        if self.cfg.on_grid {
            grid_angle(
                self.cfg.estimation_grid,
                nearest_bin(self.cfg.estimation_grid, theta),
            )
        } else {
            theta
        }
    }

    /// True path states of one trial. Identical for every scheme and SNR.
    pub fn trajectory(&self, trial: u64) -> Vec<PathState> {
        let mut rng = stream_rng(self.cfg.seed, trial, 0, Stream::Trajectory);
        let mut aod = self.snap(rng.random_range(-1.0..1.0));
        let mut aoa = rng.random_range(-1.0..1.0);
        let mut out = Vec::with_capacity(self.cfg.horizon);
        for t in 0..self.cfg.horizon {
            if t > 0 {
                aod = evolve_aod(aod, &self.mobility, &mut rng);
                aoa = evolve_aod(aoa, &self.mobility, &mut rng);
            }
            if let Some(jump) = self.cfg.injected_jump.filter(|j| j.cycle == t) {
                aod = reflect_into_domain(aod + jump.delta);
            }
            aod = self.snap(aod);
            let mut gain_rng = stream_rng(self.cfg.seed, trial, t as u64, Stream::Gain);
            let gain = match self.cfg.gain_model {
                GainModel::Rayleigh => sample_gain(&mut gain_rng),
                GainModel::UnitModulus => {
                    Complex64::from_polar(1.0, gain_rng.random_range(0.0..std::f64::consts::TAU))
                }
            };
            out.push(PathState { aod, aoa, gain });
        }
        out
    }

    /// Full-aperture codebook beams at `n` uniformly spaced directions.
    pub fn cycling_beams(&self, n: usize) -> Vec<&BeamVector> {
        let m = self.cfg.grid_size;
        (0..n)
            .map(|k| {
                self.codebook
                    .entry(self.codebook.index_of(Aperture::Full, k * m / n))
            })
            .collect()
    }

    fn angle_error(&self, est: f64, truth: f64) -> f64 {
        let period = self.tx.grating_period();
        let e = est - truth;
        (e - period * (e / period).round()).abs()
    }

    fn measure(
        &self,
        path: &PathState,
        beams: &[&BeamVector],
        noise_var: f64,
        trial: u64,
        t: usize,
    ) -> Result<crate::channel::Measurement> {
        let mut rng = stream_rng(self.cfg.seed, trial, t as u64, Stream::Noise);
        observe(&self.tx, path, beams, noise_var, &mut rng)
    }

    /// One beam-cycling cycle followed by a full-grid ML estimate.
    pub fn cold_start(
        &self,
        path: &PathState,
        noise_var: f64,
        trial: u64,
        t: usize,
    ) -> Result<AodEstimate> {
        let beams = self.cycling_beams(self.cfg.cold_start_beams);
        let m = self.measure(path, &beams, noise_var, trial, t)?;
        self.estimator.estimate(&m, self.estimator.full_window())
    }

    /// Codebook pair and search window for a two-beam cycle centered at `center`.
    fn two_beam_plan(&self, scheme: Scheme, center: f64) -> Result<([usize; 2], SearchWindow)> {
        let (a, b) = match scheme {
            Scheme::Proposed => {
                let entry = self.lut.lookup(self.cfg.sigma_p)?;
                LookupTable::centered_pair(&self.codebook, entry, center)
            }
            Scheme::FixedPair { offset_bins } => {
                let m = self.cfg.grid_size;
                let c = nearest_bin(m, center);
                let lo = c.saturating_sub(offset_bins);
                let hi = (c + offset_bins).min(m - 1);
                (
                    self.codebook.index_of(Aperture::Full, lo),
                    self.codebook.index_of(Aperture::Full, hi),
                )
            }
            Scheme::BeamCycling { .. } => unreachable!("cycling has no pair"),
        };
        let window = search_window(
            center,
            (self.codebook.entry(a), self.codebook.entry(b)),
            &self.mobility,
            self.cfg.estimation_grid,
        );
        Ok(([a, b], window))
    }

    /// Runs `scheme` over one trial's trajectory at `snr_db`.
    pub fn run_trial(&self, scheme: Scheme, snr_db: f64, trial: u64) -> Result<TrackingTrace> {
        let noise_var = noise_var_for_snr(snr_db);
        let path = self.trajectory(trial);
        let est_grid = self.cfg.estimation_grid;
        let mut records = Vec::with_capacity(path.len());
        let mut prev_est = 0.0;
        for (t, state) in path.iter().enumerate() {
            let (est, beams, out_of_window) = match scheme {
                Scheme::BeamCycling { n_beams } => {
                    let beams = self.cycling_beams(n_beams);
                    let m = self.measure(state, &beams, noise_var, trial, t)?;
                    let e = self.estimator.estimate(&m, self.estimator.full_window())?;
                    (e.aod_hat, m.beam_indices, false)
                }
                _ if t == 0 => {
                    let e = self.cold_start(state, noise_var, trial, t)?;
                    let beams = self
                        .cycling_beams(self.cfg.cold_start_beams)
                        .iter()
                        .map(|b| b.index)
                        .collect();
                    (e.aod_hat, beams, false)
                }
                _ => {
                    let center = match self.cfg.prior_center {
                        PriorCenter::PreviousEstimate => prev_est,
                        PriorCenter::PreviousTruth => path[t - 1].aod,
                    };
                    let (pair, window) = self.two_beam_plan(scheme, center)?;
                    let beams = [self.codebook.entry(pair[0]), self.codebook.entry(pair[1])];
                    let m = self.measure(state, &beams, noise_var, trial, t)?;
                    let est = match self.estimator.estimate(&m, window) {
                        Ok(e) => e.aod_hat,
                        // both beams null over the whole window: hold the previous estimate
                        Err(Error::EstimationFailed { .. }) => center,
                        Err(e) => return Err(e),
                    };
                    let truth_bin = nearest_bin(est_grid, state.aod);
                    (est, pair.to_vec(), !window.contains(truth_bin))
                }
            };
            records.push(CycleRecord {
                t,
                true_aod: state.aod,
                est_aod: est,
                abs_error: self.angle_error(est, state.aod),
                out_of_window,
                beams,
            });
            prev_est = est;
        }
        Ok(TrackingTrace {
            scheme,
            snr_db,
            records,
        })
    }

    pub fn run_tracking(&self, snr_db: f64, trial: u64) -> Result<TrackingTrace> {
        self.run_trial(Scheme::Proposed, snr_db, trial)
    }

    pub fn run_baseline(&self, scheme: Scheme, snr_db: f64, trial: u64) -> Result<TrackingTrace> {
        if scheme == Scheme::Proposed {
            return Err(Error::InvalidConfig(
                "run_baseline needs a baseline scheme".into(),
            ));
        }
        self.run_trial(scheme, snr_db, trial)
    }

    /// Mean squared error over trials and post-warm-up cycles for every
    /// `(scheme, snr)` cell, scheme-major.
    pub fn run_mse_sweep(&self, schemes: &[Scheme]) -> Result<MseReport> {
        let mut rows = Vec::with_capacity(schemes.len() * self.cfg.snr_db_list.len());
        for &scheme in schemes {
            for &snr_db in &self.cfg.snr_db_list {
                let per_trial = (0..self.cfg.trials as u64)
                    .into_par_iter()
                    .map(|trial| {
                        self.run_trial(scheme, snr_db, trial)
                            .map(|tr| tr.squared_error_sum(self.cfg.warmup))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (sum, count) = per_trial
                    .iter()
                    .fold((0.0, 0usize), |(s, c), (ts, tc)| (s + ts, c + tc));
                rows.push(MseRow {
                    scheme: scheme.to_string(),
                    snr_db,
                    sigma_p: self.cfg.sigma_p,
                    mse: if count == 0 { 0.0 } else { sum / count as f64 },
                    trials: self.cfg.trials,
                    beams_per_cycle: scheme.beams_per_cycle(),
                });
            }
        }
        Ok(MseReport { rows })
    }

    /// Mean absolute error after warm-up, averaged over all trials.
    pub fn mean_abs_error(&self, scheme: Scheme, snr_db: f64) -> Result<f64> {
        let per_trial = (0..self.cfg.trials as u64)
            .into_par_iter()
            .map(|trial| {
                self.run_trial(scheme, snr_db, trial)
                    .map(|tr| tr.mean_abs_error(self.cfg.warmup))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_trial.iter().sum::<f64>() / per_trial.len() as f64)
    }
}

pub fn run_tracking(cfg: &SimConfig, snr_db: f64, trial: u64) -> Result<TrackingTrace> {
    Simulator::new(cfg.clone())?.run_tracking(snr_db, trial)
}

pub fn run_baseline(cfg: &SimConfig, snr_db: f64, trial: u64) -> Result<TrackingTrace> {
    Simulator::new(cfg.clone())?.run_baseline(cfg.scheme, snr_db, trial)
}

pub fn run_mse_sweep(cfg: &SimConfig, schemes: &[Scheme]) -> Result<MseReport> {
    Simulator::new(cfg.clone())?.run_mse_sweep(schemes)
}

#[derive(Serialize)]
struct TraceRow {
    t: usize,
    true_aod: f64,
    est_aod: f64,
    abs_err: f64,
    oow_flag: u8,
    beam_i: usize,
    beam_j: usize,
}

/// Trace CSV. For beam cycling `beam_i`/`beam_j` are the first and last
/// beams of the sweep.
pub fn write_trace_csv<W: Write>(trace: &TrackingTrace, w: W) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in &trace.records {
        csv.serialize(TraceRow {
            t: r.t,
            true_aod: r.true_aod,
            est_aod: r.est_aod,
            abs_err: r.abs_error,
            oow_flag: r.out_of_window as u8,
            beam_i: r.beams.first().copied().unwrap_or(0),
            beam_j: r.beams.last().copied().unwrap_or(0),
        })?;
    }
    csv.flush()
}

pub fn write_report_csv<W: Write>(report: &MseReport, w: W) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for row in &report.rows {
        csv.serialize(row)?;
    }
    csv.flush()
}
