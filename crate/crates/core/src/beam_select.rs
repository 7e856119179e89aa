//! Beam-pair selection by minimum prior-averaged CRLB.
//!
//! The exhaustive search scores every unordered codebook pair. The
//! symmetric search only scores pairs centered on the previous AoD, one
//! candidate per separation and aperture combination, which is what
//! the offline lookup table is built from.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{nearest_bin, Aperture, ArrayConfig, Codebook, ResponseTable};
use crate::channel::{discretize_aod_prior, AodPrior, MobilityModel};
use crate::crlb::{average_crlb, average_with_penalty, bound_from_moments};
use crate::error::{Error, Result};

/// Default mobility levels tabulated by [`build_lookup_table`].
pub const DEFAULT_LUT_SIGMAS: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];

/// Aperture combinations tried by the symmetric search, as
/// `(lower-angle beam, upper-angle beam)`.
const CLASS_COMBINATIONS: [(Aperture, Aperture); 4] = [
    (Aperture::Full, Aperture::Full),
    (Aperture::Full, Aperture::Half),
    (Aperture::Half, Aperture::Full),
    (Aperture::Half, Aperture::Half),
];

/// A selected training pair. `index_i` is the beam with the lower steer angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPairChoice {
    pub index_i: usize,
    pub index_j: usize,
    pub separation_bins: usize,
    pub aperture_pair: (Aperture, Aperture),
    pub avg_crlb: f64,
}

impl BeamPairChoice {
    fn new(codebook: &Codebook, a: usize, b: usize, avg_crlb: f64) -> Self {
        let (ca, ka) = codebook.position(a);
        let (cb, kb) = codebook.position(b);
        let ((i, ci, ki), (j, cj, kj)) = if (ka, a) <= (kb, b) {
            ((a, ca, ka), (b, cb, kb))
        } else {
            ((b, cb, kb), (a, ca, ka))
        };
        Self {
            index_i: i,
            index_j: j,
            separation_bins: kj - ki,
            aperture_pair: (ci, cj),
            avg_crlb,
        }
    }
}

/// Per-entry, per-bin response moments on the codebook grid, so a pair's
/// moments are sums of two table lookups.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    g_sq: f64,
    dg_sq: f64,
    cross: Complex64,
}

/// Scores beam pairs against the codebook-grid prior.
///
/// The gain power is fixed to the model's mean `E|beta|^2 = 1`; pair
/// rankings do not depend on it.
#[derive(Debug)]
pub struct BeamSelector<'a> {
    codebook: &'a Codebook,
    noise_var: f64,
    moments: Vec<Moments>,
}

impl<'a> BeamSelector<'a> {
    pub fn new(codebook: &'a Codebook, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        let m = codebook.grid_size();
        let table = ResponseTable::new(codebook, m);
        let mut moments = Vec::with_capacity(codebook.len() * m);
        for e in 0..codebook.len() {
            for k in 0..m {
                let g = table.response(e, k);
                let d = table.derivative(e, k);
                moments.push(Moments {
                    g_sq: g.norm_sqr(),
                    dg_sq: d.norm_sqr(),
                    cross: g.conj() * d,
                });
            }
        }
        Ok(Self {
            codebook,
            noise_var,
            moments,
        })
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    fn array(&self) -> &ArrayConfig {
        self.codebook.array()
    }

    pub fn prior(&self, prev_aod: f64, model: &MobilityModel) -> AodPrior {
        discretize_aod_prior(prev_aod, model, self.codebook.grid_size())
    }

    /// Average CRLB of entries `a` and `b` under `prior`.
    pub fn average_crlb(&self, a: usize, b: usize, prior: &AodPrior) -> Result<f64> {
        let m = self.codebook.grid_size();
        let (ra, rb) = (
            &self.moments[a * m..(a + 1) * m],
            &self.moments[b * m..(b + 1) * m],
        );
        average_with_penalty(prior.mass(), |k| {
            let (x, y) = (ra[k], rb[k]);
            bound_from_moments(
                1.0,
                self.noise_var,
                x.g_sq + y.g_sq,
                x.dg_sq + y.dg_sq,
                x.cross + y.cross,
            )
        })
    }

    fn best_of(
        &self,
        prior: &AodPrior,
        candidates: impl Iterator<Item = (usize, usize)>,
    ) -> Result<BeamPairChoice> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (a, b) in candidates {
            let Ok(v) = self.average_crlb(a, b, prior) else {
                continue;
            };
            if best.is_none_or(|(_, _, bv)| v < bv) {
                best = Some((a, b, v));
            }
        }
        let (a, b, v) = best.ok_or(Error::SelectionInfeasible)?;
        Ok(BeamPairChoice::new(self.codebook, a, b, v))
    }

    /// Global minimum over all unordered pairs of distinct entries. Ties go
    /// to the lowest first index, then the lowest second index.
    pub fn select_exhaustive(
        &self,
        prev_aod: f64,
        model: &MobilityModel,
    ) -> Result<BeamPairChoice> {
        let prior = self.prior(prev_aod, model);
        let n = self.codebook.len();
        self.best_of(&prior, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))))
    }

    /// Pairs `(c - s/2, c - s/2 + s)` around the bin `c` nearest `prev_aod`
    /// for separations `s = 1..=M/2` and every aperture combination, clamped
    /// to the grid. Odd separations sit half a bin above `c`; their mirror
    /// images are covered by the swapped aperture combination. Clamped
    /// duplicates are dropped.
    pub fn symmetric_candidates(&self, prev_aod: f64) -> Vec<(usize, usize)> {
        let m = self.codebook.grid_size();
        let c = nearest_bin(m, prev_aod);
        let mut out = Vec::with_capacity(4 * (m / 2));
        let mut last: Option<(usize, usize)> = None;
        for s in 1..=m / 2 {
            let lo = c.saturating_sub(s / 2);
            let hi = (lo + s).min(m - 1);
            if lo == hi || last == Some((lo, hi)) {
                continue;
            }
            last = Some((lo, hi));
            for (ci, cj) in CLASS_COMBINATIONS {
                out.push((
                    self.codebook.index_of(ci, lo),
                    self.codebook.index_of(cj, hi),
                ));
            }
        }
        out
    }

    pub fn select_symmetric(&self, prev_aod: f64, model: &MobilityModel) -> Result<BeamPairChoice> {
        let prior = self.prior(prev_aod, model);
        self.best_of(&prior, self.symmetric_candidates(prev_aod).into_iter())
    }

    /// Tabulates the symmetric optimum at `prev_aod = 0` for each mobility level.
    pub fn build_lookup_table(&self, sigma_p_list: &[f64]) -> Result<LookupTable> {
        if sigma_p_list.is_empty() {
            return Err(Error::EmptyLookupTable);
        }
        if sigma_p_list
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::InvalidConfig(
                "lookup table sigma_p list must be strictly ascending".into(),
            ));
        }
        let entries = sigma_p_list
            .iter()
            .map(|&sigma_p| {
                let choice = self.select_symmetric(0.0, &MobilityModel::new(sigma_p)?)?;
                Ok(LutEntry {
                    sigma_p,
                    separation_bins: choice.separation_bins,
                    class_i: choice.aperture_pair.0,
                    class_j: choice.aperture_pair.1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LookupTable {
            grid_size: self.codebook.grid_size(),
            noise_var: self.noise_var,
            entries,
        })
    }

    /// Direct (non-tabulated) average CRLB through the steering vectors.
    /// Slower than [`BeamSelector::average_crlb`]; used as a cross-check.
    pub fn average_crlb_direct(&self, a: usize, b: usize, prior: &AodPrior) -> Result<f64> {
        average_crlb(
            self.array(),
            [self.codebook.entry(a), self.codebook.entry(b)],
            prior,
            1.0,
            self.noise_var,
        )
    }
}

pub fn select_pair_exhaustive(
    codebook: &Codebook,
    prev_aod: f64,
    model: &MobilityModel,
    noise_var: f64,
) -> Result<BeamPairChoice> {
    BeamSelector::new(codebook, noise_var)?.select_exhaustive(prev_aod, model)
}

pub fn select_pair_symmetric(
    codebook: &Codebook,
    prev_aod: f64,
    model: &MobilityModel,
    noise_var: f64,
) -> Result<BeamPairChoice> {
    BeamSelector::new(codebook, noise_var)?.select_symmetric(prev_aod, model)
}

pub fn build_lookup_table(
    codebook: &Codebook,
    sigma_p_list: &[f64],
    noise_var: f64,
) -> Result<LookupTable> {
    BeamSelector::new(codebook, noise_var)?.build_lookup_table(sigma_p_list)
}

/// Optimal pair geometry for one mobility level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub sigma_p: f64,
    pub separation_bins: usize,
    pub class_i: Aperture,
    pub class_j: Aperture,
}

/// Offline table from mobility level to pair geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub grid_size: usize,
    pub noise_var: f64,
    pub entries: Vec<LutEntry>,
}

impl LookupTable {
    /// Entry with the nearest `sigma_p`; equidistant picks the smaller one.
    pub fn lookup(&self, sigma_p: f64) -> Result<&LutEntry> {
        let mut best: Option<&LutEntry> = None;
        for e in &self.entries {
            let closer = match best {
                None => true,
                Some(b) => (e.sigma_p - sigma_p).abs() < (b.sigma_p - sigma_p).abs(),
            };
            if closer {
                best = Some(e);
            }
        }
        best.ok_or(Error::EmptyLookupTable)
    }

    /// Codebook indices `(lower, upper)` for `entry` centered at `prev_aod`.
    pub fn centered_pair(codebook: &Codebook, entry: &LutEntry, prev_aod: f64) -> (usize, usize) {
        let m = codebook.grid_size();
        let c = nearest_bin(m, prev_aod);
        let s = entry.separation_bins.min(m - 1);
        let mut lo = c.saturating_sub(s / 2);
        let mut hi = (lo + s).min(m - 1);
        if lo == hi && entry.class_i == entry.class_j {
            if hi > 0 {
                lo = hi - 1;
            } else {
                hi = lo + 1;
            }
        }
        (
            codebook.index_of(entry.class_i, lo),
            codebook.index_of(entry.class_j, hi),
        )
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = w;
        writeln!(w, "# grid_size={}", self.grid_size)?;
        writeln!(w, "# noise_var={}", self.noise_var)?;
        let mut csv = csv::Writer::from_writer(w);
        for e in &self.entries {
            csv.serialize(e)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut grid_size = None;
        let mut noise_var = None;
        let mut body = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::MalformedTable(e.to_string()))?;
            if let Some(meta) = line.trim().strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .unwrap_or(("", ""));
                match key {
                    "grid_size" => {
                        grid_size = Some(
                            value
                                .parse::<usize>()
                                .map_err(|e| Error::MalformedTable(format!("grid_size: {e}")))?,
                        )
                    }
                    "noise_var" => {
                        noise_var = Some(
                            value
                                .parse::<f64>()
                                .map_err(|e| Error::MalformedTable(format!("noise_var: {e}")))?,
                        )
                    }
                    _ => {}
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<LutEntry>, _>>()
            .map_err(|e| Error::MalformedTable(e.to_string()))?;
        if entries.is_empty() {
            return Err(Error::EmptyLookupTable);
        }
        Ok(Self {
            grid_size: grid_size
                .ok_or_else(|| Error::MalformedTable("missing grid_size".into()))?,
            noise_var: noise_var
                .ok_or_else(|| Error::MalformedTable("missing noise_var".into()))?,
            entries,
        })
    }
}

/// Translates the tabulated geometry for `sigma_p` to beams centered at
/// `prev_aod` and scores the pair under that prior.
pub fn lut_to_pair(
    lut: &LookupTable,
    sigma_p: f64,
    prev_aod: f64,
    codebook: &Codebook,
) -> Result<BeamPairChoice> {
    if lut.grid_size != codebook.grid_size() {
        return Err(Error::InvalidConfig(format!(
            "lookup table built for a {}-bin grid, codebook has {}",
            lut.grid_size,
            codebook.grid_size()
        )));
    }
    let entry = lut.lookup(sigma_p)?;
    let (a, b) = LookupTable::centered_pair(codebook, entry, prev_aod);
    let prior = discretize_aod_prior(
        prev_aod,
        &MobilityModel::new(sigma_p)?,
        codebook.grid_size(),
    );
    let avg = average_crlb(
        codebook.array(),
        [codebook.entry(a), codebook.entry(b)],
        &prior,
        1.0,
        lut.noise_var,
    )?;
    Ok(BeamPairChoice::new(codebook, a, b, avg))
}
