mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use beamtrack::array_geometry::{ArrayConfig, Codebook};
use beamtrack::beam_select::{BeamSelector, LookupTable};
use beamtrack::crlb::{crlb_curve, write_curve_csv};
use beamtrack::sim_harness::{write_report_csv, write_trace_csv, Scheme, Simulator};
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use output::Artifacts;

#[derive(Parser, Debug)]
#[command(name = "beamtrack", version, about = "Two-beam AoD tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the optimal beam pair for each mobility level.
    BuildLut(Common),
    /// Trace one trial of each selected scheme.
    Track(Common),
    /// MSE against SNR for each selected scheme.
    MseSweep(Common),
    /// CRLB over the angle domain for one beam pair.
    CrlbCurve(Common),
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// `proposed`, `cycling:N`, `fixed:K` or `all`.
    #[arg(long)]
    scheme: Option<String>,
    /// One or more SNRs in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.scheme {
            cfg.scheme = v.clone();
        }
        if let Some(v) = &self.snr_db {
            cfg.snr_db_list = v.clone();
        }
        if let Some(v) = self.sigma_p {
            cfg.sigma_p = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        Ok(cfg)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("BEAMTRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        ConfigError(format!(
            "BEAMTRACK_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn codebook(cfg: &RunConfig) -> anyhow::Result<Codebook> {
    let array =
        ArrayConfig::new(cfg.n_tx, cfg.spacing_ratio).map_err(|e| ConfigError(e.to_string()))?;
    Codebook::build(array, cfg.grid_size).map_err(|e| ConfigError(e.to_string()).into())
}

fn lookup_table(cfg: &RunConfig, codebook: &Codebook) -> anyhow::Result<LookupTable> {
    let selector =
        BeamSelector::new(codebook, cfg.lut_noise_var).map_err(|e| ConfigError(e.to_string()))?;
    selector
        .build_lookup_table(&cfg.lut_sigmas)
        .map_err(|e| ConfigError(format!("field `lut_sigmas`: {e}")).into())
}

fn build_lut(cfg: &RunConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let lut = lookup_table(cfg, &codebook(cfg)?)?;
    let mut buf = Vec::new();
    lut.write_to(&mut buf)?;
    art.add("lut.csv", buf);
    Ok(())
}

fn simulator(cfg: &RunConfig) -> anyhow::Result<(Simulator, Vec<Scheme>)> {
    let schemes = cfg.schemes()?;
    let sim = Simulator::new(cfg.sim_config(schemes[0])?)?;
    Ok((sim, schemes))
}

fn track(cfg: &RunConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let (sim, schemes) = simulator(cfg)?;
    let snr = cfg.snr_db_list[0];
    for scheme in schemes {
        let trace = sim.run_trial(scheme, snr, cfg.trial)?;
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf)?;
        art.add(format!("trace_{scheme}.csv"), buf);
    }
    Ok(())
}

fn mse_sweep(cfg: &RunConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let (sim, schemes) = simulator(cfg)?;
    let report = sim.run_mse_sweep(&schemes)?;
    let mut buf = Vec::new();
    write_report_csv(&report, &mut buf)?;
    art.add("mse_report.csv", buf);
    Ok(())
}

fn curve(cfg: &RunConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let cb = codebook(cfg)?;
    let c = &cfg.crlb_curve;
    let (i, j) = match (c.beam_i, c.beam_j) {
        (Some(i), Some(j)) => {
            for (name, idx) in [("beam_i", i), ("beam_j", j)] {
                if idx >= cb.len() {
                    return Err(ConfigError(format!(
                        "field `crlb_curve.{name}`: index {idx} outside a {}-entry codebook",
                        cb.len()
                    ))
                    .into());
                }
            }
            (i, j)
        }
        (None, None) => {
            let lut = lookup_table(cfg, &cb)?;
            LookupTable::centered_pair(&cb, lut.lookup(cfg.sigma_p)?, 0.0)
        }
        _ => {
            return Err(ConfigError(
                "field `crlb_curve`: give both beam_i and beam_j or neither".into(),
            )
            .into())
        }
    };
    if c.points < 2 {
        return Err(ConfigError("field `crlb_curve.points`: need at least 2".into()).into());
    }
    let points = crlb_curve(
        cb.array(),
        [cb.entry(i), cb.entry(j)],
        c.gain_power,
        c.noise_var,
        c.points,
    )
    .map_err(|e| ConfigError(format!("field `crlb_curve`: {e}")))?;
    let mut buf = Vec::new();
    write_curve_csv(&points, &mut buf)?;
    art.add(format!("crlb_curve_{i}_{j}.csv"), buf);
    Ok(())
}

type CommandBody = fn(&RunConfig, &mut Artifacts) -> anyhow::Result<()>;

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let (name, common, body): (&str, &Common, CommandBody) = match &cli.command {
        Command::BuildLut(c) => ("build-lut", c, build_lut),
        Command::Track(c) => ("track", c, track),
        Command::MseSweep(c) => ("mse-sweep", c, mse_sweep),
        Command::CrlbCurve(c) => ("crlb-curve", c, curve),
    };
    let cfg = common.resolve()?;
    let start = Instant::now();
    let mut art = Artifacts::new(&common.out_dir);
    body(&cfg, &mut art)?;
    for path in art.commit(name, &cfg, start.elapsed())? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
