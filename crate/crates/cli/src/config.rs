//! Flag and JSON configuration, merged into a [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use conemapr::conic::DEFAULT_TOL;
use conemapr::montecarlo::{GeometryParams, SweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    NoiseSweep,
    RangeSweep,
    SingleShot,
    CrlbOnly,
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NumList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<NumList, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(NumList)
}

#[derive(Debug, Parser)]
#[command(name = "conemapr", version, about = "Cone-angle source localization experiments")]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sensors: Option<usize>,
    /// Source range in meters, or a comma list for range-sweep.
    #[arg(long, value_parser = parse_list)]
    pub range: Option<NumList>,
    /// Noise power in rad², or a comma list for noise-sweep.
    #[arg(long, value_parser = parse_list)]
    pub noise: Option<NumList>,
    #[arg(long)]
    pub geometries: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_plot: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Self::One(v) => vec![v],
            Self::Many(v) => v,
        }
    }
}

/// Flat JSON form; also the config echo written to `run_meta.txt`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub sensors: Option<usize>,
    pub range: Option<OneOrMany>,
    pub noise: Option<OneOrMany>,
    pub geometries: Option<usize>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
    pub no_plot: Option<bool>,
    pub threads: Option<usize>,
    pub tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub geometry: GeometryParams,
    pub sweep: SweepConfig,
    pub out: PathBuf,
    pub plot: bool,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn resolve(cli: Cli) -> Result<Self, String> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mode = cli
            .mode
            .or(file.mode)
            .ok_or("--mode is required (noise-sweep, range-sweep, single-shot, crlb-only)")?;
        let defaults = SweepConfig::default();
        let pick = |flag: Option<NumList>, file: Option<OneOrMany>| flag.map(|l| l.0).or(file.map(OneOrMany::into_vec));
        let ranges = pick(cli.range, file.range);
        let noises = pick(cli.noise, file.noise);

        let single = |v: Option<Vec<f64>>, default: f64, what: &str| -> Result<f64, String> {
            match v.as_deref() {
                None => Ok(default),
                Some([x]) => Ok(*x),
                Some(_) => Err(format!("{what} takes a single value in this mode")),
            }
        };
        let mut sweep = SweepConfig {
            seed: cli.seed.or(file.seed).unwrap_or(defaults.seed),
            n_geometries: cli.geometries.or(file.geometries).unwrap_or(defaults.n_geometries),
            n_runs: cli.runs.or(file.runs).unwrap_or(defaults.n_runs),
            ..defaults.clone()
        };
        sweep.estimator.tol = cli.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
        if let Ok(name) = std::env::var("CONEMAPR_SOLVER") {
            sweep.solver = name;
        }
        match mode {
            Mode::NoiseSweep | Mode::CrlbOnly => {
                sweep.noise_powers = noises.unwrap_or(defaults.noise_powers);
                sweep.range = single(ranges, defaults.range, "--range")?;
            }
            Mode::RangeSweep => {
                sweep.ranges = ranges.unwrap_or(defaults.ranges);
                sweep.noise_power = single(noises, defaults.noise_power, "--noise")?;
            }
            Mode::SingleShot => {
                sweep.range = single(ranges, defaults.range, "--range")?;
                sweep.noise_power = single(noises, defaults.noise_power, "--noise")?;
                sweep.n_geometries = 1;
                sweep.n_runs = 1;
            }
        }
        if mode == Mode::CrlbOnly {
            sweep.include_proposed = false;
            sweep.include_mle = false;
        }
        let geometry = GeometryParams {
            n_sensors: cli.sensors.or(file.sensors).unwrap_or(GeometryParams::default().n_sensors),
            ..GeometryParams::default()
        };
        let threads = cli.threads.or(file.threads);
        if threads == Some(0) {
            return Err("--threads must be positive".into());
        }
        geometry.validate().map_err(|e| e.to_string())?;
        sweep.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            mode,
            geometry,
            sweep,
            out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            plot: !(cli.no_plot || file.no_plot.unwrap_or(false)),
            threads,
        })
    }

    /// Flat config that reproduces this run when passed back via `--config`.
    pub fn echo(&self) -> FileConfig {
        let s = &self.sweep;
        let (range, noise) = match self.mode {
            Mode::NoiseSweep | Mode::CrlbOnly => (OneOrMany::One(s.range), OneOrMany::Many(s.noise_powers.clone())),
            Mode::RangeSweep => (OneOrMany::Many(s.ranges.clone()), OneOrMany::One(s.noise_power)),
            Mode::SingleShot => (OneOrMany::One(s.range), OneOrMany::One(s.noise_power)),
        };
        FileConfig {
            mode: Some(self.mode),
            seed: Some(s.seed),
            sensors: Some(self.geometry.n_sensors),
            range: Some(range),
            noise: Some(noise),
            geometries: Some(s.n_geometries),
            runs: Some(s.n_runs),
            out: Some(self.out.clone()),
            no_plot: Some(!self.plot),
            threads: self.threads,
            tol: Some(s.estimator.tol),
        }
    }
}
