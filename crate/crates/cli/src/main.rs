mod config;
mod output;
mod plot;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use conemapr::montecarlo::{run_noise_sweep, run_range_sweep, run_trials, summarize, init_thread_pool, MseRecord};

use config::{Cli, Mode, RunConfig};
use output::{csv_row, record_row, write_meta, CsvWriter};
use plot::{log_log, Series};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

enum Failure {
    Config(String),
    Numerical(String),
}

/// One plotted row: axis value, estimator label, MSE pair, bound pair.
struct Row {
    axis: f64,
    label: String,
    mse: (f64, f64),
    crlb: (f64, f64),
}

impl From<&MseRecord> for Row {
    fn from(r: &MseRecord) -> Self {
        Self {
            axis: r.axis_value,
            label: r.estimator.label().into(),
            mse: (r.mse_angle, r.mse_g),
            crlb: (r.crlb_angle, r.crlb_g),
        }
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Numerical(format!("writing results: {e}"))
}

fn run(cfg: &RunConfig) -> Result<Vec<Row>, Failure> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Failure::Config(format!("{}: {e}", cfg.out.display())))?;
    let config_json = serde_json::to_string(&cfg.echo()).map_err(|e| Failure::Config(e.to_string()))?;
    write_meta(&cfg.out.join("run_meta.txt"), cfg.sweep.seed, &cfg.sweep.solver, &config_json)
        .map_err(|e| Failure::Config(format!("{}: {e}", cfg.out.display())))?;
    let mut csv = CsvWriter::create(&cfg.out.join("results.csv")).map_err(io_err)?;
    let mut rows = Vec::new();
    let numerical = |e: conemapr::Error| Failure::Numerical(e.to_string());

    let mut emit = |recs: Vec<MseRecord>, rows: &mut Vec<Row>| -> Result<(), Failure> {
        for r in &recs {
            csv.write_row(&record_row(r)).map_err(io_err)?;
            rows.push(Row::from(r));
        }
        Ok(())
    };

    let s = &cfg.sweep;
    match cfg.mode {
        Mode::NoiseSweep => {
            for &v in &s.noise_powers {
                let one = conemapr::montecarlo::SweepConfig { noise_powers: vec![v], ..s.clone() };
                emit(run_noise_sweep(&one, &cfg.geometry).map_err(numerical)?, &mut rows)?;
            }
        }
        Mode::RangeSweep => {
            for &v in &s.ranges {
                let one = conemapr::montecarlo::SweepConfig { ranges: vec![v], ..s.clone() };
                emit(run_range_sweep(&one, &cfg.geometry).map_err(numerical)?, &mut rows)?;
            }
        }
        Mode::CrlbOnly => {
            for &v in &s.noise_powers {
                let trials = run_trials(s, &cfg.geometry, v, s.range).map_err(numerical)?;
                let n = trials.len() as f64;
                let crlb = (
                    trials.iter().map(|t| t.crlb.angle()).sum::<f64>() / n,
                    trials.iter().map(|t| t.crlb.inverse_range()).sum::<f64>() / n,
                );
                csv.write_row(&csv_row(v, "crlb", (f64::NAN, f64::NAN), crlb, 0)).map_err(io_err)?;
                rows.push(Row {
                    axis: v,
                    label: "crlb".into(),
                    mse: (f64::NAN, f64::NAN),
                    crlb,
                });
            }
        }
        Mode::SingleShot => {
            let trials = run_trials(s, &cfg.geometry, s.noise_power, s.range).map_err(numerical)?;
            let t = &trials[0];
            let show = |name: &str, u: Option<conemapr::SourceMpr>| match u {
                Some(u) => println!(
                    "{name:<9} azimuth {:+.9} elevation {:+.9} inverse_range {:.9e}",
                    u.azimuth, u.elevation, u.inverse_range
                ),
                None => println!("{name:<9} failed"),
            };
            show("truth", Some(t.truth));
            show("estimate", t.proposed);
            show("mle", t.mle);
            let sd = t.crlb.cov_mpr.diagonal().map(f64::sqrt);
            println!("crlb std  azimuth {:.3e} elevation {:.3e} inverse_range {:.3e}", sd[0], sd[1], sd[2]);
            emit(summarize(s.noise_power, &trials, &s.estimator_kinds()).map_err(numerical)?, &mut rows)?;
            if t.proposed.is_none() {
                return Err(Failure::Numerical("estimator failed on the single trial".into()));
            }
        }
    }
    Ok(rows)
}

fn write_plots(cfg: &RunConfig, rows: &[Row]) -> std::io::Result<()> {
    let xlabel = match cfg.mode {
        Mode::RangeSweep => "source range (m)",
        _ => "noise power (rad^2)",
    };
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let make = |pick: fn(&Row) -> (f64, f64)| {
        let mut series: Vec<Series> = labels
            .iter()
            .filter(|l| **l != "crlb")
            .map(|l| Series {
                label: l.to_string(),
                points: rows.iter().filter(|r| r.label == *l).map(|r| (r.axis, pick(r).0)).collect(),
                dashed: false,
            })
            .collect();
        let mut seen = Vec::new();
        let crlb_points = rows
            .iter()
            .filter(|r| {
                let fresh = !seen.contains(&r.axis.to_bits());
                seen.push(r.axis.to_bits());
                fresh
            })
            .map(|r| (r.axis, pick(r).1))
            .collect();
        series.push(Series {
            label: "CRLB".into(),
            points: crlb_points,
            dashed: true,
        });
        series
    };
    let angle = make(|r| (r.mse.0, r.crlb.0));
    let g = make(|r| (r.mse.1, r.crlb.1));
    std::fs::write(
        cfg.out.join("angle.svg"),
        log_log("MSE of azimuth and elevation", xlabel, "MSE (rad^2)", &angle),
    )?;
    std::fs::write(cfg.out.join("g.svg"), log_log("MSE of inverse range", xlabel, "MSE (m^-2)", &g))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(k) = cfg.threads {
        if let Err(e) = init_thread_pool(k) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cfg) {
        Ok(rows) => {
            if cfg.plot {
                if let Err(e) = write_plots(&cfg, &rows) {
                    eprintln!("error: writing plots: {e}");
                    return ExitCode::from(EXIT_NUMERICAL);
                }
            }
            eprintln!("wrote {}", Path::new(&cfg.out).join("results.csv").display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
