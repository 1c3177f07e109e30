//! `results.csv` and `run_meta.txt`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use conemapr::montecarlo::MseRecord;

pub const HEADER: &str = "axis_value,estimator,mse_angle,mse_g,crlb_angle,crlb_g,failures";

/// 17 significant digits, enough to round-trip any `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_row(axis_value: f64, label: &str, mse: (f64, f64), crlb: (f64, f64), failures: usize) -> String {
    format!(
        "{},{label},{},{},{},{},{failures}",
        num(axis_value),
        num(mse.0),
        num(mse.1),
        num(crlb.0),
        num(crlb.1)
    )
}

pub fn record_row(r: &MseRecord) -> String {
    csv_row(r.axis_value, r.estimator.label(), (r.mse_angle, r.mse_g), (r.crlb_angle, r.crlb_g), r.failures)
}

/// Appends rows and flushes after each, so an aborted run leaves the rows
/// already computed on disk.
pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write_row(&mut self, row: &str) -> io::Result<()> {
        writeln!(self.out, "{row}")?;
        self.out.flush()
    }
}

pub fn write_meta(path: &Path, seed: u64, solver: &str, config_json: &str) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "version {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "solver {solver}")?;
    writeln!(f, "seed {seed}")?;
    writeln!(f, "config {config_json}")?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        let row = csv_row(1e-4, "mle", (1.0, 2.0), (3.0, 4.0), 5);
        assert_eq!(row.split(',').count(), HEADER.split(',').count());
    }
}
