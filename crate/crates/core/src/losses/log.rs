use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::terms::LossBreakdown;

pub const CSV_HEADER: &str = "iteration,l_tau,l_eikonal,l_zero,l_entropy,l_free,total,alpha";

/// Plain-text CSV of per-iteration loss terms.
pub struct LossLog {
    out: BufWriter<File>,
}

impl LossLog {
    /// Create a fresh log, writing the header.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    /// Append to an existing log (used on resume); writes the header if the
    /// file is empty.
    pub fn append(path: impl AsRef<Path>) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        let empty = f.metadata()?.len() == 0;
        let mut out = BufWriter::new(f);
        if empty {
            writeln!(out, "{CSV_HEADER}")?;
        }
        Ok(Self { out })
    }

    pub fn row(&mut self, iteration: u64, l: &LossBreakdown, alpha: f64) -> io::Result<()> {
        writeln!(self.out, "{}", format_row(iteration, l, alpha))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

pub fn format_row(iteration: u64, l: &LossBreakdown, alpha: f64) -> String {
    format!(
        "{iteration},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        l.tau, l.eikonal, l.zero, l.entropy, l.free, l.total, alpha
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let l = LossBreakdown {
            tau: 0.25,
            eikonal: 1e-3,
            zero: 0.0,
            entropy: 0.7,
            free: 2.5e-5,
            total: 0.1,
        };
        {
            let mut log = LossLog::create(&path).unwrap();
            log.row(7, &l, 0.5).unwrap();
            log.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![7.0, 0.25, 1e-3, 0.0, 0.7, 2.5e-5, 0.1, 0.5]);
    }
}
