//! Append-only CSV metric logs.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Formats a float with the shortest text that parses back to the same
/// value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug)]
pub struct CsvLog {
    path: PathBuf,
}

impl CsvLog {
    /// Starts a fresh log containing only the header.
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        std::fs::write(path, format!("{}\n", header.join(","))).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    /// Reopens a log for resuming, dropping every row whose first column
    /// (an integer) exceeds `keep_through`. Creates the log if missing.
    pub fn resume(path: &Path, header: &[&str], keep_through: u64) -> Result<Self> {
        let Ok(text) = std::fs::read_to_string(path) else {
            return Self::create(path, header);
        };
        let mut lines = text.lines();
        let head = lines.next().unwrap_or_default();
        if head != header.join(",") {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("unexpected header '{head}'"),
            });
        }
        let mut out = format!("{head}\n");
        for line in lines {
            let key = line.split(',').next().and_then(|k| k.parse::<u64>().ok());
            match key {
                Some(k) if k <= keep_through => {
                    out.push_str(line);
                    out.push('\n');
                }
                Some(_) => {}
                None => {
                    return Err(Error::Corrupt {
                        path: path.to_path_buf(),
                        reason: format!("malformed row '{line}'"),
                    })
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn append(&self, fields: &[String]) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", fields.join(",")).map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resume_drops_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let log = CsvLog::create(&p, &["epoch", "x"]).unwrap();
        for e in 1..=4u64 {
            log.append(&[e.to_string(), fmt_f64(0.1 * e as f64)]).unwrap();
        }
        CsvLog::resume(&p, &["epoch", "x"], 2).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "epoch,x\n1,0.1\n2,0.2\n");
        assert!(CsvLog::resume(&p, &["step", "x"], 2).is_err());
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
