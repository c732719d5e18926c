//! CSV reports with a one-line `#` provenance header.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Who wrote a file and how. Rendered as the first line of every CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub tool: String,
    pub seed: u64,
    pub workers: usize,
    pub command: String,
}

impl Provenance {
    pub fn new(seed: u64, workers: usize, command: impl Into<String>) -> Self {
        Self { tool: format!("cgm {}", env!("CARGO_PKG_VERSION")), seed, workers, command: command.into() }
    }

    pub fn header_line(&self) -> String {
        let cmd = self.command.replace(['\n', '\r'], " ");
        format!("# {} seed={} workers={} command={}", self.tool, self.seed, self.workers, cmd)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    /// Comment lines, without the leading `#`.
    pub comments: Vec<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("CSV has no column `{name}`")))
    }
}

pub fn write_csv<S: AsRef<str>>(path: &Path, prov: &Provenance, headers: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "{}", prov.header_line())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(headers)?;
    for row in rows {
        if row.len() != headers.len() {
            return Err(Error::Dimension(format!("row of {} fields under {} headers", row.len(), headers.len())));
        }
        w.write_record(row.iter().map(|s| s.as_ref()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]; leading `#` lines become comments.
pub fn read_csv(path: &Path) -> Result<Table> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut comments = Vec::new();
    let mut rest = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else {
            rest.push_str(&line);
            break;
        }
    }
    std::io::Read::read_to_string(&mut reader, &mut rest)?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { comments, headers, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let prov = Provenance::new(7, 2, "cluster --k 3");
        write_csv(&p, &prov, &["channel", "cluster"], &[vec!["0", "1"], vec!["1", "a,b"]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# cgm "));
        assert!(text.lines().next().unwrap().contains("seed=7 workers=2 command=cluster --k 3"));
        let t = read_csv(&p).unwrap();
        assert_eq!(t.headers, vec!["channel", "cluster"]);
        assert_eq!(t.rows[1][1], "a,b");
        assert_eq!(t.column("cluster").unwrap(), 1);
        assert!(t.column("nope").is_err());
        assert_eq!(t.comments.len(), 1);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new(0, 1, "x");
        assert!(write_csv(&dir.path().join("r.csv"), &prov, &["a", "b"], &[vec!["1"]]).is_err());
    }
}
