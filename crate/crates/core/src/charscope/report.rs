//! CSV tables and a plain-text summary for plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("duplicate table name {0:?}")]
    DuplicateName(String),
}

/// A named table; `name` becomes the file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Table {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Writes `<name>.csv` per table plus `summary.txt` with one `key: value` line
/// per entry, in the given order. Returns the written paths.
pub fn emit_report(tables: &[Table], summary: &[(String, String)], out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let mut names = std::collections::BTreeSet::new();
    for t in tables {
        if !names.insert(t.name.as_str()) {
            return Err(ReportError::DuplicateName(t.name.clone()));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for t in tables {
        let path = out_dir.join(format!("{}.csv", t.name));
        let csv_err = |source| ReportError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&t.columns).map_err(csv_err)?;
        for row in &t.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    let mut text = String::new();
    for (k, v) in summary {
        let _ = writeln!(text, "{k}: {v}");
    }
    let path = out_dir.join("summary.txt");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Table> {
        let mut a = Table::new("ttl_cdf", &["value", "fraction"]);
        a.push(vec!["20".into(), "0.5".into()]);
        a.push(vec!["300".into(), "1".into()]);
        vec![a, Table::new("empty", &["group", "platform", "share"])]
    }

    #[test]
    fn two_tables_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&sample(), &[("suboptimal_fraction".into(), "0.5".into())], dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(
            std::fs::read_to_string(dir.path().join("ttl_cdf.csv")).unwrap(),
            "value,fraction\n20,0.5\n300,1\n"
        );
        assert_eq!(std::fs::read_to_string(dir.path().join("empty.csv")).unwrap(), "group,platform,share\n");
        assert_eq!(
            std::fs::read_to_string(dir.path().join("summary.txt")).unwrap(),
            "suboptimal_fraction: 0.5\n"
        );
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        emit_report(&sample(), &[], a.path()).unwrap();
        emit_report(&sample(), &[], b.path()).unwrap();
        for f in ["ttl_cdf.csv", "empty.csv", "summary.txt"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn unwritable_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_report(&sample(), &[], &file.join("sub")).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Table::new("x", &["a"]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&[t.clone(), t], &[], dir.path()),
            Err(ReportError::DuplicateName(_))
        ));
    }
}
