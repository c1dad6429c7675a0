//! Report envelope, CSV tables and atomic writes.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::config::{ScenarioConfig, ScenarioName};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryInfo {
    pub name: String,
    pub version: String,
}

impl LibraryInfo {
    pub fn current() -> Self {
        LibraryInfo {
            name: "munu".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub code: String,
    pub stage: Option<String>,
    pub message: String,
}

impl From<&munu_core::Error> for Failure {
    fn from(e: &munu_core::Error) -> Self {
        Failure {
            code: e.code().to_string(),
            stage: e.stage().map(|s| s.to_string()),
            message: e.to_string(),
        }
    }
}

/// Everything numeric in a run. Wall-clock data lives in the timing sidecar
/// so that reports are byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub format_version: u32,
    pub library: LibraryInfo,
    pub scenario: ScenarioName,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub verdict: Verdict,
    pub exit_code: i32,
    pub error: Option<Failure>,
    pub results: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub scenario: ScenarioName,
    pub threads: usize,
    pub wall_seconds: f64,
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Builds a table from serializable rows; headers come from the first
    /// row's field names.
    pub fn from_rows<T: Serialize>(name: &str, rows: &[T]) -> io::Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(io::Error::other)?;
        }
        let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(bytes.as_slice());
        let mut records = rd.records();
        let header = match records.next() {
            Some(h) => h.map_err(io::Error::other)?.iter().map(str::to_string).collect(),
            None => Vec::new(),
        };
        let rows = records
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(io::Error::other)?;
        Ok(Table {
            name: name.into(),
            header,
            rows,
        })
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if !self.header.is_empty() {
            w.write_record(&self.header)?;
        }
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }
}

/// Shortest representation that parses back to the same double;
/// `inf`, `-inf` and `nan` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        serde_json::to_string(&x).expect("finite doubles serialize")
    }
}

pub fn report_bytes(report: &RunReport) -> io::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(report).map_err(io::Error::other)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes every file to a temporary name in `dir` first and renames only
/// once all of them are complete.
pub fn write_atomic(dir: &Path, files: &[(String, Vec<u8>)]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = NamedTempFile::with_prefix_in(format!(".{name}."), dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| e.error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[derive(Serialize)]
    struct Row {
        a: u32,
        b: Option<f64>,
        note: String,
    }

    #[test]
    fn tables_from_rows() {
        let rows = [
            Row {
                a: 1,
                b: Some(0.5),
                note: "x, y".into(),
            },
            Row {
                a: 2,
                b: None,
                note: String::new(),
            },
        ];
        let t = Table::from_rows("t", &rows).unwrap();
        assert_eq!(t.header, ["a", "b", "note"]);
        assert_eq!(t.rows.len(), 2);
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(csv, "a,b,note\n1,0.5,\"x, y\"\n2,,\n");
        assert!(Table::from_rows::<Row>("e", &[]).unwrap().header.is_empty());
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        write_atomic(&out, &[("a.txt".into(), b"one".to_vec())]).unwrap();
        write_atomic(
            &out,
            &[("a.txt".into(), b"two".to_vec()), ("b.txt".into(), b"3".to_vec())],
        )
        .unwrap();
        assert_eq!(std::fs::read(out.join("a.txt")).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 2);
    }
}
