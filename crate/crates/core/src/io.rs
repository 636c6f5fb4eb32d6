//! Output files: `#`-commented CSV tables and hashed JSON documents.
//!
//! CSV floats are written with 17 significant digits (`{:.16e}`), which round-trips
//! every `f64`. Missing values are empty cells. JSON goes through serde_json,
//! whose shortest round-trip formatting is lossless as well.

use std::fmt::Write as _;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 prefix (16 characters) of the JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Stable 64-bit seed derived from a base seed and a list of indices.
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Missing,
    Int(i64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_owned())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => fmt_f64(*x),
            Cell::Missing => String::new(),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => (if *b { "1" } else { "0" }).to_owned(),
            Cell::Text(t) => t.clone(),
        }
    }
}

/// In-memory CSV table with `#` comment lines above the column header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable { columns: columns.iter().map(|c| (*c).to_owned()).collect(), ..Default::default() }
    }

    /// Adds `# key: value`.
    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.comments.push(format!("{key}: {value}"));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row.iter().map(Cell::render).collect());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CsvTable::default();
        let mut lines = text.lines();
        for line in lines.by_ref() {
            if let Some(c) = line.strip_prefix('#') {
                table.comments.push(c.trim_start().to_owned());
            } else {
                table.columns = line.split(',').map(str::to_owned).collect();
                break;
            }
        }
        if table.columns.is_empty() {
            return Err(Error::invalid("CSV has no header row"));
        }
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_owned).collect();
            if row.len() != table.columns.len() {
                return Err(Error::invalid(format!(
                    "CSV row {} has {} fields, header has {}",
                    k + 1,
                    row.len(),
                    table.columns.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Value of a `# key: value` comment.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix(key)?.strip_prefix(": "))
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::invalid(format!("CSV has no column {name:?}")))
    }

    /// Float column; empty cells become `None`.
    pub fn floats(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .map(|r| {
                if r[i].is_empty() {
                    Ok(None)
                } else {
                    r[i].parse().map(Some).map_err(|_| Error::invalid(format!("bad number {:?} in {name}", r[i])))
                }
            })
            .collect()
    }
}

/// JSON output: the payload plus the provenance fields every file carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document<T> {
    pub kind: String,
    pub config_hash: String,
    pub version: String,
    pub data: T,
}

impl<T: Serialize + DeserializeOwned> Document<T> {
    pub fn new(kind: &str, config_hash: &str, data: T) -> Self {
        Document {
            kind: kind.to_owned(),
            config_hash: config_hash.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            data,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let values = [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, std::f64::consts::PI];
        let mut t = CsvTable::new(&["x", "flag", "maybe"]);
        t.meta("config_hash", "abc").meta("command", "test");
        for (k, v) in values.iter().enumerate() {
            t.push(vec![(*v).into(), (k % 2 == 0).into(), (if k == 2 { None } else { Some(-v) }).into()]);
        }
        let parsed = CsvTable::parse(&t.render()).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(parsed.meta_value("config_hash"), Some("abc"));
        let xs = parsed.floats("x").unwrap();
        for (a, b) in xs.iter().zip(values) {
            assert_eq!(a.unwrap().to_bits(), b.to_bits());
        }
        assert_eq!(parsed.floats("maybe").unwrap()[2], None);
        assert!(parsed.floats("nope").is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(CsvTable::parse("# c\na,b\n1,2\n3\n").is_err());
        assert!(CsvTable::parse("# only comments\n").is_err());
    }

    #[test]
    fn non_finite_floats_are_missing() {
        assert_eq!(fmt_f64(f64::NAN), "");
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn hashes_are_stable_and_sensitive() {
        let a = config_hash(&(1, "x", 0.5)).unwrap();
        assert_eq!(a, config_hash(&(1, "x", 0.5)).unwrap());
        assert_ne!(a, config_hash(&(1, "x", 0.25)).unwrap());
        assert_eq!(a.len(), 16);
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3]), derive_seed(7, &[3]));
    }

    #[test]
    fn document_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let d = Document::new("probe", "0123", vec![Some(1.0), None]);
        d.write(&path).unwrap();
        assert_eq!(Document::<Vec<Option<f64>>>::read(&path).unwrap(), d);
    }
}
