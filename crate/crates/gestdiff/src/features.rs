//! Keyed feature tables: CSV with header `key,f0,...,f{d-1}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{path}: {detail}")]
    Read { path: PathBuf, detail: String },
    #[error("{path}:{line}: bad header: {detail}")]
    Header { path: PathBuf, line: usize, detail: String },
    #[error("{path}:{line}: `{key}` has {found} values, expected {expected}")]
    Dimension {
        path: PathBuf,
        line: usize,
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: duplicate key `{key}`")]
    Duplicate { path: PathBuf, line: usize, key: String },
    #[error("{path}:{line}: column {column} holds `{value}`, not a number")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        column: usize,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// First key of `keys` present in the table.
    pub fn lookup<'a>(&self, keys: &'a [String]) -> Option<(&'a str, &[f64])> {
        keys.iter().find_map(|k| self.get(k).map(|v| (k.as_str(), v)))
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    // Accept the typographic minus sign that spreadsheets sometimes emit.
    let v: f64 = cell.replace('\u{2212}', "-").parse().ok()?;
    v.is_finite().then_some(v)
}

pub fn load_feature_table(path: &Path, expected_dim: usize) -> Result<FeatureTable, FeatureError> {
    let read = |detail: String| FeatureError::Read {
        path: path.into(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| read(e.to_string()))?;
    let header = reader.headers().map_err(|e| read(e.to_string()))?.clone();
    if header.get(0) != Some("key") {
        return Err(FeatureError::Header {
            path: path.into(),
            line: 1,
            detail: "first column must be `key`".into(),
        });
    }
    if header.len() - 1 != expected_dim {
        return Err(FeatureError::Dimension {
            path: path.into(),
            line: 1,
            key: "header".into(),
            expected: expected_dim,
            found: header.len() - 1,
        });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(FeatureError::Header {
                path: path.into(),
                line: 1,
                detail: format!("column {} is `{name}`, expected `f{i}`", i + 2),
            });
        }
    }
    let mut table = FeatureTable::new(expected_dim);
    for record in reader.records() {
        let record = record.map_err(|e| read(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let key = record.get(0).unwrap_or_default().to_string();
        if record.len() - 1 != expected_dim {
            return Err(FeatureError::Dimension {
                path: path.into(),
                line,
                key,
                expected: expected_dim,
                found: record.len() - 1,
            });
        }
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(column, cell)| {
                parse_number(cell).ok_or_else(|| FeatureError::NonNumeric {
                    path: path.into(),
                    line,
                    column: column + 1,
                    value: cell.into(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if table.rows.contains_key(&key) {
            return Err(FeatureError::Duplicate {
                path: path.into(),
                line,
                key,
            });
        }
        table.rows.insert(key, values);
    }
    Ok(table)
}

/// CSV text of a table; values use the shortest exact decimal form.
pub fn format_feature_table(table: &FeatureTable) -> String {
    let mut out = String::from("key");
    for i in 0..table.dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (key, values) in &table.rows {
        out.push_str(key);
        for v in values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
