//! Machine-readable artifacts. Nothing here records wall-clock time, so
//! reruns with the same config and seed produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context as _, Result};
use gestdiff_core::evaluation::{EmbeddingRow, Heatmap};
use gestdiff_core::vocab;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed()?,
            config: config.echo().clone(),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One JSON object per epoch: `{"epoch":1,"mean_loss":...}`.
pub fn train_log_jsonl(losses: &[f64]) -> Result<String> {
    #[derive(Serialize)]
    struct Line {
        epoch: usize,
        mean_loss: f64,
    }
    let mut out = String::new();
    for (i, &mean_loss) in losses.iter().enumerate() {
        out.push_str(&serde_json::to_string(&Line { epoch: i + 1, mean_loss })?);
        out.push('\n');
    }
    Ok(out)
}

/// `surgeon_id,G1,...,G15,MASK`, one row per surgeon.
pub fn heatmap_csv(heatmap: &Heatmap) -> String {
    let mut out = String::from("surgeon_id");
    for t in 0..heatmap.vocab {
        out.push(',');
        out.push_str(&vocab::label(t, heatmap.vocab));
    }
    out.push('\n');
    for (surgeon, row) in heatmap.surgeons.iter().zip(&heatmap.rows) {
        out.push_str(surgeon);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// `surgeon_id,mean_grs,e0,...`; unknown GRS is an empty cell.
pub fn embeddings_csv(rows: &[EmbeddingRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("surgeon_id,mean_grs");
    for i in 0..dim {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.surgeon_id);
        out.push(',');
        if let Some(g) = r.mean_grs {
            out.push_str(&g.to_string());
        }
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_header() {
        let h = Heatmap {
            vocab: 16,
            surgeons: vec!["B".into()],
            rows: vec![vec![1.0 / 16.0; 16]],
            omitted: vec![],
        };
        let csv = heatmap_csv(&h);
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("surgeon_id,G1,G2,"));
        assert!(header.ends_with(",G15,MASK"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn log_lines() {
        let log = train_log_jsonl(&[2.5, 1.25]).unwrap();
        assert_eq!(log, "{\"epoch\":1,\"mean_loss\":2.5}\n{\"epoch\":2,\"mean_loss\":1.25}\n");
    }

    #[test]
    fn embeddings_layout() {
        let rows = [
            EmbeddingRow {
                surgeon_id: "B".into(),
                mean_grs: Some(17.5),
                values: vec![0.5, -1.0],
            },
            EmbeddingRow {
                surgeon_id: "C".into(),
                mean_grs: None,
                values: vec![0.0, 2.0],
            },
        ];
        assert_eq!(embeddings_csv(&rows), "surgeon_id,mean_grs,e0,e1\nB,17.5,0.5,-1\nC,,0,2\n");
    }
}
