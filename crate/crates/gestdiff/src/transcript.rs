//! JIGSAWS-style gesture transcripts (`start end G#` per line) and the
//! optional `trial_id,surgeon_id,mean_grs` mapping file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gestdiff_core::data::Trial;
use gestdiff_core::vocab;

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line `{text}` (expected `start end label`)")]
    Malformed { path: PathBuf, line: usize, text: String },
    #[error("{path}:{line}: unknown gesture label `{label}`")]
    Vocabulary { path: PathBuf, line: usize, label: String },
    #[error("{path}:{line}: {detail}")]
    Ordering { path: PathBuf, line: usize, detail: String },
    #[error("{path}: no segments")]
    Empty { path: PathBuf },
    #[error("{path}: cannot derive a surgeon id from trial `{trial}`; list it in the mapping file")]
    Surgeon { path: PathBuf, trial: String },
    #[error("{path}:{line}: {detail}")]
    Mapping { path: PathBuf, line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    pub token: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub trial_id: String,
    pub surgeon_id: String,
    pub segments: Vec<Segment>,
}

impl Transcript {
    /// One token per segment.
    pub fn tokens(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.token).collect()
    }

    pub fn into_trial(self) -> Trial {
        Trial {
            tokens: self.tokens(),
            trial_id: self.trial_id,
            surgeon_id: self.surgeon_id,
        }
    }
}

/// Parses transcript text; `path` is only used in error messages.
pub fn parse_segments(text: &str, path: &Path, vocab_size: usize) -> Result<Vec<Segment>, TranscriptError> {
    let mut segments: Vec<Segment> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let malformed = || TranscriptError::Malformed {
            path: path.into(),
            line,
            text: trimmed.into(),
        };
        let [start, end, label] = fields[..] else {
            return Err(malformed());
        };
        let start: u64 = start.parse().map_err(|_| malformed())?;
        let end: u64 = end.parse().map_err(|_| malformed())?;
        let token = vocab::parse_gesture(label, vocab_size).ok_or_else(|| TranscriptError::Vocabulary {
            path: path.into(),
            line,
            label: label.into(),
        })?;
        if start > end {
            return Err(TranscriptError::Ordering {
                path: path.into(),
                line,
                detail: format!("segment starts at frame {start} after it ends at {end}"),
            });
        }
        if let Some(prev) = segments.last() {
            if start <= prev.end {
                return Err(TranscriptError::Ordering {
                    path: path.into(),
                    line,
                    detail: format!("segment starting at frame {start} overlaps the previous one ending at {}", prev.end),
                });
            }
        }
        segments.push(Segment { start, end, token });
    }
    Ok(segments)
}

/// Trial id from a file name: `Suturing_B001.txt` → `Suturing_B001`.
pub fn trial_id_from_path(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Surgeon letter(s) of a JIGSAWS trial id: `Suturing_B001` → `B`.
pub fn surgeon_from_trial(trial_id: &str) -> Option<String> {
    let (_, tail) = trial_id.rsplit_once('_')?;
    let id: String = tail.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let rest = &tail[id.len()..];
    (!id.is_empty() && !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())).then_some(id)
}

/// Task name of a trial id: `Suturing_B001` → `Suturing`.
pub fn task_from_trial(trial_id: &str) -> &str {
    trial_id.rsplit_once('_').map_or(trial_id, |(task, _)| task)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingRow {
    pub surgeon_id: String,
    pub mean_grs: Option<f64>,
}

pub type SurgeonMapping = BTreeMap<String, MappingRow>;

/// Reads `trial_id,surgeon_id,mean_grs`; an empty GRS cell means unknown.
pub fn load_mapping(path: &Path) -> Result<SurgeonMapping, TranscriptError> {
    let err = |line: usize, detail: String| TranscriptError::Mapping {
        path: path.into(),
        line,
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["trial_id", "surgeon_id", "mean_grs"] {
        return Err(err(1, format!("header must be `trial_id,surgeon_id,mean_grs`, found `{}`", names.join(","))));
    }
    let mut out = SurgeonMapping::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let grs = match &record[2] {
            "" => None,
            cell => Some(cell.parse::<f64>().map_err(|_| err(line, format!("mean_grs `{cell}` is not a number")))?),
        };
        let row = MappingRow {
            surgeon_id: record[1].to_string(),
            mean_grs: grs,
        };
        if out.insert(record[0].to_string(), row).is_some() {
            return Err(err(line, format!("duplicate trial `{}`", &record[0])));
        }
    }
    Ok(out)
}

pub fn parse_transcript(path: &Path, mapping: Option<&SurgeonMapping>, vocab_size: usize) -> Result<Transcript, TranscriptError> {
    let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.into(),
        source,
    })?;
    let segments = parse_segments(&text, path, vocab_size)?;
    if segments.is_empty() {
        return Err(TranscriptError::Empty { path: path.into() });
    }
    let trial_id = trial_id_from_path(path);
    let surgeon_id = mapping
        .and_then(|m| m.get(&trial_id))
        .map(|r| r.surgeon_id.clone())
        .or_else(|| surgeon_from_trial(&trial_id))
        .ok_or_else(|| TranscriptError::Surgeon {
            path: path.into(),
            trial: trial_id.clone(),
        })?;
    Ok(Transcript {
        trial_id,
        surgeon_id,
        segments,
    })
}

/// Every `*.txt` file of a directory, in file-name order.
pub fn load_transcripts(dir: &Path, mapping: Option<&SurgeonMapping>, vocab_size: usize) -> Result<Vec<Transcript>, TranscriptError> {
    let io = |source| TranscriptError::Io { path: dir.into(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    paths.sort();
    paths.iter().map(|p| parse_transcript(p, mapping, vocab_size)).collect()
}

/// Writes segments back in transcript format.
pub fn format_segments(segments: &[Segment], vocab_size: usize) -> String {
    segments
        .iter()
        .map(|s| format!("{} {} {}\n", s.start, s.end, vocab::label(s.token, vocab_size)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Segment>, TranscriptError> {
        parse_segments(text, Path::new("t.txt"), 16)
    }

    #[test]
    fn two_segments() {
        let s = parse("80 320 G1\n321 520 G5\n").unwrap();
        assert_eq!(s.iter().map(|s| s.token).collect::<Vec<_>>(), [0, 4]);
        assert_eq!(format_segments(&s, 16), "80 320 G1\n321 520 G5\n");
    }

    #[test]
    fn errors_name_the_line() {
        match parse("10 5 G1") {
            Err(TranscriptError::Ordering { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let e = parse("1 2 G1\n3 4 G99").unwrap_err();
        assert!(matches!(e, TranscriptError::Vocabulary { line: 2, ref label, .. } if label == "G99"));
        assert!(e.to_string().contains("G99"));
        assert!(matches!(parse("1 2 G1\n2 4 G2"), Err(TranscriptError::Ordering { line: 2, .. })));
        assert!(matches!(parse("1 2\n"), Err(TranscriptError::Malformed { line: 1, .. })));
        assert!(matches!(parse("a 2 G1\n"), Err(TranscriptError::Malformed { .. })));
        assert!(matches!(parse("1 2 MASK\n"), Err(TranscriptError::Vocabulary { .. })));
    }

    #[test]
    fn ids_from_names() {
        assert_eq!(surgeon_from_trial("Suturing_B001").as_deref(), Some("B"));
        assert_eq!(surgeon_from_trial("Knot_Tying_C004").as_deref(), Some("C"));
        assert_eq!(surgeon_from_trial("trial7"), None);
        assert_eq!(task_from_trial("Knot_Tying_C004"), "Knot_Tying");
        assert_eq!(trial_id_from_path(Path::new("/x/Suturing_B001.txt")), "Suturing_B001");
    }
}
