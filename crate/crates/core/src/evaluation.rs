//! Gesture-prediction metrics, teacher-forced and generative evaluation,
//! per-surgeon heatmaps and embedding exports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::conditioning::SurgeonProfile;
use crate::denoiser::{Denoiser, Example};
use crate::diffusion::{reverse_sample, ReverseInit, TransitionSchedule};
use crate::error::{Error, Result};
use crate::rng::{seeded, streams};

/// Fraction of positions whose true token appears among the first `k`
/// entries of that position's ranked list.
pub fn topk_accuracy(predictions: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::dim("topk_accuracy", &[predictions.len()], &[truth.len()]));
    }
    if k == 0 {
        return Err(Error::Precondition("top-k needs k >= 1".into()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.iter().take(k).any(|x| x == *t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Breakdown {
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
}

/// Per-class F1 (0/0 taken as 0) weighted by true-class support.
pub fn weighted_f1(predicted: &[usize], truth: &[usize], vocab: usize) -> Result<F1Breakdown> {
    if predicted.len() != truth.len() {
        return Err(Error::dim("weighted_f1", &[predicted.len()], &[truth.len()]));
    }
    let mut tp = vec![0usize; vocab];
    let mut fp = vec![0usize; vocab];
    let mut support = vec![0usize; vocab];
    for (&p, &t) in predicted.iter().zip(truth) {
        for (what, v) in [("predicted token", p), ("true token", t)] {
            if v >= vocab {
                return Err(Error::Index {
                    what,
                    index: v,
                    limit: vocab,
                });
            }
        }
        support[t] += 1;
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..vocab)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + (support[c] - tp[c]);
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let total: usize = support.iter().sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class_f1
            .iter()
            .zip(&support)
            .map(|(f, &s)| f * s as f64)
            .sum::<f64>()
            / total as f64
    };
    Ok(F1Breakdown {
        weighted_f1,
        per_class_f1,
        support,
    })
}

/// Pooled metrics over every evaluated position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub top1: f64,
    pub top5: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    pub n_positions: usize,
    /// Fraction of whole windows whose top-1 predictions are all correct.
    pub sequence_exact_match: f64,
}

/// Builds a report from per-position ranked lists; `seq_len` groups
/// positions into windows for the exact-match figure.
pub fn metric_report(ranked: &[Vec<usize>], truth: &[usize], seq_len: usize, vocab: usize) -> Result<MetricReport> {
    let top1 = topk_accuracy(ranked, truth, 1)?;
    let top5 = topk_accuracy(ranked, truth, 5.min(vocab))?;
    let predicted: Vec<usize> = ranked
        .iter()
        .map(|r| r.first().copied().ok_or_else(|| Error::Precondition("empty ranked list".into())))
        .collect::<Result<_>>()?;
    let f1 = weighted_f1(&predicted, truth, vocab)?;
    let sequence_exact_match = if seq_len == 0 || truth.is_empty() {
        0.0
    } else {
        let windows = truth.len() / seq_len;
        let exact = (0..windows)
            .filter(|w| {
                let r = w * seq_len..(w + 1) * seq_len;
                predicted[r.clone()] == truth[r]
            })
            .count();
        exact as f64 / windows.max(1) as f64
    };
    Ok(MetricReport {
        top1,
        top5,
        weighted_f1: f1.weighted_f1,
        per_class_f1: f1.per_class_f1,
        support: f1.support,
        n_positions: truth.len(),
        sequence_exact_match,
    })
}

/// Which corruption level teacher-forced evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimestepPolicy {
    /// A fresh uniform draw from `[0, T)` per window and repeat.
    Uniform,
    Fixed(usize),
}

/// One evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub trial_id: Option<String>,
    pub surgeon_id: String,
    pub timestep: usize,
    pub truth: Vec<usize>,
    /// Ranked top-5 (or top-K when K < 5) per position.
    pub ranked: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub records: Vec<PredictionRecord>,
}

const EVAL_BATCH: usize = 64;

/// Corrupts each window with `q(x_t | x_0)` and scores the model's `x_0`
/// prediction. Draws come from the evaluation stream of `seed`.
pub fn teacher_forced(
    model: &Denoiser,
    examples: &[Example],
    schedule: &TransitionSchedule,
    policy: TimestepPolicy,
    repeats: usize,
    seed: u64,
) -> Result<Evaluation> {
    let vocab = model.config().vocab;
    if schedule.vocab() != vocab {
        return Err(Error::config(format!(
            "schedule K={} does not match model K={vocab}",
            schedule.vocab()
        )));
    }
    if let TimestepPolicy::Fixed(t) = policy {
        if t >= schedule.steps() {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                limit: schedule.steps(),
            });
        }
    }
    let k = 5.min(vocab);
    let mut rng = seeded(seed, streams::EVAL);
    let mut drawn = Vec::with_capacity(examples.len() * repeats.max(1));
    for _ in 0..repeats.max(1) {
        for ex in examples {
            let t = match policy {
                TimestepPolicy::Uniform => rng.random_range(0..schedule.steps()),
                TimestepPolicy::Fixed(t) => t,
            };
            let xt = schedule.corrupt(&ex.x0.tokens, t, &mut rng)?;
            drawn.push((ex, xt, t));
        }
    }
    let mut records = Vec::with_capacity(drawn.len());
    for chunk in drawn.chunks(EVAL_BATCH) {
        let items: Vec<_> = chunk.iter().map(|(ex, xt, t)| (xt.as_slice(), &ex.bundle, *t)).collect();
        let preds = model.predict_batch(&items, k)?;
        for ((ex, _, t), pred) in chunk.iter().zip(preds) {
            records.push(PredictionRecord {
                trial_id: ex.x0.trial_id.clone(),
                surgeon_id: ex.bundle.surgeon.surgeon_id.clone(),
                timestep: *t,
                truth: ex.x0.tokens.clone(),
                ranked: pred.topk,
            });
        }
    }
    let ranked: Vec<Vec<usize>> = records.iter().flat_map(|r| r.ranked.iter().cloned()).collect();
    let truth: Vec<usize> = records.iter().flat_map(|r| r.truth.iter().copied()).collect();
    let report = metric_report(&ranked, &truth, model.config().seq_len, vocab)?;
    Ok(Evaluation { report, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedWindow {
    pub trial_id: Option<String>,
    pub surgeon_id: String,
    pub truth: Vec<usize>,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeReport {
    pub exact_match: f64,
    pub position_accuracy: f64,
    pub n_windows: usize,
    pub samples: Vec<GeneratedWindow>,
}

/// Full reverse sampling per window, scored against the ground truth.
pub fn generative(
    model: &Denoiser,
    examples: &[Example],
    schedule: &TransitionSchedule,
    from_clean: bool,
    seed: u64,
) -> Result<GenerativeReport> {
    let mut rng = seeded(seed, streams::SAMPLE);
    let mut samples = Vec::with_capacity(examples.len());
    let (mut exact, mut hits, mut positions) = (0usize, 0usize, 0usize);
    for ex in examples {
        let init = if from_clean {
            ReverseInit::FromClean(&ex.x0.tokens)
        } else {
            ReverseInit::Uniform
        };
        let out = reverse_sample(schedule, &model.conditioned(&ex.bundle), init, &mut rng)?;
        let correct = out.tokens.iter().zip(&ex.x0.tokens).filter(|(a, b)| a == b).count();
        hits += correct;
        positions += ex.x0.tokens.len();
        if correct == ex.x0.tokens.len() {
            exact += 1;
        }
        samples.push(GeneratedWindow {
            trial_id: ex.x0.trial_id.clone(),
            surgeon_id: ex.bundle.surgeon.surgeon_id.clone(),
            truth: ex.x0.tokens.clone(),
            tokens: out.tokens,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(GenerativeReport {
        exact_match: ratio(exact, examples.len()),
        position_accuracy: ratio(hits, positions),
        n_windows: examples.len(),
        samples,
    })
}

/// Row-normalized predicted-token frequencies per surgeon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub vocab: usize,
    pub surgeons: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Surgeons that were expected but had no predictions.
    pub omitted: Vec<String>,
}

/// Aggregates `(surgeon, predicted token)` pairs. Surgeons listed in
/// `expected` with no pairs are omitted and reported in `omitted`.
pub fn gesture_heatmap(expected: &[String], predictions: &[(String, usize)], vocab: usize) -> Result<Heatmap> {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (s, tok) in predictions {
        if *tok >= vocab {
            return Err(Error::Index {
                what: "token",
                index: *tok,
                limit: vocab,
            });
        }
        counts.entry(s.as_str()).or_insert_with(|| vec![0; vocab])[*tok] += 1;
    }
    let mut order: Vec<String> = expected.to_vec();
    for s in counts.keys() {
        if !order.iter().any(|e| e == s) {
            order.push(String::from(*s));
        }
    }
    let mut heat = Heatmap {
        vocab,
        surgeons: Vec::new(),
        rows: Vec::new(),
        omitted: Vec::new(),
    };
    for s in order {
        match counts.get(s.as_str()) {
            Some(c) => {
                let total: usize = c.iter().sum();
                heat.rows.push(c.iter().map(|&n| n as f64 / total as f64).collect());
                heat.surgeons.push(s);
            }
            None => heat.omitted.push(s),
        }
    }
    Ok(heat)
}

/// Top-1 predictions of every evaluated position, keyed by surgeon.
pub fn top1_by_surgeon(records: &[PredictionRecord]) -> Vec<(String, usize)> {
    records
        .iter()
        .flat_map(|r| r.ranked.iter().map(move |p| (r.surgeon_id.clone(), p[0])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub surgeon_id: String,
    pub mean_grs: Option<f64>,
    pub values: Vec<f64>,
}

/// The post-projection surgeon vectors the fusion step consumes.
pub fn export_embeddings(model: &Denoiser, profiles: &[SurgeonProfile]) -> Result<Vec<EmbeddingRow>> {
    profiles
        .iter()
        .map(|p| {
            Ok(EmbeddingRow {
                surgeon_id: p.surgeon_id.clone(),
                mean_grs: p.mean_grs,
                values: model.surgeon_embedding(p)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_counts() {
        let truth = [3, 1, 2, 0];
        let exact: Vec<Vec<usize>> = truth.iter().map(|&t| vec![t]).collect();
        assert_eq!(topk_accuracy(&exact, &truth, 1).unwrap(), 1.0);
        let late: Vec<Vec<usize>> = truth.iter().map(|&t| vec![9, 9, t, 9, 9]).collect();
        assert_eq!(topk_accuracy(&late, &truth, 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&late, &truth, 5).unwrap(), 1.0);
        let three = vec![vec![3], vec![1], vec![2], vec![5]];
        assert_eq!(topk_accuracy(&three, &truth, 1).unwrap(), 0.75);
        assert!(topk_accuracy(&three, &truth[..3], 1).is_err());
    }

    #[test]
    fn worked_f1() {
        let r = weighted_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 16).unwrap();
        assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class_f1[1] - 0.8).abs() < 1e-12);
        assert!((r.weighted_f1 - 0.733_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(r.support[15], 0);
    }

    #[test]
    fn perfect_f1() {
        let t = [0, 4, 4, 7];
        assert_eq!(weighted_f1(&t, &t, 16).unwrap().weighted_f1, 1.0);
    }

    #[test]
    fn heatmap_rows() {
        let preds = vec![("B".into(), 2), ("B".into(), 2), ("C".into(), 0), ("C".into(), 1)];
        let h = gesture_heatmap(&["B".into(), "C".into(), "D".into()], &preds, 16).unwrap();
        assert_eq!(h.surgeons, vec![String::from("B"), String::from("C")]);
        assert_eq!(h.rows[0][2], 1.0);
        assert_eq!(h.rows[1][0], 0.5);
        assert_eq!(h.omitted, vec![String::from("D")]);
    }

    #[test]
    fn exact_match_groups_windows() {
        let ranked = vec![vec![0], vec![1], vec![2], vec![0]];
        let r = metric_report(&ranked, &[0, 1, 2, 3], 2, 16).unwrap();
        assert_eq!(r.sequence_exact_match, 0.5);
        assert!(r.top1 <= r.top5);
    }
}
