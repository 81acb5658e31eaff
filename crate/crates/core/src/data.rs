//! Trials, fixed-length windows, train/test splits and a seeded synthetic
//! substitute for transcript data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    ConditioningBundle, FeatureSource, FeatureVector, SurgeonProfile, SurgeonStrategy,
};
use crate::denoiser::Example;
use crate::diffusion::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::{seeded, streams};
use crate::vocab;

/// One recorded trial: an ordered gesture sequence with its owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub surgeon_id: String,
    pub tokens: Vec<usize>,
}

/// Start offsets of every full window. Shorter sequences give none.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || len < window {
        return Vec::new();
    }
    (0..=len - window).step_by(stride).collect()
}

/// All contiguous windows of `window` tokens taken every `stride` tokens.
pub fn window(sequence: &[usize], window: usize, stride: usize) -> Vec<Vec<usize>> {
    window_starts(sequence.len(), window, stride)
        .into_iter()
        .map(|s| sequence[s..s + window].to_vec())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Windows tagged with trial, offset and surgeon.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub windows: Vec<TokenSequence>,
    pub split: Option<SplitTag>,
}

impl WindowedDataset {
    pub fn from_trials(trials: &[Trial], len: usize, stride: usize, vocab_size: usize) -> Result<Self> {
        let mut windows = Vec::new();
        for trial in trials {
            for start in window_starts(trial.tokens.len(), len, stride) {
                let mut seq = TokenSequence::new(trial.tokens[start..start + len].to_vec(), vocab_size)?;
                seq.trial_id = Some(trial.trial_id.clone());
                seq.window_start = Some(start);
                seq.surgeon_id = Some(trial.surgeon_id.clone());
                windows.push(seq);
            }
        }
        Ok(Self { windows, split: None })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Distinct trial ids, sorted.
    pub fn trials(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.windows.iter().filter_map(|w| w.trial_id.as_ref()).collect();
        set.into_iter().cloned().collect()
    }

    /// Distinct surgeon ids, sorted.
    pub fn surgeons(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.windows.iter().filter_map(|w| w.surgeon_id.as_ref()).collect();
        set.into_iter().cloned().collect()
    }

    fn select(&self, keep: impl Fn(&TokenSequence) -> bool, tag: SplitTag) -> Self {
        Self {
            windows: self.windows.iter().filter(|w| keep(w)).cloned().collect(),
            split: Some(tag),
        }
    }

    fn partition_by_trial(&self, test: &BTreeSet<String>) -> (Self, Self) {
        let in_test = |w: &TokenSequence| w.trial_id.as_ref().is_some_and(|t| test.contains(t));
        (
            self.select(|w| !in_test(w), SplitTag::Train),
            self.select(in_test, SplitTag::Test),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// Shuffle trials and keep `round(train_ratio · n)` of them for training.
    ByTrialRandom { train_ratio: f64 },
    /// Trial number `fold` (in sorted order) is the test set.
    LeaveOneTrialOut { fold: usize },
    /// All trials of the listed surgeons form the test set; an empty list
    /// holds out one surgeon chosen by the seed.
    BySurgeonHoldout { surgeons: Vec<String> },
}

/// Splits by trial so that no trial contributes to both sides.
pub fn split(dataset: &WindowedDataset, scheme: &SplitScheme, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    let trials = dataset.trials();
    match scheme {
        SplitScheme::ByTrialRandom { train_ratio } => {
            if trials.len() < 2 {
                return Err(Error::config(format!(
                    "by-trial-random split needs at least 2 trials, found {}",
                    trials.len()
                )));
            }
            if !(0.0..=1.0).contains(train_ratio) {
                return Err(Error::config("split ratio must lie in [0, 1]"));
            }
            let n_train = libm::round(train_ratio * trials.len() as f64) as usize;
            let n_train = n_train.clamp(1, trials.len() - 1);
            let mut order = trials;
            order.shuffle(&mut seeded(seed, streams::SPLIT));
            let test: BTreeSet<String> = order[n_train..].iter().cloned().collect();
            Ok(dataset.partition_by_trial(&test))
        }
        SplitScheme::LeaveOneTrialOut { fold } => {
            if trials.len() < 2 {
                return Err(Error::config("leave-one-trial-out needs at least 2 trials"));
            }
            let held = trials.get(*fold).ok_or(Error::Index {
                what: "fold",
                index: *fold,
                limit: trials.len(),
            })?;
            let test: BTreeSet<String> = [held.clone()].into_iter().collect();
            Ok(dataset.partition_by_trial(&test))
        }
        SplitScheme::BySurgeonHoldout { surgeons } => {
            let all = dataset.surgeons();
            if all.len() < 2 {
                return Err(Error::config("by-surgeon-holdout needs at least 2 surgeons"));
            }
            let held: BTreeSet<String> = if surgeons.is_empty() {
                let pick = seeded(seed, streams::SPLIT).random_range(0..all.len());
                [all[pick].clone()].into_iter().collect()
            } else {
                for s in surgeons {
                    if !all.contains(s) {
                        return Err(Error::Lookup {
                            what: "surgeon",
                            key: s.clone(),
                        });
                    }
                }
                surgeons.iter().cloned().collect()
            };
            if held.len() == all.len() {
                return Err(Error::config("by-surgeon-holdout would leave no training surgeon"));
            }
            let in_test = |w: &TokenSequence| w.surgeon_id.as_ref().is_some_and(|s| held.contains(s));
            Ok((
                dataset.select(|w| !in_test(w), SplitTag::Train),
                dataset.select(in_test, SplitTag::Test),
            ))
        }
    }
}

/// Every leave-one-trial-out fold, in sorted trial order.
pub fn leave_one_trial_out_folds(dataset: &WindowedDataset) -> Result<Vec<(WindowedDataset, WindowedDataset)>> {
    (0..dataset.trials().len())
        .map(|fold| split(dataset, &SplitScheme::LeaveOneTrialOut { fold }, 0))
        .collect()
}

/// Parameters of the synthetic generator.
///
/// Surgeon `s` owns a block of `support_size` gestures and, when following
/// its own pattern, cycles through that block; otherwise it follows a
/// cycle shared by everyone over all gestures. `divergence` is the
/// per-step probability of following the surgeon's own pattern: `0` makes
/// surgeons indistinguishable, `1` gives each a deterministic cycle on its
/// own (disjoint, when they fit) token set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_surgeons: usize,
    pub trials_per_surgeon: usize,
    pub segments_per_trial: usize,
    pub divergence: f64,
    pub support_size: Option<usize>,
    pub vocab: usize,
    pub vision_dim: usize,
    pub language_dim: usize,
    pub surgeon_dim: usize,
    /// Spread of per-trial vision features around a shared base.
    pub vision_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_surgeons: 4,
            trials_per_surgeon: 5,
            segments_per_trial: 20,
            divergence: 1.0,
            support_size: None,
            vocab: vocab::DEFAULT_VOCAB,
            vision_dim: 1000,
            language_dim: 768,
            surgeon_dim: 384,
            vision_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurgeon {
    pub surgeon_id: String,
    pub mean_grs: f64,
    pub support: Vec<usize>,
}

/// Generated trials plus matching feature tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub task: String,
    pub trials: Vec<Trial>,
    pub surgeons: Vec<SyntheticSurgeon>,
    /// Per-trial vision vectors.
    pub vision: BTreeMap<String, Vec<f64>>,
    /// Per-task language vectors.
    pub language: BTreeMap<String, Vec<f64>>,
    /// External vectors standing in for sentence embeddings of the id-only
    /// and id-plus-skill prompts.
    pub surgeon_id_vectors: BTreeMap<String, Vec<f64>>,
    pub surgeon_grs_vectors: BTreeMap<String, Vec<f64>>,
}

pub const SYNTHETIC_TASK: &str = "Synthetic";

/// Surgeon id for index `i`: `B`, `C`, … (JIGSAWS-style single letters).
pub fn synthetic_surgeon_id(i: usize) -> String {
    char::from(b'B' + i as u8).to_string()
}

pub fn synthesize_dataset(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    if spec.n_surgeons == 0 || spec.n_surgeons > 25 {
        return Err(Error::config("synthetic data supports 1 to 25 surgeons"));
    }
    if spec.vocab < 3 {
        return Err(Error::config("synthetic data needs at least two gestures"));
    }
    if !(0.0..=1.0).contains(&spec.divergence) {
        return Err(Error::config("divergence must lie in [0, 1]"));
    }
    let mut rng = seeded(seed, streams::SYNTH);
    let gestures = vocab::gesture_count(spec.vocab);
    let m = spec
        .support_size
        .unwrap_or((gestures / spec.n_surgeons).max(1))
        .clamp(1, gestures);
    let gauss = |n: usize, rng: &mut crate::rng::Rng| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    };

    let mut surgeons = Vec::with_capacity(spec.n_surgeons);
    for s in 0..spec.n_surgeons {
        let support = (0..m).map(|j| (s * m + j) % gestures).collect();
        let mean_grs = 10.0 + 20.0 * rng.random::<f64>();
        surgeons.push(SyntheticSurgeon {
            surgeon_id: synthetic_surgeon_id(s),
            mean_grs: libm::round(mean_grs * 100.0) / 100.0,
            support,
        });
    }

    let mut trials = Vec::new();
    for surgeon in &surgeons {
        let own = &surgeon.support;
        for n in 0..spec.trials_per_surgeon {
            let mut tokens = Vec::with_capacity(spec.segments_per_trial);
            let mut cur = if rng.random::<f64>() < spec.divergence {
                own[rng.random_range(0..own.len())]
            } else {
                rng.random_range(0..gestures)
            };
            for _ in 0..spec.segments_per_trial {
                tokens.push(cur);
                cur = if rng.random::<f64>() < spec.divergence {
                    match own.iter().position(|&g| g == cur) {
                        Some(p) => own[(p + 1) % own.len()],
                        None => own[0],
                    }
                } else {
                    (cur + 1) % gestures
                };
            }
            trials.push(Trial {
                trial_id: format!("{SYNTHETIC_TASK}_{}{:03}", surgeon.surgeon_id, n + 1),
                surgeon_id: surgeon.surgeon_id.clone(),
                tokens,
            });
        }
    }

    let base = gauss(spec.vision_dim, &mut rng);
    let mut vision = BTreeMap::new();
    for trial in &trials {
        let noise = gauss(spec.vision_dim, &mut rng);
        let v = base.iter().zip(noise).map(|(b, e)| b + spec.vision_noise * e).collect();
        vision.insert(trial.trial_id.clone(), v);
    }
    let mut language = BTreeMap::new();
    language.insert(SYNTHETIC_TASK.to_string(), gauss(spec.language_dim, &mut rng));

    let skill_direction = gauss(spec.surgeon_dim, &mut rng);
    let mut surgeon_id_vectors = BTreeMap::new();
    let mut surgeon_grs_vectors = BTreeMap::new();
    for surgeon in &surgeons {
        let id_vec = gauss(spec.surgeon_dim, &mut rng);
        let skill = (surgeon.mean_grs - 20.0) / 10.0;
        let grs_vec = id_vec
            .iter()
            .zip(&skill_direction)
            .map(|(a, d)| a + skill * d)
            .collect();
        surgeon_id_vectors.insert(surgeon.surgeon_id.clone(), id_vec);
        surgeon_grs_vectors.insert(surgeon.surgeon_id.clone(), grs_vec);
    }

    Ok(SyntheticData {
        spec: spec.clone(),
        task: SYNTHETIC_TASK.to_string(),
        trials,
        surgeons,
        vision,
        language,
        surgeon_id_vectors,
        surgeon_grs_vectors,
    })
}

impl SyntheticData {
    pub fn windows(&self, len: usize, stride: usize) -> Result<WindowedDataset> {
        WindowedDataset::from_trials(&self.trials, len, stride, self.spec.vocab)
    }

    pub fn surgeon_ids(&self) -> Vec<String> {
        self.surgeons.iter().map(|s| s.surgeon_id.clone()).collect()
    }

    pub fn profile(&self, surgeon_id: &str, strategy: SurgeonStrategy) -> Result<SurgeonProfile> {
        let s = self
            .surgeons
            .iter()
            .find(|s| s.surgeon_id == surgeon_id)
            .ok_or_else(|| Error::Lookup {
                what: "surgeon",
                key: surgeon_id.into(),
            })?;
        let table = match strategy {
            SurgeonStrategy::LearnableTable => return Ok(SurgeonProfile::learnable(surgeon_id, Some(s.mean_grs))),
            SurgeonStrategy::ExternalIdOnly => &self.surgeon_id_vectors,
            SurgeonStrategy::ExternalIdGrs => &self.surgeon_grs_vectors,
        };
        let v = FeatureVector::new(table[surgeon_id].clone(), FeatureSource::SurgeonExternal, self.spec.surgeon_dim)?;
        SurgeonProfile::external(surgeon_id, strategy, Some(s.mean_grs), v)
    }

    pub fn profiles(&self, strategy: SurgeonStrategy) -> Result<Vec<SurgeonProfile>> {
        self.surgeons
            .iter()
            .map(|s| self.profile(&s.surgeon_id, strategy))
            .collect()
    }

    /// Conditioning for a window, looked up through its trial and surgeon.
    pub fn bundle(&self, window: &TokenSequence, strategy: SurgeonStrategy) -> Result<ConditioningBundle> {
        let trial = window
            .trial_id
            .as_ref()
            .ok_or_else(|| Error::config("window has no trial id"))?;
        let surgeon = window
            .surgeon_id
            .as_ref()
            .ok_or_else(|| Error::config("window has no surgeon id"))?;
        let vision = self.vision.get(trial).ok_or_else(|| Error::Lookup {
            what: "vision feature",
            key: trial.clone(),
        })?;
        Ok(ConditioningBundle {
            vision: FeatureVector::new(vision.clone(), FeatureSource::Vision, self.spec.vision_dim)?,
            language: FeatureVector::new(
                self.language[&self.task].clone(),
                FeatureSource::Language,
                self.spec.language_dim,
            )?,
            surgeon: self.profile(surgeon, strategy)?,
            timestep: 0,
        })
    }

    pub fn examples(&self, windows: &WindowedDataset, strategy: SurgeonStrategy) -> Result<Vec<Example>> {
        windows
            .windows
            .iter()
            .map(|w| {
                Ok(Example {
                    x0: w.clone(),
                    bundle: self.bundle(w, strategy)?,
                })
            })
            .collect()
    }
}

/// Token counts covered by windows, per trial and position offset; used to
/// check windowing against enumeration.
pub fn coverage_counts(trials: &[Trial], len: usize, stride: usize) -> BTreeMap<(String, usize), usize> {
    let mut counts = BTreeMap::new();
    for trial in trials {
        for start in window_starts(trial.tokens.len(), len, stride) {
            for offset in start..start + len {
                *counts.entry((trial.trial_id.clone(), offset)).or_insert(0) += 1;
            }
        }
    }
    counts
}
