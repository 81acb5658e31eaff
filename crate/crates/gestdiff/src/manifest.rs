//! The prepared dataset: windows per split with their feature keys, and the
//! files they were read from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use gestdiff_core::conditioning::{ConditioningBundle, ConditioningConfig, FeatureSource, FeatureVector, SurgeonProfile, SurgeonStrategy};
use gestdiff_core::data::SplitScheme;
use gestdiff_core::denoiser::Example;
use gestdiff_core::diffusion::TokenSequence;
use serde::{Deserialize, Serialize};

use crate::features::{load_feature_table, FeatureTable};
use crate::report::{read_json, Provenance};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Input files; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sources {
    pub transcripts: String,
    pub mapping: Option<String>,
    pub vision: String,
    pub language: String,
    pub surgeon_id_vectors: Option<String>,
    pub surgeon_grs_vectors: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub trial_id: String,
    pub surgeon_id: String,
    pub start: usize,
    pub tokens: Vec<usize>,
    pub vision_key: String,
    pub language_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub trials: Vec<String>,
    pub windows: Vec<WindowEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeonEntry {
    pub surgeon_id: String,
    pub mean_grs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub vocab: usize,
    pub seq_len: usize,
    pub stride: usize,
    pub scheme: SplitScheme,
    pub sources: Sources,
    pub surgeons: Vec<SurgeonEntry>,
    pub train: SplitEntry,
    pub test: SplitEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Manifest {
    pub fn split(&self, split: Split) -> &SplitEntry {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn surgeon_ids(&self) -> Vec<String> {
        self.surgeons.iter().map(|s| s.surgeon_id.clone()).collect()
    }

    /// Surgeons with at least one window in `split`, sorted.
    pub fn split_surgeons(&self, split: Split) -> Vec<String> {
        let mut ids: Vec<String> = self.split(split).windows.iter().map(|w| w.surgeon_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// The manifest with its feature tables loaded.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub conditioning: ConditioningConfig,
    vision: FeatureTable,
    language: FeatureTable,
    surgeon_vectors: BTreeMap<SurgeonStrategy, FeatureTable>,
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    base.join(p)
}

impl Corpus {
    pub fn load(dir: &Path, conditioning: &ConditioningConfig) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE)).context("run `prepare` first")?;
        let s = &manifest.sources;
        let vision = load_feature_table(&resolve(dir, &s.vision), conditioning.vision_dim)?;
        let language = load_feature_table(&resolve(dir, &s.language), conditioning.language_dim)?;
        let mut surgeon_vectors = BTreeMap::new();
        for (strategy, path) in [
            (SurgeonStrategy::ExternalIdOnly, &s.surgeon_id_vectors),
            (SurgeonStrategy::ExternalIdGrs, &s.surgeon_grs_vectors),
        ] {
            if let Some(p) = path {
                surgeon_vectors.insert(strategy, load_feature_table(&resolve(dir, p), conditioning.surgeon_dim)?);
            }
        }
        Ok(Self {
            manifest,
            conditioning: conditioning.clone(),
            vision,
            language,
            surgeon_vectors,
        })
    }

    pub fn profile(&self, surgeon_id: &str, strategy: SurgeonStrategy) -> Result<SurgeonProfile> {
        let entry = self
            .manifest
            .surgeons
            .iter()
            .find(|s| s.surgeon_id == surgeon_id)
            .ok_or_else(|| anyhow!("unknown surgeon `{surgeon_id}`"))?;
        if !strategy.is_external() {
            return Ok(SurgeonProfile::learnable(surgeon_id, entry.mean_grs));
        }
        let table = self
            .surgeon_vectors
            .get(&strategy)
            .ok_or_else(|| anyhow!("{strategy} needs a surgeon vector table (data.surgeon_{}_vectors)", if strategy == SurgeonStrategy::ExternalIdGrs { "grs" } else { "id" }))?;
        let values = table
            .get(surgeon_id)
            .ok_or_else(|| anyhow!("surgeon vector table has no key `{surgeon_id}`"))?;
        let v = FeatureVector::new(values.to_vec(), FeatureSource::SurgeonExternal, self.conditioning.surgeon_dim)?;
        Ok(SurgeonProfile::external(surgeon_id, strategy, entry.mean_grs, v)?)
    }

    pub fn profiles(&self, surgeons: &[String], strategy: SurgeonStrategy) -> Result<Vec<SurgeonProfile>> {
        surgeons.iter().map(|s| self.profile(s, strategy)).collect()
    }

    pub fn vision(&self, key: &str) -> Result<FeatureVector> {
        let v = self.vision.get(key).ok_or_else(|| anyhow!("vision table has no key `{key}`"))?;
        Ok(FeatureVector::new(v.to_vec(), FeatureSource::Vision, self.conditioning.vision_dim)?)
    }

    pub fn language(&self, key: &str) -> Result<FeatureVector> {
        let v = self.language.get(key).ok_or_else(|| anyhow!("language table has no key `{key}`"))?;
        Ok(FeatureVector::new(v.to_vec(), FeatureSource::Language, self.conditioning.language_dim)?)
    }

    pub fn example(&self, w: &WindowEntry, strategy: SurgeonStrategy) -> Result<Example> {
        let mut x0 = TokenSequence::new(w.tokens.clone(), self.manifest.vocab)?;
        x0.trial_id = Some(w.trial_id.clone());
        x0.window_start = Some(w.start);
        x0.surgeon_id = Some(w.surgeon_id.clone());
        Ok(Example {
            x0,
            bundle: ConditioningBundle {
                vision: self.vision(&w.vision_key)?,
                language: self.language(&w.language_key)?,
                surgeon: self.profile(&w.surgeon_id, strategy)?,
                timestep: 0,
            },
        })
    }

    pub fn examples(&self, split: Split, strategy: SurgeonStrategy) -> Result<Vec<Example>> {
        self.manifest.split(split).windows.iter().map(|w| self.example(w, strategy)).collect()
    }

    /// Windows of one surgeon across both splits.
    pub fn surgeon_windows(&self, surgeon_id: &str) -> Vec<&WindowEntry> {
        self.manifest
            .train
            .windows
            .iter()
            .chain(&self.manifest.test.windows)
            .filter(|w| w.surgeon_id == surgeon_id)
            .collect()
    }

    /// Sampling context for a surgeon: the mean vision vector over their
    /// windows and the language vector of their first window.
    pub fn surgeon_bundle(&self, surgeon_id: &str, strategy: SurgeonStrategy) -> Result<ConditioningBundle> {
        let windows = self.surgeon_windows(surgeon_id);
        let Some(first) = windows.first() else {
            bail!("surgeon `{surgeon_id}` has no windows in the manifest");
        };
        let mut mean = vec![0.0; self.conditioning.vision_dim];
        for w in &windows {
            for (m, v) in mean.iter_mut().zip(&self.vision(&w.vision_key)?.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= windows.len() as f64);
        Ok(ConditioningBundle {
            vision: FeatureVector::new(mean, FeatureSource::Vision, self.conditioning.vision_dim)?,
            language: self.language(&first.language_key)?,
            surgeon: self.profile(surgeon_id, strategy)?,
            timestep: 0,
        })
    }
}
