//! Conditioning context: projected vision and language features, a
//! per-surgeon embedding and a timestep embedding, fused into one hidden
//! vector that is added to every token position.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{lookup, normal_tensor, Linear, INIT_STD};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Vision,
    Language,
    SurgeonExternal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: FeatureSource, expected_dim: usize) -> Result<Self> {
        if values.len() != expected_dim {
            return Err(Error::config(format!(
                "{source:?} feature has dimension {}, expected {expected_dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self { values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// How a surgeon's identity reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurgeonStrategy {
    /// One trainable row per surgeon id.
    LearnableTable,
    /// Frozen external vector of the "Surgeon ID: i" prompt, projected.
    ExternalIdOnly,
    /// Frozen external vector of the id + average skill prompt, projected.
    ExternalIdGrs,
}

impl SurgeonStrategy {
    pub const ALL: [SurgeonStrategy; 3] = [
        SurgeonStrategy::LearnableTable,
        SurgeonStrategy::ExternalIdOnly,
        SurgeonStrategy::ExternalIdGrs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurgeonStrategy::LearnableTable => "learnable-table",
            SurgeonStrategy::ExternalIdOnly => "external-id-only",
            SurgeonStrategy::ExternalIdGrs => "external-id-grs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn is_external(self) -> bool {
        !matches!(self, SurgeonStrategy::LearnableTable)
    }
}

impl core::fmt::Display for SurgeonStrategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeonProfile {
    pub surgeon_id: String,
    pub mean_grs: Option<f64>,
    pub strategy: SurgeonStrategy,
    pub external_vector: Option<FeatureVector>,
}

impl SurgeonProfile {
    pub fn learnable(surgeon_id: &str, mean_grs: Option<f64>) -> Self {
        Self {
            surgeon_id: surgeon_id.to_string(),
            mean_grs,
            strategy: SurgeonStrategy::LearnableTable,
            external_vector: None,
        }
    }

    pub fn external(
        surgeon_id: &str,
        strategy: SurgeonStrategy,
        mean_grs: Option<f64>,
        vector: FeatureVector,
    ) -> Result<Self> {
        let p = Self {
            surgeon_id: surgeon_id.to_string(),
            mean_grs,
            strategy,
            external_vector: Some(vector),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.strategy.is_external(), &self.external_vector) {
            (true, None) => Err(Error::config(format!(
                "surgeon `{}` uses {} but has no external vector",
                self.surgeon_id, self.strategy
            ))),
            (false, Some(_)) => Err(Error::config(format!(
                "surgeon `{}` uses learnable-table but carries an external vector",
                self.surgeon_id
            ))),
            _ if self.strategy == SurgeonStrategy::ExternalIdGrs && self.mean_grs.is_none() => {
                Err(Error::config(format!("surgeon `{}` needs a mean GRS", self.surgeon_id)))
            }
            _ => Ok(()),
        }
    }
}

/// The prompt whose frozen sentence embedding keys the external vectors.
/// No encoder is run here.
pub fn build_prompt(profile: &SurgeonProfile) -> String {
    match (profile.strategy, profile.mean_grs) {
        (SurgeonStrategy::ExternalIdGrs, Some(grs)) => {
            format!("Surgeon ID: {}, average skill score: {grs:.2}", profile.surgeon_id)
        }
        _ => format!("Surgeon ID: {}", profile.surgeon_id),
    }
}

/// Everything the denoiser is conditioned on for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningBundle {
    pub vision: FeatureVector,
    pub language: FeatureVector,
    pub surgeon: SurgeonProfile,
    pub timestep: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Elementwise sum of the four hidden vectors.
    Sum,
    /// Concatenate the four and project back to the hidden size.
    Concat,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(FusionMode::Sum),
            "concat" => Some(FusionMode::Concat),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningConfig {
    pub vision_dim: usize,
    pub language_dim: usize,
    /// Dimension of externally encoded surgeon vectors.
    pub surgeon_dim: usize,
    pub timesteps: usize,
    pub strategy: SurgeonStrategy,
    pub fusion: FusionMode,
    /// Drops the surgeon term entirely (surgeon-agnostic ablation).
    pub ablate_surgeon: bool,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            vision_dim: 1000,
            language_dim: 768,
            surgeon_dim: 384,
            timesteps: 10,
            strategy: SurgeonStrategy::LearnableTable,
            fusion: FusionMode::Sum,
            ablate_surgeon: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurgeonPath {
    Table { table: ParamId, index: BTreeMap<String, usize> },
    Projection(Linear),
}

/// Parameter handles of the conditioning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub config: ConditioningConfig,
    pub hidden: usize,
    pub vision: Linear,
    pub language: Linear,
    pub surgeon: SurgeonPath,
    pub time_table: ParamId,
    pub fuse: Option<Linear>,
}

impl Conditioner {
    pub fn new(
        store: &mut ParamStore,
        config: ConditioningConfig,
        hidden: usize,
        surgeons: &[String],
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.timesteps == 0 || config.vision_dim == 0 || config.language_dim == 0 {
            return Err(Error::config("conditioning dimensions must be positive"));
        }
        let vision = Linear::new(store, "cond.vision", config.vision_dim, hidden, rng)?;
        let language = Linear::new(store, "cond.language", config.language_dim, hidden, rng)?;
        let surgeon = if config.strategy.is_external() {
            if config.surgeon_dim == 0 {
                return Err(Error::config("external surgeon vectors need surgeon_dim > 0"));
            }
            SurgeonPath::Projection(Linear::new(store, "cond.surgeon", config.surgeon_dim, hidden, rng)?)
        } else {
            let index = surgeon_index(surgeons)?;
            let table = store.insert(
                "cond.surgeon_table",
                normal_tensor(&[index.len(), hidden], INIT_STD, rng),
            )?;
            SurgeonPath::Table { table, index }
        };
        let time_table = store.insert(
            "cond.time_table",
            normal_tensor(&[config.timesteps, hidden], INIT_STD, rng),
        )?;
        let fuse = match config.fusion {
            FusionMode::Sum => None,
            FusionMode::Concat => Some(Linear::new(store, "cond.fuse", 4 * hidden, hidden, rng)?),
        };
        Ok(Self {
            config,
            hidden,
            vision,
            language,
            surgeon,
            time_table,
            fuse,
        })
    }

    /// Rebinds to a store loaded from disk.
    pub fn find(store: &ParamStore, config: ConditioningConfig, hidden: usize, surgeons: &[String]) -> Result<Self> {
        let vision = Linear::find(store, "cond.vision", config.vision_dim, hidden)?;
        let language = Linear::find(store, "cond.language", config.language_dim, hidden)?;
        let surgeon = if config.strategy.is_external() {
            SurgeonPath::Projection(Linear::find(store, "cond.surgeon", config.surgeon_dim, hidden)?)
        } else {
            let index = surgeon_index(surgeons)?;
            let table = lookup(store, "cond.surgeon_table", &[index.len(), hidden])?;
            SurgeonPath::Table { table, index }
        };
        let time_table = lookup(store, "cond.time_table", &[config.timesteps, hidden])?;
        let fuse = match config.fusion {
            FusionMode::Sum => None,
            FusionMode::Concat => Some(Linear::find(store, "cond.fuse", 4 * hidden, hidden)?),
        };
        Ok(Self {
            config,
            hidden,
            vision,
            language,
            surgeon,
            time_table,
            fuse,
        })
    }

    /// Registered surgeon ids in table order (empty for external strategies).
    pub fn surgeons(&self) -> Vec<String> {
        match &self.surgeon {
            SurgeonPath::Table { index, .. } => {
                let mut ids: Vec<(usize, String)> = index.iter().map(|(k, &v)| (v, k.clone())).collect();
                ids.sort();
                ids.into_iter().map(|(_, k)| k).collect()
            }
            SurgeonPath::Projection(_) => Vec::new(),
        }
    }

    fn check_bundle(&self, b: &ConditioningBundle, t: usize) -> Result<()> {
        if b.vision.dim() != self.config.vision_dim {
            return Err(Error::config(format!(
                "vision feature has dimension {}, model expects {}",
                b.vision.dim(),
                self.config.vision_dim
            )));
        }
        if b.language.dim() != self.config.language_dim {
            return Err(Error::config(format!(
                "language feature has dimension {}, model expects {}",
                b.language.dim(),
                self.config.language_dim
            )));
        }
        if t >= self.config.timesteps {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                limit: self.config.timesteps,
            });
        }
        if !self.config.ablate_surgeon && b.surgeon.strategy != self.config.strategy {
            return Err(Error::config(format!(
                "surgeon `{}` uses {} but the model was built for {}",
                b.surgeon.surgeon_id, b.surgeon.strategy, self.config.strategy
            )));
        }
        Ok(())
    }

    /// Table row of a registered surgeon.
    pub fn surgeon_row(&self, surgeon_id: &str) -> Result<usize> {
        match &self.surgeon {
            SurgeonPath::Table { index, .. } => index.get(surgeon_id).copied().ok_or_else(|| Error::Lookup {
                what: "surgeon",
                key: surgeon_id.into(),
            }),
            SurgeonPath::Projection(_) => Err(Error::config("external strategies have no surgeon table")),
        }
    }

    fn external_vector<'a>(&self, profile: &'a SurgeonProfile) -> Result<&'a [f64]> {
        let v = profile.external_vector.as_ref().ok_or_else(|| {
            Error::config(format!("surgeon `{}` has no external vector", profile.surgeon_id))
        })?;
        if v.dim() != self.config.surgeon_dim {
            return Err(Error::config(format!(
                "surgeon vector has dimension {}, model expects {}",
                v.dim(),
                self.config.surgeon_dim
            )));
        }
        Ok(&v.values)
    }

    /// Fused context rows (`n × hidden`) for `(bundle, timestep)` pairs.
    pub fn context_rows(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        items: &[(&ConditioningBundle, usize)],
    ) -> Result<Var> {
        let n = items.len();
        for &(b, t) in items {
            self.check_bundle(b, t)?;
        }
        let vision = stack(items.iter().map(|(b, _)| b.vision.values.as_slice()), self.config.vision_dim)?;
        let vision = tape.constant(vision.map(|v| v * input_scale(self.config.vision_dim)));
        let vision_h = self.vision.apply(tape, params, vision)?;
        let language = stack(items.iter().map(|(b, _)| b.language.values.as_slice()), self.config.language_dim)?;
        let language = tape.constant(language.map(|v| v * input_scale(self.config.language_dim)));
        let language_h = self.language.apply(tape, params, language)?;
        let steps: Vec<usize> = items.iter().map(|&(_, t)| t).collect();
        let time_h = tape.gather(params.var(self.time_table), &steps)?;

        let surgeon_h = if self.config.ablate_surgeon {
            None
        } else {
            Some(match &self.surgeon {
                SurgeonPath::Table { table, .. } => {
                    let rows = items
                        .iter()
                        .map(|(b, _)| self.surgeon_row(&b.surgeon.surgeon_id))
                        .collect::<Result<Vec<_>>>()?;
                    tape.gather(params.var(*table), &rows)?
                }
                SurgeonPath::Projection(linear) => {
                    let rows = items
                        .iter()
                        .map(|(b, _)| self.external_vector(&b.surgeon))
                        .collect::<Result<Vec<_>>>()?;
                    let x = stack(rows.into_iter(), self.config.surgeon_dim)?;
                    let x = tape.constant(x.map(|v| v * input_scale(self.config.surgeon_dim)));
                    linear.apply(tape, params, x)?
                }
            })
        };

        match &self.fuse {
            None => {
                let mut acc = tape.add(vision_h, language_h)?;
                if let Some(s) = surgeon_h {
                    acc = tape.add(acc, s)?;
                }
                tape.add(acc, time_h)
            }
            Some(linear) => {
                let s = match surgeon_h {
                    Some(s) => s,
                    None => tape.constant(Tensor::zeros(&[n, self.hidden])),
                };
                let cat = tape.concat(&[vision_h, language_h, s, time_h])?;
                linear.apply(tape, params, cat)
            }
        }
    }

    /// The post-projection surgeon vector consumed by the fusion step.
    pub fn surgeon_embedding(&self, store: &ParamStore, profile: &SurgeonProfile) -> Result<Vec<f64>> {
        match &self.surgeon {
            SurgeonPath::Table { table, .. } => {
                let row = self.surgeon_row(&profile.surgeon_id)?;
                Ok(store.get(*table).row(row).to_vec())
            }
            SurgeonPath::Projection(linear) => linear.eval(store, &scaled(self.external_vector(profile)?)),
        }
    }

    pub fn timestep_embedding(&self, store: &ParamStore, t: usize) -> Result<Vec<f64>> {
        if t >= self.config.timesteps {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                limit: self.config.timesteps,
            });
        }
        Ok(store.get(self.time_table).row(t).to_vec())
    }

    /// Fused context of one bundle at its own timestep, without a tape.
    pub fn fused(&self, store: &ParamStore, bundle: &ConditioningBundle) -> Result<Vec<f64>> {
        self.check_bundle(bundle, bundle.timestep)?;
        let v = self.vision.eval(store, &scaled(&bundle.vision.values))?;
        let l = self.language.eval(store, &scaled(&bundle.language.values))?;
        let s = if self.config.ablate_surgeon {
            vec![0.0; self.hidden]
        } else {
            self.surgeon_embedding(store, &bundle.surgeon)?
        };
        let t = self.timestep_embedding(store, bundle.timestep)?;
        match &self.fuse {
            None => fuse(&v, &l, &s, &t),
            Some(linear) => {
                let mut cat = v;
                cat.extend_from_slice(&l);
                cat.extend_from_slice(&s);
                cat.extend_from_slice(&t);
                linear.eval(store, &cat)
            }
        }
    }

    /// Number of scalars that the surgeon path adds to the model.
    pub fn surgeon_scalar_count(&self) -> usize {
        match &self.surgeon {
            SurgeonPath::Table { index, .. } => index.len() * self.hidden,
            SurgeonPath::Projection(linear) => linear.scalar_count(),
        }
    }
}

/// Raw feature vectors enter their projections divided by `dim`. Adam moves
/// every weight by about the learning rate per step, so an unscaled wide,
/// nearly constant input would shift its projection about `dim` times faster
/// than an embedding row moves.
pub fn input_scale(dim: usize) -> f64 {
    1.0 / dim.max(1) as f64
}

fn scaled(x: &[f64]) -> Vec<f64> {
    let s = input_scale(x.len());
    x.iter().map(|v| v * s).collect()
}

/// Elementwise sum of four equal-length hidden vectors.
pub fn fuse(vision: &[f64], language: &[f64], surgeon: &[f64], time: &[f64]) -> Result<Vec<f64>> {
    let n = vision.len();
    if language.len() != n || surgeon.len() != n || time.len() != n {
        return Err(Error::dim(
            "fuse",
            &[n, language.len()],
            &[surgeon.len(), time.len()],
        ));
    }
    Ok((0..n).map(|i| vision[i] + language[i] + surgeon[i] + time[i]).collect())
}

fn surgeon_index(surgeons: &[String]) -> Result<BTreeMap<String, usize>> {
    let mut index = BTreeMap::new();
    for s in surgeons {
        let next = index.len();
        index.entry(s.clone()).or_insert(next);
    }
    if index.is_empty() {
        return Err(Error::config("learnable-table strategy needs at least one surgeon id"));
    }
    Ok(index)
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != cols {
            return Err(Error::dim("stack", &[cols], &[r.len()]));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::matrix(n, cols, data)
}
