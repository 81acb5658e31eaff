//! Membership-inference audit of surgeon representations.
//!
//! Members are vectors produced by a trained model; non-members are drawn
//! from a synthetic distribution fitted to them (or taken from held-out
//! data). A logistic attacker is trained on a stratified split and scored
//! on the rest.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape};
use crate::conditioning::{SurgeonProfile, SurgeonStrategy};
use crate::denoiser::{Denoiser, Example};
use crate::error::{Error, Result};
use crate::evaluation::export_embeddings;
use crate::rng::{seeded, streams, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonMemberSpec {
    /// Independent normals with the members' per-dimension mean and spread.
    MatchedGaussian,
    /// Uniform over the members' per-dimension bounding box.
    UniformHypercube,
    /// Real vectors the model never trained on.
    HeldOutReal,
}

impl NonMemberSpec {
    pub const ALL: [Self; 3] = [Self::MatchedGaussian, Self::UniformHypercube, Self::HeldOutReal];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MatchedGaussian => "matched-gaussian",
            Self::UniformHypercube => "uniform-hypercube",
            Self::HeldOutReal => "held-out-real",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

fn check_dims(vectors: &[Vec<f64>], what: &'static str) -> Result<usize> {
    let d = vectors.first().map(Vec::len).ok_or_else(|| Error::Precondition(format!("{what} is empty")))?;
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::dim(what, &[d], &[bad.len()]));
    }
    Ok(d)
}

/// Per-dimension mean and population standard deviation.
fn moments(vectors: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = vectors[0].len();
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for v in vectors {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    (mean, var.into_iter().map(|s| libm::sqrt(s / n)).collect())
}

/// Draws `n` synthetic non-members fitted to `members`.
pub fn synthesize_nonmembers(members: &[Vec<f64>], spec: NonMemberSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_dims(members, "members")?;
    if n == 0 {
        return Err(Error::Index {
            what: "non-member count",
            index: 0,
            limit: 0,
        });
    }
    let mut rng = seeded(seed, streams::NONMEMBER);
    match spec {
        NonMemberSpec::MatchedGaussian => {
            let (mean, std) = moments(members);
            Ok((0..n)
                .map(|_| {
                    mean.iter()
                        .zip(&std)
                        .map(|(m, s)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + s * z
                        })
                        .collect()
                })
                .collect())
        }
        NonMemberSpec::UniformHypercube => {
            let d = members[0].len();
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for v in members {
                for j in 0..d {
                    lo[j] = lo[j].min(v[j]);
                    hi[j] = hi[j].max(v[j]);
                }
            }
            Ok((0..n)
                .map(|_| (0..d).map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>()).collect())
                .collect())
        }
        NonMemberSpec::HeldOutReal => Err(Error::config(
            "held-out-real non-members are taken from data, not synthesized",
        )),
    }
}

/// Labelled vectors: 1 for members, 0 for non-members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub spec: NonMemberSpec,
}

impl AttackDataset {
    pub fn new(members: Vec<Vec<f64>>, nonmembers: Vec<Vec<f64>>, spec: NonMemberSpec) -> Result<Self> {
        let mut labels = vec![1u8; members.len()];
        labels.resize(members.len() + nonmembers.len(), 0);
        let mut vectors = members;
        vectors.extend(nonmembers);
        check_dims(&vectors, "attack dataset")?;
        Ok(Self { vectors, labels, spec })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_members(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_nonmembers(&self) -> usize {
        self.len() - self.n_members()
    }

    pub fn members(&self) -> Vec<&Vec<f64>> {
        self.vectors.iter().zip(&self.labels).filter(|(_, &y)| y == 1).map(|(v, _)| v).collect()
    }

    /// Seeded per-class split; each side keeps at least one of each class.
    pub fn stratified_split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let mut rng = seeded(seed, streams::SPLIT);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [1u8, 0] {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            if idx.len() < 2 {
                return Err(Error::config(format!(
                    "stratified split needs at least 2 vectors of class {class}, found {}",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let k = (libm::round(train_fraction * idx.len() as f64) as usize).clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        let pick = |ids: &[usize]| Self {
            vectors: ids.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            spec: self.spec,
        };
        Ok((pick(&train), pick(&test)))
    }
}

/// How vectors are turned into attacker inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackFeatures {
    /// Standardized coordinates.
    Raw,
    /// Coordinates, squared coordinates and residual energy relative to the
    /// leading principal directions of the training members.
    Subspace { components: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerConfig {
    pub features: AttackFeatures,
    pub l2: f64,
    pub iterations: usize,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self {
            features: AttackFeatures::Subspace { components: 16 },
            l2: 1e-3,
            iterations: 1000,
        }
    }
}

/// A trained logistic scorer with its fitted feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attacker {
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    center: Vec<f64>,
    basis: Vec<Vec<f64>>,
    subspace: bool,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Regularized training loss before every update and after the last.
    pub loss_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn safe_scale(std: Vec<f64>) -> Vec<f64> {
    std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect()
}

/// Leading right-singular directions of the rows of `x` by power iteration
/// with deflation. Directions with negligible energy are dropped.
fn principal_directions(x: &[Vec<f64>], components: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let total: f64 = x.iter().map(|r| dot(r, r)).sum();
    for _ in 0..components.min(d) {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let mut energy = 0.0;
        for _ in 0..100 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(a, bb)| *a -= c * bb);
            }
            let norm = libm::sqrt(dot(&v, &v));
            if norm < 1e-300 {
                break;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            let mut next = vec![0.0; d];
            energy = 0.0;
            for row in x {
                let p = dot(row, &v);
                energy += p * p;
                next.iter_mut().zip(row).for_each(|(n, r)| *n += p * r);
            }
            v = next;
        }
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(a, bb)| *a -= c * bb);
        }
        let norm = libm::sqrt(dot(&v, &v));
        if norm < 1e-300 || energy <= 1e-10 * total.max(1e-300) {
            break;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    basis
}

impl Attacker {
    fn raw_features(&self, x: &[f64]) -> Vec<f64> {
        let z = standardize(x, &self.input_mean, &self.input_scale);
        if !self.subspace {
            return z;
        }
        let c: Vec<f64> = z.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let proj: Vec<f64> = self.basis.iter().map(|b| dot(&c, b)).collect();
        let residual = (dot(&c, &c) - proj.iter().map(|p| p * p).sum::<f64>()).max(0.0);
        let mut f = proj.clone();
        f.extend(proj.iter().map(|p| p * p));
        f.push(residual);
        f
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        standardize(&self.raw_features(x), &self.feature_mean, &self.feature_scale)
    }

    /// Membership score in (0, 1).
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.features(x), &self.weights) + self.bias)
    }

    pub fn scores(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

/// Fits the feature map and an L2-regularized logistic regression by
/// full-batch gradient descent. The step is the inverse of a bound on the
/// loss curvature, so the loss never increases.
pub fn train_attacker(dataset: &AttackDataset, config: &AttackerConfig, seed: u64) -> Result<Attacker> {
    check_dims(&dataset.vectors, "attack dataset")?;
    if dataset.n_members() == 0 || dataset.n_nonmembers() == 0 {
        return Err(Error::config("attacker training needs both members and non-members"));
    }
    let (input_mean, std) = moments(&dataset.vectors);
    let input_scale = safe_scale(std);
    let z: Vec<Vec<f64>> = dataset
        .vectors
        .iter()
        .map(|v| standardize(v, &input_mean, &input_scale))
        .collect();
    let d = input_mean.len();
    let (subspace, center, basis) = match config.features {
        AttackFeatures::Raw => (false, vec![0.0; d], Vec::new()),
        AttackFeatures::Subspace { components } => {
            let members: Vec<Vec<f64>> = z.iter().zip(&dataset.labels).filter(|(_, &y)| y == 1).map(|(v, _)| v.clone()).collect();
            let (center, _) = moments(&members);
            let centered: Vec<Vec<f64>> = members
                .iter()
                .map(|v| v.iter().zip(&center).map(|(a, b)| a - b).collect())
                .collect();
            let k = components.min(members.len().saturating_sub(1));
            let basis = if k == 0 {
                Vec::new()
            } else {
                principal_directions(&centered, k, &mut seeded(seed, streams::ATTACK))
            };
            (true, center, basis)
        }
    };
    let mut attacker = Attacker {
        input_mean,
        input_scale,
        center,
        basis,
        subspace,
        feature_mean: Vec::new(),
        feature_scale: Vec::new(),
        weights: Vec::new(),
        bias: 0.0,
        loss_history: Vec::new(),
    };
    let raw: Vec<Vec<f64>> = dataset.vectors.iter().map(|v| attacker.raw_features(v)).collect();
    let (fm, fs) = moments(&raw);
    attacker.feature_mean = fm;
    attacker.feature_scale = safe_scale(fs);
    let feats: Vec<Vec<f64>> = raw
        .iter()
        .map(|f| standardize(f, &attacker.feature_mean, &attacker.feature_scale))
        .collect();
    let n = feats.len();
    let p = feats[0].len();

    let design = Tensor::from_rows(&feats)?;
    let labels: Vec<f64> = dataset.labels.iter().map(|&y| f64::from(y)).collect();
    let curvature = feats.iter().map(|f| dot(f, f) + 1.0).sum::<f64>() / (4.0 * n as f64) + config.l2;
    let step = 1.0 / curvature;

    let mut w = Tensor::zeros(&[p, 1]);
    let mut b = Tensor::zeros(&[1, 1]);
    for it in 0..=config.iterations {
        let mut tape = Tape::new();
        let x = tape.constant(design.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let logits = tape.matmul(x, wv)?;
        let logits = tape.add_row(logits, bv)?;
        let bce = tape.bce_with_logits(logits, &labels)?;
        let sq = tape.mul(wv, wv)?;
        let sq = tape.sum(sq)?;
        let reg = tape.scale(sq, 0.5 * config.l2)?;
        let loss = tape.add(bce, reg)?;
        attacker.loss_history.push(tape.value(loss).item());
        if it == config.iterations {
            break;
        }
        let grads = tape.backward(loss)?;
        let gw = grads.get(wv).ok_or(Error::NonFinite("attacker weight gradient"))?;
        let gb = grads.get(bv).ok_or(Error::NonFinite("attacker bias gradient"))?;
        w.data_mut().iter_mut().zip(gw.data()).for_each(|(a, g)| *a -= step * g);
        b.data_mut()[0] -= step * gb.data()[0];
    }
    attacker.weights = w.into_data();
    attacker.bias = b.data()[0];
    Ok(attacker)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub roc: Vec<RocPoint>,
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim("scores", &[scores.len()], &[labels.len()]));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Index {
            what: "label",
            index: usize::from(y),
            limit: 2,
        });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve by the Mann–Whitney rank statistic, ties
/// counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Precondition("AUC is undefined without both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scores(scores, labels)?;
    let idx = order_desc(scores);
    let mut out = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    for (n, &i) in idx.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        if n + 1 == idx.len() || scores[idx[n + 1]] != scores[i] {
            out.push(RocPoint {
                fpr: ratio(fp, neg),
                tpr: ratio(tp, pos),
            });
        }
    }
    Ok(out)
}

/// Confusion metrics at `threshold` (scores at or above it count as
/// members) plus AUC and the ROC curve.
pub fn evaluate_attack(scores: &[f64], labels: &[u8], threshold: f64) -> Result<AttackReport> {
    let (pos, neg) = check_scores(scores, labels)?;
    let auc = auc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fal) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fal += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fal);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(AttackReport {
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
        auc,
        threshold,
        n_members: pos,
        n_nonmembers: neg,
        roc: roc_curve(scores, labels)?,
    })
}

/// What one member instance is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditLevel {
    /// One exported embedding per training surgeon.
    Surgeon,
    /// One fused context per training window, at a seeded timestep.
    Window,
}

impl AuditLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Surgeon => "surgeon",
            Self::Window => "window",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Surgeon, Self::Window].into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub level: AuditLevel,
    pub nonmember: NonMemberSpec,
    /// Synthetic non-members per member.
    pub nonmember_ratio: f64,
    pub attacker: AttackerConfig,
    pub threshold: f64,
    pub train_fraction: f64,
    pub seed: u64,
    /// Replace members by standard-normal vectors redrawn from the seed.
    pub null_control: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            level: AuditLevel::Window,
            nonmember: NonMemberSpec::MatchedGaussian,
            nonmember_ratio: 1.0,
            attacker: AttackerConfig::default(),
            threshold: 0.5,
            train_fraction: 0.7,
            seed: 0,
            null_control: false,
        }
    }
}

/// The trained model and the data its members and held-out vectors come
/// from.
#[derive(Debug, Clone, Copy)]
pub struct AuditInputs<'a> {
    pub model: &'a Denoiser,
    pub train_profiles: &'a [SurgeonProfile],
    pub train_examples: &'a [Example],
    pub heldout_profiles: &'a [SurgeonProfile],
    pub heldout_examples: &'a [Example],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub strategy: SurgeonStrategy,
    pub level: AuditLevel,
    pub nonmember: NonMemberSpec,
    pub null_control: bool,
    pub report: AttackReport,
}

fn instance_vectors(model: &Denoiser, profiles: &[SurgeonProfile], examples: &[Example], level: AuditLevel, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    match level {
        AuditLevel::Surgeon => Ok(export_embeddings(model, profiles)?.into_iter().map(|r| r.values).collect()),
        AuditLevel::Window => examples
            .iter()
            .map(|ex| {
                let mut bundle = ex.bundle.clone();
                bundle.timestep = rng.random_range(0..model.conditioner().config.timesteps);
                model.fused_context(&bundle)
            })
            .collect(),
    }
}

/// Member vectors of the configured level.
pub fn member_vectors(inputs: &AuditInputs<'_>, config: &AuditConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = seeded(config.seed, streams::EVAL);
    instance_vectors(inputs.model, inputs.train_profiles, inputs.train_examples, config.level, &mut rng)
}

/// Builds the attack dataset, trains the attacker on a stratified split and
/// reports on the held-out part.
pub fn run_membership_audit(inputs: &AuditInputs<'_>, config: &AuditConfig) -> Result<AuditResult> {
    let mut members = member_vectors(inputs, config)?;
    let dim = check_dims(&members, "members")?;
    if config.null_control {
        let mut rng = seeded(config.seed, streams::NULL_CONTROL);
        for v in &mut members {
            *v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        }
    }
    let nonmembers = match config.nonmember {
        NonMemberSpec::HeldOutReal => {
            let mut rng = seeded(config.seed, streams::NONMEMBER);
            let v = instance_vectors(
                inputs.model,
                inputs.heldout_profiles,
                inputs.heldout_examples,
                config.level,
                &mut rng,
            )?;
            if v.is_empty() {
                return Err(Error::config("held-out-real non-members need held-out data"));
            }
            v
        }
        spec => {
            let n = libm::ceil(config.nonmember_ratio * members.len() as f64) as usize;
            synthesize_nonmembers(&members, spec, n, config.seed)?
        }
    };
    let dataset = AttackDataset::new(members, nonmembers, config.nonmember)?;
    let (train, test) = dataset.stratified_split(config.train_fraction, config.seed)?;
    let attacker = train_attacker(&train, &config.attacker, config.seed)?;
    let report = evaluate_attack(&attacker.scores(&test.vectors), &test.labels, config.threshold)?;
    Ok(AuditResult {
        strategy: inputs.model.conditioner().config.strategy,
        level: config.level,
        nonmember: config.nonmember,
        null_control: config.null_control,
        report,
    })
}

/// Label string used in reports.
pub fn audit_label(result: &AuditResult) -> String {
    format!(
        "{}/{}/{}{}",
        result.strategy,
        result.level.as_str(),
        result.nonmember.as_str(),
        if result.null_control { "/null" } else { "" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores() {
        let r = evaluate_attack(&[0.9, 0.9, 0.1, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1, r.auc), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn never_member() {
        let mut labels = vec![1u8; 8];
        labels.push(0);
        let scores: Vec<f64> = (0..9).map(|i| 0.1 + 0.01 * f64::from(i)).collect();
        let r = evaluate_attack(&scores, &labels, 0.5).unwrap();
        assert!((r.accuracy - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn auc_ties_half() {
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.4], &[1, 1]).is_err());
    }

    #[test]
    fn roc_ends() {
        let roc = roc_curve(&[0.9, 0.3, 0.6], &[1, 0, 0]).unwrap();
        assert_eq!(roc.first(), Some(&RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(roc.last(), Some(&RocPoint { fpr: 1.0, tpr: 1.0 }));
    }

    #[test]
    fn degenerate_members_copy() {
        let members = vec![vec![1.0, -2.0]; 5];
        let out = synthesize_nonmembers(&members, NonMemberSpec::MatchedGaussian, 4, 3).unwrap();
        assert!(out.iter().all(|v| v == &members[0]));
        assert!(synthesize_nonmembers(&members, NonMemberSpec::MatchedGaussian, 0, 3).is_err());
        assert!(synthesize_nonmembers(&[], NonMemberSpec::MatchedGaussian, 4, 3).is_err());
    }

    #[test]
    fn separable_toy() {
        let members: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, 0.01 * f64::from(i)]).collect();
        let non: Vec<Vec<f64>> = (0..10).map(|i| vec![-1.0, 0.01 * f64::from(i)]).collect();
        let ds = AttackDataset::new(members, non, NonMemberSpec::MatchedGaussian).unwrap();
        for features in [AttackFeatures::Raw, AttackFeatures::Subspace { components: 4 }] {
            let cfg = AttackerConfig {
                features,
                ..AttackerConfig::default()
            };
            let a = train_attacker(&ds, &cfg, 0).unwrap();
            let r = evaluate_attack(&a.scores(&ds.vectors), &ds.labels, 0.5).unwrap();
            assert_eq!(r.accuracy, 1.0);
            assert_eq!(r.auc, 1.0);
            assert!(a.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn single_class_rejected() {
        let ds = AttackDataset::new(vec![vec![0.0]; 3], Vec::new(), NonMemberSpec::MatchedGaussian).unwrap();
        assert!(matches!(train_attacker(&ds, &AttackerConfig::default(), 0), Err(Error::Config(_))));
    }
}
