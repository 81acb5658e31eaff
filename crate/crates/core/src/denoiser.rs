//! Transformer denoiser predicting the clean sequence `x_0` from a noisy
//! `x_t`, the conditioning context and the timestep.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Tape, Var};
use crate::conditioning::{ConditioningBundle, ConditioningConfig, Conditioner, FusionMode, SurgeonProfile};
use crate::diffusion::{TokenSequence, TransitionSchedule, X0Predictor};
use crate::error::{Error, Result};
use crate::nn::{lookup, normal_tensor, LayerNorm, Linear, INIT_STD};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rng::{seeded, streams, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffw: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            seq_len: 5,
            hidden: 512,
            layers: 2,
            heads: 8,
            ffw: 1024,
            dropout: 0.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffw", self.ffw),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    norm1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// One clean training sequence and its conditioning. The bundle's own
/// timestep is ignored during training; a fresh one is sampled per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x0: TokenSequence,
    pub bundle: ConditioningBundle,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    conditioner: Conditioner,
    params: ParamStore,
    token_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    head: Linear,
}

/// Softmax probabilities and ranked tokens for every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct X0Prediction {
    pub probs: Vec<Vec<f64>>,
    pub topk: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl Denoiser {
    /// Fresh parameters drawn from `config.seed`. `surgeons` registers the
    /// table rows for the learnable strategy and is ignored otherwise.
    pub fn new(config: DenoiserConfig, conditioning: ConditioningConfig, surgeons: &[String]) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed, streams::INIT);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let token_emb = store.insert("token_emb", normal_tensor(&[config.vocab, h], INIT_STD, &mut rng))?;
        let pos_emb = store.insert("pos_emb", normal_tensor(&[config.seq_len, h], INIT_STD, &mut rng))?;
        let conditioner = Conditioner::new(&mut store, conditioning, h, surgeons, &mut rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("layer{i}");
            blocks.push(Block {
                norm1: LayerNorm::new(&mut store, &format!("{p}.norm1"), h)?,
                query: Linear::new(&mut store, &format!("{p}.attn.query"), h, h, &mut rng)?,
                key: Linear::new(&mut store, &format!("{p}.attn.key"), h, h, &mut rng)?,
                value: Linear::new(&mut store, &format!("{p}.attn.value"), h, h, &mut rng)?,
                out: Linear::new(&mut store, &format!("{p}.attn.out"), h, h, &mut rng)?,
                norm2: LayerNorm::new(&mut store, &format!("{p}.norm2"), h)?,
                ff_in: Linear::new(&mut store, &format!("{p}.ff.in"), h, config.ffw, &mut rng)?,
                ff_out: Linear::new(&mut store, &format!("{p}.ff.out"), config.ffw, h, &mut rng)?,
            });
        }
        let final_norm = LayerNorm::new(&mut store, "final_norm", h)?;
        let head = Linear::zeroed(&mut store, "head", h, config.vocab)?;
        Ok(Self {
            config,
            conditioner,
            params: store,
            token_emb,
            pos_emb,
            blocks,
            final_norm,
            head,
        })
    }

    /// Rebuilds a model around loaded parameters, validating every shape by
    /// name.
    pub fn from_params(
        config: DenoiserConfig,
        conditioning: ConditioningConfig,
        surgeons: &[String],
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let token_emb = lookup(&params, "token_emb", &[config.vocab, h])?;
        let pos_emb = lookup(&params, "pos_emb", &[config.seq_len, h])?;
        let conditioner = Conditioner::find(&params, conditioning, h, surgeons)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("layer{i}");
            blocks.push(Block {
                norm1: LayerNorm::find(&params, &format!("{p}.norm1"), h)?,
                query: Linear::find(&params, &format!("{p}.attn.query"), h, h)?,
                key: Linear::find(&params, &format!("{p}.attn.key"), h, h)?,
                value: Linear::find(&params, &format!("{p}.attn.value"), h, h)?,
                out: Linear::find(&params, &format!("{p}.attn.out"), h, h)?,
                norm2: LayerNorm::find(&params, &format!("{p}.norm2"), h)?,
                ff_in: Linear::find(&params, &format!("{p}.ff.in"), h, config.ffw)?,
                ff_out: Linear::find(&params, &format!("{p}.ff.out"), config.ffw, h)?,
            });
        }
        let final_norm = LayerNorm::find(&params, "final_norm", h)?;
        let head = Linear::find(&params, "head", h, config.vocab)?;
        let model = Self {
            config,
            conditioner,
            params,
            token_emb,
            pos_emb,
            blocks,
            final_norm,
            head,
        };
        let expected = Self::expected_parameter_count(
            &model.config,
            &model.conditioner.config,
            model.conditioner.surgeons().len(),
        );
        if expected != model.params.scalar_count() {
            return Err(Error::config(format!(
                "parameter set holds {} scalars, configuration implies {expected}",
                model.params.scalar_count()
            )));
        }
        Ok(model)
    }

    /// Scalar parameter count implied by a configuration.
    pub fn expected_parameter_count(config: &DenoiserConfig, cond: &ConditioningConfig, surgeons: usize) -> usize {
        let (h, k, l, f) = (config.hidden, config.vocab, config.seq_len, config.ffw);
        let linear = |i: usize, o: usize| i * o + o;
        let surgeon = if cond.strategy.is_external() {
            linear(cond.surgeon_dim, h)
        } else {
            surgeons * h
        };
        let fuse = match cond.fusion {
            FusionMode::Sum => 0,
            FusionMode::Concat => linear(4 * h, h),
        };
        let conditioning = linear(cond.vision_dim, h) + linear(cond.language_dim, h) + surgeon + cond.timesteps * h + fuse;
        let block = 4 * h + 4 * linear(h, h) + linear(h, f) + linear(f, h);
        k * h + l * h + conditioning + config.layers * block + 2 * h + linear(h, k)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Registered surgeon ids (learnable-table only).
    pub fn surgeons(&self) -> Vec<String> {
        self.conditioner.surgeons()
    }

    /// Logits `(n·L) × K` for `(x_t, bundle, t)` triples.
    pub fn logits(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        items: &[(&[usize], &ConditioningBundle, usize)],
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let l = self.config.seq_len;
        let mut tokens = Vec::with_capacity(items.len() * l);
        for (xt, _, _) in items {
            if xt.len() != l {
                return Err(Error::config(format!(
                    "sequence of length {} given to a model with L={l}",
                    xt.len()
                )));
            }
            if let Some(&bad) = xt.iter().find(|&&t| t >= self.config.vocab) {
                return Err(Error::Index {
                    what: "token",
                    index: bad,
                    limit: self.config.vocab,
                });
            }
            tokens.extend_from_slice(xt);
        }
        let positions: Vec<usize> = (0..items.len() * l).map(|i| i % l).collect();
        let owners: Vec<usize> = (0..items.len() * l).map(|i| i / l).collect();
        let ctx_items: Vec<(&ConditioningBundle, usize)> = items.iter().map(|&(_, b, t)| (b, t)).collect();

        let tok = tape.gather(params.var(self.token_emb), &tokens)?;
        let pos = tape.gather(params.var(self.pos_emb), &positions)?;
        let ctx = self.conditioner.context_rows(tape, params, &ctx_items)?;
        let ctx = tape.gather(ctx, &owners)?;
        let mut h = tape.add(tok, pos)?;
        h = tape.add(h, ctx)?;

        for block in &self.blocks {
            let a = block.norm1.apply(tape, params, h)?;
            let q = block.query.apply(tape, params, a)?;
            let k = block.key.apply(tape, params, a)?;
            let v = block.value.apply(tape, params, a)?;
            let att = tape.attention(q, k, v, l, self.config.heads)?;
            let att = block.out.apply(tape, params, att)?;
            let att = self.dropout(tape, att, dropout.as_deref_mut())?;
            h = tape.add(h, att)?;
            let f = block.norm2.apply(tape, params, h)?;
            let f = block.ff_in.apply(tape, params, f)?;
            let f = tape.relu(f)?;
            let f = block.ff_out.apply(tape, params, f)?;
            let f = self.dropout(tape, f, dropout.as_deref_mut())?;
            h = tape.add(h, f)?;
        }
        let h = self.final_norm.apply(tape, params, h)?;
        self.head.apply(tape, params, h)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let shape = tape.value(x).shape().to_vec();
                let n = tape.value(x).len();
                let data = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
                let mask = tape.constant(Tensor::new(shape, data)?);
                tape.mul(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Logits `L × K` for one noisy sequence at `bundle.timestep`.
    pub fn forward(&self, xt: &TokenSequence, bundle: &ConditioningBundle) -> Result<Tensor> {
        self.forward_batch(&[(&xt.tokens, bundle, bundle.timestep)])
    }

    /// Inference-only logits for a batch; no dropout.
    pub fn forward_batch(&self, items: &[(&[usize], &ConditioningBundle, usize)]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &bound, items, None)?;
        Ok(tape.value(logits).clone())
    }

    /// Cross-entropy of predicting `x0` from a corruption at a sampled
    /// timestep, averaged over positions.
    pub fn loss(&self, example: &Example, schedule: &TransitionSchedule, rng: &mut Rng) -> Result<f64> {
        let t = rng.random_range(0..schedule.steps());
        let xt = schedule.corrupt(&example.x0.tokens, t, rng)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &bound, &[(&xt, &example.bundle, t)], None)?;
        let loss = tape.softmax_cross_entropy(logits, &example.x0.tokens)?;
        Ok(tape.value(loss).item())
    }

    /// Loss and per-parameter gradients for explicit `(x_t, x_0, bundle, t)`
    /// draws.
    pub fn loss_and_grads(
        &self,
        items: &[(&[usize], &[usize], &ConditioningBundle, usize)],
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let inputs: Vec<(&[usize], &ConditioningBundle, usize)> = items.iter().map(|&(xt, _, b, t)| (xt, b, t)).collect();
        let logits = self.logits(&mut tape, &bound, &inputs, dropout)?;
        let targets: Vec<usize> = items.iter().flat_map(|(_, x0, _, _)| x0.iter().copied()).collect();
        let loss = tape.softmax_cross_entropy(logits, &targets)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, self.params.collect_grads(&bound, &mut grads)))
    }

    /// Runs `config.epochs` epochs of minibatch Adam.
    pub fn train(&mut self, dataset: &[Example], schedule: &TransitionSchedule) -> Result<TrainLog> {
        let mut trainer = Trainer::new(self);
        let mut log = TrainLog::default();
        for _ in 0..self.config.epochs {
            log.epoch_losses.push(trainer.epoch(self, dataset, schedule)?);
        }
        log.steps = trainer.steps();
        Ok(log)
    }

    pub fn predict_x0(&self, xt: &TokenSequence, bundle: &ConditioningBundle, k: usize) -> Result<X0Prediction> {
        let mut preds = self.predict_batch(&[(&xt.tokens, bundle, bundle.timestep)], k)?;
        Ok(preds.remove(0))
    }

    /// Probabilities and top-`k` lists for every item of a batch.
    pub fn predict_batch(&self, items: &[(&[usize], &ConditioningBundle, usize)], k: usize) -> Result<Vec<X0Prediction>> {
        if k == 0 || k > self.config.vocab {
            return Err(Error::Index {
                what: "top-k",
                index: k,
                limit: self.config.vocab,
            });
        }
        let logits = self.forward_batch(items)?;
        let l = self.config.seq_len;
        Ok((0..items.len())
            .map(|b| {
                let probs: Vec<Vec<f64>> = (0..l).map(|p| softmax(logits.row(b * l + p))).collect();
                let topk = probs.iter().map(|p| rank_tokens(p, k)).collect();
                X0Prediction { probs, topk }
            })
            .collect())
    }

    /// Post-projection surgeon vector as consumed by the fusion step.
    pub fn surgeon_embedding(&self, profile: &SurgeonProfile) -> Result<Vec<f64>> {
        self.conditioner.surgeon_embedding(&self.params, profile)
    }

    pub fn fused_context(&self, bundle: &ConditioningBundle) -> Result<Vec<f64>> {
        self.conditioner.fused(&self.params, bundle)
    }

    /// Binds a bundle so the model can drive the reverse sampler.
    pub fn conditioned<'a>(&'a self, bundle: &'a ConditioningBundle) -> ConditionedDenoiser<'a> {
        ConditionedDenoiser { model: self, bundle }
    }
}

/// Indices sorted by descending probability, ties to the lower index.
pub fn rank_tokens(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub struct ConditionedDenoiser<'a> {
    model: &'a Denoiser,
    bundle: &'a ConditioningBundle,
}

impl X0Predictor for ConditionedDenoiser<'_> {
    fn vocab(&self) -> usize {
        self.model.config.vocab
    }

    fn seq_len(&self) -> usize {
        self.model.config.seq_len
    }

    fn predict_x0(&self, xt: &[usize], t: usize) -> Result<Vec<Vec<f64>>> {
        let logits = self.model.forward_batch(&[(xt, self.bundle, t)])?;
        Ok((0..logits.rows()).map(|r| softmax(logits.row(r))).collect())
    }
}

/// Optimizer state and generators for a training run.
///
/// Each epoch draws one shuffle; every batch samples a timestep and a
/// corruption per example. The final partial batch is kept.
#[derive(Debug, Clone)]
pub struct Trainer {
    adam: AdamState,
    shuffle: Rng,
    corrupt: Rng,
    dropout: Rng,
}

impl Trainer {
    pub fn new(model: &Denoiser) -> Self {
        let seed = model.config.seed;
        let adam = AdamState::for_store(
            AdamConfig {
                learning_rate: model.config.learning_rate,
                ..AdamConfig::default()
            },
            &model.params,
        );
        Self {
            adam,
            shuffle: seeded(seed, streams::SHUFFLE),
            corrupt: seeded(seed, streams::CORRUPT),
            dropout: seeded(seed, streams::DROPOUT),
        }
    }

    pub fn steps(&self) -> u64 {
        self.adam.step_count()
    }

    /// One optimizer step on `batch`; returns the batch loss before the
    /// update.
    pub fn step(&mut self, model: &mut Denoiser, batch: &[&Example], schedule: &TransitionSchedule) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        if schedule.vocab() != model.config.vocab || schedule.steps() != model.conditioner.config.timesteps {
            return Err(Error::config("schedule does not match the model's vocabulary or timestep count"));
        }
        let mut draws = Vec::with_capacity(batch.len());
        for ex in batch {
            let t = self.corrupt.random_range(0..schedule.steps());
            let xt = schedule.corrupt(&ex.x0.tokens, t, &mut self.corrupt)?;
            draws.push((xt, t));
        }
        let items: Vec<(&[usize], &[usize], &ConditioningBundle, usize)> = batch
            .iter()
            .zip(&draws)
            .map(|(ex, (xt, t))| (xt.as_slice(), ex.x0.tokens.as_slice(), &ex.bundle, *t))
            .collect();
        let (loss, grads) = model.loss_and_grads(&items, Some(&mut self.dropout))?;
        self.adam.step(&mut model.params, &grads)?;
        if !model.params.all_finite() {
            return Err(Error::NonFinite("adam step"));
        }
        Ok(loss)
    }

    /// One shuffled pass over `dataset`; returns the example-weighted mean
    /// loss.
    pub fn epoch(&mut self, model: &mut Denoiser, dataset: &[Example], schedule: &TransitionSchedule) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::config("training dataset is empty"));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(model.config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &dataset[i]).collect();
            total += self.step(model, &batch, schedule)? * batch.len() as f64;
        }
        Ok(total / dataset.len() as f64)
    }
}

/// Convenience: an all-zero bundle with the given dimensions, used by probes.
pub fn zero_bundle(cond: &ConditioningConfig, surgeon: SurgeonProfile, timestep: usize) -> Result<ConditioningBundle> {
    use crate::conditioning::{FeatureSource, FeatureVector};
    Ok(ConditioningBundle {
        vision: FeatureVector::new(vec![0.0; cond.vision_dim], FeatureSource::Vision, cond.vision_dim)?,
        language: FeatureVector::new(vec![0.0; cond.language_dim], FeatureSource::Language, cond.language_dim)?,
        surgeon,
        timestep,
    })
}
