//! Multinomial forward corruption and the x₀-parameterized reverse chain.
//!
//! Step `t` (0-based, `t < T`) keeps a token with probability
//! `1 − (t+1)/T` and otherwise moves it uniformly to one of the other
//! `K − 1` tokens. Every step matrix has the form `a·I + (1 − a)·U` with
//! `U = J/K`, so cumulative products stay in that family and
//! `Q̄_t = c_t·I + (1 − c_t)·U` with `c_t = ∏ (stay_s − flip_s)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A fixed-length sequence of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub trial_id: Option<String>,
    pub window_start: Option<usize>,
    pub surgeon_id: Option<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index {
                what: "token",
                index: bad,
                limit: vocab,
            });
        }
        Ok(Self {
            tokens,
            trial_id: None,
            window_start: None,
            surgeon_id: None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSchedule {
    vocab: usize,
    steps: usize,
    step_stay: Vec<f64>,
    step_flip: Vec<f64>,
    cum_coef: Vec<f64>,
}

impl TransitionSchedule {
    pub fn new(vocab: usize, steps: usize) -> Result<Self> {
        if vocab < 2 || steps < 1 {
            return Err(Error::config("schedule needs K >= 2 and T >= 1"));
        }
        let step_stay: Vec<f64> = (0..steps)
            .map(|t| 1.0 - (t + 1) as f64 / steps as f64)
            .collect();
        let step_flip: Vec<f64> = step_stay
            .iter()
            .map(|s| (1.0 - s) / (vocab - 1) as f64)
            .collect();
        let mut cum_coef = Vec::with_capacity(steps);
        let mut c = 1.0;
        for (s, f) in step_stay.iter().zip(&step_flip) {
            c *= s - f;
            cum_coef.push(c);
        }
        Ok(Self {
            vocab,
            steps,
            step_stay,
            step_flip,
            cum_coef,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_stay(&self) -> &[f64] {
        &self.step_stay
    }

    pub fn step_flip(&self) -> &[f64] {
        &self.step_flip
    }

    pub fn cum_coef(&self) -> &[f64] {
        &self.cum_coef
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                limit: self.steps,
            });
        }
        Ok(())
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.vocab {
            return Err(Error::Index {
                what: "token",
                index: token,
                limit: self.vocab,
            });
        }
        Ok(())
    }

    /// `Q_t(i, j)`; no range checks.
    fn step_entry(&self, t: usize, i: usize, j: usize) -> f64 {
        if i == j {
            self.step_stay[t]
        } else {
            self.step_flip[t]
        }
    }

    /// `Q̄_t(i, j)`, clamped at zero; no range checks.
    fn cumulative_entry(&self, t: usize, i: usize, j: usize) -> f64 {
        let c = self.cum_coef[t];
        let uniform = (1.0 - c) / self.vocab as f64;
        let v = if i == j { c + uniform } else { uniform };
        v.max(0.0)
    }

    pub fn step_matrix(&self, t: usize) -> Result<Tensor> {
        self.check_t(t)?;
        let k = self.vocab;
        let data = (0..k * k).map(|n| self.step_entry(t, n / k, n % k)).collect();
        Tensor::matrix(k, k, data)
    }

    /// `Q̄_t = Q_0 · … · Q_t` from the closed form.
    pub fn cumulative_matrix(&self, t: usize) -> Result<Tensor> {
        self.check_t(t)?;
        let k = self.vocab;
        let data = (0..k * k).map(|n| self.cumulative_entry(t, n / k, n % k)).collect();
        Tensor::matrix(k, k, data)
    }

    /// `q(x_t | x_0 = x0)`.
    pub fn cumulative_marginal(&self, t: usize, x0: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        self.check_token(x0)?;
        Ok((0..self.vocab).map(|j| self.cumulative_entry(t, x0, j)).collect())
    }

    /// Samples `x_t ~ q(x_t | x_0)` independently per position.
    pub fn corrupt(&self, x0: &[usize], t: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        self.check_t(t)?;
        x0.iter()
            .map(|&tok| {
                let probs = self.cumulative_marginal(t, tok)?;
                Ok(sample_categorical(&probs, rng))
            })
            .collect()
    }

    pub fn corrupt_sequence(&self, x0: &TokenSequence, t: usize, rng: &mut Rng) -> Result<TokenSequence> {
        let tokens = self.corrupt(&x0.tokens, t, rng)?;
        Ok(TokenSequence { tokens, ..x0.clone() })
    }

    /// `q(x_{t−1} = j | x_t, x_0) ∝ Q_t(j, x_t) · Q̄_{t−1}(x_0, j)`.
    pub fn posterior(&self, t: usize, xt: usize, x0: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if t == 0 {
            return Err(Error::Precondition("posterior needs t >= 1".into()));
        }
        self.check_token(xt)?;
        self.check_token(x0)?;
        let mut p: Vec<f64> = (0..self.vocab)
            .map(|j| self.step_entry(t, j, xt) * self.cumulative_entry(t - 1, x0, j))
            .collect();
        let z: f64 = p.iter().sum();
        if z <= 0.0 {
            return Err(Error::Precondition("posterior has zero mass".into()));
        }
        for v in &mut p {
            *v /= z;
        }
        Ok(p)
    }

    /// `p(x_{t−1} | x_t) = Σ_i p̂(x_0 = i) · q(x_{t−1} | x_t, x_0 = i)`.
    pub fn reverse_kernel(&self, t: usize, xt: usize, x0_probs: &[f64]) -> Result<Vec<f64>> {
        if x0_probs.len() != self.vocab {
            return Err(Error::dim("reverse_kernel", &[self.vocab], &[x0_probs.len()]));
        }
        let mut out = vec![0.0; self.vocab];
        for (i, &w) in x0_probs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.posterior(t, xt, i)?) {
                *o += w * p;
            }
        }
        let z: f64 = out.iter().sum();
        for v in &mut out {
            *v /= z;
        }
        Ok(out)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Anything that maps a noisy sequence at step `t` to per-position
/// distributions over the clean token.
pub trait X0Predictor {
    fn vocab(&self) -> usize;
    fn seq_len(&self) -> usize;
    fn predict_x0(&self, xt: &[usize], t: usize) -> Result<Vec<Vec<f64>>>;
}

/// How the reverse chain is started at the last timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseInit<'a> {
    /// Uniform over all `K` tokens.
    Uniform,
    /// `x_{T−1} ~ q(x_{T−1} | x_0)`; needs the ground truth, ablation only.
    FromClean(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReverseSample {
    pub tokens: Vec<usize>,
    /// `(t, x_t)` for every visited state, from `T−1` down to `0`.
    pub trace: Vec<(usize, Vec<usize>)>,
}

/// Runs the learned reverse process from `t = T−1` to `0`.
///
/// Intermediate steps sample from the marginalized posterior; the final step
/// takes the per-position argmax of the predicted `x_0`, breaking exact ties
/// uniformly at random.
pub fn reverse_sample(
    schedule: &TransitionSchedule,
    predictor: &dyn X0Predictor,
    init: ReverseInit<'_>,
    rng: &mut Rng,
) -> Result<ReverseSample> {
    if predictor.vocab() != schedule.vocab() {
        return Err(Error::config(alloc::format!(
            "denoiser vocabulary {} does not match schedule K={}",
            predictor.vocab(),
            schedule.vocab()
        )));
    }
    let len = predictor.seq_len();
    let last = schedule.steps() - 1;
    let mut x: Vec<usize> = match init {
        ReverseInit::Uniform => (0..len).map(|_| rng.random_range(0..schedule.vocab())).collect(),
        ReverseInit::FromClean(x0) => {
            if x0.len() != len {
                return Err(Error::dim("reverse_sample init", &[len], &[x0.len()]));
            }
            schedule.corrupt(x0, last, rng)?
        }
    };
    let mut trace = Vec::with_capacity(schedule.steps());
    trace.push((last, x.clone()));
    for t in (1..=last).rev() {
        let p_x0 = predictor.predict_x0(&x, t)?;
        check_prediction(&p_x0, len, schedule.vocab())?;
        let mut next = Vec::with_capacity(len);
        for (pos, probs) in p_x0.iter().enumerate() {
            let kernel = schedule.reverse_kernel(t, x[pos], probs)?;
            next.push(sample_categorical(&kernel, rng));
        }
        x = next;
        trace.push((t - 1, x.clone()));
    }
    let p_x0 = predictor.predict_x0(&x, 0)?;
    check_prediction(&p_x0, len, schedule.vocab())?;
    let tokens = p_x0.iter().map(|p| argmax_random_ties(p, rng)).collect();
    Ok(ReverseSample { tokens, trace })
}

fn check_prediction(p: &[Vec<f64>], len: usize, vocab: usize) -> Result<()> {
    if p.len() != len || p.iter().any(|r| r.len() != vocab) {
        let got = p.first().map_or(0, Vec::len);
        return Err(Error::config(alloc::format!(
            "denoiser emitted {}x{got} probabilities, expected {len}x{vocab}",
            p.len()
        )));
    }
    Ok(())
}

fn argmax_random_ties(p: &[f64], rng: &mut Rng) -> usize {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..p.len()).filter(|&i| p[i] == max).collect();
    if winners.len() == 1 {
        winners[0]
    } else {
        winners[rng.random_range(0..winners.len())]
    }
}
