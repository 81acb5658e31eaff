//! Central finite-difference checks of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::denoiser::Denoiser;
use crate::conditioning::ConditioningBundle;
use crate::nn::normal_tensor;
use crate::rng::seeded;
use crate::{Result, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Worst disagreement found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    /// Largest `|a − n| / max(|a|, |n|, 1e-5)`.
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            entries: 0,
            max_rel_err: 0.0,
            worst: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }

    fn record(&mut self, what: &str, entry: usize, analytic: f64, numeric: f64) {
        self.entries += 1;
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((what.into(), entry, analytic, numeric));
        }
    }
}

/// Checks `d/dinputs Σ f(inputs) ⊙ R` for a fixed random weight `R`.
pub fn check_op(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, seed: u64) -> Result<GradCheck> {
    let run = |values: &[Tensor], weight: &Tensor, grads: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let w = tape.constant(weight.clone());
        let prod = tape.mul(out, w)?;
        let total = tape.sum(prod)?;
        let value = tape.value(total).item();
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(total)?;
        let g = vars
            .iter()
            .zip(values)
            .map(|(v, t)| g.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g))
    };
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let weight = normal_tensor(&shape, 1.0, &mut seeded(seed, 0));
    let (_, grads) = run(inputs, &weight, true)?;
    let mut report = GradCheck::new();
    let mut values = inputs.to_vec();
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + STEP;
            let up = run(&values, &weight, false)?.0;
            values[i].data_mut()[j] = orig - STEP;
            let down = run(&values, &weight, false)?.0;
            values[i].data_mut()[j] = orig;
            report.record(&alloc::format!("input {i}"), j, grads[i].data()[j], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Checks every parameter of `model` against the batch loss on `items`
/// (`(x_t, x_0, bundle, t)`).
pub fn check_denoiser(model: &mut Denoiser, items: &[(&[usize], &[usize], &ConditioningBundle, usize)]) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grads(items, None)?;
    let ids: Vec<_> = model.params().ids().collect();
    let mut report = GradCheck::new();
    for (pi, &id) in ids.iter().enumerate() {
        let name: String = model.params().name(id).into();
        for j in 0..model.params().get(id).len() {
            let orig = model.params().get(id).data()[j];
            model.params_mut().get_mut(id).data_mut()[j] = orig + STEP;
            let up = model.loss_and_grads(items, None)?.0;
            model.params_mut().get_mut(id).data_mut()[j] = orig - STEP;
            let down = model.loss_and_grads(items, None)?.0;
            model.params_mut().get_mut(id).data_mut()[j] = orig;
            report.record(&name, j, grads[pi].data()[j], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        let x = Tensor::matrix(1, 3, alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let good = check_op(core::slice::from_ref(&x), |t, v| t.mul(v[0], v[0]), 1).unwrap();
        assert!(good.passed());
        assert_eq!(good.entries, 3);
        // A constant copy of the input hides part of the gradient from the tape.
        let bad = check_op(
            &[x],
            |t, v| {
                let c = t.constant(t.value(v[0]).clone());
                let y = t.mul(c, c)?;
                t.add(y, v[0])
            },
            1,
        )
        .unwrap();
        assert!(!bad.passed());
    }
}
