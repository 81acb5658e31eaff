//! Schedule, posterior and sampler checks against brute-force matrix
//! products, exhaustive chain enumeration and Monte Carlo.

use gestdiff_core::diffusion::{reverse_sample, ReverseInit, TransitionSchedule, X0Predictor};
use gestdiff_core::rng::seeded;
use gestdiff_core::{Result, Tensor};
use rand::Rng as _;

fn brute_cumulative(s: &TransitionSchedule, t: usize) -> Tensor {
    let mut m = s.step_matrix(0).unwrap();
    for u in 1..=t {
        m = m.matmul(&s.step_matrix(u).unwrap()).unwrap();
    }
    m
}

#[test]
fn closed_form_matches_products() {
    for (k, steps) in [(16, 10), (2, 2), (3, 4), (5, 7)] {
        let s = TransitionSchedule::new(k, steps).unwrap();
        for t in 0..steps {
            let closed = s.cumulative_matrix(t).unwrap();
            let brute = brute_cumulative(&s, t);
            for (a, b) in closed.data().iter().zip(brute.data()) {
                assert!((a - b).abs() < 1e-12, "K={k} T={steps} t={t}: {a} vs {b}");
            }
            for r in 0..k {
                let sum: f64 = closed.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(closed.row(r).iter().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn last_marginal_is_near_uniform() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let m = s.cumulative_marginal(9, 4).unwrap();
    let tv: f64 = m.iter().map(|p| (p - 1.0 / 16.0).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.01, "TV {tv}");
    let first = s.cumulative_marginal(0, 4).unwrap();
    for (a, b) in first.iter().zip(s.step_matrix(0).unwrap().row(4)) {
        assert!((a - b).abs() < 1e-15);
    }
}

/// Probability of every full chain x_0 → x_1 → … → x_t, given x_0.
fn enumerate_posterior(s: &TransitionSchedule, t: usize, xt: usize, x0: usize) -> Vec<f64> {
    let k = s.vocab();
    let mats: Vec<Tensor> = (0..s.steps()).map(|u| s.step_matrix(u).unwrap()).collect();
    // Joint over all paths (x_0 fixed): states after steps 0..=t.
    let mut joint_prev = vec![0.0; k];
    let paths = k.pow(t as u32 + 1);
    for code in 0..paths {
        let mut states = Vec::with_capacity(t + 1);
        let mut c = code;
        for _ in 0..=t {
            states.push(c % k);
            c /= k;
        }
        if states[t] != xt {
            continue;
        }
        let mut p = 1.0;
        let mut prev = x0;
        for (u, &x) in states.iter().enumerate() {
            p *= mats[u].at(prev, x);
            prev = x;
        }
        joint_prev[states[t - 1]] += p;
    }
    let z: f64 = joint_prev.iter().sum();
    joint_prev.iter().map(|p| p / z).collect()
}

#[test]
fn posterior_matches_enumeration() {
    for (k, steps) in [(2, 2), (3, 4)] {
        let s = TransitionSchedule::new(k, steps).unwrap();
        for t in 1..steps {
            for xt in 0..k {
                for x0 in 0..k {
                    let formula = s.posterior(t, xt, x0).unwrap();
                    let brute = enumerate_posterior(&s, t, xt, x0);
                    for (a, b) in formula.iter().zip(&brute) {
                        assert!((a - b).abs() < 1e-12, "K={k} t={t} xt={xt} x0={x0}: {a} vs {b}");
                    }
                }
            }
        }
    }
}

#[test]
fn chapman_kolmogorov() {
    // Σ_j q(x_{t-1}=j | x_t, x_0) q(x_t | x_0) = q(x_{t-1}=j | x_0) summed over x_t.
    let s = TransitionSchedule::new(3, 4).unwrap();
    for t in 1..4 {
        for x0 in 0..3 {
            let qt = s.cumulative_marginal(t, x0).unwrap();
            let qprev = s.cumulative_marginal(t - 1, x0).unwrap();
            let mut rebuilt = [0.0; 3];
            for (xt, &pt) in qt.iter().enumerate() {
                let post = s.posterior(t, xt, x0).unwrap();
                for j in 0..3 {
                    rebuilt[j] += post[j] * pt;
                }
            }
            for j in 0..3 {
                assert!((rebuilt[j] - qprev[j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn posterior_normalized_on_random_triples() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let mut rng = seeded(3, 0);
    for _ in 0..100 {
        let t = rng.random_range(1..10);
        let p = s.posterior(t, rng.random_range(0..16), rng.random_range(0..16)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_monte_carlo() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let mut rng = seeded(4, 0);
    let n = 10_000;
    let stay = (0..n).filter(|_| s.corrupt(&[7], 0, &mut rng).unwrap()[0] == 7).count();
    assert!((stay as f64 / n as f64 - 0.9).abs() < 0.01);
    // Sampling noise alone puts the empirical TV near 0.016 at 10k draws
    // over 16 bins, so the 0.02 bound is checked at 40k.
    let n = 40_000;
    for t in 0..10 {
        let mut counts = [0usize; 16];
        for _ in 0..n {
            counts[s.corrupt(&[2], t, &mut rng).unwrap()[0]] += 1;
        }
        let exact = s.cumulative_marginal(t, 2).unwrap();
        let tv: f64 = counts.iter().zip(&exact).map(|(&c, p)| (c as f64 / n as f64 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "t={t} TV {tv}");
    }
}

#[test]
fn corruption_reaches_every_token() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let mut rng = seeded(5, 0);
    let mut seen = [false; 16];
    for _ in 0..2000 {
        for tok in s.corrupt(&[1, 4, 7], 5, &mut rng).unwrap() {
            seen[tok] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "MASK and every gesture reachable");
}

struct Stub {
    probs: Vec<f64>,
    len: usize,
}

impl X0Predictor for Stub {
    fn vocab(&self) -> usize {
        self.probs.len()
    }
    fn seq_len(&self) -> usize {
        self.len
    }
    fn predict_x0(&self, _xt: &[usize], _t: usize) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.probs.clone(); self.len])
    }
}

#[test]
fn one_hot_stub_is_a_fixed_point() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let mut probs = vec![0.0; 16];
    probs[2] = 1.0;
    let stub = Stub { probs, len: 5 };
    for seed in 0..20 {
        let out = reverse_sample(&s, &stub, ReverseInit::Uniform, &mut seeded(seed, 6)).unwrap();
        assert_eq!(out.tokens, vec![2; 5]);
        assert_eq!(out.trace.len(), 10);
    }
}

#[test]
fn uniform_stub_gives_uniform_output() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let stub = Stub {
        probs: vec![1.0 / 16.0; 16],
        len: 1,
    };
    let mut rng = seeded(7, 6);
    let n = 10_000;
    let mut counts = [0usize; 16];
    for _ in 0..n {
        counts[reverse_sample(&s, &stub, ReverseInit::Uniform, &mut rng).unwrap().tokens[0]] += 1;
    }
    let tv: f64 = counts.iter().map(|&c| (c as f64 / n as f64 - 1.0 / 16.0).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.05, "TV {tv}");
}

#[test]
fn sampling_is_seeded() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let stub = Stub {
        probs: (1..=16).map(|i| f64::from(i) / 136.0).collect(),
        len: 5,
    };
    let a = reverse_sample(&s, &stub, ReverseInit::Uniform, &mut seeded(9, 6)).unwrap();
    let b = reverse_sample(&s, &stub, ReverseInit::Uniform, &mut seeded(9, 6)).unwrap();
    assert_eq!(a, b);
    let clean = [0, 1, 2, 3, 4];
    let c = reverse_sample(&s, &stub, ReverseInit::FromClean(&clean), &mut seeded(9, 6)).unwrap();
    assert!(c.tokens.iter().all(|&t| t < 16));
}

#[test]
fn mismatched_vocab_is_config_error() {
    let s = TransitionSchedule::new(16, 10).unwrap();
    let stub = Stub {
        probs: vec![0.2; 5],
        len: 3,
    };
    let err = reverse_sample(&s, &stub, ReverseInit::Uniform, &mut seeded(0, 6)).unwrap_err();
    assert!(matches!(err, gestdiff_core::Error::Config(_)));
}
