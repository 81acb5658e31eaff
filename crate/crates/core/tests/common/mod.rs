#![allow(dead_code)]

use gestdiff_core::conditioning::{
    ConditioningBundle, ConditioningConfig, FeatureSource, FeatureVector, FusionMode, SurgeonProfile, SurgeonStrategy,
};
use gestdiff_core::data::{synthesize_dataset, SyntheticData, SyntheticSpec};
use gestdiff_core::denoiser::{DenoiserConfig, Example};
use gestdiff_core::diffusion::TokenSequence;

pub fn small_model(seq_len: usize, epochs: usize) -> DenoiserConfig {
    DenoiserConfig {
        seq_len,
        hidden: 64,
        layers: 2,
        heads: 4,
        ffw: 128,
        epochs,
        batch_size: 8,
        ..DenoiserConfig::default()
    }
}

pub fn small_cond(strategy: SurgeonStrategy) -> ConditioningConfig {
    ConditioningConfig {
        vision_dim: 6,
        language_dim: 4,
        surgeon_dim: 8,
        timesteps: 10,
        strategy,
        fusion: FusionMode::Sum,
        ablate_surgeon: false,
    }
}

pub fn synthetic(n_surgeons: usize, trials: usize, segments: usize, divergence: f64, seed: u64) -> SyntheticData {
    synthesize_dataset(
        &SyntheticSpec {
            n_surgeons,
            trials_per_surgeon: trials,
            segments_per_trial: segments,
            divergence,
            vision_dim: 6,
            language_dim: 4,
            surgeon_dim: 8,
            ..SyntheticSpec::default()
        },
        seed,
    )
    .unwrap()
}

/// A bundle with constant features and the given surgeon.
pub fn plain_bundle(cond: &ConditioningConfig, surgeon: &str, external: Option<Vec<f64>>) -> ConditioningBundle {
    let profile = match external {
        Some(v) => SurgeonProfile::external(
            surgeon,
            cond.strategy,
            Some(20.0),
            FeatureVector::new(v, FeatureSource::SurgeonExternal, cond.surgeon_dim).unwrap(),
        )
        .unwrap(),
        None => SurgeonProfile::learnable(surgeon, None),
    };
    ConditioningBundle {
        vision: FeatureVector::new(vec![0.1; cond.vision_dim], FeatureSource::Vision, cond.vision_dim).unwrap(),
        language: FeatureVector::new(vec![-0.2; cond.language_dim], FeatureSource::Language, cond.language_dim).unwrap(),
        surgeon: profile,
        timestep: 0,
    }
}

pub fn example(tokens: &[usize], bundle: &ConditioningBundle) -> Example {
    Example {
        x0: TokenSequence::new(tokens.to_vec(), 16).unwrap(),
        bundle: bundle.clone(),
    }
}
