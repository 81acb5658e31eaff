//! Flat `section.key=value` run configuration.
//!
//! Every key has a default; a file and `--set` overrides replace values.
//! The fully resolved map is echoed into each artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use gestdiff_core::conditioning::{ConditioningConfig, FusionMode, SurgeonStrategy};
use gestdiff_core::data::{SplitScheme, SyntheticSpec};
use gestdiff_core::denoiser::DenoiserConfig;
use gestdiff_core::diffusion::TransitionSchedule;
use gestdiff_core::evaluation::TimestepPolicy;
use gestdiff_core::privacy::{AttackFeatures, AttackerConfig, AuditConfig, AuditLevel, NonMemberSpec};

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("schedule.K", "16"),
    ("schedule.T", "10"),
    ("model.seq_len", "5"),
    ("model.hidden", "512"),
    ("model.layers", "2"),
    ("model.heads", "8"),
    ("model.ffw", "1024"),
    ("model.dropout", "0"),
    ("train.epochs", "20"),
    ("train.batch_size", "32"),
    ("train.learning_rate", "0.001"),
    ("conditioning.strategy", "learnable-table"),
    ("conditioning.fusion", "sum"),
    ("conditioning.ablate_surgeon", "false"),
    ("conditioning.vision_dim", "1000"),
    ("conditioning.language_dim", "768"),
    ("conditioning.surgeon_dim", "384"),
    ("data.source", "files"),
    ("data.transcripts", ""),
    ("data.mapping", ""),
    ("data.vision", ""),
    ("data.language", ""),
    ("data.surgeon_id_vectors", ""),
    ("data.surgeon_grs_vectors", ""),
    ("data.stride", "1"),
    ("synthetic.n_surgeons", "4"),
    ("synthetic.trials_per_surgeon", "5"),
    ("synthetic.segments_per_trial", "20"),
    ("synthetic.divergence", "1"),
    ("synthetic.support_size", ""),
    ("synthetic.vision_noise", "0.1"),
    ("split.scheme", "by-trial-random"),
    ("split.ratio", "0.8"),
    ("split.fold", "0"),
    ("split.surgeons", ""),
    ("output.dir", "out"),
    ("inference.init", "uniform"),
    ("eval.split", "test"),
    ("eval.timestep", "uniform"),
    ("eval.repeats", "10"),
    ("eval.generative", "true"),
    ("attack.level", "window"),
    ("attack.nonmember", "matched-gaussian"),
    ("attack.nonmember_ratio", "1"),
    ("attack.threshold", "0.5"),
    ("attack.train_fraction", "0.7"),
    ("attack.features", "subspace"),
    ("attack.components", "16"),
    ("attack.l2", "0.001"),
    ("attack.iterations", "1000"),
    ("attack.null_control", "false"),
];

/// Keys that shape the model; a checkpoint must agree with the config on all
/// of them.
pub const MODEL_KEYS: &[&str] = &[
    "schedule.K",
    "schedule.T",
    "model.seq_len",
    "model.hidden",
    "model.layers",
    "model.heads",
    "model.ffw",
    "conditioning.fusion",
    "conditioning.ablate_surgeon",
    "conditioning.vision_dim",
    "conditioning.language_dim",
    "conditioning.surgeon_dim",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceInit {
    Uniform,
    QSeeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Relative paths resolve against this directory.
    base: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            base: PathBuf::from("."),
        }
    }
}

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (k, v) = text.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl RunConfig {
    /// Parses config text. Blank lines and lines starting with `#` are
    /// skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config = Self {
            base: base.to_path_buf(),
            ..Self::default()
        };
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_pair(line).ok_or_else(|| anyhow!("line {}: expected `key=value`, found `{line}`", i + 1))?;
            if let Some(prev) = seen.insert(key.to_string(), i + 1) {
                bail!("line {}: `{key}` already set on line {prev}", i + 1);
            }
            config.set(key, value).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).ok_or_else(|| anyhow!("override `{pair}` is not `key=value`"))?;
        self.set(k, v)
    }

    pub fn with(mut self, key: &str, value: &str) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unknown key {key}"))
    }

    /// Every key and value, for provenance.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| anyhow!("config `{key}`: cannot parse `{v}`"))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            v => bail!("config `{key}`: expected true or false, found `{v}`"),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    /// A path value resolved against the config directory; `None` if unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| self.base.join(v))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(self.get("output.dir"))
    }

    pub fn schedule(&self) -> Result<TransitionSchedule> {
        Ok(TransitionSchedule::new(self.parsed("schedule.K")?, self.parsed("schedule.T")?)?)
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        let c = DenoiserConfig {
            vocab: self.parsed("schedule.K")?,
            seq_len: self.parsed("model.seq_len")?,
            hidden: self.parsed("model.hidden")?,
            layers: self.parsed("model.layers")?,
            heads: self.parsed("model.heads")?,
            ffw: self.parsed("model.ffw")?,
            dropout: self.parsed("model.dropout")?,
            epochs: self.parsed("train.epochs")?,
            batch_size: self.parsed("train.batch_size")?,
            learning_rate: self.parsed("train.learning_rate")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn strategy(&self) -> Result<SurgeonStrategy> {
        let v = self.get("conditioning.strategy");
        SurgeonStrategy::parse(v).ok_or_else(|| {
            anyhow!("config `conditioning.strategy`: `{v}` is not learnable-table, external-id-only or external-id-grs")
        })
    }

    pub fn conditioning(&self) -> Result<ConditioningConfig> {
        let fusion = self.get("conditioning.fusion");
        Ok(ConditioningConfig {
            vision_dim: self.parsed("conditioning.vision_dim")?,
            language_dim: self.parsed("conditioning.language_dim")?,
            surgeon_dim: self.parsed("conditioning.surgeon_dim")?,
            timesteps: self.parsed("schedule.T")?,
            strategy: self.strategy()?,
            fusion: FusionMode::parse(fusion)
                .ok_or_else(|| anyhow!("config `conditioning.fusion`: `{fusion}` is not sum or concat"))?,
            ablate_surgeon: self.flag("conditioning.ablate_surgeon")?,
        })
    }

    pub fn stride(&self) -> Result<usize> {
        let s: usize = self.parsed("data.stride")?;
        if s == 0 {
            bail!("config `data.stride` must be at least 1");
        }
        Ok(s)
    }

    pub fn is_synthetic(&self) -> Result<bool> {
        match self.get("data.source") {
            "files" => Ok(false),
            "synthetic" => Ok(true),
            v => bail!("config `data.source`: `{v}` is not files or synthetic"),
        }
    }

    pub fn synthetic(&self) -> Result<SyntheticSpec> {
        let support = self.get("synthetic.support_size");
        Ok(SyntheticSpec {
            n_surgeons: self.parsed("synthetic.n_surgeons")?,
            trials_per_surgeon: self.parsed("synthetic.trials_per_surgeon")?,
            segments_per_trial: self.parsed("synthetic.segments_per_trial")?,
            divergence: self.parsed("synthetic.divergence")?,
            support_size: if support.is_empty() { None } else { Some(self.parsed("synthetic.support_size")?) },
            vocab: self.parsed("schedule.K")?,
            vision_dim: self.parsed("conditioning.vision_dim")?,
            language_dim: self.parsed("conditioning.language_dim")?,
            surgeon_dim: self.parsed("conditioning.surgeon_dim")?,
            vision_noise: self.parsed("synthetic.vision_noise")?,
        })
    }

    pub fn split_scheme(&self) -> Result<SplitScheme> {
        Ok(match self.get("split.scheme") {
            "by-trial-random" => SplitScheme::ByTrialRandom {
                train_ratio: self.parsed("split.ratio")?,
            },
            "leave-one-trial-out" => SplitScheme::LeaveOneTrialOut {
                fold: self.parsed("split.fold")?,
            },
            "by-surgeon-holdout" => SplitScheme::BySurgeonHoldout {
                surgeons: self
                    .get("split.surgeons")
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
            },
            v => bail!("config `split.scheme`: `{v}` is not by-trial-random, leave-one-trial-out or by-surgeon-holdout"),
        })
    }

    pub fn inference_init(&self) -> Result<InferenceInit> {
        match self.get("inference.init") {
            "uniform" => Ok(InferenceInit::Uniform),
            "q-seeded" => Ok(InferenceInit::QSeeded),
            v => bail!("config `inference.init`: `{v}` is not uniform or q-seeded"),
        }
    }

    /// Whether evaluation runs on the training split instead of the test split.
    pub fn eval_on_train(&self) -> Result<bool> {
        match self.get("eval.split") {
            "test" => Ok(false),
            "train" => Ok(true),
            v => bail!("config `eval.split`: `{v}` is not test or train"),
        }
    }

    pub fn eval_policy(&self) -> Result<TimestepPolicy> {
        match self.get("eval.timestep") {
            "uniform" => Ok(TimestepPolicy::Uniform),
            _ => Ok(TimestepPolicy::Fixed(self.parsed("eval.timestep")?)),
        }
    }

    pub fn eval_repeats(&self) -> Result<usize> {
        self.parsed("eval.repeats")
    }

    pub fn eval_generative(&self) -> Result<bool> {
        self.flag("eval.generative")
    }

    pub fn audit(&self) -> Result<AuditConfig> {
        let level = self.get("attack.level");
        let nonmember = self.get("attack.nonmember");
        let features = match self.get("attack.features") {
            "subspace" => AttackFeatures::Subspace {
                components: self.parsed("attack.components")?,
            },
            "raw" => AttackFeatures::Raw,
            v => bail!("config `attack.features`: `{v}` is not subspace or raw"),
        };
        Ok(AuditConfig {
            level: AuditLevel::parse(level).ok_or_else(|| anyhow!("config `attack.level`: `{level}` is not surgeon or window"))?,
            nonmember: NonMemberSpec::parse(nonmember).ok_or_else(|| {
                anyhow!("config `attack.nonmember`: `{nonmember}` is not matched-gaussian, uniform-hypercube or held-out-real")
            })?,
            nonmember_ratio: self.parsed("attack.nonmember_ratio")?,
            attacker: AttackerConfig {
                features,
                l2: self.parsed("attack.l2")?,
                iterations: self.parsed("attack.iterations")?,
            },
            threshold: self.parsed("attack.threshold")?,
            train_fraction: self.parsed("attack.train_fraction")?,
            seed: self.seed()?,
            null_control: self.flag("attack.null_control")?,
        })
    }
}
