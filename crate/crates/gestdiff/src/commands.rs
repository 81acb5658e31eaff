//! The five pipeline commands. Each reads the run config, writes its
//! artifacts into `output.dir` and returns what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use gestdiff_core::conditioning::{ConditioningConfig, SurgeonStrategy};
use gestdiff_core::data::{split, synthesize_dataset, WindowedDataset};
use gestdiff_core::denoiser::Denoiser;
use gestdiff_core::diffusion::{reverse_sample, ReverseInit};
use gestdiff_core::evaluation::{
    export_embeddings, generative, gesture_heatmap, teacher_forced, top1_by_surgeon, MetricReport,
};
use gestdiff_core::privacy::{run_membership_audit, AttackReport, AuditInputs, AuditLevel, NonMemberSpec};
use gestdiff_core::rng::{seeded, streams};
use gestdiff_core::vocab;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{InferenceInit, RunConfig, MODEL_KEYS};
use crate::features::{format_feature_table, load_feature_table, FeatureTable};
use crate::manifest::{resolve, Corpus, Manifest, Sources, Split, SplitEntry, SurgeonEntry, WindowEntry, MANIFEST_FILE};
use crate::report::{embeddings_csv, heatmap_csv, train_log_jsonl, write_json, write_text, Provenance};
use crate::transcript::{format_segments, load_mapping, load_transcripts, task_from_trial, Segment};

/// File-name tag of a trained model: the strategy, plus `-ablated` when the
/// surgeon path is switched off.
pub fn run_tag(cond: &ConditioningConfig) -> String {
    if cond.ablate_surgeon {
        format!("{}-ablated", cond.strategy)
    } else {
        cond.strategy.to_string()
    }
}

pub fn checkpoint_path(out: &Path, tag: &str) -> PathBuf {
    out.join(format!("checkpoint-{tag}.bin"))
}

fn vision_keys(trial: &str, start: usize) -> Vec<String> {
    vec![format!("{trial}:{start}"), trial.to_string(), task_from_trial(trial).to_string()]
}

fn language_keys(trial: &str) -> Vec<String> {
    vec![task_from_trial(trial).to_string(), trial.to_string()]
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub manifest: Manifest,
    pub path: PathBuf,
}

/// Writes a synthetic corpus in the on-disk formats and returns its sources.
fn write_fixtures(config: &RunConfig, out: &Path) -> Result<Sources> {
    let spec = config.synthetic()?;
    let data = synthesize_dataset(&spec, config.seed()?)?;
    let dir = out.join("fixtures");
    let transcripts = dir.join("transcripts");
    create_dir(&transcripts)?;
    let mut mapping = String::from("trial_id,surgeon_id,mean_grs\n");
    for trial in &data.trials {
        let segments: Vec<Segment> = trial
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &token)| Segment {
                start: 30 * i as u64 + 1,
                end: 30 * i as u64 + 30,
                token,
            })
            .collect();
        write_text(&transcripts.join(format!("{}.txt", trial.trial_id)), &format_segments(&segments, spec.vocab))?;
        let grs = data.surgeons.iter().find(|s| s.surgeon_id == trial.surgeon_id).map(|s| s.mean_grs);
        mapping.push_str(&format!("{},{},{}\n", trial.trial_id, trial.surgeon_id, grs.unwrap_or_default()));
    }
    write_text(&dir.join("mapping.csv"), &mapping)?;
    let table = |dim: usize, rows: &BTreeMap<String, Vec<f64>>| FeatureTable { dim, rows: rows.clone() };
    write_text(&dir.join("vision.csv"), &format_feature_table(&table(spec.vision_dim, &data.vision)))?;
    write_text(&dir.join("language.csv"), &format_feature_table(&table(spec.language_dim, &data.language)))?;
    write_text(&dir.join("surgeon_id.csv"), &format_feature_table(&table(spec.surgeon_dim, &data.surgeon_id_vectors)))?;
    write_text(&dir.join("surgeon_grs.csv"), &format_feature_table(&table(spec.surgeon_dim, &data.surgeon_grs_vectors)))?;
    Ok(Sources {
        transcripts: "fixtures/transcripts".into(),
        mapping: Some("fixtures/mapping.csv".into()),
        vision: "fixtures/vision.csv".into(),
        language: "fixtures/language.csv".into(),
        surgeon_id_vectors: Some("fixtures/surgeon_id.csv".into()),
        surgeon_grs_vectors: Some("fixtures/surgeon_grs.csv".into()),
    })
}

fn sources_from_config(config: &RunConfig) -> Result<Sources> {
    let path = |key: &str| -> Result<Option<String>> {
        match config.path(key) {
            None => Ok(None),
            Some(p) => {
                let abs = std::path::absolute(&p).with_context(|| format!("config `{key}`: {}", p.display()))?;
                if !abs.exists() {
                    bail!("config `{key}`: {} does not exist", abs.display());
                }
                Ok(Some(abs.to_string_lossy().into_owned()))
            }
        }
    };
    let required = |key: &str| -> Result<String> { path(key)?.ok_or_else(|| anyhow!("config `{key}` is required")) };
    Ok(Sources {
        transcripts: required("data.transcripts")?,
        mapping: path("data.mapping")?,
        vision: required("data.vision")?,
        language: required("data.language")?,
        surgeon_id_vectors: path("data.surgeon_id_vectors")?,
        surgeon_grs_vectors: path("data.surgeon_grs_vectors")?,
    })
}

fn split_entry(ds: &WindowedDataset, vision: &FeatureTable, language: &FeatureTable) -> Result<SplitEntry> {
    let mut windows = Vec::with_capacity(ds.len());
    for w in &ds.windows {
        let trial = w.trial_id.clone().ok_or_else(|| anyhow!("window without trial id"))?;
        let start = w.window_start.unwrap_or(0);
        let vk = vision_keys(&trial, start);
        let (vision_key, _) = vision
            .lookup(&vk)
            .ok_or_else(|| anyhow!("vision table has no key for window {} (tried {})", vk[0], vk.join(", ")))?;
        let lk = language_keys(&trial);
        let (language_key, _) = language
            .lookup(&lk)
            .ok_or_else(|| anyhow!("language table has no key for trial {trial} (tried {})", lk.join(", ")))?;
        windows.push(WindowEntry {
            surgeon_id: w.surgeon_id.clone().unwrap_or_default(),
            trial_id: trial,
            start,
            tokens: w.tokens.clone(),
            vision_key: vision_key.into(),
            language_key: language_key.into(),
        });
    }
    Ok(SplitEntry {
        trials: ds.trials(),
        windows,
    })
}

pub fn prepare(config: &RunConfig) -> Result<PrepareSummary> {
    let out = config.output_dir();
    create_dir(&out)?;
    let vocab_size = config.schedule()?.vocab();
    let model = config.denoiser()?;
    let cond = config.conditioning()?;
    let stride = config.stride()?;
    let sources = if config.is_synthetic()? {
        write_fixtures(config, &out)?
    } else {
        sources_from_config(config)?
    };
    let mapping = sources
        .mapping
        .as_ref()
        .map(|p| load_mapping(&resolve(&out, p)))
        .transpose()?;
    let transcripts = load_transcripts(&resolve(&out, &sources.transcripts), mapping.as_ref(), vocab_size)?;
    if transcripts.is_empty() {
        bail!("no transcript files (*.txt) in {}", resolve(&out, &sources.transcripts).display());
    }
    let trials: Vec<_> = transcripts.into_iter().map(|t| t.into_trial()).collect();

    let mut grs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in &trials {
        let g = grs.entry(t.surgeon_id.clone()).or_default();
        if let Some(v) = mapping.as_ref().and_then(|m| m.get(&t.trial_id)).and_then(|r| r.mean_grs) {
            g.push(v);
        }
    }
    let surgeons: Vec<SurgeonEntry> = grs
        .into_iter()
        .map(|(surgeon_id, v)| SurgeonEntry {
            surgeon_id,
            mean_grs: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
        })
        .collect();

    let vision = load_feature_table(&resolve(&out, &sources.vision), cond.vision_dim)?;
    let language = load_feature_table(&resolve(&out, &sources.language), cond.language_dim)?;
    for (strategy, path) in [
        (SurgeonStrategy::ExternalIdOnly, &sources.surgeon_id_vectors),
        (SurgeonStrategy::ExternalIdGrs, &sources.surgeon_grs_vectors),
    ] {
        match path {
            Some(p) => {
                let table = load_feature_table(&resolve(&out, p), cond.surgeon_dim)?;
                if let Some(s) = surgeons.iter().find(|s| table.get(&s.surgeon_id).is_none()) {
                    bail!("surgeon vector table {p} has no key `{}`", s.surgeon_id);
                }
            }
            None if cond.strategy == strategy => bail!("{strategy} needs a surgeon vector table"),
            None => {}
        }
    }

    let ds = WindowedDataset::from_trials(&trials, model.seq_len, stride, vocab_size)?;
    let scheme = config.split_scheme()?;
    let (train, test) = split(&ds, &scheme, config.seed()?)?;
    let manifest = Manifest {
        provenance: Provenance::new("prepare", config)?,
        vocab: vocab_size,
        seq_len: model.seq_len,
        stride,
        scheme,
        sources,
        surgeons,
        train: split_entry(&train, &vision, &language)?,
        test: split_entry(&test, &vision, &language)?,
    };
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(PrepareSummary { manifest, path })
}

// ------------------------------------------------------------------ train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub provenance: Provenance,
    pub strategy: SurgeonStrategy,
    pub ablate_surgeon: bool,
    pub n_windows: usize,
    pub parameter_count: usize,
    pub epoch_losses: Vec<f64>,
}

fn load_corpus(config: &RunConfig, cond: &ConditioningConfig) -> Result<Corpus> {
    let corpus = Corpus::load(&config.output_dir(), cond)?;
    let m = &corpus.manifest;
    let model = config.denoiser()?;
    if m.vocab != model.vocab || m.seq_len != model.seq_len {
        bail!(
            "manifest was prepared with K={} and seq_len={}, config has K={} and seq_len={}; rerun prepare",
            m.vocab,
            m.seq_len,
            model.vocab,
            model.seq_len
        );
    }
    Ok(corpus)
}

pub fn train(config: &RunConfig) -> Result<TrainReport> {
    let out = config.output_dir();
    let cond = config.conditioning()?;
    let corpus = load_corpus(config, &cond)?;
    let examples = corpus.examples(Split::Train, cond.strategy)?;
    if examples.is_empty() {
        bail!("the training split has no windows");
    }
    let mut model = Denoiser::new(config.denoiser()?, cond.clone(), &corpus.manifest.surgeon_ids())?;
    let log = model.train(&examples, &config.schedule()?)?;
    let tag = run_tag(&cond);
    checkpoint::save(&checkpoint_path(&out, &tag), &model, config.echo())?;
    write_text(&out.join(format!("train-log-{tag}.jsonl")), &train_log_jsonl(&log.epoch_losses)?)?;
    let report = TrainReport {
        provenance: Provenance::new("train", config)?,
        strategy: cond.strategy,
        ablate_surgeon: cond.ablate_surgeon,
        n_windows: examples.len(),
        parameter_count: model.parameter_count(),
        epoch_losses: log.epoch_losses,
    };
    write_json(&out.join(format!("train-{tag}.json")), &report)?;
    Ok(report)
}

/// Loads a checkpoint and checks that it was built with the config's model
/// shape.
fn load_checked(config: &RunConfig, path: &Path) -> Result<(Denoiser, CheckpointMeta)> {
    let (model, meta) = checkpoint::load(path)?;
    let mismatched: Vec<String> = MODEL_KEYS
        .iter()
        .filter_map(|&k| {
            let saved = meta.config.get(k).map_or("<missing>", String::as_str);
            (saved != config.get(k)).then(|| format!("{k}: checkpoint {saved}, config {}", config.get(k)))
        })
        .collect();
    if !mismatched.is_empty() {
        bail!(
            "configuration error: checkpoint {} does not match the config ({})",
            path.display(),
            mismatched.join("; ")
        );
    }
    Ok((model, meta))
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSummary {
    pub init: String,
    pub exact_match: f64,
    pub position_accuracy: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub strategy: SurgeonStrategy,
    pub ablate_surgeon: bool,
    pub split: String,
    pub metrics: MetricReport,
    pub generative: Option<GenerativeSummary>,
    /// Expected surgeons with no evaluated windows (absent from the heatmap).
    pub heatmap_omitted: Vec<String>,
    pub heatmap_file: String,
    pub embeddings_file: String,
}

pub fn eval(config: &RunConfig) -> Result<EvalReport> {
    let out = config.output_dir();
    let cond = config.conditioning()?;
    let tag = run_tag(&cond);
    let (model, _) = load_checked(config, &checkpoint_path(&out, &tag))?;
    if model.conditioner().config.strategy != cond.strategy {
        bail!("configuration error: checkpoint strategy differs from conditioning.strategy");
    }
    let corpus = load_corpus(config, &cond)?;
    let on_train = config.eval_on_train()?;
    let which = if on_train { Split::Train } else { Split::Test };
    let examples = corpus.examples(which, cond.strategy)?;
    if examples.is_empty() {
        bail!("the {} split has no windows", if on_train { "train" } else { "test" });
    }
    let schedule = config.schedule()?;
    let seed = config.seed()?;
    let evaluation = teacher_forced(&model, &examples, &schedule, config.eval_policy()?, config.eval_repeats()?, seed)?;
    let generative = if config.eval_generative()? {
        let init = config.inference_init()?;
        let g = generative(&model, &examples, &schedule, init == InferenceInit::QSeeded, seed)?;
        Some(GenerativeSummary {
            init: config.get("inference.init").into(),
            exact_match: g.exact_match,
            position_accuracy: g.position_accuracy,
            n_windows: g.n_windows,
        })
    } else {
        None
    };
    let expected = corpus.manifest.split_surgeons(which);
    let heatmap = gesture_heatmap(&expected, &top1_by_surgeon(&evaluation.records), model.config().vocab)?;
    let heatmap_file = format!("heatmap-{tag}.csv");
    write_text(&out.join(&heatmap_file), &heatmap_csv(&heatmap))?;
    let profiles = corpus.profiles(&corpus.manifest.surgeon_ids(), cond.strategy)?;
    let embeddings_file = format!("embeddings-{tag}.csv");
    write_text(&out.join(&embeddings_file), &embeddings_csv(&export_embeddings(&model, &profiles)?))?;
    let report = EvalReport {
        provenance: Provenance::new("eval", config)?,
        strategy: cond.strategy,
        ablate_surgeon: cond.ablate_surgeon,
        split: if on_train { "train" } else { "test" }.into(),
        metrics: evaluation.report,
        generative,
        heatmap_omitted: heatmap.omitted,
        heatmap_file,
        embeddings_file,
    };
    write_json(&out.join(format!("metrics-{tag}.json")), &report)?;
    Ok(report)
}

// ----------------------------------------------------------------- sample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSequence {
    pub tokens: Vec<usize>,
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub provenance: Provenance,
    pub strategy: SurgeonStrategy,
    pub surgeon_id: String,
    pub seed: u64,
    pub init: String,
    pub sequences: Vec<SampledSequence>,
}

pub fn sample(config: &RunConfig, surgeon_id: &str, n: usize, seed: u64, trace: bool) -> Result<SampleReport> {
    let out = config.output_dir();
    let cond = config.conditioning()?;
    let tag = run_tag(&cond);
    let (model, _) = load_checked(config, &checkpoint_path(&out, &tag))?;
    let corpus = load_corpus(config, &cond)?;
    if !corpus.manifest.surgeon_ids().iter().any(|s| s == surgeon_id) {
        bail!("unknown surgeon `{surgeon_id}` (known: {})", corpus.manifest.surgeon_ids().join(", "));
    }
    let bundle = corpus.surgeon_bundle(surgeon_id, cond.strategy)?;
    model.surgeon_embedding(&bundle.surgeon)?;
    let schedule = config.schedule()?;
    let init = config.inference_init()?;
    let windows = corpus.surgeon_windows(surgeon_id);
    let mut rng = seeded(seed, streams::SAMPLE);
    let predictor = model.conditioned(&bundle);
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let start = match init {
            InferenceInit::Uniform => ReverseInit::Uniform,
            InferenceInit::QSeeded => ReverseInit::FromClean(&windows[i % windows.len()].tokens),
        };
        let s = reverse_sample(&schedule, &predictor, start, &mut rng)?;
        sequences.push(SampledSequence {
            labels: s.tokens.iter().map(|&t| vocab::label(t, schedule.vocab())).collect(),
            tokens: s.tokens,
            trace: trace.then(|| s.trace.into_iter().map(|(t, tokens)| TraceStep { t, tokens }).collect()),
        });
    }
    let report = SampleReport {
        provenance: Provenance::new("sample", config)?,
        strategy: cond.strategy,
        surgeon_id: surgeon_id.into(),
        seed,
        init: config.get("inference.init").into(),
        sequences,
    };
    write_json(&out.join(format!("samples-{tag}-{surgeon_id}.json")), &report)?;
    Ok(report)
}

// ----------------------------------------------------------------- attack

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFile {
    pub provenance: Provenance,
    pub strategy: SurgeonStrategy,
    pub level: AuditLevel,
    pub nonmember: NonMemberSpec,
    pub null_control: bool,
    #[serde(flatten)]
    pub report: AttackReport,
}

/// Audits every strategy that has a checkpoint in the output directory.
pub fn attack(config: &RunConfig) -> Result<Vec<AttackFile>> {
    let out = config.output_dir();
    let audit = config.audit()?;
    let base = config.conditioning()?;
    let mut files = Vec::new();
    for strategy in SurgeonStrategy::ALL {
        let cond = ConditioningConfig { strategy, ..base.clone() };
        let tag = run_tag(&cond);
        let path = checkpoint_path(&out, &tag);
        if !path.exists() {
            continue;
        }
        let (model, _) = load_checked(config, &path)?;
        let corpus = load_corpus(config, &cond)?;
        let m = &corpus.manifest;
        let train_examples = corpus.examples(Split::Train, strategy)?;
        let heldout_examples = corpus.examples(Split::Test, strategy)?;
        let train_profiles = corpus.profiles(&m.split_surgeons(Split::Train), strategy)?;
        let heldout_profiles = corpus.profiles(&m.split_surgeons(Split::Test), strategy)?;
        let result = run_membership_audit(
            &AuditInputs {
                model: &model,
                train_profiles: &train_profiles,
                train_examples: &train_examples,
                heldout_profiles: &heldout_profiles,
                heldout_examples: &heldout_examples,
            },
            &audit,
        )
        .with_context(|| format!("auditing {tag}"))?;
        let file = AttackFile {
            provenance: Provenance::new("attack", config)?,
            strategy,
            level: result.level,
            nonmember: result.nonmember,
            null_control: result.null_control,
            report: result.report,
        };
        let suffix = if audit.null_control { "-null" } else { "" };
        write_json(&out.join(format!("attack-{tag}{suffix}.json")), &file)?;
        files.push(file);
    }
    if files.is_empty() {
        bail!("no checkpoints in {}; run train first", out.display());
    }
    Ok(files)
}

