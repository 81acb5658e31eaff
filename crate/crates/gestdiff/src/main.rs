use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gestdiff::commands;
use gestdiff::config::RunConfig;

#[derive(Parser)]
#[command(name = "gestdiff", version, about = "Conditional discrete diffusion over surgical gesture sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a config value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse transcripts, window, split and write the manifest.
    Prepare(Common),
    /// Train the denoiser for `conditioning.strategy`.
    Train(Common),
    /// Teacher-forced metrics, heatmap and embedding export.
    Eval(Common),
    /// Reverse-sample sequences for one surgeon.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        surgeon: String,
        #[arg(short, long, default_value_t = 3)]
        n: usize,
        /// Defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record every intermediate state.
        #[arg(long)]
        trace: bool,
    },
    /// Membership-inference audit of every trained strategy.
    Attack(Common),
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let s = commands::prepare(&load(&c)?)?;
            let m = &s.manifest;
            println!(
                "prepared {} train windows ({} trials) and {} test windows ({} trials) from {} surgeons",
                m.train.windows.len(),
                m.train.trials.len(),
                m.test.windows.len(),
                m.test.trials.len(),
                m.surgeons.len()
            );
            println!("wrote {}", s.path.display());
        }
        Command::Train(c) => {
            let r = commands::train(&load(&c)?)?;
            for (i, l) in r.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}  loss {l:.4}", i + 1);
            }
            println!("trained {} ({} parameters, {} windows)", r.strategy, r.parameter_count, r.n_windows);
        }
        Command::Eval(c) => {
            let r = commands::eval(&load(&c)?)?;
            let m = &r.metrics;
            println!(
                "{} on {}: top1 {:.4}  top5 {:.4}  weighted F1 {:.4}  ({} positions)",
                r.strategy, r.split, m.top1, m.top5, m.weighted_f1, m.n_positions
            );
            if let Some(g) = &r.generative {
                println!("reverse sampling ({}): exact match {:.4}  position accuracy {:.4}", g.init, g.exact_match, g.position_accuracy);
            }
        }
        Command::Sample {
            common,
            surgeon,
            n,
            seed,
            trace,
        } => {
            let config = load(&common)?;
            let seed = match seed {
                Some(s) => s,
                None => config.seed()?,
            };
            let r = commands::sample(&config, &surgeon, n, seed, trace)?;
            for s in &r.sequences {
                println!("{}", s.labels.join(" "));
            }
        }
        Command::Attack(c) => {
            for f in commands::attack(&load(&c)?)? {
                let r = &f.report;
                println!(
                    "{}: accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  auc {:.4}",
                    f.strategy, r.accuracy, r.precision, r.recall, r.f1, r.auc
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
