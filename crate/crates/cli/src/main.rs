//! `rfq`: synthesize a corpus, train the restoration networks, score images
//! and evaluate the scores against verification accuracy.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rfq::pipeline::{self, RunConfig, OUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "rfq", version, about = "Restoration-based face image quality")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides both the configuration and $RFQ_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (anchors, degraded variants, manifest).
    Synth,
    /// Run both training stages and write checkpoints and the loss log.
    Train,
    /// Score images (all manifest images when none are given).
    Score { images: Vec<PathBuf> },
    /// Error-versus-reject curves for every quality measure plus PERFECT.
    Erc {
        #[command(flatten)]
        inputs: EvalInputs,
        /// Overlay an external per-image score file, as NAME=PATH.
        #[arg(long = "extra-scores", value_parser = parse_extra)]
        extra: Vec<(String, PathBuf)>,
    },
    /// DET curves per quality bin and for all pairs.
    Det {
        #[command(flatten)]
        inputs: EvalInputs,
    },
}

#[derive(clap::Args, Debug)]
struct EvalInputs {
    /// Score CSV; defaults to the run's scores/scores.csv.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Similarity CSV (id_a,id_b,mated,similarity); computed with the
    /// default comparator when omitted.
    #[arg(long)]
    similarities: Option<PathBuf>,
}

fn parse_extra(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.set_out_dir(std::path::absolute(out)?);
    } else if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        cfg.set_out_dir(std::path::absolute(PathBuf::from(env))?);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth => {
            let s = pipeline::cmd_synth(&cfg)?;
            println!(
                "wrote {} subjects, {} images; manifest {}",
                s.manifest.subjects.len(),
                s.manifest.num_images(),
                s.manifest_path.display()
            );
            if !s.nonmated_usable {
                println!("warning: a single subject cannot form non-mated pairs; usable for training only");
            }
        }
        Command::Train => {
            let t = pipeline::cmd_train(&cfg)?;
            let last = |name: &str| t.log.series(name).last().copied().unwrap_or(f64::NAN);
            println!(
                "trained: final ssim_loss {:.4}, d_loss {:.4}, g_loss {:.4}; checkpoints {} and {}",
                last("ssim_loss"),
                last("d_loss"),
                last("g_loss"),
                cfg.generator_path().display(),
                cfg.discriminator_path().display()
            );
        }
        Command::Score { images } => {
            let rows = pipeline::cmd_score(&cfg, images)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "scored {} images ({failed} unreadable) into {}",
                rows.len() - failed,
                cfg.scores_path().display()
            );
            if failed == rows.len() && !rows.is_empty() {
                bail!("no image could be scored");
            }
        }
        Command::Erc { inputs, extra } => {
            let r = pipeline::cmd_erc(&cfg, inputs.scores.as_deref(), inputs.similarities.as_deref(), extra)?;
            println!(
                "threshold {:.6} (FNMR {:.4}); ERC curves written to {}",
                r.calibration.threshold,
                r.calibration.achieved_fnmr,
                cfg.out_dir().join("erc").display()
            );
            for (name, c) in &r.curves {
                let at = |f: f64| {
                    c.fractions
                        .iter()
                        .position(|x| (x - f).abs() < 1e-9)
                        .map_or(String::from("-"), |i| format!("{:.4}", c.fnmr[i]))
                };
                println!("  {name:<10} r=0: {}  r=0.2: {}", at(0.0), at(0.2));
            }
        }
        Command::Det { inputs } => {
            let r = pipeline::cmd_det(&cfg, inputs.scores.as_deref(), inputs.similarities.as_deref())?;
            println!("DET curves written to {}", cfg.out_dir().join("det").display());
            for (name, e) in &r.eers {
                println!("  {name:<7} EER {e:.4}");
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
