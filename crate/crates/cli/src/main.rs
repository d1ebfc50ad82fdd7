//! `htr` — train, evaluate, and poke the handwriting recognizer.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

use clap::{Args, Parser, Subcommand};
use htr_core::dataset::{synth_generate, SynthConfig};
use htr_core::gradcheck;
use htr_core::train::{
    ablate, decode_image, evaluate_checkpoint, lr_schedule, train_resume, Preset, RunConfig,
};
use htr_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "htr", version, about = "Convolutional-recurrent handwriting recognition with CTC training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dot-matrix corpus (images + manifest).
    Synth(SynthArgs),
    /// Train a recognizer from a JSON config and a manifest.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint (greedy decoding, CER/WER).
    Eval(EvalArgs),
    /// Decode a single PGM image to text.
    Decode(DecodeArgs),
    /// Run the 2x2x2 ablation grid and emit ablation.csv.
    Ablate(TrainArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for images/, manifest.jsonl, synthconfig.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of line images to generate.
    #[arg(long, default_value_t = 32)]
    count: usize,
    /// Words per line, as "min:max".
    #[arg(long, default_value = "1:2")]
    words: String,
    /// Per-glyph affine jitter magnitude in [0,1].
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config document ({"train": {...}, "network": {...}}).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest (overrides the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Validation manifest (overrides the config).
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Canvas/architecture preset: line, word, or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// Resume training from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the per-sample decodings here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Binary PGM image to decode.
    image: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = gradcheck::DEFAULT_SEEDS)]
    seeds: usize,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run() -> htr_core::Result<ExitCode> {
    match Cli::parse().command {
        Command::Synth(args) => {
            let (lo, hi) = parse_range(&args.words)?;
            let cfg = SynthConfig {
                words_per_line: (lo, hi),
                glyph_jitter: args.jitter,
                corpus_size: args.count,
                seed: args.seed,
                ..SynthConfig::default()
            };
            let manifest = synth_generate(&cfg, &args.out)?;
            println!("wrote {} samples, manifest at {}", args.count, manifest.display());
        }
        Command::Train(args) => {
            let (cfg, net_cfg) = resolve_config(&args)?;
            let outcome = train_resume(&cfg, &net_cfg, &args.out, args.checkpoint.as_deref())?;
            if outcome.skipped_samples > 0 {
                eprintln!("skipped {} unsatisfiable samples", outcome.skipped_samples);
            }
            for row in outcome.metrics.rows().iter().rev().take(2) {
                println!(
                    "epoch {} [{}]: loss {:.4} cer {:.2}% wer {:.2}% (lr {})",
                    row.epoch, row.split, row.loss_main, row.cer, row.wer, row.lr
                );
            }
            println!("last checkpoint: {}", outcome.last_checkpoint.display());
            println!("best checkpoint: {}", outcome.best_checkpoint.display());
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Command::Eval(args) => {
            let (report, hyps) = evaluate_checkpoint(&args.checkpoint, &args.manifest)?;
            println!("samples: {}", report.per_sample.len());
            println!("CER: {:.4}%", report.cer);
            println!("WER: {:.4}%", report.wer);
            if let Some(out) = args.out {
                let body: String =
                    hyps.iter().map(|h| format!("{h}\n")).collect();
                std::fs::write(&out, body).map_err(|e| Error::io(&out, e))?;
                println!("decodings: {}", out.display());
            }
        }
        Command::Decode(args) => {
            let text = decode_image(&args.checkpoint, &args.image)?;
            println!("{text}");
        }
        Command::Ablate(args) => {
            let (cfg, net_cfg) = resolve_config(&args)?;
            let cells = ablate(&cfg, &net_cfg, &args.out)?;
            println!("{}", htr_core::train::ABLATION_HEADER);
            for c in &cells {
                println!(
                    "{},{},{},{:.2},{:.2},{},{}",
                    match c.pad_mode {
                        htr_core::preprocess::PadMode::Pad => "padded",
                        htr_core::preprocess::PadMode::Stretch => "resized",
                    },
                    c.flatten,
                    if c.shortcut { "yes" } else { "no" },
                    c.train_cer,
                    c.train_wer,
                    c.val_cer.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    c.val_wer.map(|v| format!("{v:.2}")).unwrap_or_default(),
                );
            }
            println!("table: {}", args.out.join("ablation.csv").display());
        }
        Command::Gradcheck(args) => {
            let reports = gradcheck::run_all(args.seeds);
            let mut all_pass = true;
            for r in &reports {
                all_pass &= r.passed();
                println!(
                    "[{}] {:<16} seeds {:>3}  max rel err {:.3e}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.op,
                    r.seeds,
                    r.max_rel_err
                );
            }
            if !all_pass {
                return Err(Error::numeric("gradient check failed"));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn resolve_config(args: &TrainArgs) -> htr_core::Result<(htr_core::train::TrainConfig, htr_core::network::NetworkConfig)> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.manifest {
        run.train.train_manifest = Some(m.clone());
    }
    if let Some(m) = &args.val_manifest {
        run.train.val_manifest = Some(m.clone());
    }
    if let Some(s) = args.seed {
        run.train.seed = s;
    }
    if let Some(p) = &args.preset {
        run.train.preset = p.parse::<Preset>()?;
        // a preset on the command line overrides an explicit network section
        run.network = None;
    }
    let (cfg, net) = run.resolve()?;
    // surface the resolved schedule up front
    eprintln!(
        "schedule: {} epochs, lr {} with milestones {:?}",
        cfg.total_epochs,
        lr_schedule(0, &cfg),
        cfg.milestones
    );
    Ok((cfg, net))
}

fn parse_range(s: &str) -> htr_core::Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = || Error::config(format!("bad range '{s}', want min:max"));
    match parts.as_slice() {
        [a, b] => {
            let lo = a.parse().map_err(|_| err())?;
            let hi = b.parse().map_err(|_| err())?;
            if lo == 0 || lo > hi {
                return Err(err());
            }
            Ok((lo, hi))
        }
        [a] => {
            let v = a.parse().map_err(|_| err())?;
            Ok((v, v))
        }
        _ => Err(err()),
    }
}
