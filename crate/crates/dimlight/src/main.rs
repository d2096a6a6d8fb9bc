use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dimlight::checkpoint::Checkpoint;
use dimlight::config::RunConfig;
use dimlight::eval::{enhance_batch, evaluate_with, CommandScorer, PairScorer};
use dimlight::io::load_pair_dataset;
use dimlight::pipeline::{pretrain_to_dir, run_ablation, train};
use dimlight::{Error, Result};
use dimlight_core::loss::Variant;

#[derive(Parser)]
#[command(name = "dimlight", version, about = "Low-light image enhancement: pretraining, training, ablation, inference and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set train.seed=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Contrastive pretraining of the illumination encoder.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Supervised training of the full model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Train and score several objective variants under one seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "M0,M1,M2,M3")]
        variants: Vec<Variant>,
    },
    /// Enhance every image in a directory.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Score predictions against references and write a CSV report.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// External scorer invoked as `<cmd> <pred> <ref>`, reported as `lpips`.
        #[arg(long)]
        lpips_cmd: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Pretrain { cfg } => {
            let cfg = RunConfig::load(&cfg.config, &cfg.sets)?;
            let pairs = load_pair_dataset(&cfg.data.root, &cfg.data.train_split)?;
            let (outcome, path) = pretrain_to_dir(&pairs, &cfg, &cfg.output.dir)?;
            let last = outcome.curve.last().map_or(f64::NAN, |p| p.loss);
            println!("pretrained {} steps, final loss {last:.4}, wrote {}", outcome.curve.len(), path.display());
        }
        Cmd::Train { cfg, variant } => {
            let mut cfg = RunConfig::load(&cfg.config, &cfg.sets)?;
            if let Some(v) = variant {
                cfg.train.variant = v.to_string();
            }
            let variant = cfg.variant()?;
            let pairs = load_pair_dataset(&cfg.data.root, &cfg.data.train_split)?;
            let val = match &cfg.data.val_split {
                Some(s) => load_pair_dataset(&cfg.data.root, s)?,
                None => Vec::new(),
            };
            let pretrained = cfg.train.pretrained.as_deref().map(Checkpoint::load).transpose()?;
            let run = train(&pairs, &val, &cfg, variant, pretrained.as_ref(), Some(&cfg.output.dir))?;
            let best = run.best_psnr.map_or("n/a".to_string(), |p| format!("{p:.3}"));
            println!("trained {variant} for {} steps, best val psnr {best}", run.log.len());
        }
        Cmd::Ablate { cfg, variants } => {
            let cfg = RunConfig::load(&cfg.config, &cfg.sets)?;
            let pairs = load_pair_dataset(&cfg.data.root, &cfg.data.train_split)?;
            let test = load_pair_dataset(&cfg.data.root, &cfg.data.test_split)?;
            let pretrained = cfg.train.pretrained.as_deref().map(Checkpoint::load).transpose()?;
            let report = run_ablation(&pairs, &test, &cfg, &variants, pretrained.as_ref(), Some(&cfg.output.dir))?;
            print!("{}", report.to_csv());
        }
        Cmd::Enhance { ckpt, input, output } => {
            let n = enhance_batch(&input, &ckpt, &output)?;
            println!("wrote {n} images to {}", output.display());
        }
        Cmd::Evaluate {
            pred,
            reference,
            out,
            lpips_cmd,
        } => {
            let scorer = lpips_cmd.map(|program| CommandScorer {
                name: "lpips".into(),
                program,
                args: Vec::new(),
            });
            let scorers: Vec<&dyn PairScorer> = scorer.iter().map(|s| s as &dyn PairScorer).collect();
            let ev = evaluate_with(&pred, &reference, &scorers)?;
            ev.write_csv(&out)?;
            println!("{} images, mean psnr {:.3}, mean ssim {:.4}", ev.records.len(), ev.mean_psnr, ev.mean_ssim);
        }
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let s_text = s.to_string();
        if !msg.contains(&s_text) {
            msg.push_str(": ");
            msg.push_str(&s_text);
        }
        src = s.source();
    }
    serde_json::json!({ "error": e.kind(), "message": msg.replace('\n', " ") }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
