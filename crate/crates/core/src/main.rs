use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oa_complete::config::Variant;
use oa_complete::data::{generate, DataConfig, GenerateOptions, NormMode, Split};
use oa_complete::harness::{
    self, ablate, complete, evaluate, train, AblateOptions, CompleteOptions, HarnessError, TrainConfig, TrainSettings,
};

#[derive(Debug, Parser)]
#[command(name = "oa-complete", version, about = "Point cloud completion: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic partial-view dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        shapes: usize,
        #[arg(long)]
        views: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "ours")]
        norm_mode: NormMode,
        /// JSON data config; defaults to the desk-scale sizes.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        /// JSON training settings (model, batch_size, learning_rate).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a checkpoint on one split and write the per-sample CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train variants A to D and both normalizations; write median tables.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// JSON training settings shared by every run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Complete one cloud file in its own frame.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = CompleteOptions::default().min_points)]
        min_points: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::GenData {
            out,
            shapes,
            views,
            seed,
            norm_mode,
            config,
        } => {
            let config = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => DataConfig::desk(),
            };
            let opts = GenerateOptions {
                shapes,
                views,
                seed,
                norm_mode,
                config,
            };
            let manifest = generate(&out, &opts)?;
            for split in Split::ALL {
                let n = manifest.samples.iter().filter(|s| s.split == split).count();
                println!("{:<15} {n}", split.name());
            }
            println!("wrote {}", out.display());
        }
        Command::Train {
            data,
            out,
            variant,
            epochs,
            seed,
            config,
        } => {
            let settings = match config {
                Some(p) => TrainSettings::from_json_file(&p)?,
                None => TrainSettings::default(),
            };
            let cfg = TrainConfig::with_settings(data, out, variant, epochs, seed, settings);
            let outcome = train(&cfg)?;
            println!("epoch,train_loss,val_cd_x1000");
            for e in &outcome.curve {
                let val = e.val_cd.map(|v| v.to_string()).unwrap_or_default();
                println!("{},{},{val}", e.epoch, e.train_loss);
            }
            println!("run_dir {}", outcome.run_dir.display());
            println!("best {} (epoch {})", outcome.best_checkpoint.display(), outcome.best_epoch);
        }
        Command::Eval { ckpt, data, split, out } => {
            let report = evaluate(&ckpt, &data, split)?;
            report.write_csv(&out)?;
            println!(
                "{} samples  cd_pc {:.4}  cd_ps {:.4}  cd_partial {:.4}  (x1000)  {:.2}s",
                report.rows.len(),
                report.mean_pc,
                report.mean_ps,
                report.mean_partial,
                report.runtime_s
            );
        }
        Command::Ablate {
            data,
            out,
            seeds,
            epochs,
            config,
        } => {
            let mut opts = AblateOptions::new(data, out, seeds);
            opts.epochs = epochs;
            if let Some(p) = config {
                opts.settings = TrainSettings::from_json_file(&p)?;
            }
            let result = ablate(&opts, |r| {
                println!(
                    "{} {} seed {}  views {:.4}  models {:.4}",
                    r.variant, r.norm_mode, r.seed, r.holdout_views_cd, r.holdout_models_cd
                )
            })?;
            print!("{}", result.render());
        }
        Command::Complete {
            ckpt,
            input,
            out,
            min_points,
        } => {
            let n = complete(&ckpt, &input, &out, &CompleteOptions { min_points })?;
            println!("wrote {n} points to {}", out.display());
        }
        Command::Gradcheck { op, trials, seed } => {
            if trials == 0 {
                return Err(HarnessError::InvalidArgs("trials must be positive".into()));
            }
            let reports = harness::gradcheck::run(op.as_deref(), trials, seed)?;
            for r in &reports {
                println!("{}", r.line());
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                for r in reports.iter().filter(|r| !r.passed()) {
                    for f in &r.failures {
                        eprintln!("{}: {f}", r.name);
                    }
                }
                return Err(HarnessError::GradCheckFailed(failed.join(",")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[InvalidArgs]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
