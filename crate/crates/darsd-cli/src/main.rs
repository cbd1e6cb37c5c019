use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use darsd::train::TrainSinks;
use darsd::{
    evaluate, generate_synthetic_pair, load_dataset, run_ablation, save_dataset, train_full,
    train_source_only, Model, PartitionMode, RunConfig, ScheduleMode,
};

#[derive(Parser)]
#[command(name = "darsd", about = "Domain-adaptive time-series training engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Quantile,
    Threshold,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Linear,
    Stepwise,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence partitioning mode override.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Curriculum schedule override.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.partition_mode = match mode {
                ModeArg::Quantile => PartitionMode::Quantile,
                ModeArg::Threshold => PartitionMode::Threshold,
            };
        }
        if let Some(schedule) = self.schedule {
            cfg.schedule = match schedule {
                ScheduleArg::Linear => ScheduleMode::Linear,
                ScheduleArg::Stepwise => ScheduleMode::Stepwise,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset pair.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory; receives source/ and target/ subdirectories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both training stages and write metrics plus a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for metrics.jsonl and model.ckpt.
        #[arg(long)]
        out: PathBuf,
        /// Source dataset directory (generated from config when omitted).
        #[arg(long)]
        source: Option<PathBuf>,
        /// Target dataset directory (generated from config when omitted).
        #[arg(long)]
        target: Option<PathBuf>,
        /// Also write pseudo_labels.csv with per-step assignment audits.
        #[arg(long)]
        dump_pseudo_labels: bool,
        /// Train the no-adaptation source-only baseline instead.
        #[arg(long)]
        source_only: bool,
    },
    /// Score a checkpoint against a labeled dataset.
    Eval {
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the five-row component ablation on synthetic data.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional directory for ablation.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        /// Seed for the random probe batches.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact-recovery check for invariant-subspace extraction.
    Oracle {
        /// Seed for the random frames.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trials per (d, m) configuration.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { common, out } => {
            let cfg = common.load()?;
            let (source, target) = generate_synthetic_pair(&cfg.shift(cfg.seed));
            save_dataset(&source, &out.join("source"))?;
            save_dataset(&target, &out.join("target"))?;
            println!(
                "wrote {} source and {} target samples under {}",
                source.len(),
                target.len(),
                out.display()
            );
        }
        Command::Train {
            common,
            out,
            source,
            target,
            dump_pseudo_labels,
            source_only,
        } => {
            let cfg = common.load()?;
            let (src, trg) = match (source, target) {
                (Some(s), Some(t)) => (load_dataset(&s)?, load_dataset(&t)?),
                (None, None) => generate_synthetic_pair(&cfg.shift(cfg.seed)),
                _ => bail!("--source and --target must be given together"),
            };
            std::fs::create_dir_all(&out)?;
            let ckpt = out.join("model.ckpt");
            if source_only {
                let model = train_source_only(&cfg, &src)?;
                model.save(&ckpt)?;
                println!("baseline checkpoint written to {}", ckpt.display());
                return Ok(());
            }
            let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
            let mut pseudo = if dump_pseudo_labels {
                let mut f = BufWriter::new(File::create(out.join("pseudo_labels.csv"))?);
                writeln!(f, "step,index,pseudo_label,sigma,confident")?;
                Some(f)
            } else {
                None
            };
            let sinks = TrainSinks {
                metrics: Some(&mut metrics),
                pseudo_labels: pseudo.as_mut().map(|f| f as &mut dyn Write),
                checkpoint: Some(&ckpt),
            };
            let result = train_full(&cfg, &src, &trg, sinks)?;
            metrics.flush()?;
            if let Some(mut f) = pseudo {
                f.flush()?;
            }
            result.trainer.model.save(&ckpt)?;
            let last = result.metrics.last().unwrap();
            println!(
                "done: {} epochs, final l_total {:.4}, checkpoint {}",
                result.metrics.len(),
                last.l_total,
                ckpt.display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let report = evaluate(&model, &ds)?;
            println!(
                "{{\"macro_f1\":{},\"accuracy\":{},\"per_class_f1\":{:?}}}",
                report.macro_f1, report.accuracy, report.per_class_f1
            );
        }
        Command::Ablate { common, out } => {
            let cfg = common.load()?;
            let rows = run_ablation(&cfg, cfg.seed)?;
            let mut sink = match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    Some(BufWriter::new(File::create(dir.join("ablation.jsonl"))?))
                }
                None => None,
            };
            println!("{:<20} {:>9} {:>9} {:>7}", "variant", "macro_f1", "accuracy", "wiring");
            for row in &rows {
                println!(
                    "{:<20} {:>9.4} {:>9.4} {:>7}",
                    row.name,
                    row.macro_f1,
                    row.accuracy,
                    if row.wiring_ok { "ok" } else { "BAD" }
                );
                if let Some(w) = sink.as_mut() {
                    writeln!(
                        w,
                        "{{\"variant\":\"{}\",\"macro_f1\":{},\"accuracy\":{},\"wiring_ok\":{}}}",
                        row.name, row.macro_f1, row.accuracy, row.wiring_ok
                    )?;
                }
            }
        }
        Command::Gradcheck { seed } => {
            let mut worst: f64 = 0.0;
            for (name, err) in darsd::gradcheck::standard_suite(seed)? {
                println!("{name:<24} max relative error {err:.3e}");
                worst = worst.max(err);
            }
            println!("worst case {worst:.3e} (tolerance 1e-4)");
            if worst >= 1e-4 {
                bail!("gradient check failed");
            }
        }
        Command::Oracle { seed, trials } => {
            let mut worst: f64 = 0.0;
            for (d, m) in [(16, 4), (32, 8), (128, 24)] {
                let err = darsd::lcib::oracle_subspace_extraction(d, m, trials, seed)?;
                println!("d={d:<4} m={m:<3} max recovery error {err:.3e}");
                worst = worst.max(err);
            }
            println!("worst case {worst:.3e} (tolerance 1e-10)");
            if worst >= 1e-10 {
                bail!("subspace recovery check failed");
            }
        }
    }
    Ok(())
}
