use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hinet::datagen::{generate, read_dataset, write_dataset};
use hinet::error::StageExt;
use hinet::experiment::{ablation_suite, export_attention, prepare_data, run, sweep, ExperimentConfig, SweepAxis};
use hinet::metrics::{evaluate, RunMeta};
use hinet::models::{ModelSpec, Variant};
use hinet::trainer::load_model;
use hinet::{Error, Result};

/// Multi-scenario, multi-task CTR/CTCVR experiments.
#[derive(Parser)]
#[command(name = "hinet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overrides the number of parallel runs.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config, a starting point for new config files.
    Config(Common),
    /// Generate the synthetic dataset as `dataset.tsv` (the seed sets the generator seed).
    Generate(Common),
    /// Train and evaluate one model; writes reports, logs and `model.ckpt`.
    Train(Common),
    /// Evaluate a checkpoint on the test split of the configured data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every variant over several seeds and rank them with the Friedman test.
    Ablation {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config `repeats`.
        #[arg(long)]
        repeats: Option<usize>,
        /// Comma-separated variants; all six by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Train one model per capacity value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `sub_experts` or `cgc_experts`.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; the axis defaults when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Export the scenario attention matrix of a trained HiNet as `attention.csv`.
    ///
    /// The weights depend only on the scenario embeddings, so `--probe` is
    /// accepted for symmetry with other tools but only checked for readability.
    Attention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long, short, default_value = ".")]
        output: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn variant_label(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Hinet(h) => Variant::ALL
            .iter()
            .find(|v| v.switches() == h.switches)
            .map_or("hinet", |v| v.name())
            .to_string(),
        other => other.kind().name().to_string(),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Config(common) => {
            print!("{}", resolve(&common).stage("config")?.to_toml());
        }
        Command::Generate(common) => {
            let cfg = resolve(&common).stage("config")?;
            let mut g = cfg
                .data
                .generator
                .clone()
                .ok_or_else(|| Error::Config("config has no generator section".into()))
                .stage("config")?;
            if let Some(seed) = common.seed {
                g.seed = seed;
            }
            let records = generate(&g).stage("data")?;
            std::fs::create_dir_all(&cfg.output_dir).stage("output")?;
            write_dataset(&records, &cfg.output_dir.join("dataset.tsv")).stage("output")?;
            std::fs::write(cfg.output_dir.join("generator.toml"), g.to_toml()).stage("output")?;
            println!("wrote {} records to {}", records.len(), cfg.output_dir.join("dataset.tsv").display());
        }
        Command::Train(common) => {
            let cfg = resolve(&common).stage("config")?;
            let out = run(&cfg)?;
            println!(
                "trained {} epochs (best {:?}); mean test AUC {}",
                out.log.epochs.len(),
                out.log.best_epoch,
                out.report.mean_auc().map_or("NA".into(), |a| format!("{a:.4}"))
            );
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = resolve(&common).stage("config")?;
            let model = load_model(&checkpoint).stage("load")?;
            let data = prepare_data(&cfg).stage("data")?;
            let meta = RunMeta {
                seed: cfg.seed,
                variant: variant_label(model.spec()),
                config_hash: cfg.hash(),
            };
            let report = evaluate(&model, &data.test, meta).stage("evaluate")?;
            std::fs::create_dir_all(&cfg.output_dir).stage("output")?;
            report.write(&cfg.output_dir, "report").stage("output")?;
            print!("{}", report.to_csv());
        }
        Command::Ablation {
            common,
            repeats,
            variants,
        } => {
            let cfg = resolve(&common).stage("config")?;
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let out = ablation_suite(&cfg, &variants, repeats.unwrap_or(cfg.repeats))?;
            println!("Friedman statistic on mean AUC: {:.4}", out.mean_auc_friedman.statistic);
            for (v, r) in out.variants.iter().zip(&out.mean_auc_friedman.mean_ranks) {
                println!("  {v:<16} mean rank {r:.2}");
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            repeats,
        } => {
            let cfg = resolve(&common).stage("config")?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let rows = sweep(&cfg, axis, &values, repeats)?;
            print!("{}", hinet::experiment::sweep_csv(axis, &rows));
        }
        Command::Attention {
            checkpoint,
            probe,
            output,
        } => {
            let model = load_model(&checkpoint).stage("load")?;
            if let Some(p) = probe {
                read_dataset(&p).stage("data")?;
            }
            let map = export_attention(&model).stage("attention")?;
            std::fs::create_dir_all(&output).stage("output")?;
            std::fs::write(output.join("attention.csv"), map.to_csv()).stage("output")?;
            print!("{}", map.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
