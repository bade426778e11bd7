use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ws2s_harness::config::{ExperimentConfig, TaskKind};
use ws2s_harness::report::RunMeta;
use ws2s_harness::{stages, HarnessError};

#[derive(Parser)]
#[command(
    name = "ws2s",
    about = "Weak-ensemble-to-strong training laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate the three synthetic splits for a task.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the weak-teacher ensemble.
    TrainWeak {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run saved teachers over the student split, emitting weak labels.
    WeakLabels {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer weak per-token probabilities into strong-space soft labels.
    Bridge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Strong generator model (.bin) used for per-step confidences.
        #[arg(long)]
        model: PathBuf,
        /// Plain-text vocabularies, one piece per line (shipped defaults).
        #[arg(long)]
        weak_vocab: Option<PathBuf>,
        #[arg(long)]
        strong_vocab: Option<PathBuf>,
    },
    /// Train the strong ceiling and the student on weak labels.
    TrainStrong {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weak_labels: PathBuf,
        /// Weak model directory (required for joint decoding).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build (chosen, rejected) pairs from student samples.
    Dpopairs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Conservative preference stage over a saved student.
    Dpo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-rank the union of teacher beams per prompt.
    Jointdecode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files and emit an agreement heat-map CSV.
    Eval {
        #[arg(long, value_enum)]
        task: CliTask,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long = "preds", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full multi-seed experiment from a TOML config.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Named ablation grid: soft_label_stages, weight_schemes or beam_sizes.
    Ablation {
        suite: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliTask {
    Classification,
    Slotfill,
}

impl From<CliTask> for TaskKind {
    fn from(t: CliTask) -> Self {
        match t {
            CliTask::Classification => TaskKind::Classification,
            CliTask::Slotfill => TaskKind::Slotfill,
        }
    }
}

fn effective_seed(cli_seed: u64) -> u64 {
    std::env::var("WS2S_SEED")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(cli_seed)
}

fn run(cli: Cli) -> ws2s_harness::Result<()> {
    match cli.command {
        Commands::GenData { config, seed, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_gen_data(&cfg, effective_seed(seed), &out)
        }
        Commands::TrainWeak {
            config,
            seed,
            data,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_train_weak(&cfg, effective_seed(seed), &data, &out)
        }
        Commands::WeakLabels {
            config,
            data,
            models,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_weak_labels(&cfg, &data, &models, &out)
        }
        Commands::Bridge {
            input,
            output,
            model,
            weak_vocab,
            strong_vocab,
        } => stages::stage_bridge(
            &input,
            &output,
            &model,
            weak_vocab.as_deref(),
            strong_vocab.as_deref(),
        ),
        Commands::TrainStrong {
            config,
            seed,
            data,
            weak_labels,
            models,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_train_strong(
                &cfg,
                effective_seed(seed),
                &data,
                &weak_labels,
                models.as_deref(),
                &out,
            )
        }
        Commands::Dpopairs {
            config,
            prompts,
            student,
            models,
            out,
            seed,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_dpopairs(&cfg, &prompts, &student, &models, &out, effective_seed(seed))
        }
        Commands::Dpo {
            config,
            seed,
            data,
            student,
            models,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_dpo(&cfg, effective_seed(seed), &data, &student, &models, &out)
        }
        Commands::Jointdecode {
            config,
            prompts,
            models,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            stages::stage_jointdecode(&cfg, &prompts, &models, &out)
        }
        Commands::Eval {
            task,
            refs,
            preds,
            out,
        } => stages::stage_eval(task.into(), &refs, &preds, &out),
        Commands::Experiment { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let start = Instant::now();
            let report = ws2s_harness::experiment::run_experiment(&cfg, &out)?;
            RunMeta {
                runtime_seconds: start.elapsed().as_secs_f64(),
            }
            .write(&out)?;
            println!(
                "{}: metric {:.4} ± {:.4}, PGR {:.4} ± {:.4}",
                report.name,
                report.metric_mean,
                report.metric_std,
                report.pgr_mean,
                report.pgr_std
            );
            Ok(())
        }
        Commands::Ablation { suite, out } => {
            let start = Instant::now();
            let bundle = ws2s_harness::ablation::ablation_suite(&suite, &out)?;
            RunMeta {
                runtime_seconds: start.elapsed().as_secs_f64(),
            }
            .write(&out)?;
            for row in &bundle.rows {
                println!(
                    "{}: metric {:.4} ± {:.4}, PGR {:.4} ± {:.4}",
                    row.label, row.metric_mean, row.metric_std, row.pgr_mean, row.pgr_std
                );
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(HarnessError::exit_code(&e));
    }
}
