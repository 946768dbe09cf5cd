use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latentcf::harness::{self, ExperimentConfig};
use latentcf::metrics::MetricsReport;
use latentcf::Error;

#[derive(Parser)]
#[command(name = "latentcf", version, about = "Relationship-preserving counterfactual explanations")]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted override, e.g. `cf.hidden_size=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the dataset.
    GenData,
    /// Train classifier, VAE and counterfactual engine.
    Train,
    /// Train one engine per grid cell and pick the best on validation.
    GridSearch,
    /// Compare all methods on the test split.
    Evaluate,
    /// Explain one record.
    Explain {
        /// Comma-separated raw feature values.
        #[arg(long, conflicts_with = "record_file")]
        record: Option<String>,
        /// CSV file holding the record (header row first).
        #[arg(long)]
        record_file: Option<PathBuf>,
        /// Zero-based data row within `--record-file`.
        #[arg(long, default_value_t = 0)]
        row: usize,
        /// Requested label; defaults to the flipped prediction.
        #[arg(long)]
        target: Option<u8>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Leave-one-out evaluation.
    LooEvaluate,
}

fn print_reports(reports: &[MetricsReport]) {
    println!(
        "{:<12} {:>9} {:>9} {:>10} {:>12} {:>6}",
        "method", "valid %", "const %", "euclidean", "mahalanobis", "n"
    );
    for r in reports {
        println!(
            "{:<12} {:>9.2} {:>9.2} {:>10.4} {:>12.4} {:>6}",
            r.method_name,
            100.0 * r.validity,
            100.0 * r.constraint_score,
            r.euclidean_mean,
            r.mahalanobis_mean,
            r.n_evaluated
        );
    }
}

fn run(cli: Cli) -> latentcf::Result<()> {
    let mut sets = cli.sets;
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        sets.push(format!("output_dir={}", serde_json::Value::String(out.display().to_string())));
    }
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &sets)?;
    let mut progress = |msg: &str| eprintln!("[latentcf] {msg}");
    let out = cfg.output_dir.display();
    match cli.command {
        Command::GenData => {
            let ds = harness::cmd_gen_data(&cfg)?;
            println!(
                "{} rows ({} train / {} val / {} test{}) written to {out}",
                ds.n_rows(),
                ds.train_indices().len(),
                ds.val_indices().len(),
                ds.test_indices().len(),
                if ds.split().is_leave_one_out() { ", leave-one-out" } else { "" }
            );
        }
        Command::Train => {
            let s = harness::cmd_train(&cfg, &mut progress)?;
            if let Some(a) = s.test_accuracy {
                println!("classifier test accuracy {a:.4}");
            }
            println!("VAE h(A) {:e} (converged: {})", s.vae_final_h, s.vae_converged);
            if let Some(m) = s.vae_test_mse {
                println!("VAE held-out reconstruction MSE {m:.5}");
            }
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!("models written to {out}");
        }
        Command::GridSearch => {
            let g = harness::cmd_grid_search(&cfg, &mut progress)?;
            let b = &g.cells[g.best];
            println!(
                "{} cells; selected hidden {}, lr {}, batch {} (valid {:.2} %, const {:.2} %)",
                g.cells.len(),
                b.hidden_size,
                b.learning_rate,
                b.batch_size,
                100.0 * b.report.validity,
                100.0 * b.report.constraint_score
            );
        }
        Command::Evaluate => {
            let s = harness::cmd_evaluate(&cfg, &mut progress)?;
            print_reports(&s.reports);
        }
        Command::Explain {
            record,
            record_file,
            row,
            target,
            json,
        } => {
            let values = match (record, record_file) {
                (Some(r), _) => r
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Schema(format!("`{v}` is not a number")))
                    })
                    .collect::<latentcf::Result<Vec<_>>>()?,
                (None, Some(p)) => {
                    let ds = harness::load_dataset(&harness::RunPaths::new(&cfg.output_dir))?;
                    harness::read_record(&p, row, ds.n_features())?
                }
                (None, None) => return Err(Error::Config("explain needs --record or --record-file".into())),
            };
            let o = harness::cmd_explain(&cfg, &values, target)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&o)?);
                return Ok(());
            }
            let r = &o.result;
            println!("{:<16} {:>12} {:>14} {:>12}", "feature", "original", "counterfactual", "delta");
            for (j, name) in o.feature_names.iter().enumerate() {
                let (a, b) = (r.original[j], r.counterfactual[j]);
                println!("{name:<16} {a:>12.4} {b:>14.4} {:>+12.4}", b - a);
            }
            println!(
                "label {} -> {} (target {}){}",
                r.original_label,
                r.predicted_cf_label,
                r.target_label,
                if o.no_flip_requested {
                    ", no flip requested"
                } else if r.is_valid() {
                    ", valid"
                } else {
                    ", NOT valid"
                }
            );
        }
        Command::LooEvaluate => {
            let r = harness::cmd_loo_evaluate(&cfg, &mut progress)?;
            println!(
                "{} folds of {} rows, {} skipped",
                r.folds.len(),
                r.n_rows,
                r.skipped.len()
            );
            print_reports(&r.reports);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
