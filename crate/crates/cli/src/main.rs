use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bendflow::dataset::{generate_dataset, Split};
use bendflow::io::write_fbs1;
use bendflow::nn::loss::masked_rmse;
use bendflow::nn::train::{predict_fields, write_loss_csv};
use bendflow_cli::ablation::{run_ablation, write_ablation_csv};
use bendflow_cli::bench::{run_benchmark, write_timing_csv};
use bendflow_cli::evaluate::{evaluate_test, write_scores_csv};
use bendflow_cli::maps::write_error_maps;
use bendflow_cli::{open_dataset, read_checkpoint, train_on, write_checkpoint, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "bendflow", version, about = "U-bend flow dataset generation and CNN surrogate")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample geometries, solve them and write the dataset.
    Generate,
    /// Train one model and write its checkpoint and loss history.
    Train,
    /// Train the five comparison variants and tabulate test RMSE.
    Ablate,
    /// Predict one stored sample.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        id: usize,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time surrogate inference against the solver.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write truth / prediction / difference images for test samples.
    Maps {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
    /// Small grid search over learning rate and bottleneck width.
    Search,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_path(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out_dir.join("model.fbnn"))
}

fn create(path: PathBuf) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let name = match &cli.command {
        Command::Generate => "generate",
        Command::Train => "train",
        Command::Ablate => "ablate",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::Bench { .. } => "bench",
        Command::Maps { .. } => "maps",
        Command::Search => "search",
    };
    fs::write(cfg.out_dir.join(format!("run-{name}.txt")), cfg.to_text())?;

    match cli.command {
        Command::Generate => {
            let m = generate_dataset(&cfg.data_dir, &cfg.generation)?;
            println!(
                "wrote {} samples to {} ({} solves replaced)",
                m.records.len(),
                cfg.data_dir.display(),
                m.failures
            );
        }
        Command::Train => {
            let ds = open_dataset(&cfg)?;
            let out = train_on(&ds, &cfg)?;
            write_checkpoint(&cfg.out_dir.join("model.fbnn"), &out.model)?;
            write_loss_csv(create(cfg.out_dir.join("loss.csv"))?, &out.history)?;
            match (out.best_epoch, out.best_epoch.and_then(|e| out.history.get(e))) {
                (Some(e), Some(h)) => println!("best epoch {e}: val loss {:.5}, val rmse {:.4} m/s", h.val_loss, h.val_rmse_mps),
                _ => println!("no epochs run; wrote initial weights"),
            }
        }
        Command::Ablate => {
            let ds = open_dataset(&cfg)?;
            let rows = run_ablation(&ds, &cfg)?;
            write_ablation_csv(create(cfg.out_dir.join("ablation.csv"))?, &rows)?;
            println!("{:<14} {:>14} {:>14}", "variant", "measured m/s", "published m/s");
            for r in &rows {
                let measured = r.test_rmse_mps.as_ref().map_or_else(|e| format!("failed: {e}"), |x| format!("{x:.4}"));
                println!("{:<14} {:>14} {:>14}", r.variant.label(), measured, r.variant.published_rmse);
            }
        }
        Command::Predict { checkpoint, id } => {
            let ds = open_dataset(&cfg)?;
            let model = read_checkpoint(&checkpoint_path(&cfg, &checkpoint))?;
            let sample = ds.read_sample(id)?;
            let (px, py) = predict_fields(&model, &[&sample], &ds.manifest.stats)?.remove(0);
            write_fbs1(create(cfg.out_dir.join(format!("predict_{id}_vx.fbs")))?, &px)?;
            write_fbs1(create(cfg.out_dir.join(format!("predict_{id}_vy.fbs")))?, &py)?;
            let r = masked_rmse(&px.values, &py.values, &sample.vx.values, &sample.vy.values, &sample.mask.values);
            println!("sample {id} ({}): rmse {r:.4} m/s", sample.split);
        }
        Command::Evaluate { checkpoint } => {
            let ds = open_dataset(&cfg)?;
            let model = read_checkpoint(&checkpoint_path(&cfg, &checkpoint))?;
            let rep = evaluate_test(&ds, &model)?;
            write_scores_csv(create(cfg.out_dir.join("evaluation.csv"))?, &rep)?;
            println!(
                "test rmse {:.4} m/s ({:.2}% of mean speed {:.3} m/s)",
                rep.mean_rmse_mps,
                100.0 * rep.mean_rmse_mps / rep.mean_speed_mps,
                rep.mean_speed_mps
            );
            println!(
                "restricted region: {:.4} m/s over {} samples; elsewhere {:.4} m/s over {}",
                rep.restricted_rmse_mps, rep.restricted_count, rep.other_rmse_mps, rep.other_count
            );
        }
        Command::Bench { checkpoint } => {
            let ds = open_dataset(&cfg)?;
            let model = read_checkpoint(&checkpoint_path(&cfg, &checkpoint))?;
            let rep = run_benchmark(&ds, &model, cfg.bench_k)?;
            write_timing_csv(create(cfg.out_dir.join("timing.csv"))?, &rep.rows)?;
            for r in &rep.rows {
                println!("{:<32} {:>5} evals {:>12.4} s {:>10.5} s/eval", r.label, r.evaluations, r.wall_time_s, r.per_eval_s);
            }
            println!("speed-up: {:.1}x batched, {:.1}x unbatched", rep.speedup_batched, rep.speedup_unbatched);
        }
        Command::Maps { checkpoint, limit } => {
            let ds = open_dataset(&cfg)?;
            let model = read_checkpoint(&checkpoint_path(&cfg, &checkpoint))?;
            let test: Vec<_> = ds.load_split(Split::Test)?.into_iter().take(limit).collect();
            let refs: Vec<_> = test.iter().collect();
            let preds = predict_fields(&model, &refs, &ds.manifest.stats)?;
            let dir = cfg.out_dir.join("maps");
            for (s, p) in test.iter().zip(&preds) {
                write_error_maps(&dir, s, p)?;
            }
            println!("wrote {} triptychs to {}", 3 * test.len(), dir.display());
        }
        Command::Search => {
            let ds = open_dataset(&cfg)?;
            let mut w = create(cfg.out_dir.join("search.csv"))?;
            use std::io::Write;
            writeln!(w, "learning_rate,bottleneck,best_val_rmse_mps")?;
            for lr in [3e-4, 1e-3] {
                for bottleneck in [256, 1024] {
                    let mut c = cfg.clone();
                    c.train.learning_rate = lr;
                    c.model.bottleneck = bottleneck;
                    let out = train_on(&ds, &c)?;
                    let best = out.best_epoch.and_then(|e| out.history.get(e)).map_or(f64::NAN, |h| h.val_rmse_mps);
                    writeln!(w, "{lr},{bottleneck},{best:.6}")?;
                    println!("lr {lr:e} bottleneck {bottleneck}: val rmse {best:.4} m/s");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
