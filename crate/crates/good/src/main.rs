use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use good::config::RunConfig;
use good::error::{Error, Result};
use good::eval::{
    accuracy, config_hash, evaluate_checkpoint, read_report, roc_auc, summary_table, ReportRow,
    RunRecord,
};
use good::graph::{load_dataset, rolling_splits, SplitSpec};
use good::harness::{model_gradcheck, GRADCHECK_EPS};
use good::mixagg::MixingCoefficients;
use good::objective::Variant;
use good::synth::{generate, write_dataset};
use good::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainResult};

#[derive(Parser)]
#[command(name = "good", version, about = "Multi-relational GNN for out-of-domain link prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset into a directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a dataset; writes checkpoint, per-epoch JSONL, and
    /// the effective config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the dataset's test window.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON array of learned mixing coefficients (from a good_lc run),
        /// applied instead of the checkpoint's inference coefficients.
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Verify analytic gradients of every model composite against central
    /// finite differences.
    Gradcheck,
    /// Aggregate metrics JSONL files into a summary table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Optional per-run CSV export path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate { config, out } => cmd_generate(&config, &out),
        Cmd::Train { config, data, out } => cmd_train(&config, &data, &out),
        Cmd::Evaluate { checkpoint, data, coefficients } => {
            cmd_evaluate(&checkpoint, &data, coefficients.as_deref())
        }
        Cmd::Gradcheck => cmd_gradcheck(),
        Cmd::Report { runs, csv } => cmd_report(&runs, csv.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_generate(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    ensure_dir(out)?;
    let (graph, _truth) = generate(&cfg.synth)?;
    write_dataset(&graph, &cfg.synth, out)?;
    cfg.save(&out.join("config.txt"))?;
    println!("{}", out.join("manifest.json").display());
    Ok(())
}

fn load_coefficients(path: &Path) -> Result<Vec<f64>> {
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let coeffs: Vec<f64> = serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("{display}: expected a JSON array of numbers: {e}")))?;
    MixingCoefficients::new(coeffs.clone())?;
    Ok(coeffs)
}

/// GOOD_LC+ decouples weight learning from coefficient learning: train GOOD
/// weights here and attach the companion run's learned coefficients.
fn train_with_companion(
    graph: &good::graph::MultiRelGraph,
    splits: &SplitSpec,
    cfg: &RunConfig,
) -> Result<TrainResult> {
    let path = cfg.coefficients_path.as_ref().ok_or_else(|| {
        Error::Config(
            "variant good_lc_plus needs coefficients_path pointing at a \
             coefficients.json from a good_lc run"
                .into(),
        )
    })?;
    let coeffs = load_coefficients(Path::new(path))?;
    if coeffs.len() != graph.meta.num_known_contexts {
        return Err(Error::Incompatible(format!(
            "{} coefficients for {} known contexts",
            coeffs.len(),
            graph.meta.num_known_contexts
        )));
    }
    let mut good_cfg = cfg.train.clone();
    good_cfg.variant = Variant::Good;
    let mut result = train(graph, splits, &good_cfg)?;
    result.checkpoint.config.variant = Variant::GoodLcPlus;
    result.checkpoint.coefficients = coeffs;
    Ok(result)
}

fn test_metrics(
    ckpt: &Checkpoint,
    graph: &good::graph::MultiRelGraph,
    splits: &SplitSpec,
    coefficients_override: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let test = good::eval::test_batches(graph, &splits.test, ckpt.config.seed)?;
    evaluate_checkpoint(ckpt, graph, &splits.test, &test, coefficients_override)
}

fn cmd_train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let graph = load_dataset(data, None)?;
    let splits = rolling_splits(graph.meta.num_steps, cfg.train.window)?;
    ensure_dir(out)?;
    cfg.save(&out.join("config.txt"))?;

    let result = if cfg.train.variant == Variant::GoodLcPlus {
        train_with_companion(&graph, &splits, &cfg)?
    } else {
        train(&graph, &splits, &cfg.train)?
    };

    let ckpt_path = out.join("checkpoint.good");
    save_checkpoint(&result.checkpoint, &ckpt_path)?;

    let mut epochs = String::new();
    for m in &result.metrics {
        epochs.push_str(
            &serde_json::to_string(m).map_err(|e| Error::Argument(format!("metrics: {e}")))?,
        );
        epochs.push('\n');
    }
    write_text(&out.join("epochs.jsonl"), &epochs)?;
    write_text(
        &out.join("coefficients.json"),
        &serde_json::to_string(&result.checkpoint.coefficients)
            .map_err(|e| Error::Argument(format!("coefficients: {e}")))?,
    )?;

    let (scores, labels) = test_metrics(&result.checkpoint, &graph, &splits, None)?;
    let test_acc = accuracy(&scores, &labels, 0.5)?;
    let test_auc = roc_auc(&scores, &labels)?;
    let summary = serde_json::json!({
        "variant": result.checkpoint.config.variant.name(),
        "epochs_ran": result.checkpoint.epoch,
        "best_epoch": result.checkpoint.best_epoch,
        "best_val_roc_auc": result.checkpoint.best_val_auc,
        "test_accuracy": test_acc,
        "test_roc_auc": test_auc,
    });
    write_text(&out.join("metrics.json"), &summary.to_string())?;
    println!("checkpoint: {}", ckpt_path.display());
    println!(
        "epochs {} | best epoch {} val roc-auc {:.4} | test accuracy {:.4} roc-auc {:.4}",
        result.checkpoint.epoch,
        result.checkpoint.best_epoch,
        result.checkpoint.best_val_auc,
        test_acc,
        test_auc,
    );
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, coefficients: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let ckpt = load_checkpoint(checkpoint)?;
    let graph = load_dataset(data, None)?;
    let splits = rolling_splits(graph.meta.num_steps, ckpt.config.window)?;
    let coeffs = coefficients.map(load_coefficients).transpose()?;
    let (scores, labels) = test_metrics(&ckpt, &graph, &splits, coeffs.as_deref())?;
    let member = if ckpt.config.ablate_coefficients {
        "ablated".to_string()
    } else {
        ckpt.config.variant.name().to_string()
    };
    let record = RunRecord {
        member,
        seed: ckpt.config.seed,
        accuracy: accuracy(&scores, &labels, 0.5)?,
        roc_auc: roc_auc(&scores, &labels)?,
        epochs_ran: ckpt.epoch,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config_hash: config_hash(&ckpt.config),
        scores,
        labels,
    };
    let jsonl_path = checkpoint.with_extension("eval.jsonl");
    let line = serde_json::to_string(&ReportRow::Ok(record.clone()))
        .map_err(|e| Error::Argument(format!("record: {e}")))?;
    write_text(&jsonl_path, &format!("{line}\n"))?;
    println!(
        "member {} seed {} | accuracy {:.4} roc-auc {:.4} | {}",
        record.member,
        record.seed,
        record.accuracy,
        record.roc_auc,
        jsonl_path.display()
    );
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    // test fixture: set GOOD_GRADCHECK_CORRUPT to include a composite with a
    // deliberately broken backward rule and prove the harness catches it
    let corrupt = std::env::var_os("GOOD_GRADCHECK_CORRUPT").is_some();
    let reports = model_gradcheck(GRADCHECK_EPS, corrupt)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<22} max_rel_err {:.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.pass() { "PASS" } else { "FAIL" }
        );
        if !r.pass() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_report(runs: &Path, csv: Option<&Path>) -> Result<()> {
    let entries = std::fs::read_dir(runs).map_err(|e| Error::io(runs.display().to_string(), e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "jsonl")
                // per-epoch training logs live alongside run metrics
                && p.file_name().is_some_and(|n| n != "epochs.jsonl")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Lookup(format!(
            "no metrics JSONL files in {}",
            runs.display()
        )));
    }
    let mut rows = Vec::new();
    for file in &files {
        let (mut file_rows, warnings) = read_report(file)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        rows.append(&mut file_rows);
    }
    for row in &rows {
        if let ReportRow::Ok(r) = row {
            let acc = accuracy(&r.scores, &r.labels, 0.5)?;
            let auc = roc_auc(&r.scores, &r.labels)?;
            if (acc - r.accuracy).abs() > 1e-12 || (auc - r.roc_auc).abs() > 1e-12 {
                eprintln!(
                    "warning: {} seed {}: stored metrics disagree with persisted scores",
                    r.member, r.seed
                );
            }
        }
    }
    print!("{}", summary_table(&rows));
    if let Some(path) = csv {
        let mut out = String::from("member,seed,accuracy,roc_auc,epochs_ran,wall_clock_s\n");
        for row in &rows {
            if let ReportRow::Ok(r) = row {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.member, r.seed, r.accuracy, r.roc_auc, r.epochs_ran, r.wall_clock_s
                ));
            }
        }
        write_text(path, &out)?;
    }
    Ok(())
}
