//! `ccil` — dataset ingestion, synthetic benchmarks, training, evaluation,
//! sweeps, ablations, feature export, and the gradient-check suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccil_core::data::ingest::{
    ingest_cross_dataset, ingest_dsads, ingest_dsads_cross_position, ingest_pamap2, ingest_uci_har,
    ingest_usc_had, CrossDatasetMapping, CrossDatasetRaw,
};
use ccil_core::data::split::{make_split, Protocol};
use ccil_core::data::synth::{synth_domain_shift, SynthSpec};
use ccil_core::data::{compute_channel_stats, WindowedDataset};
use ccil_core::error::{Error, Result};
use ccil_core::eval::{evaluate, export_features};
use ccil_core::experiment::{ablate, run_experiment, sweep, ExperimentConfig};
use ccil_core::gradsuite::run_full_suite;
use ccil_core::model::ModelParams;

#[derive(Parser)]
#[command(name = "ccil", version, about = "Cross-domain activity recognition with concept-matrix invariance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw benchmark distribution into the canonical format.
    Ingest(IngestArgs),
    /// Generate a synthetic domain-shift dataset.
    Synth(SynthArgs),
    /// Run a training experiment from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a protocol split.
    Eval(EvalArgs),
    /// Grid of (alpha, lambda) runs.
    Sweep(SweepArgs),
    /// The ablation suite: erm, w_log, w_fea, frozen/batch banks, ccil.
    Ablate(TrainArgs),
    /// Export penultimate features for external embedding tools.
    ExportFeatures(ExportArgs),
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// One of: dsads, dsads-position, usc-had, pamap2, uci-har, cross-dataset.
    dataset: String,
    /// Raw distribution root (single-dataset ingests).
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Raw roots for the cross-dataset merge.
    #[arg(long)]
    raw_dsads: Option<PathBuf>,
    #[arg(long)]
    raw_usc_had: Option<PathBuf>,
    #[arg(long)]
    raw_uci_har: Option<PathBuf>,
    #[arg(long)]
    raw_pamap2: Option<PathBuf>,
    /// Cross-dataset mapping file; the built-in mapping is used if absent.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec JSON; defaults to the built-in benchmark spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the default spec JSON and exit.
    #[arg(long)]
    print_default_spec: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Canonical dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    fold: usize,
    /// Seed of the split whose normalization statistics apply.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Which index list to score: target, val, or train.
    #[arg(long, default_value = "target")]
    split: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated alpha values.
    #[arg(long, default_value = "0.1,0.5,1,5,10")]
    alphas: String,
    /// Comma-separated lambda values.
    #[arg(long, default_value = "0,0.9,0.99,0.999,0.9999")]
    lambdas: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value = "target")]
    split: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per layer/regularizer entry.
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Random points per composed-objective entry.
    #[arg(long, default_value_t = 20)]
    composed_points: usize,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{v}' is not a number")))
        })
        .collect()
}

fn split_indices_for<'a>(
    name: &str,
    idx: &'a ccil_core::data::split::SplitIndices,
) -> Result<&'a [usize]> {
    match name {
        "target" => Ok(&idx.target),
        "val" => Ok(&idx.val),
        "train" => Ok(&idx.train),
        other => Err(Error::Config(format!(
            "unknown split '{other}' (expected target, val, or train)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let need_raw = || {
                args.raw
                    .clone()
                    .ok_or_else(|| Error::Config("--raw is required for this dataset".into()))
            };
            let ds = match args.dataset.as_str() {
                "dsads" => ingest_dsads(&need_raw()?, &args.out)?,
                "dsads-position" => ingest_dsads_cross_position(&need_raw()?, &args.out)?,
                "usc-had" => ingest_usc_had(&need_raw()?, &args.out)?,
                "pamap2" => ingest_pamap2(&need_raw()?, &args.out)?,
                "uci-har" => ingest_uci_har(&need_raw()?, &args.out)?,
                "cross-dataset" => {
                    let mapping = match &args.mapping {
                        Some(path) => CrossDatasetMapping::from_file(path)?,
                        None => CrossDatasetMapping::built_in(),
                    };
                    let missing = |flag: &str| Error::Config(format!("{flag} is required for cross-dataset"));
                    ingest_cross_dataset(
                        &CrossDatasetRaw {
                            dsads: args.raw_dsads.as_deref().ok_or_else(|| missing("--raw-dsads"))?,
                            usc_had: args.raw_usc_had.as_deref().ok_or_else(|| missing("--raw-usc-had"))?,
                            uci_har: args.raw_uci_har.as_deref().ok_or_else(|| missing("--raw-uci-har"))?,
                            pamap2: args.raw_pamap2.as_deref().ok_or_else(|| missing("--raw-pamap2"))?,
                        },
                        &mapping,
                        &args.out,
                    )?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown dataset '{other}' (expected dsads, dsads-position, usc-had, \
                         pamap2, uci-har, or cross-dataset)"
                    )))
                }
            };
            println!(
                "ingested {}: {} samples, ({}, 1, {}) x {} classes x {} domains -> {}",
                ds.meta.name,
                ds.len(),
                ds.meta.channels,
                ds.meta.window,
                ds.num_classes(),
                ds.num_domains(),
                args.out.display()
            );
        }
        Command::Synth(args) => {
            if args.print_default_spec {
                println!("{}", serde_json::to_string_pretty(&SynthSpec::default())?);
                return Ok(());
            }
            let spec = match &args.spec {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => SynthSpec::default(),
            };
            let ds = synth_domain_shift(&spec, args.seed)?;
            ds.save(&args.out)?;
            println!(
                "synth dataset: {} samples, ({}, 1, {}) x {} classes x {} domains -> {}",
                ds.len(),
                ds.meta.channels,
                ds.meta.window,
                ds.num_classes(),
                ds.num_domains(),
                args.out.display()
            );
        }
        Command::Train(args) => {
            let cfg = ExperimentConfig::from_file(&args.config)?;
            let table = run_experiment(&cfg)?;
            print_table(&table);
            println!("results under {}", cfg.output.display());
        }
        Command::Eval(args) => {
            let (params, _, _) = ModelParams::load(&args.checkpoint)?;
            let ds = WindowedDataset::load(&args.data)?;
            let protocol = Protocol::parse(&args.protocol)?;
            let (_, idx) = make_split(&ds, protocol, args.fold, args.val_fraction, args.seed)?;
            let stats = compute_channel_stats(&ds, &idx.train)?;
            let indices = split_indices_for(&args.split, &idx)?;
            let acc = evaluate(&params, &ds, Some(&stats), indices)?;
            println!("{} accuracy: {acc:.2}%", args.split);
        }
        Command::Sweep(args) => {
            let cfg = ExperimentConfig::from_file(&args.config)?;
            let alphas = parse_list(&args.alphas)?;
            let lambdas = parse_list(&args.lambdas)?;
            let grid = sweep(&cfg, &alphas, &lambdas)?;
            print!("{}", grid.to_csv_string());
            let (li, aj) = grid.best_cell();
            println!(
                "best cell: lambda={} alpha={} ({:.2}%)",
                grid.lambdas[li], grid.alphas[aj], grid.cells[li][aj]
            );
        }
        Command::Ablate(args) => {
            let cfg = ExperimentConfig::from_file(&args.config)?;
            let table = ablate(&cfg)?;
            print_table(&table);
            println!("results under {}", cfg.output.display());
        }
        Command::ExportFeatures(args) => {
            let (params, _, _) = ModelParams::load(&args.checkpoint)?;
            let ds = WindowedDataset::load(&args.data)?;
            let protocol = Protocol::parse(&args.protocol)?;
            let (_, idx) = make_split(&ds, protocol, args.fold, args.val_fraction, args.seed)?;
            let stats = compute_channel_stats(&ds, &idx.train)?;
            let indices = split_indices_for(&args.split, &idx)?;
            export_features(&params, &ds, Some(&stats), indices, &args.out)?;
            println!("wrote {} feature rows to {}", indices.len(), args.out.display());
        }
        Command::Gradcheck(args) => {
            let entries = run_full_suite(args.seed, args.points, args.composed_points)?;
            let mut all_pass = true;
            for e in &entries {
                println!(
                    "{} {:<28} points {:>3}  max rel err {:.3e}",
                    if e.pass { "PASS" } else { "FAIL" },
                    e.name,
                    e.points,
                    e.max_rel_err
                );
                all_pass &= e.pass;
            }
            if !all_pass {
                return Err(Error::Config("gradient suite failed".into()));
            }
        }
    }
    Ok(())
}

fn print_table(table: &ccil_core::experiment::ResultTable) {
    println!("method,protocol,fold,trial,seed,status,val_acc,target_acc");
    for r in &table.rows {
        println!(
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.protocol,
            r.fold,
            r.trial,
            r.seed,
            r.status,
            r.val_acc.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.target_acc.map(|v| format!("{v:.2}")).unwrap_or_default()
        );
    }
    for agg in table.aggregates() {
        let folds: Vec<String> = agg
            .fold_means
            .iter()
            .map(|(f, m)| format!("fold{f}={m:.2}"))
            .collect();
        println!("{}: {} AVG={:.2}", agg.method, folds.join(" "), agg.avg);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
