use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedbayes_core::dataset::{DataFormat, LoadOptions, MissingPolicy, SplitDump};
use fedbayes_core::experiment::{
    format_summary, read_records_csv, run_experiment, summarize, write_outputs, write_summary_csv, IterationCap,
};
use fedbayes_core::federation::{personalize, write_round_trace, Aggregation, ClientState, FederationConfig, MessageFormat};
use fedbayes_core::{
    derive_seed, fit_counts, load_dataset, make_folds, normalize, partition_clients, ExperimentConfig,
    OptimizerConfig, SeedPurpose,
};

/// Federated discriminative naive Bayes for discrete data
#[derive(Parser, Debug)]
#[command(name = "fedbayes", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a generative naive Bayes table and write it as JSON
    Fit(FitArgs),
    /// Run one federation on one fold and write per-round traces
    Federate(FederateArgs),
    /// Run the full protocol described by a JSON config
    Experiment(ExperimentArgs),
    /// Rebuild the summary table from a records directory
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset file (.csv or .arff)
    #[arg(long)]
    data: PathBuf,

    /// Override format detection
    #[arg(long, value_parser = parse_format)]
    format: Option<DataFormat>,

    /// CSV has a header row
    #[arg(long)]
    header: bool,

    /// Zero-based class column (default: last)
    #[arg(long)]
    class_col: Option<usize>,

    /// Mask missing cells instead of treating `?` as a category
    #[arg(long)]
    skip_missing: bool,
}

impl DataArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            header: self.header,
            class_column: self.class_col,
            missing: if self.skip_missing {
                MissingPolicy::Skip
            } else {
                MissingPolicy::ExtraCategory
            },
        }
    }
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    s.parse().map_err(|e: fedbayes_core::Error| e.to_string())
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Laplace pseudo-count
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FederateArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, default_value_t = 5)]
    clients: usize,

    #[arg(long, default_value_t = 50)]
    rounds: u32,

    /// L-BFGS iterations per client per round, or `inf`
    #[arg(long, default_value = "5")]
    opt_iters: String,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Held-out fold shared by every client
    #[arg(long, default_value_t = 0)]
    fold: usize,

    #[arg(long, default_value_t = 5)]
    folds: usize,

    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    #[arg(long, default_value_t = 5)]
    min_client_size: usize,

    /// `uniform` or `shard_weighted`
    #[arg(long, default_value = "uniform")]
    aggregation: String,

    /// `binary` or `json`
    #[arg(long, default_value = "binary")]
    message_format: String,

    /// Directory for the per-round trace CSV
    #[arg(long)]
    trace_dir: Option<PathBuf>,

    /// Write the instance -> (client, fold) map as JSON
    #[arg(long)]
    dump_splits: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,

    /// Override the config's output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Override the config's thread count
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Directory holding records.csv
    #[arg(long)]
    records: PathBuf,

    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Fit(a) => fit(a),
        Command::Federate(a) => federate(a),
        Command::Experiment(a) => experiment(a),
        Command::Compare(a) => compare(a),
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let data = load_dataset(&args.data.data, &args.data.options())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let table = normalize(&fit_counts(&data, &rows)?, args.alpha)?;
    let json = serde_json::to_string_pretty(&table.to_document())?;
    fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "fitted {} rows, {} features, {} classes -> {}",
        data.len(),
        data.schema().feature_count(),
        data.schema().class_count(),
        args.out.display()
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn federate(args: FederateArgs) -> Result<()> {
    let cap: IterationCap = args.opt_iters.parse()?;
    let aggregation: Aggregation = args.aggregation.parse()?;
    let message_format: MessageFormat = args.message_format.parse()?;
    if args.fold >= args.folds {
        bail!("fold {} out of range for {} folds", args.fold, args.folds);
    }
    let data = load_dataset(&args.data.data, &args.data.options())?;
    let partition_seed = derive_seed(args.seed, SeedPurpose::Partition, args.clients as u64);
    let partition = partition_clients(&data, args.clients, partition_seed, args.min_client_size)?;
    let folds = partition
        .shards()
        .iter()
        .enumerate()
        .map(|(c, shard)| make_folds(&data, shard, args.folds, derive_seed(args.seed, SeedPurpose::Folds, c as u64)))
        .collect::<fedbayes_core::Result<Vec<_>>>()?;
    if let Some(path) = &args.dump_splits {
        let dump = SplitDump::new(args.data.data.clone(), &partition, &folds);
        fs::write(path, serde_json::to_string_pretty(&dump)?)?;
    }

    let mut clients = folds
        .iter()
        .enumerate()
        .map(|(c, f)| ClientState::fit(c as u32, &data, f.train_rows(args.fold), f.test_rows(args.fold), args.alpha))
        .collect::<fedbayes_core::Result<Vec<_>>>()?;
    let config = FederationConfig {
        rounds: args.rounds,
        optimizer: OptimizerConfig::with_max_iterations(cap.iterations()),
        aggregation,
        message_format,
        seed: derive_seed(partition_seed, SeedPurpose::WeightInit, args.fold as u64),
    };
    let outcome = fedbayes_core::run_federation(&mut clients, &config)?;

    if let Some(dir) = &args.trace_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_{}_fold{}.csv", stem(&args.data.data), args.clients, args.fold));
        write_round_trace(&outcome.records, fs::File::create(&path)?)?;
        println!("trace -> {}", path.display());
    }

    let last = outcome.records.last().expect("rounds >= 1");
    let mut personal = 0.0;
    for c in &clients {
        let w = personalize(c, &outcome.global, &config.optimizer)?;
        personal += c.evaluate(&w)?.1;
    }
    personal /= clients.len() as f64;
    println!("round {}: |w| = {:.4}", last.round, last.global_weights_norm);
    println!("global weights       test accuracy {:.2}%", 100.0 * last.mean_global_test_acc());
    println!("personalized weights test accuracy {:.2}%", 100.0 * personal);
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_json_file(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    config.validate()?;
    let outcome = run_experiment(&config)?;
    write_outputs(&outcome, &config.output_dir)?;
    print!("{}", format_summary(&outcome.summary));
    for s in &outcome.skipped {
        eprintln!("skipped {} with {} clients: {}", s.dataset, s.client_count, s.reason);
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let path = args.records.join("records.csv");
    let records = read_records_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    let summary = summarize(&records);
    write_summary_csv(&summary, &args.out)?;
    print!("{}", format_summary(&summary));
    Ok(())
}
