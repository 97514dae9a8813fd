//! Simulation harness: repeated, cross-validated runs of every algorithm over
//! a corpus and several client counts, with CSV summaries and round traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{load_dataset, make_folds, partition_clients, DiscreteDataset, LoadOptions};
use crate::error::{Error, Result};
use crate::federation::{
    personalize, run_federation, Aggregation, ClientState, FederationConfig, MessageFormat,
};
use crate::generative::{self, fit_counts, normalize, pool_counts};
use crate::optimizer::{minimize, OptimizerConfig, UNLIMITED};
use crate::seed::{derive_seed, SeedPurpose};
use crate::weighted::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Generative naive Bayes trained per client.
    Nb,
    /// Generative naive Bayes on pooled client counts.
    NbFed,
    /// Weighted naive Bayes trained per client.
    Nbw,
    /// Federated weighted naive Bayes.
    Fednbw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Nb, Algorithm::NbFed, Algorithm::Nbw, Algorithm::Fednbw];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Nb => "nb",
            Algorithm::NbFed => "nb_fed",
            Algorithm::Nbw => "nbw",
            Algorithm::Fednbw => "fednbw",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Per-round optimizer budget: a finite `L` or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IterationCap {
    Finite(usize),
    Unlimited,
}

impl IterationCap {
    pub fn iterations(self) -> usize {
        match self {
            IterationCap::Finite(n) => n,
            IterationCap::Unlimited => UNLIMITED,
        }
    }

    pub fn label(self) -> String {
        match self {
            IterationCap::Finite(n) => n.to_string(),
            IterationCap::Unlimited => "inf".into(),
        }
    }
}

impl FromStr for IterationCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "unlimited" => Ok(IterationCap::Unlimited),
            n => n
                .parse()
                .map(IterationCap::Finite)
                .map_err(|_| Error::Config(format!("bad iteration cap `{s}`"))),
        }
    }
}

impl Serialize for IterationCap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            IterationCap::Finite(n) => s.serialize_u64(*n as u64),
            IterationCap::Unlimited => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for IterationCap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(IterationCap::Finite(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}
fn default_client_counts() -> Vec<usize> {
    vec![5, 10, 20, 50, 100]
}
fn default_folds() -> usize {
    5
}
fn default_repetitions() -> usize {
    5
}
fn default_caps() -> Vec<IterationCap> {
    vec![IterationCap::Finite(5), IterationCap::Unlimited]
}
fn default_rounds() -> u32 {
    50
}
fn default_alpha() -> f64 {
    1.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_min_client_size() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<PathBuf>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_client_counts")]
    pub client_counts: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_caps")]
    pub optimizer_caps: Vec<IterationCap>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_min_client_size")]
    pub min_client_size: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub message_format: MessageFormat,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(datasets: Vec<PathBuf>) -> Self {
        Self {
            datasets,
            algorithms: default_algorithms(),
            client_counts: default_client_counts(),
            folds: default_folds(),
            repetitions: default_repetitions(),
            master_seed: 0,
            optimizer_caps: default_caps(),
            rounds: default_rounds(),
            alpha: default_alpha(),
            output_dir: default_output_dir(),
            min_client_size: default_min_client_size(),
            aggregation: Aggregation::Uniform,
            message_format: MessageFormat::Binary,
            threads: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.algorithms.is_empty() {
            return bad("no algorithms selected");
        }
        if self.client_counts.is_empty() || self.client_counts.contains(&0) {
            return bad("client counts must be positive");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.repetitions == 0 {
            return bad("need at least one repetition");
        }
        if self.rounds == 0 {
            return bad("need at least one round");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and nonnegative");
        }
        let weighted = self.algorithms.iter().any(|a| matches!(a, Algorithm::Nbw | Algorithm::Fednbw));
        if weighted && self.optimizer_caps.is_empty() {
            return bad("weighted algorithms need at least one optimizer cap");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        Ok(())
    }

    fn optimizer(&self, cap: IterationCap) -> OptimizerConfig {
        OptimizerConfig::with_max_iterations(cap.iterations())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Accuracy of one client on one fold of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub algorithm: String,
    /// `-` for generative models, the cap (`5`, `inf`) for per-client NB^w,
    /// and `<cap>-g` / `<cap>-l` for global / personalized federated weights.
    pub variant: String,
    pub client_count: usize,
    pub repetition: usize,
    pub client_id: u32,
    pub fold: usize,
    pub split: Split,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCell {
    pub dataset: String,
    pub client_count: usize,
    pub reason: String,
}

/// Per-round (train, test) accuracy of one variant, indexed `[round][client]`.
/// Baselines carry a single round.
type VariantTrace = Vec<Vec<(f64, f64)>>;

#[derive(Debug, Clone, Default)]
struct FoldOutcome {
    records: Vec<MetricsRecord>,
    traces: Vec<((String, String), VariantTrace)>,
}

/// Everything run for one (dataset, client count, repetition).
#[derive(Debug, Clone)]
pub enum CellOutcome {
    Done {
        records: Vec<MetricsRecord>,
        traces: Vec<((String, String), Vec<VariantTrace>)>,
    },
    Skipped(SkippedCell),
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct FoldContext<'a> {
    name: &'a str,
    data: &'a DiscreteDataset,
    config: &'a ExperimentConfig,
    client_count: usize,
    repetition: usize,
    fold: usize,
    federation_seed: u64,
}

impl FoldContext<'_> {
    fn push(&self, out: &mut Vec<MetricsRecord>, algorithm: Algorithm, variant: &str, client_id: u32, acc: (f64, f64)) {
        for (split, accuracy) in [(Split::Train, acc.0), (Split::Test, acc.1)] {
            out.push(MetricsRecord {
                dataset: self.name.to_string(),
                algorithm: algorithm.as_str().to_string(),
                variant: variant.to_string(),
                client_count: self.client_count,
                repetition: self.repetition,
                client_id,
                fold: self.fold,
                split,
                accuracy,
            });
        }
    }
}

fn run_fold(ctx: &FoldContext<'_>, splits: &[(Vec<usize>, Vec<usize>)]) -> Result<FoldOutcome> {
    let cfg = ctx.config;
    let data = ctx.data;
    let clients: Vec<ClientState<'_>> = splits
        .iter()
        .enumerate()
        .map(|(c, (train, test))| ClientState::fit(c as u32, data, train.clone(), test.clone(), cfg.alpha))
        .collect::<Result<_>>()?;
    let mut out = FoldOutcome::default();
    let key = |a: Algorithm, v: &str| (a.as_str().to_string(), v.to_string());

    for &algorithm in &cfg.algorithms {
        match algorithm {
            Algorithm::Nb => {
                let mut trace = Vec::new();
                for c in &clients {
                    let p = c.params();
                    let acc = (
                        generative::accuracy(p, data, c.train_rows()),
                        generative::accuracy(p, data, c.test_rows()),
                    );
                    ctx.push(&mut out.records, algorithm, "-", c.client_id, acc);
                    trace.push(acc);
                }
                out.traces.push((key(algorithm, "-"), vec![trace]));
            }
            Algorithm::NbFed => {
                let counts = clients
                    .iter()
                    .map(|c| fit_counts(data, c.train_rows()))
                    .collect::<Result<Vec<_>>>()?;
                let pooled = normalize(&pool_counts(&counts)?, cfg.alpha)?;
                let mut trace = Vec::new();
                for c in &clients {
                    let acc = (
                        generative::accuracy(&pooled, data, c.train_rows()),
                        generative::accuracy(&pooled, data, c.test_rows()),
                    );
                    ctx.push(&mut out.records, algorithm, "-", c.client_id, acc);
                    trace.push(acc);
                }
                out.traces.push((key(algorithm, "-"), vec![trace]));
            }
            Algorithm::Nbw => {
                for &cap in &cfg.optimizer_caps {
                    let opt = cfg.optimizer(cap);
                    let accs = clients
                        .par_iter()
                        .map(|c| {
                            let start = WeightVector::ones(c.dimension());
                            let report = minimize(&mut c.objective(), &start, &opt)?;
                            c.evaluate(&report.final_point)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let variant = cap.label();
                    for (c, &acc) in clients.iter().zip(&accs) {
                        ctx.push(&mut out.records, algorithm, &variant, c.client_id, acc);
                    }
                    out.traces.push((key(algorithm, &variant), vec![accs]));
                }
            }
            Algorithm::Fednbw => {
                for &cap in &cfg.optimizer_caps {
                    let fed_cfg = FederationConfig {
                        rounds: cfg.rounds,
                        optimizer: cfg.optimizer(cap),
                        aggregation: cfg.aggregation,
                        message_format: cfg.message_format,
                        seed: ctx.federation_seed,
                    };
                    let mut fed_clients = clients.clone();
                    let fed = run_federation(&mut fed_clients, &fed_cfg)?;
                    let personal = fed_clients
                        .par_iter()
                        .map(|c| c.evaluate(&personalize(c, &fed.global, &fed_cfg.optimizer)?))
                        .collect::<Result<Vec<_>>>()?;
                    let last = fed.records.last().expect("at least one round");
                    let g_label = format!("{}-g", cap.label());
                    let l_label = format!("{}-l", cap.label());
                    for (c, rec) in fed_clients.iter().zip(&last.clients) {
                        ctx.push(
                            &mut out.records,
                            algorithm,
                            &g_label,
                            c.client_id,
                            (rec.global_train_acc, rec.global_test_acc),
                        );
                    }
                    for (c, &acc) in fed_clients.iter().zip(&personal) {
                        ctx.push(&mut out.records, algorithm, &l_label, c.client_id, acc);
                    }
                    let g_trace: VariantTrace = fed
                        .records
                        .iter()
                        .map(|r| r.clients.iter().map(|c| (c.global_train_acc, c.global_test_acc)).collect())
                        .collect();
                    // Personalizing w^t is exactly round t+1's local optimization.
                    let mut l_trace: VariantTrace = fed
                        .records
                        .iter()
                        .skip(1)
                        .map(|r| r.clients.iter().map(|c| (c.train_acc, c.test_acc)).collect())
                        .collect();
                    l_trace.push(personal);
                    out.traces.push((key(algorithm, &g_label), g_trace));
                    out.traces.push((key(algorithm, &l_label), l_trace));
                }
            }
        }
    }
    Ok(out)
}

fn is_skippable(e: &Error) -> bool {
    matches!(e, Error::Partition { .. } | Error::Fold(_))
}

/// Partitions, folds and runs every configured algorithm for one
/// repetition. Folds run in parallel; every client holds out the same fold
/// index in a given federation.
pub fn run_cell(
    name: &str,
    data: &DiscreteDataset,
    client_count: usize,
    repetition: usize,
    config: &ExperimentConfig,
) -> Result<CellOutcome> {
    let rep_seed = derive_seed(config.master_seed, SeedPurpose::Repetition, repetition as u64);
    let skipped = |e: Error| {
        CellOutcome::Skipped(SkippedCell {
            dataset: name.to_string(),
            client_count,
            reason: e.to_string(),
        })
    };
    let partition_seed = derive_seed(rep_seed, SeedPurpose::Partition, client_count as u64);
    let partition = match partition_clients(data, client_count, partition_seed, config.min_client_size) {
        Ok(p) => p,
        Err(e) if is_skippable(&e) => return Ok(skipped(e)),
        Err(e) => return Err(e),
    };
    let mut folds = Vec::with_capacity(client_count);
    for (c, shard) in partition.shards().iter().enumerate() {
        match make_folds(data, shard, config.folds, derive_seed(rep_seed, SeedPurpose::Folds, c as u64)) {
            Ok(f) => folds.push(f),
            Err(e) if is_skippable(&e) => return Ok(skipped(e)),
            Err(e) => return Err(e),
        }
    }

    let per_fold = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let splits: Vec<_> = folds.iter().map(|f| (f.train_rows(fold), f.test_rows(fold))).collect();
            let ctx = FoldContext {
                name,
                data,
                config,
                client_count,
                repetition,
                fold,
                federation_seed: derive_seed(partition_seed, SeedPurpose::WeightInit, fold as u64),
            };
            run_fold(&ctx, &splits)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut traces: Vec<((String, String), Vec<VariantTrace>)> = Vec::new();
    for fold in per_fold {
        records.extend(fold.records);
        for (k, t) in fold.traces {
            match traces.iter_mut().find(|(key, _)| *key == k) {
                Some((_, v)) => v.push(t),
                None => traces.push((k, vec![t])),
            }
        }
    }
    Ok(CellOutcome::Done { records, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub algorithm: String,
    pub variant: String,
    pub client_count: usize,
    pub runs: usize,
    /// Percent.
    pub train_accuracy: f64,
    /// Percent.
    pub test_accuracy: f64,
}

pub const MEAN_ROW: &str = "Mean";

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean accuracy per (dataset, algorithm, variant, client count), in
/// percent, followed by cross-dataset mean rows.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    type Key = (String, String, String, usize);
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups
            .entry((r.dataset.clone(), r.algorithm.clone(), r.variant.clone(), r.client_count))
            .or_default();
        match r.split {
            Split::Train => g.0.push(r.accuracy),
            Split::Test => g.1.push(r.accuracy),
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .filter(|(_, (_, test))| !test.is_empty())
        .map(|((dataset, algorithm, variant, client_count), (train, test))| SummaryRow {
            dataset,
            algorithm,
            variant,
            client_count,
            runs: test.len(),
            train_accuracy: if train.is_empty() { f64::NAN } else { 100.0 * mean(&train) },
            test_accuracy: 100.0 * mean(&test),
        })
        .collect();

    let mut across: BTreeMap<(String, String, usize), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for r in &rows {
        let g = across
            .entry((r.algorithm.clone(), r.variant.clone(), r.client_count))
            .or_default();
        g.0.push(r.train_accuracy);
        g.1.push(r.test_accuracy);
        g.2 += r.runs;
    }
    rows.extend(across.into_iter().map(|((algorithm, variant, client_count), (train, test, runs))| {
        SummaryRow {
            dataset: MEAN_ROW.to_string(),
            algorithm,
            variant,
            client_count,
            runs,
            train_accuracy: mean(&train),
            test_accuracy: mean(&test),
        }
    }));
    rows
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "algorithm", "variant", "client_count", "runs", "train_accuracy", "test_accuracy"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.algorithm.clone(),
            r.variant.clone(),
            r.client_count.to_string(),
            r.runs.to_string(),
            format!("{:.4}", r.train_accuracy),
            format!("{:.4}", r.test_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text rendering of the summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let header = ["dataset", "algorithm", "variant", "C", "runs", "train %", "test %"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.algorithm.clone(),
                r.variant.clone(),
                r.client_count.to_string(),
                r.runs.to_string(),
                format!("{:.2}", r.train_accuracy),
                format!("{:.2}", r.test_accuracy),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |fields: &[&str]| {
        let parts: Vec<String> = fields
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (f, w))| if i < 3 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&refs);
    }
    out
}

/// Per-round mean curves for one (dataset, client count).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub dataset: String,
    pub client_count: usize,
    pub rounds: u32,
    /// `((algorithm, variant), [(mean train, mean test)] per round)`.
    pub curves: Vec<((String, String), Vec<(f64, f64)>)>,
}

/// `runs[run][round][client]`; baselines have one round which is repeated.
fn trace_curve(runs: &[VariantTrace], rounds: u32) -> Vec<(f64, f64)> {
    (0..rounds as usize)
        .map(|t| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for run in runs {
                let at = &run[t.min(run.len() - 1)];
                for &(a, b) in at {
                    train.push(a);
                    test.push(b);
                }
            }
            (100.0 * mean(&train), 100.0 * mean(&test))
        })
        .collect()
}

pub fn write_trace_csv(table: &TraceTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "algorithm", "variant", "train_acc", "test_acc"])?;
    for ((algorithm, variant), curve) in &table.curves {
        for (t, (train, test)) in curve.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                algorithm.clone(),
                variant.clone(),
                format!("{train:.4}"),
                format!("{test:.4}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SummaryRow>,
    pub skipped: Vec<SkippedCell>,
    pub traces: Vec<TraceTable>,
}

impl ExperimentOutcome {
    /// Looks up a per-dataset summary row.
    pub fn summary_row(&self, dataset: &str, algorithm: &str, variant: &str, client_count: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| {
            r.dataset == dataset && r.algorithm == algorithm && r.variant == variant && r.client_count == client_count
        })
    }
}

/// Runs the protocol on already-loaded datasets.
pub fn run_experiment_on(datasets: &[(String, DiscreteDataset)], config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let run = || -> Result<ExperimentOutcome> {
        let mut jobs = Vec::new();
        for (d, _) in datasets.iter().enumerate() {
            for &c in &config.client_counts {
                for rep in 0..config.repetitions {
                    jobs.push((d, c, rep));
                }
            }
        }
        let outcomes = jobs
            .par_iter()
            .map(|&(d, c, rep)| {
                let (name, data) = &datasets[d];
                run_cell(name, data, c, rep, config)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut records = Vec::new();
        let mut skipped: Vec<SkippedCell> = Vec::new();
        let mut grouped: Vec<((usize, usize), Vec<((String, String), Vec<VariantTrace>)>)> = Vec::new();
        for (&(d, c, _), outcome) in jobs.iter().zip(outcomes) {
            match outcome {
                CellOutcome::Skipped(s) => {
                    if !skipped.contains(&s) {
                        log::warn!("skipping {} with {} clients: {}", s.dataset, s.client_count, s.reason);
                        skipped.push(s);
                    }
                }
                CellOutcome::Done { records: r, traces } => {
                    records.extend(r);
                    let slot = match grouped.iter().position(|(k, _)| *k == (d, c)) {
                        Some(i) => &mut grouped[i].1,
                        None => {
                            grouped.push(((d, c), Vec::new()));
                            &mut grouped.last_mut().unwrap().1
                        }
                    };
                    for (k, runs) in traces {
                        match slot.iter_mut().find(|(key, _)| *key == k) {
                            Some((_, v)) => v.extend(runs),
                            None => slot.push((k, runs)),
                        }
                    }
                }
            }
        }
        let traces = grouped
            .into_iter()
            .map(|((d, c), variants)| TraceTable {
                dataset: datasets[d].0.clone(),
                client_count: c,
                rounds: config.rounds,
                curves: variants
                    .into_iter()
                    .map(|(k, runs)| (k, trace_curve(&runs, config.rounds)))
                    .collect(),
            })
            .collect();
        let summary = summarize(&records);
        Ok(ExperimentOutcome {
            records,
            summary,
            skipped,
            traces,
        })
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Loads the configured datasets and runs the protocol.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let datasets = config
        .datasets
        .iter()
        .map(|p| Ok((dataset_name(p), load_dataset(p, &LoadOptions::default())?)))
        .collect::<Result<Vec<_>>>()?;
    run_experiment_on(&datasets, config)
}

pub fn write_records_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `records.csv`, `summary.csv`, `summary.txt`, `skipped_cells.log`
/// and `traces/<dataset>_<C>.csv` under `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("traces"))?;
    write_records_csv(&outcome.records, &dir.join("records.csv"))?;
    write_summary_csv(&outcome.summary, &dir.join("summary.csv"))?;
    fs::write(dir.join("summary.txt"), format_summary(&outcome.summary))?;
    let mut log = String::new();
    for s in &outcome.skipped {
        let _ = writeln!(log, "{} clients={}: {}", s.dataset, s.client_count, s.reason);
    }
    fs::write(dir.join("skipped_cells.log"), log)?;
    for t in &outcome.traces {
        write_trace_csv(t, &dir.join("traces").join(format!("{}_{}.csv", t.dataset, t.client_count)))?;
    }
    Ok(())
}
