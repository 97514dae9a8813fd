//! Discrete datasets: loading, integer encoding, stratified client partitions
//! and cross-validation folds.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Token used for a missing cell in both CSV and ARFF input.
pub const MISSING_TOKEN: &str = "?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub feature_names: Vec<String>,
    /// Category labels per feature; the cardinality of feature `j` is
    /// `feature_values[j].len()`.
    pub feature_values: Vec<Vec<String>>,
    pub class_labels: Vec<String>,
}

impl Schema {
    pub fn new(
        feature_names: Vec<String>,
        feature_values: Vec<Vec<String>>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        if feature_names.is_empty() {
            return Err(Error::Schema("at least one feature is required".into()));
        }
        if feature_names.len() != feature_values.len() {
            return Err(Error::Schema(format!(
                "{} feature names but {} value domains",
                feature_names.len(),
                feature_values.len()
            )));
        }
        if let Some(j) = feature_values.iter().position(Vec::is_empty) {
            return Err(Error::Schema(format!(
                "feature '{}' has no categories",
                feature_names[j]
            )));
        }
        if class_labels.len() < 2 {
            return Err(Error::Schema(format!(
                "at least two class labels are required, found {}",
                class_labels.len()
            )));
        }
        Ok(Self {
            feature_names,
            feature_values,
            class_labels,
        })
    }

    /// Schema with anonymous features and classes, for synthetic data.
    pub fn synthetic(cardinalities: &[usize], class_count: usize) -> Result<Self> {
        Self::new(
            (0..cardinalities.len()).map(|j| format!("x{j}")).collect(),
            cardinalities
                .iter()
                .map(|&c| (0..c).map(|l| format!("v{l}")).collect())
                .collect(),
            (0..class_count).map(|k| format!("c{k}")).collect(),
        )
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn cardinality(&self, feature: usize) -> usize {
        self.feature_values[feature].len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.feature_values.iter().map(Vec::len).collect()
    }
}

/// One instance's feature values. An empty `missing` slice means fully observed.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub values: &'a [u32],
    pub missing: &'a [bool],
}

impl<'a> Row<'a> {
    pub fn new(values: &'a [u32]) -> Self {
        Self {
            values,
            missing: &[],
        }
    }

    pub fn with_missing(values: &'a [u32], missing: &'a [bool]) -> Self {
        Self { values, missing }
    }

    #[inline]
    pub fn is_missing(&self, feature: usize) -> bool {
        self.missing.get(feature).copied().unwrap_or(false)
    }

    /// Observed `(feature, value)` pairs.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.is_missing(*j))
            .map(|(j, &v)| (j, v as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    schema: Schema,
    /// Row-major `m x n` value indices.
    features: Vec<u32>,
    missing: Vec<bool>,
    labels: Vec<u32>,
}

impl DiscreteDataset {
    pub fn new(
        schema: Schema,
        features: Vec<u32>,
        missing: Vec<bool>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let n = schema.feature_count();
        let m = labels.len();
        if m == 0 {
            return Err(Error::Schema("dataset has no instances".into()));
        }
        if features.len() != m * n {
            return Err(Error::Schema(format!(
                "feature matrix has {} cells, expected {m} x {n}",
                features.len()
            )));
        }
        if missing.len() != m * n {
            return Err(Error::Schema(format!(
                "missing mask has {} cells, expected {m} x {n}",
                missing.len()
            )));
        }
        let o = schema.class_count() as u32;
        if let Some(i) = labels.iter().position(|&y| y >= o) {
            return Err(Error::Schema(format!(
                "label {} of instance {i} out of range (o = {o})",
                labels[i]
            )));
        }
        for (cell, &v) in features.iter().enumerate() {
            let j = cell % n;
            if !missing[cell] && v as usize >= schema.cardinality(j) {
                return Err(Error::Schema(format!(
                    "value {v} of instance {} feature '{}' out of range",
                    cell / n,
                    schema.feature_names[j]
                )));
            }
        }
        Ok(Self {
            schema,
            features,
            missing,
            labels,
        })
    }

    /// Fully observed dataset from per-row value vectors.
    pub fn from_rows(schema: Schema, rows: &[Vec<u32>], labels: Vec<u32>) -> Result<Self> {
        let features: Vec<u32> = rows.iter().flatten().copied().collect();
        let missing = vec![false; features.len()];
        Self::new(schema, features, missing, labels)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let n = self.schema.feature_count();
        Row {
            values: &self.features[i * n..(i + 1) * n],
            missing: &self.missing[i * n..(i + 1) * n],
        }
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&b| b)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.class_count()];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Arff,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("arff") => Some(DataFormat::Arff),
            Some("csv") | Some("data") | Some("dat") | Some("txt") => Some(DataFormat::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "arff" => Ok(DataFormat::Arff),
            other => Err(Error::Config(format!("unknown data format '{other}'"))),
        }
    }
}

/// How `?` cells are encoded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// `?` becomes one more category of its feature (appended last).
    #[default]
    ExtraCategory,
    /// `?` is masked and skipped by counting and scoring.
    Skip,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Inferred from the file extension when absent.
    #[serde(default)]
    pub format: Option<DataFormat>,
    /// CSV only: first row holds column names.
    #[serde(default)]
    pub header: bool,
    /// Class column index; the last column when absent.
    #[serde(default)]
    pub class_column: Option<usize>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<DiscreteDataset> {
    let path = path.as_ref();
    let format = match options.format.or_else(|| DataFormat::from_path(path)) {
        Some(f) => f,
        None => {
            return Err(Error::Config(format!(
                "cannot infer data format of {}; pass it explicitly",
                path.display()
            )))
        }
    };
    let text = fs::read_to_string(path)?;
    match format {
        DataFormat::Csv => parse_csv(&text, path, options),
        DataFormat::Arff => parse_arff(&text, path, options),
    }
}

/// Column of raw tokens accumulated during parsing.
struct RawColumn {
    name: String,
    /// Known categories in index order.
    domain: Vec<String>,
    index: HashMap<String, u32>,
    /// Whether unseen tokens extend the domain (CSV) or are rejected (ARFF).
    open: bool,
    cells: Vec<Option<u32>>,
}

impl RawColumn {
    fn new(name: String, declared: Option<Vec<String>>) -> Self {
        let open = declared.is_none();
        let domain = declared.unwrap_or_default();
        let index = domain
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        Self {
            name,
            domain,
            index,
            open,
            cells: Vec::new(),
        }
    }

    fn push(&mut self, token: &str) -> std::result::Result<(), String> {
        if token == MISSING_TOKEN {
            self.cells.push(None);
            return Ok(());
        }
        let id = match self.index.get(token) {
            Some(&id) => id,
            None if self.open => {
                let id = self.domain.len() as u32;
                self.domain.push(token.to_string());
                self.index.insert(token.to_string(), id);
                id
            }
            None => {
                return Err(format!(
                    "value '{token}' is not declared for attribute '{}'",
                    self.name
                ))
            }
        };
        self.cells.push(Some(id));
        Ok(())
    }
}

fn assemble(
    mut columns: Vec<RawColumn>,
    line_of_row: &[usize],
    path: &Path,
    options: &LoadOptions,
) -> Result<DiscreteDataset> {
    if columns.len() < 2 {
        return Err(Error::Schema(format!(
            "need at least one feature and a class column, found {} column(s)",
            columns.len()
        )));
    }
    let class_col = options.class_column.unwrap_or(columns.len() - 1);
    if class_col >= columns.len() {
        return Err(Error::Schema(format!(
            "class column {class_col} out of range ({} columns)",
            columns.len()
        )));
    }
    let class = columns.remove(class_col);
    let m = class.cells.len();
    if m == 0 {
        return Err(Error::Schema("dataset has no instances".into()));
    }
    let mut labels = Vec::with_capacity(m);
    for (i, cell) in class.cells.iter().enumerate() {
        match cell {
            Some(y) => labels.push(*y),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_of_row[i],
                    message: format!("missing class label in column '{}'", class.name),
                })
            }
        }
    }

    let n = columns.len();
    let mut features = vec![0u32; m * n];
    let mut missing = vec![false; m * n];
    let mut names = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    for (j, mut col) in columns.into_iter().enumerate() {
        let has_missing = col.cells.iter().any(Option::is_none);
        let extra = if has_missing && options.missing == MissingPolicy::ExtraCategory {
            col.domain.push(MISSING_TOKEN.to_string());
            Some(col.domain.len() as u32 - 1)
        } else {
            None
        };
        for (i, cell) in col.cells.iter().enumerate() {
            match (cell, extra) {
                (Some(v), _) => features[i * n + j] = *v,
                (None, Some(e)) => features[i * n + j] = e,
                (None, None) => missing[i * n + j] = true,
            }
        }
        names.push(col.name);
        domains.push(col.domain);
    }
    let schema = Schema::new(names, domains, class.domain)?;
    DiscreteDataset::new(schema, features, missing, labels)
}

pub fn parse_csv(text: &str, path: &Path, options: &LoadOptions) -> Result<DiscreteDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header: Option<Vec<String>> = if options.header {
        Some(
            reader
                .headers()
                .map_err(|e| csv_error(e, path))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    let mut columns: Vec<RawColumn> = Vec::new();
    let mut line_of_row = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, path))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if columns.is_empty() {
            let width = header.as_ref().map_or(record.len(), Vec::len);
            columns = (0..width)
                .map(|j| {
                    let name = header
                        .as_ref()
                        .map_or_else(|| format!("col{j}"), |h| h[j].clone());
                    RawColumn::new(name, None)
                })
                .collect();
        }
        if record.len() != columns.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", columns.len(), record.len()),
            });
        }
        for (col, token) in columns.iter_mut().zip(record.iter()) {
            col.push(token).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })?;
        }
        line_of_row.push(line);
    }
    if columns.is_empty() {
        return Err(Error::Schema("dataset has no instances".into()));
    }
    assemble(columns, &line_of_row, path, options)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Splits an ARFF line on commas, honouring single and double quotes.
fn split_arff_values(s: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) if c == '\\' => {
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            Some(_) => cur.push(c),
            None if c == '\'' || c == '"' => quote = Some(c),
            None if c == ',' => out.push(std::mem::take(&mut cur).trim().to_string()),
            None => cur.push(c),
        }
    }
    if quote.is_some() {
        return Err("unterminated quote".into());
    }
    out.push(cur.trim().to_string());
    Ok(out)
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2
        && ((s.starts_with('\'') && s.ends_with('\'')) || (s.starts_with('"') && s.ends_with('"')))
    {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

/// Parses `@attribute <name> <type>` into (name, declared nominal values).
fn parse_attribute(rest: &str) -> std::result::Result<(String, Option<Vec<String>>), String> {
    let rest = rest.trim();
    let (name, ty) = if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        let end = rest[1..]
            .find(q)
            .ok_or_else(|| "unterminated attribute name".to_string())?;
        (rest[1..=end].to_string(), rest[end + 2..].trim())
    } else {
        let end = rest
            .find(char::is_whitespace)
            .ok_or_else(|| "attribute without a type".to_string())?;
        (rest[..end].to_string(), rest[end..].trim())
    };
    if let Some(body) = ty.strip_prefix('{') {
        let body = body
            .strip_suffix('}')
            .ok_or_else(|| "nominal declaration missing '}'".to_string())?;
        let values = split_arff_values(body)?
            .into_iter()
            .filter(|v| !v.is_empty())
            .collect();
        Ok((name, Some(values)))
    } else {
        Ok((name, None))
    }
}

pub fn parse_arff(text: &str, path: &Path, options: &LoadOptions) -> Result<DiscreteDataset> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut columns: Vec<RawColumn> = Vec::new();
    let mut in_data = false;
    let mut line_of_row = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                continue;
            } else if lower.starts_with("@attribute") {
                let (name, declared) =
                    parse_attribute(&line["@attribute".len()..]).map_err(|m| perr(line_no, m))?;
                let Some(values) = declared else {
                    return Err(Error::Schema(format!(
                        "attribute '{name}' (line {line_no}) is not nominal; only categorical attributes are supported"
                    )));
                };
                columns.push(RawColumn::new(name, Some(values)));
            } else if lower.starts_with("@data") {
                in_data = true;
            } else {
                return Err(perr(line_no, format!("unexpected header line '{line}'")));
            }
            continue;
        }
        if line.starts_with('{') {
            return Err(perr(line_no, "sparse ARFF rows are not supported".into()));
        }
        let values = split_arff_values(line).map_err(|m| perr(line_no, m))?;
        if values.len() != columns.len() {
            return Err(perr(
                line_no,
                format!("expected {} values, found {}", columns.len(), values.len()),
            ));
        }
        for (col, token) in columns.iter_mut().zip(values.iter()) {
            col.push(unquote(token)).map_err(|m| perr(line_no, m))?;
        }
        line_of_row.push(line_no);
    }
    if !in_data {
        return Err(perr(text.lines().count(), "no @data section".into()));
    }
    assemble(columns, &line_of_row, path, options)
}

/// Assignment of every instance to one of `client_count` clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub assignments: Vec<u32>,
    pub client_count: usize,
    pub seed: u64,
}

impl ClientPartition {
    /// Row indices of client `c`, ascending.
    pub fn shard(&self, client: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a as usize == client)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn shards(&self) -> Vec<Vec<usize>> {
        let mut shards = vec![Vec::new(); self.client_count];
        for (i, &c) in self.assignments.iter().enumerate() {
            shards[c as usize].push(i);
        }
        shards
    }
}

/// Deals `rows` into `bins` groups, class by class, after a seeded shuffle
/// within each class. The dealing position carries over between classes, so
/// bin sizes differ by at most one and each bin's class-k count is
/// `floor(n_k / bins)` or `ceil(n_k / bins)`.
fn stratified_deal(labels: &[u32], rows: &[usize], class_count: usize, bins: usize, seed: u64) -> Vec<u32> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (pos, &r) in rows.iter().enumerate() {
        by_class[labels[r] as usize].push(pos);
    }
    let mut rng = rng_from_seed(seed);
    let mut out = vec![0u32; rows.len()];
    let mut next = 0usize;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &pos in members.iter() {
            out[pos] = (next % bins) as u32;
            next += 1;
        }
    }
    out
}

/// Stratified split of all instances over `client_count` clients.
///
/// Fails when fewer than `min_client_size * client_count` instances exist.
pub fn partition_clients(
    data: &DiscreteDataset,
    client_count: usize,
    seed: u64,
    min_client_size: usize,
) -> Result<ClientPartition> {
    if client_count == 0 {
        return Err(Error::Config("client count must be positive".into()));
    }
    let min_per_client = min_client_size.max(1);
    let required = min_per_client * client_count;
    if data.len() < required {
        return Err(Error::Partition {
            available: data.len(),
            clients: client_count,
            required,
            min_per_client,
        });
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let assignments = stratified_deal(
        data.labels(),
        &rows,
        data.schema().class_count(),
        client_count,
        seed,
    );
    Ok(ClientPartition {
        assignments,
        client_count,
        seed,
    })
}

/// Cross-validation folds over a subset of rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub rows: Vec<usize>,
    /// Fold index of `rows[i]`.
    pub fold_ids: Vec<u32>,
    pub fold_count: usize,
    pub seed: u64,
}

impl FoldSplit {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.fold_ids)
            .filter(|(_, &f)| f as usize == fold)
            .map(|(&r, _)| r)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.fold_ids)
            .filter(|(_, &f)| f as usize != fold)
            .map(|(&r, _)| r)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.fold_ids {
            sizes[f as usize] += 1;
        }
        sizes
    }
}

pub fn make_folds(
    data: &DiscreteDataset,
    rows: &[usize],
    fold_count: usize,
    seed: u64,
) -> Result<FoldSplit> {
    if fold_count == 0 {
        return Err(Error::Fold("fold count must be positive".into()));
    }
    if rows.len() < fold_count {
        return Err(Error::Fold(format!(
            "{} instances cannot fill {fold_count} folds",
            rows.len()
        )));
    }
    let fold_ids = stratified_deal(
        data.labels(),
        rows,
        data.schema().class_count(),
        fold_count,
        seed,
    );
    Ok(FoldSplit {
        rows: rows.to_vec(),
        fold_ids,
        fold_count,
        seed,
    })
}

/// Audit record mapping each instance to its client and fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDump {
    pub dataset: PathBuf,
    pub client_count: usize,
    pub fold_count: usize,
    pub partition_seed: u64,
    pub instances: Vec<SplitEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitEntry {
    pub instance: usize,
    pub client: u32,
    pub fold: u32,
}

impl SplitDump {
    pub fn new(dataset: PathBuf, partition: &ClientPartition, folds: &[FoldSplit]) -> Self {
        let mut instances: Vec<SplitEntry> = folds
            .iter()
            .enumerate()
            .flat_map(|(c, split)| {
                split.rows.iter().zip(&split.fold_ids).map(move |(&r, &f)| SplitEntry {
                    instance: r,
                    client: c as u32,
                    fold: f,
                })
            })
            .collect();
        instances.sort_by_key(|e| e.instance);
        Self {
            dataset,
            client_count: partition.client_count,
            fold_count: folds.first().map_or(0, |f| f.fold_count),
            partition_seed: partition.seed,
            instances,
        }
    }
}
