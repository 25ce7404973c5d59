//! Experiment orchestration: choose inputs and an output, filter to rows
//! where everything is present, train networks over several seeded runs,
//! and score against simple baselines.
//!
//! Also provides batch helpers: enumerating input subsets, pruning results
//! that fail to improve on their sub-experiments, scanning evaluation
//! points over a complex grid, and per-class mean tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{FeatureDescriptor, FeatureError, FeatureSet};
use crate::ingest::{Dataset, IngestError, InvariantKind, Value};
use crate::nn::{
    split, train, NetError, NetworkConfig, Predictions, Task, TrainedNetwork,
};
use crate::polynomial::PolynomialError;
use crate::seed::derive_seed;

/// Results below this accuracy are dropped during pruning.
pub const PRUNE_THRESHOLD: f64 = 0.80;

/// Combinations with at most this many complete rows are skipped.
pub const MIN_KNOTS: usize = 1000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("predicted and actual lengths differ: {predicted} vs {actual}")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("relative error undefined: actual value at index {index} is zero")]
    ZeroActual { index: usize },
    #[error("no rows to score")]
    EmptyData,
    #[error("{rows} usable rows is not more than the minimum of {min}")]
    InsufficientData { rows: usize, min: usize },
    #[error("output {column:?} may not also serve as an input")]
    SelfPrediction { column: String },
    #[error("column {column:?} has kind {kind} and cannot be an output")]
    UnsupportedOutput { column: String, kind: String },
    #[error("an experiment takes 1 to 3 inputs, got {0}")]
    ArityOutOfRange(usize),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("grid step {0} must lie in (0, 2]")]
    BadStep(f64),
    #[error("column {0:?} does not hold integer classes")]
    NonIntegerGroup(String),
    #[error("manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
    #[error("model bundle line {line}: {detail}")]
    BadBundle { line: usize, detail: String },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// What kind of learning problem the output column poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentTask {
    Classification,
    Regression,
}

impl std::fmt::Display for ExperimentTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentTask::Classification => write!(f, "classification"),
            ExperimentTask::Regression => write!(f, "regression"),
        }
    }
}

/// Picks the task from the output column's kind: integer-valued columns are
/// classified, real-valued columns are regressed.
pub fn task_for_output(ds: &Dataset, output: &str) -> Result<ExperimentTask, ExperimentError> {
    let kind = ds.kind(output)?;
    match kind {
        InvariantKind::IntegerClass | InvariantKind::BooleanFlag => {
            Ok(ExperimentTask::Classification)
        }
        InvariantKind::RealValue => Ok(ExperimentTask::Regression),
        other => Err(ExperimentError::UnsupportedOutput {
            column: output.to_string(),
            kind: other.to_string(),
        }),
    }
}

/// One experiment: which features predict which invariant, over how many
/// independently seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    inputs: Vec<FeatureDescriptor>,
    output: String,
    task: ExperimentTask,
    runs: usize,
    seed_base: u64,
}

impl ExperimentSpec {
    /// Validates arity and self-prediction; inputs are kept in canonical
    /// (sorted) order so `{a,b}` and `{b,a}` are the same experiment.
    pub fn new(
        inputs: Vec<FeatureDescriptor>,
        output: &str,
        task: ExperimentTask,
        runs: usize,
        seed_base: u64,
    ) -> Result<Self, ExperimentError> {
        if inputs.is_empty() || inputs.len() > 3 {
            return Err(ExperimentError::ArityOutOfRange(inputs.len()));
        }
        if runs == 0 {
            return Err(ExperimentError::NoRuns);
        }
        if let Some(d) = inputs.iter().find(|d| d.primary_column() == output) {
            return Err(ExperimentError::SelfPrediction {
                column: d.primary_column().to_string(),
            });
        }
        let mut inputs = inputs;
        inputs.sort_by_key(|d| d.to_string());
        Ok(Self {
            inputs,
            output: output.to_string(),
            task,
            runs,
            seed_base,
        })
    }

    pub fn inputs(&self) -> &[FeatureDescriptor] {
        &self.inputs
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn task(&self) -> ExperimentTask {
        self.task
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    /// Canonical `input&...&output` string; also the seed-derivation tag,
    /// so run seeds depend on what is learned but not on enumeration order.
    pub fn descriptor_string(&self) -> String {
        let mut parts: Vec<String> = self.inputs.iter().map(|d| d.to_string()).collect();
        parts.push(self.output.clone());
        parts.join("&")
    }

    /// Seed for one run of this experiment.
    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed_base, &self.descriptor_string(), run as u64)
    }
}

/// Training knobs shared by a batch of experiments.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub min_knots: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub footnote_loss: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            min_knots: MIN_KNOTS,
            hidden_layers: 3,
            hidden_width: 100,
            epochs: 100,
            batch_size: 32,
            train_fraction: 0.8,
            footnote_loss: false,
        }
    }
}

impl RunSettings {
    fn network_config(&self, task: Task, seed: u64) -> NetworkConfig {
        let mut config = match task {
            Task::Classification { num_classes } => NetworkConfig::classification(num_classes, seed),
            Task::Regression => NetworkConfig::regression(seed),
        };
        config.hidden_layers = self.hidden_layers;
        config.hidden_width = self.hidden_width;
        config.epochs = self.epochs;
        config.batch_size = self.batch_size;
        config.train_fraction = self.train_fraction;
        config.footnote_loss = self.footnote_loss;
        config
    }
}

/// Outcome of one experiment: mean test accuracy over runs, the baseline on
/// the same rows, and how many knots were usable.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub inputs: Vec<String>,
    pub output: String,
    pub task: ExperimentTask,
    pub accuracy: f64,
    pub per_run: Vec<f64>,
    pub baseline: f64,
    pub n_knots: usize,
}

/// [`ExperimentResult`] plus the pieces needed for relevance analysis.
pub struct ExperimentArtifacts {
    pub result: ExperimentResult,
    /// One trained network per run, in run order.
    pub networks: Vec<TrainedNetwork>,
    pub features: FeatureSet,
    /// The filtered, preprocessed rows the networks saw.
    pub data: Dataset,
}

/// Mean relative accuracy: 1 - mean(|predicted - actual| / |actual|).
/// Perfect predictions score 1; errors can push it below 0.
pub fn accuracy_regression(predicted: &[f64], actual: &[f64]) -> Result<f64, ExperimentError> {
    if predicted.len() != actual.len() {
        return Err(ExperimentError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(ExperimentError::EmptyData);
    }
    let mut total = 0.0;
    for (index, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
        if a == 0.0 {
            return Err(ExperimentError::ZeroActual { index });
        }
        total += ((p - a) / a).abs();
    }
    Ok(1.0 - total / actual.len() as f64)
}

/// Fraction of exact matches.
pub fn accuracy_classification(predicted: &[i64], actual: &[i64]) -> Result<f64, ExperimentError> {
    if predicted.len() != actual.len() {
        return Err(ExperimentError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(ExperimentError::EmptyData);
    }
    let hits = predicted
        .iter()
        .zip(actual)
        .filter(|(p, a)| p == a)
        .count();
    Ok(hits as f64 / actual.len() as f64)
}

/// Constant-predictor accuracy on the rows where `target` is present:
/// classification uses the most common value's frequency, regression the
/// relative accuracy of always predicting the mean.
pub fn baseline(
    ds: &Dataset,
    target: &str,
    task: ExperimentTask,
) -> Result<f64, ExperimentError> {
    let idx = ds.column_index(target)?;
    match task {
        ExperimentTask::Classification => {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            let mut total = 0usize;
            for row in 0..ds.len() {
                if let Some(v) = ds.value(row, idx).and_then(Value::as_i64) {
                    *counts.entry(v).or_insert(0) += 1;
                    total += 1;
                }
            }
            let best = counts.values().max().copied().ok_or(ExperimentError::EmptyData)?;
            Ok(best as f64 / total as f64)
        }
        ExperimentTask::Regression => {
            let values: Vec<f64> = (0..ds.len())
                .filter_map(|row| ds.value(row, idx).and_then(Value::as_f64))
                .collect();
            if values.is_empty() {
                return Err(ExperimentError::EmptyData);
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let constant = vec![mean; values.len()];
            accuracy_regression(&constant, &values)
        }
    }
}

/// Filters to rows where every needed column is present and applies the
/// output preprocessing: regression drops zero targets, classification
/// shifts labels to start at 0 (returning the offset).
fn prepare_rows(
    ds: &Dataset,
    spec: &ExperimentSpec,
) -> Result<(Dataset, i64), ExperimentError> {
    let mut required: BTreeSet<&str> = BTreeSet::new();
    for d in &spec.inputs {
        required.extend(d.required_columns());
    }
    required.insert(&spec.output);
    let required: Vec<&str> = required.into_iter().collect();
    let complete = ds.complete_rows(&required)?;
    Ok(match spec.task {
        ExperimentTask::Regression => (complete.preprocess_output_regression(&spec.output)?, 0),
        ExperimentTask::Classification => {
            let (prepared, offset) = complete.preprocess_output_classification(&spec.output)?;
            (prepared, offset)
        }
    })
}

/// Rows that would survive [`prepare_rows`]; used when enumerating.
fn usable_rows(
    ds: &Dataset,
    inputs: &[FeatureDescriptor],
    output: &str,
    task: ExperimentTask,
) -> Result<usize, ExperimentError> {
    let mut required: BTreeSet<&str> = BTreeSet::new();
    for d in inputs {
        required.extend(d.required_columns());
    }
    required.insert(output);
    let required: Vec<&str> = required.into_iter().collect();
    let complete = ds.complete_rows(&required)?;
    Ok(match task {
        ExperimentTask::Regression => complete.preprocess_output_regression(output)?.len(),
        ExperimentTask::Classification => complete.len(),
    })
}

/// Runs an experiment end to end, returning the trained networks and the
/// feature layout alongside the scores.
pub fn run_experiment_detailed(
    ds: &Dataset,
    spec: &ExperimentSpec,
    settings: &RunSettings,
) -> Result<ExperimentArtifacts, ExperimentError> {
    let (prepared, offset) = prepare_rows(ds, spec)?;
    let n_knots = prepared.len();
    if n_knots <= settings.min_knots {
        return Err(ExperimentError::InsufficientData {
            rows: n_knots,
            min: settings.min_knots,
        });
    }
    let features = FeatureSet::resolve(&prepared, &spec.inputs)?;
    let x = features.build_matrix(&prepared)?;
    let out_idx = prepared.column_index(&spec.output)?;
    // classification targets are already shifted to 0-based labels by the
    // preprocessing; regression targets pass through unchanged
    let mut y = Array1::zeros(n_knots);
    for row in 0..n_knots {
        y[row] = prepared
            .value(row, out_idx)
            .and_then(Value::as_f64)
            .ok_or(ExperimentError::EmptyData)?;
    }
    let task = match spec.task {
        ExperimentTask::Classification => {
            let max_label = y.iter().fold(0.0f64, |m, &v| m.max(v));
            Task::Classification {
                num_classes: (max_label as usize + 1).max(2),
            }
        }
        ExperimentTask::Regression => Task::Regression,
    };
    let baseline = baseline(&prepared, &spec.output, spec.task)?;

    let mut per_run = Vec::with_capacity(spec.runs);
    let mut networks = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let seed = spec.run_seed(run);
        let parts = split(&x, &y, settings.train_fraction, seed)?;
        let config = settings.network_config(task, seed);
        let net = train(&parts.train_x, &parts.train_y, &config)?.with_label_offset(offset);
        let accuracy = match spec.task {
            ExperimentTask::Classification => {
                let predicted = match net.predict(&parts.test_x)? {
                    Predictions::Labels(l) => l,
                    Predictions::Values(_) => unreachable!("classification yields labels"),
                };
                let actual: Vec<i64> = parts
                    .test_y
                    .iter()
                    .map(|&v| v as i64 + offset)
                    .collect();
                accuracy_classification(&predicted.to_vec(), &actual)?
            }
            ExperimentTask::Regression => {
                let predicted = net.predict_values(&parts.test_x)?;
                accuracy_regression(&predicted.to_vec(), &parts.test_y.to_vec())?
            }
        };
        per_run.push(accuracy);
        networks.push(net);
    }
    let accuracy = per_run.iter().sum::<f64>() / per_run.len() as f64;
    Ok(ExperimentArtifacts {
        result: ExperimentResult {
            inputs: spec.inputs.iter().map(|d| d.to_string()).collect(),
            output: spec.output.clone(),
            task: spec.task,
            accuracy,
            per_run,
            baseline,
            n_knots,
        },
        networks,
        features,
        data: prepared,
    })
}

pub fn run_experiment(
    ds: &Dataset,
    spec: &ExperimentSpec,
    settings: &RunSettings,
) -> Result<ExperimentResult, ExperimentError> {
    run_experiment_detailed(ds, spec, settings).map(|a| a.result)
}

/// Runs many experiments in parallel, preserving order. Individual
/// failures abort the batch.
pub fn run_many(
    ds: &Dataset,
    specs: &[ExperimentSpec],
    settings: &RunSettings,
) -> Result<Vec<ExperimentResult>, ExperimentError> {
    specs
        .par_iter()
        .map(|spec| run_experiment(ds, spec, settings))
        .collect()
}

/// How [`enumerate_experiments`] builds its batch.
#[derive(Debug, Clone)]
pub struct EnumerationPlan {
    pub max_arity: usize,
    pub runs: usize,
    pub seed_base: u64,
    pub min_knots: usize,
}

impl Default for EnumerationPlan {
    fn default() -> Self {
        Self {
            max_arity: 3,
            runs: 1,
            seed_base: 0,
            min_knots: MIN_KNOTS,
        }
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance the rightmost index that can still move
        let mut i = k;
        while i > 0 {
            i -= 1;
            if idx[i] != i + n - k {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return out;
            }
        }
    }
}

/// Every unordered subset of 1 to `max_arity` input columns crossed with
/// every output, skipping self-prediction and combinations with too few
/// usable rows.
pub fn enumerate_experiments(
    ds: &Dataset,
    input_columns: &[String],
    outputs: &[String],
    plan: &EnumerationPlan,
) -> Result<Vec<ExperimentSpec>, ExperimentError> {
    for name in input_columns {
        ds.column_index(name)?;
    }
    let mut specs = Vec::new();
    for size in 1..=plan.max_arity.min(input_columns.len()) {
        for combo in combinations(input_columns.len(), size) {
            let inputs: Vec<FeatureDescriptor> = combo
                .iter()
                .map(|&i| FeatureDescriptor::Named(input_columns[i].clone()))
                .collect();
            for output in outputs {
                if inputs.iter().any(|d| d.primary_column() == output) {
                    continue;
                }
                let task = task_for_output(ds, output)?;
                if usable_rows(ds, &inputs, output, task)? <= plan.min_knots {
                    continue;
                }
                specs.push(ExperimentSpec::new(
                    inputs.clone(),
                    output,
                    task,
                    plan.runs,
                    plan.seed_base,
                )?);
            }
        }
    }
    Ok(specs)
}

/// A retained result; `missing_subsets` lists sub-experiments that were not
/// in the batch, so the comparison could not be made.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedResult {
    pub result: ExperimentResult,
    pub missing_subsets: Vec<Vec<String>>,
}

/// Keeps single-input results, and multi-input results only when they
/// strictly beat every available sub-experiment on the same output and
/// exceed `threshold`. Results whose subsets are absent are kept but
/// flagged. Output order follows input order; the operation is idempotent.
pub fn prune_results(results: &[ExperimentResult], threshold: f64) -> Vec<PrunedResult> {
    let mut best: BTreeMap<(Vec<String>, String), f64> = BTreeMap::new();
    for r in results {
        let mut key = r.inputs.clone();
        key.sort();
        let entry = best.entry((key, r.output.clone())).or_insert(f64::NEG_INFINITY);
        *entry = entry.max(r.accuracy);
    }
    let mut kept = Vec::new();
    for r in results {
        let mut inputs = r.inputs.clone();
        inputs.sort();
        if inputs.len() == 1 {
            kept.push(PrunedResult {
                result: r.clone(),
                missing_subsets: Vec::new(),
            });
            continue;
        }
        if !(r.accuracy > threshold) {
            continue;
        }
        let mut missing = Vec::new();
        let mut dominated = false;
        for size in 1..inputs.len() {
            for combo in combinations(inputs.len(), size) {
                let subset: Vec<String> = combo.iter().map(|&i| inputs[i].clone()).collect();
                match best.get(&(subset.clone(), r.output.clone())) {
                    Some(&sub_acc) => {
                        if r.accuracy <= sub_acc {
                            dominated = true;
                        }
                    }
                    None => missing.push(subset),
                }
            }
        }
        if !dominated {
            kept.push(PrunedResult {
                result: r.clone(),
                missing_subsets: missing,
            });
        }
    }
    kept
}

/// Accuracy of learning `output` from a polynomial evaluated at one grid
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub re: f64,
    pub im: f64,
    pub accuracy: f64,
}

/// Scan results over the upper half of the square with corners -1-i and
/// 1+i (points with negative imaginary part mirror by conjugation).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub step: f64,
    pub cells: Vec<ScanCell>,
}

fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Trains `runs` networks per grid point on the real and imaginary part of
/// `poly_column` evaluated there. Points where evaluation is impossible
/// (a pole at the origin for polynomials with negative exponents) are
/// omitted; any other failure aborts the scan.
pub fn scan_grid(
    ds: &Dataset,
    poly_column: &str,
    output: &str,
    step: f64,
    runs: usize,
    seed_base: u64,
    settings: &RunSettings,
) -> Result<ScanGrid, ExperimentError> {
    if !(step > 0.0 && step <= 2.0) {
        return Err(ExperimentError::BadStep(step));
    }
    let task = task_for_output(ds, output)?;
    let re_ticks = (2.0 / step + 1e-9).floor() as i64;
    let im_ticks = (1.0 / step + 1e-9).floor() as i64;
    let mut points = Vec::new();
    for i in 0..=re_ticks {
        for j in 0..=im_ticks {
            points.push((
                snap(-1.0 + i as f64 * step),
                snap(j as f64 * step),
            ));
        }
    }
    let cells: Vec<Option<ScanCell>> = points
        .par_iter()
        .map(|&(re, im)| {
            let point = num_complex::Complex64::new(re, im);
            let spec = ExperimentSpec::new(
                vec![FeatureDescriptor::eval(poly_column, point)],
                output,
                task,
                runs,
                seed_base,
            )?;
            match run_experiment(ds, &spec, settings) {
                Ok(result) => Ok(Some(ScanCell {
                    re,
                    im,
                    accuracy: result.accuracy,
                })),
                Err(ExperimentError::Feature(FeatureError::Derivation {
                    source:
                        PolynomialError::EvaluationAtPole { .. }
                        | PolynomialError::NonFiniteEvaluation { .. },
                    ..
                })) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(ScanGrid {
        step,
        cells: cells.into_iter().flatten().collect(),
    })
}

/// Mean and spread of `target` within each class of `group_by`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub value: i64,
    pub mean: f64,
    pub stddev: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanTable {
    pub group_by: String,
    pub target: String,
    pub groups: Vec<GroupStat>,
    /// Accuracy of predicting each row's group mean.
    pub predictor_accuracy: f64,
    /// Accuracy of predicting the global mean everywhere, for comparison.
    pub global_mean_accuracy: f64,
    pub n: usize,
}

/// Groups `target` by the integer classes of `group_by` over rows where
/// both are present (zero targets dropped, as for regression outputs).
pub fn mean_table(
    ds: &Dataset,
    group_by: &str,
    target: &str,
) -> Result<MeanTable, ExperimentError> {
    if !ds.kind(group_by)?.is_integer() {
        return Err(ExperimentError::NonIntegerGroup(group_by.to_string()));
    }
    let complete = ds.complete_rows(&[group_by, target])?;
    let prepared = complete.preprocess_output_regression(target)?;
    let g_idx = prepared.column_index(group_by)?;
    let t_idx = prepared.column_index(target)?;
    let mut by_group: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(prepared.len());
    for row in 0..prepared.len() {
        let g = prepared
            .value(row, g_idx)
            .and_then(Value::as_i64)
            .ok_or_else(|| ExperimentError::NonIntegerGroup(group_by.to_string()))?;
        let t = prepared
            .value(row, t_idx)
            .and_then(Value::as_f64)
            .ok_or(ExperimentError::EmptyData)?;
        by_group.entry(g).or_default().push(t);
        pairs.push((g, t));
    }
    if pairs.is_empty() {
        return Err(ExperimentError::EmptyData);
    }
    let mut groups = Vec::with_capacity(by_group.len());
    let mut means: BTreeMap<i64, f64> = BTreeMap::new();
    for (&value, values) in &by_group {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        means.insert(value, mean);
        groups.push(GroupStat {
            value,
            mean,
            stddev: variance.sqrt(),
            count,
        });
    }
    let actual: Vec<f64> = pairs.iter().map(|&(_, t)| t).collect();
    let by_group_pred: Vec<f64> = pairs.iter().map(|&(g, _)| means[&g]).collect();
    let global_mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let global_pred = vec![global_mean; actual.len()];
    Ok(MeanTable {
        group_by: group_by.to_string(),
        target: target.to_string(),
        predictor_accuracy: accuracy_regression(&by_group_pred, &actual)?,
        global_mean_accuracy: accuracy_regression(&global_pred, &actual)?,
        groups,
        n: pairs.len(),
    })
}

/// One line of an experiment manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub inputs: Vec<FeatureDescriptor>,
    pub output: String,
}

/// Parses manifest text: one experiment per line as
/// `<k> <input1[,input2[,input3]]> <output>`; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ExperimentError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let bad = |detail: String| ExperimentError::BadManifest { line, detail };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected `<k> <inputs> <output>`, got {} fields",
                fields.len()
            )));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad input count {:?}", fields[0])))?;
        let inputs = fields[1]
            .split(',')
            .map(FeatureDescriptor::parse)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        if inputs.len() != k || !(1..=3).contains(&k) {
            return Err(bad(format!(
                "input count {} does not match {} listed inputs (1 to 3 allowed)",
                k,
                inputs.len()
            )));
        }
        entries.push(ManifestEntry {
            inputs,
            output: fields[2].to_string(),
        });
    }
    Ok(entries)
}

const BUNDLE_MAGIC: &str = "knotscan-bundle v1";

/// A trained network together with the feature descriptors and output that
/// produced it, so it can be re-applied to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub inputs: Vec<FeatureDescriptor>,
    pub output: String,
    pub network: TrainedNetwork,
}

impl ModelBundle {
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{BUNDLE_MAGIC}")?;
        writeln!(out, "output {}", self.output)?;
        for d in &self.inputs {
            writeln!(out, "input {d}")?;
        }
        writeln!(out, "model")?;
        self.network.write_to(out)
    }

    pub fn read_from<R: BufRead>(input: &mut R) -> Result<Self, ExperimentError> {
        let mut line_no = 0usize;
        let mut next_line = |input: &mut R| -> Result<(usize, String), ExperimentError> {
            let mut buf = String::new();
            let n = input.read_line(&mut buf)?;
            line_no += 1;
            if n == 0 {
                return Err(ExperimentError::BadBundle {
                    line: line_no,
                    detail: "unexpected end of file".into(),
                });
            }
            Ok((line_no, buf.trim_end().to_string()))
        };
        let (line, magic) = next_line(input)?;
        if magic != BUNDLE_MAGIC {
            return Err(ExperimentError::BadBundle {
                line,
                detail: format!("expected {BUNDLE_MAGIC:?}"),
            });
        }
        let (line, output_line) = next_line(input)?;
        let output = output_line
            .strip_prefix("output ")
            .ok_or_else(|| ExperimentError::BadBundle {
                line,
                detail: "expected `output <column>`".into(),
            })?
            .to_string();
        let mut inputs = Vec::new();
        loop {
            let (line, text) = next_line(input)?;
            if text == "model" {
                break;
            }
            let desc = text
                .strip_prefix("input ")
                .ok_or_else(|| ExperimentError::BadBundle {
                    line,
                    detail: "expected `input <descriptor>` or `model`".into(),
                })?;
            inputs.push(FeatureDescriptor::parse(desc).map_err(|e| {
                ExperimentError::BadBundle {
                    line,
                    detail: e.to_string(),
                }
            })?);
        }
        if inputs.is_empty() || inputs.len() > 3 {
            return Err(ExperimentError::ArityOutOfRange(inputs.len()));
        }
        let network = TrainedNetwork::read_from(input)?;
        Ok(Self {
            inputs,
            output,
            network,
        })
    }

    pub fn save_file(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, ExperimentError> {
        let file = fs::File::open(path)?;
        let mut reader = io::BufReader::new(file);
        Self::read_from(&mut reader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_csv_text, IngestOptions};
    use approx::assert_abs_diff_eq;

    fn quick_settings() -> RunSettings {
        RunSettings {
            min_knots: 5,
            hidden_layers: 1,
            hidden_width: 16,
            epochs: 30,
            ..RunSettings::default()
        }
    }

    /// 40 rows with two numeric inputs, a polynomial input, an integer
    /// class target, and a real target.
    fn synthetic() -> Dataset {
        let mut csv = String::from("name,a,b,poly,parity,size\n");
        for i in 0..40 {
            let a = i % 5;
            let b = (i * 7) % 11;
            let parity = (a + b) % 2;
            let size = (a + 2 * b + 3) as f64;
            csv.push_str(&format!(
                "k{i},{a},{b},\"[0, {a}, {b}, 1]\",{parity},{size}\n"
            ));
        }
        ingest_csv_text(&csv, "synthetic", &IngestOptions::default()).unwrap()
    }

    fn named(names: &[&str]) -> Vec<FeatureDescriptor> {
        names
            .iter()
            .map(|n| FeatureDescriptor::Named(n.to_string()))
            .collect()
    }

    fn result(inputs: &[&str], output: &str, accuracy: f64) -> ExperimentResult {
        ExperimentResult {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
            task: ExperimentTask::Classification,
            accuracy,
            per_run: vec![accuracy],
            baseline: 0.5,
            n_knots: 2000,
        }
    }

    #[test]
    fn regression_accuracy_formula() {
        let acc = accuracy_regression(&[1.0, 4.0], &[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(acc, 1.0 - 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(
            accuracy_regression(&[3.0], &[3.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            accuracy_regression(&[1.0], &[1.0, 2.0]),
            Err(ExperimentError::LengthMismatch { .. })
        ));
        assert!(matches!(
            accuracy_regression(&[1.0], &[0.0]),
            Err(ExperimentError::ZeroActual { index: 0 })
        ));
    }

    #[test]
    fn classification_accuracy_counts_matches() {
        let acc = accuracy_classification(&[1, 2, 3, 4], &[1, 2, 0, 4]).unwrap();
        assert_abs_diff_eq!(acc, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn baseline_mode_and_mean() {
        let csv = "name,c,r\nx,1,2.0\ny,1,4.0\nz,2,6.0\n";
        let ds = ingest_csv_text(csv, "t", &IngestOptions::default()).unwrap();
        let mode = baseline(&ds, "c", ExperimentTask::Classification).unwrap();
        assert_abs_diff_eq!(mode, 2.0 / 3.0, epsilon = 1e-12);
        // mean 4: errors |4-2|/2=1, 0, |4-6|/6=1/3 -> acc 1 - 4/9
        let mean = baseline(&ds, "r", ExperimentTask::Regression).unwrap();
        assert_abs_diff_eq!(mean, 1.0 - 4.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn single_class_baseline_is_one() {
        let csv = "name,c\nx,7\ny,7\n";
        let ds = ingest_csv_text(csv, "t", &IngestOptions::default()).unwrap();
        assert_abs_diff_eq!(
            baseline(&ds, "c", ExperimentTask::Classification).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn experiment_runs_are_reproducible() {
        let ds = synthetic();
        let spec = ExperimentSpec::new(
            named(&["a", "b"]),
            "parity",
            ExperimentTask::Classification,
            2,
            42,
        )
        .unwrap();
        let first = run_experiment(&ds, &spec, &quick_settings()).unwrap();
        let second = run_experiment(&ds, &spec, &quick_settings()).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.per_run.len(), 2);
        assert_eq!(first.n_knots, 40);
    }

    #[test]
    fn input_order_does_not_change_seeds() {
        let ds = synthetic();
        let ab = ExperimentSpec::new(
            named(&["a", "b"]),
            "parity",
            ExperimentTask::Classification,
            1,
            7,
        )
        .unwrap();
        let ba = ExperimentSpec::new(
            named(&["b", "a"]),
            "parity",
            ExperimentTask::Classification,
            1,
            7,
        )
        .unwrap();
        assert_eq!(ab.descriptor_string(), ba.descriptor_string());
        let ra = run_experiment(&ds, &ab, &quick_settings()).unwrap();
        let rb = run_experiment(&ds, &ba, &quick_settings()).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn regression_experiment_beats_baseline_on_linear_target() {
        let ds = synthetic();
        let spec = ExperimentSpec::new(
            named(&["a", "b"]),
            "size",
            ExperimentTask::Regression,
            1,
            3,
        )
        .unwrap();
        let mut settings = quick_settings();
        settings.epochs = 200;
        let result = run_experiment(&ds, &spec, &settings).unwrap();
        assert!(
            result.accuracy > result.baseline,
            "accuracy {} vs baseline {}",
            result.accuracy,
            result.baseline
        );
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let ds = synthetic();
        let spec = ExperimentSpec::new(
            named(&["a"]),
            "parity",
            ExperimentTask::Classification,
            1,
            0,
        )
        .unwrap();
        let mut settings = quick_settings();
        settings.min_knots = 40;
        assert!(matches!(
            run_experiment(&ds, &spec, &settings),
            Err(ExperimentError::InsufficientData { rows: 40, min: 40 })
        ));
    }

    #[test]
    fn self_prediction_rejected() {
        assert!(matches!(
            ExperimentSpec::new(
                named(&["parity"]),
                "parity",
                ExperimentTask::Classification,
                1,
                0
            ),
            Err(ExperimentError::SelfPrediction { .. })
        ));
    }

    #[test]
    fn enumeration_counts_subsets() {
        let ds = synthetic();
        let plan = EnumerationPlan {
            max_arity: 2,
            min_knots: 5,
            ..EnumerationPlan::default()
        };
        let specs = enumerate_experiments(
            &ds,
            &["a".into(), "b".into(), "poly".into()],
            &["parity".into()],
            &plan,
        )
        .unwrap();
        // C(3,1) + C(3,2) = 6
        assert_eq!(specs.len(), 6);
        assert!(specs.iter().all(|s| s.output() == "parity"));
    }

    #[test]
    fn enumeration_skips_self_and_small() {
        let ds = synthetic();
        let plan = EnumerationPlan {
            max_arity: 1,
            min_knots: 5,
            ..EnumerationPlan::default()
        };
        let specs = enumerate_experiments(
            &ds,
            &["a".into(), "parity".into()],
            &["parity".into()],
            &plan,
        )
        .unwrap();
        assert_eq!(specs.len(), 1); // parity -> parity skipped
        let strict = EnumerationPlan {
            max_arity: 1,
            min_knots: 40,
            ..EnumerationPlan::default()
        };
        let none =
            enumerate_experiments(&ds, &["a".into()], &["parity".into()], &strict).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn pruning_rules() {
        let results = vec![
            result(&["a"], "out", 0.85),
            result(&["b"], "out", 0.50),
            result(&["a", "b"], "out", 0.90),   // beats both, above threshold
            result(&["a", "c"], "out", 0.84),   // loses to a alone
            result(&["b", "c"], "out", 0.79),   // below threshold
            result(&["b", "d"], "out", 0.88),   // d missing: flagged
        ];
        let kept = prune_results(&results, PRUNE_THRESHOLD);
        let names: Vec<&[String]> = kept.iter().map(|k| k.result.inputs.as_slice()).collect();
        assert_eq!(names.len(), 4);
        assert_eq!(names[0], ["a".to_string()]);
        assert_eq!(names[1], ["b".to_string()]);
        assert_eq!(names[2], ["a".to_string(), "b".to_string()]);
        assert_eq!(names[3], ["b".to_string(), "d".to_string()]);
        assert_eq!(kept[2].missing_subsets.len(), 0);
        assert_eq!(kept[3].missing_subsets, vec![vec!["d".to_string()]]);
        // idempotent on the retained set
        let survivors: Vec<ExperimentResult> =
            kept.iter().map(|k| k.result.clone()).collect();
        let again = prune_results(&survivors, PRUNE_THRESHOLD);
        let again_names: Vec<&[String]> =
            again.iter().map(|k| k.result.inputs.as_slice()).collect();
        assert_eq!(names, again_names);
    }

    #[test]
    fn scan_grid_step_one_covers_six_points() {
        let ds = synthetic();
        let mut settings = quick_settings();
        settings.epochs = 5;
        let grid = scan_grid(&ds, "poly", "parity", 1.0, 1, 0, &settings).unwrap();
        assert_eq!(grid.cells.len(), 6);
        let points: Vec<(f64, f64)> = grid.cells.iter().map(|c| (c.re, c.im)).collect();
        assert_eq!(
            points,
            vec![
                (-1.0, 0.0),
                (-1.0, 1.0),
                (0.0, 0.0),
                (0.0, 1.0),
                (1.0, 0.0),
                (1.0, 1.0)
            ]
        );
    }

    #[test]
    fn scan_grid_omits_pole_cells() {
        // negative exponents: evaluation at the origin has a pole
        let mut csv = String::from("name,poly,parity\n");
        for i in 0..12 {
            csv.push_str(&format!("k{i},\"[-1, 1, {}]\",{}\n", i % 3, i % 2));
        }
        let ds = ingest_csv_text(&csv, "t", &IngestOptions::default()).unwrap();
        let mut settings = quick_settings();
        settings.epochs = 5;
        let grid = scan_grid(&ds, "poly", "parity", 1.0, 1, 0, &settings).unwrap();
        assert_eq!(grid.cells.len(), 5);
        assert!(grid.cells.iter().all(|c| !(c.re == 0.0 && c.im == 0.0)));
    }

    #[test]
    fn bad_step_rejected() {
        let ds = synthetic();
        assert!(matches!(
            scan_grid(&ds, "poly", "parity", 0.0, 1, 0, &quick_settings()),
            Err(ExperimentError::BadStep(_))
        ));
    }

    #[test]
    fn mean_table_statistics() {
        let csv = "name,g,t\nw,0,1.0\nx,0,1.0\ny,1,2.0\nz,1,4.0\n";
        let ds = ingest_csv_text(csv, "t", &IngestOptions::default()).unwrap();
        let table = mean_table(&ds, "g", "t").unwrap();
        assert_eq!(table.groups.len(), 2);
        assert_eq!(table.groups[0].value, 0);
        assert_abs_diff_eq!(table.groups[0].mean, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table.groups[0].stddev, 0.0, epsilon = 1e-12);
        assert_eq!(table.groups[1].count, 2);
        assert_abs_diff_eq!(table.groups[1].mean, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table.groups[1].stddev, 1.0, epsilon = 1e-12);
        // per-group errors: 0, 0, 1/2, 1/4 -> acc 1 - 0.1875
        assert_abs_diff_eq!(table.predictor_accuracy, 0.8125, epsilon = 1e-12);
        // global mean 2: errors 1, 1, 0, 1/2 -> acc 0.375
        assert_abs_diff_eq!(table.global_mean_accuracy, 0.375, epsilon = 1e-12);
        assert!(table.predictor_accuracy > table.global_mean_accuracy);
    }

    #[test]
    fn manifest_round_trip() {
        let text = "\
# comment
1 a size
2 a,b parity

3 a,b,poly parity
";
        let entries = parse_manifest(text).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[1].inputs.len(), 2);
        assert_eq!(entries[2].output, "parity");
        assert!(matches!(
            parse_manifest("2 a size"),
            Err(ExperimentError::BadManifest { line: 1, .. })
        ));
        assert!(matches!(
            parse_manifest("1 a"),
            Err(ExperimentError::BadManifest { .. })
        ));
    }

    #[test]
    fn bundle_round_trip_preserves_predictions() {
        let ds = synthetic();
        let spec = ExperimentSpec::new(
            named(&["a", "b"]),
            "parity",
            ExperimentTask::Classification,
            1,
            11,
        )
        .unwrap();
        let arts = run_experiment_detailed(&ds, &spec, &quick_settings()).unwrap();
        let bundle = ModelBundle {
            inputs: spec.inputs().to_vec(),
            output: spec.output().to_string(),
            network: arts.networks[0].clone(),
        };
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        let restored = ModelBundle::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(restored, bundle);
        let x = arts.features.build_matrix(&arts.data).unwrap();
        assert_eq!(
            restored.network.predict(&x).unwrap(),
            bundle.network.predict(&x).unwrap()
        );
    }
}
