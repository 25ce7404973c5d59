//! Command-line front end: learn single experiments, sweep batches, scan
//! evaluation grids, inspect trained models, and query results files.
//!
//! Exit codes: 0 on success, 1 for usage problems, 2 for data or
//! processing failures.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use knotscan::experiments::{
    enumerate_experiments, mean_table, parse_manifest, prune_results, run_experiment_detailed,
    run_many, scan_grid, task_for_output, EnumerationPlan, ExperimentError, ExperimentSpec,
    ModelBundle, RunSettings, MIN_KNOTS, PRUNE_THRESHOLD,
};
use knotscan::features::{FeatureDescriptor, FeatureError, FeatureSet};
use knotscan::ingest::{ingest_csv, Dataset, Value};
use knotscan::lrp::{lrp, rank_features, relevance_csv, relevance_metadata_csv};
use knotscan::nn::Task;
use knotscan::polynomial::{determinant_feature, span, turaev_feature};
use knotscan::report::{
    append_result, emit_heatmap_plot_data, emit_latex, query, read_results_file, ColumnFilter,
    ResultQuery, ResultRow,
};

#[derive(Parser)]
#[command(
    name = "knotscan",
    version,
    about = "Learn knot invariants from other invariants with small dense networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Knot invariant CSV to learn from
    #[arg(long, default_value = "data/knotinfo_upto12.csv")]
    data: PathBuf,
    /// Skip experiments with at most this many usable rows
    #[arg(long, default_value_t = MIN_KNOTS)]
    min_knots: usize,
    /// Training epochs per run
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Hidden layers in the network
    #[arg(long, default_value_t = 3)]
    hidden_layers: usize,
    /// Units per hidden layer
    #[arg(long, default_value_t = 100)]
    hidden_width: usize,
    /// Use the alternative per-class cross-entropy
    #[arg(long)]
    footnote_loss: bool,
}

impl DataArgs {
    fn settings(&self) -> RunSettings {
        RunSettings {
            min_knots: self.min_knots,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            epochs: self.epochs,
            batch_size: self.batch_size,
            footnote_loss: self.footnote_loss,
            ..RunSettings::default()
        }
    }

    fn dataset(&self) -> Result<Dataset, CliError> {
        ingest_csv(&self.data).map_err(|e| CliError::Run(e.to_string()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train networks to predict one invariant from others and report the
    /// mean test accuracy
    Learn {
        /// How many input features follow
        num_inputs: usize,
        /// Input feature descriptors, then the output column
        #[arg(required = true)]
        columns: Vec<String>,
        /// Independently seeded runs to average
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Base seed for run derivation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append the result line to this file
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the first run's trained model bundle here
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run a batch of experiments from a manifest or by enumeration
    Sweep {
        /// Manifest file: `<k> <in1[,in2[,in3]]> <output>` per line
        #[arg(long, conflicts_with = "enumerate")]
        manifest: Option<PathBuf>,
        /// Enumerate input subsets instead of reading a manifest
        #[arg(long)]
        enumerate: bool,
        /// Candidate input columns for enumeration (comma separated)
        #[arg(long, value_delimiter = ',')]
        inputs: Vec<String>,
        /// Output columns for enumeration (comma separated)
        #[arg(long, value_delimiter = ',')]
        outputs: Vec<String>,
        /// Largest input subset to enumerate
        #[arg(long, default_value_t = 3)]
        max_arity: usize,
        /// Independently seeded runs per experiment
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Base seed for run derivation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop results that fail to improve on their sub-experiments
        #[arg(long)]
        prune: bool,
        /// Pruning accuracy threshold
        #[arg(long, default_value_t = PRUNE_THRESHOLD, allow_negative_numbers = true)]
        threshold: f64,
        /// Append result lines to this file
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Learn an output from a polynomial evaluated at each point of a
    /// complex grid and emit plot data
    Scan {
        /// Polynomial coefficient-vector column to evaluate
        #[arg(long)]
        poly: String,
        /// Output column to learn
        #[arg(long)]
        output: String,
        /// Grid spacing over the square with corners -1-i and 1+i
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Independently seeded runs per grid point
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Base seed for run derivation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write `re,im,accuracy` CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rank a saved model's input features by relevance propagation
    Lrp {
        /// Model bundle written by `learn --save-model`
        #[arg(long)]
        model: PathBuf,
        /// Write the full per-knot relevance CSV here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the feature-row metadata CSV here
        #[arg(long)]
        meta: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Filter a results file and print matching lines or a LaTeX table
    Report {
        /// Results file to query
        #[arg(long)]
        results: PathBuf,
        /// Keep only rows with this many inputs
        #[arg(long)]
        num_inputs: Option<usize>,
        /// Lowest accuracy to keep (inclusive)
        #[arg(long, allow_negative_numbers = true)]
        min_accuracy: Option<f64>,
        /// Highest accuracy to keep (inclusive)
        #[arg(long, allow_negative_numbers = true)]
        max_accuracy: Option<f64>,
        /// Fewest knots to keep (inclusive)
        #[arg(long)]
        min_knots: Option<u64>,
        /// Most knots to keep (inclusive)
        #[arg(long)]
        max_knots: Option<u64>,
        /// Input filter: ALL, POLY, or a comma-separated name list
        #[arg(long, default_value = "ALL")]
        inputs: String,
        /// Output filter: ALL or a comma-separated name list
        #[arg(long, default_value = "ALL")]
        outputs: String,
        /// Emit a LaTeX table instead of result lines
        #[arg(long)]
        latex: bool,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check derived invariants inside the dataset
    ValidateDataset {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Per-class means of a real invariant, grouped by an integer invariant
    MeanTable {
        /// Integer column to group by
        #[arg(long)]
        group_by: String,
        /// Real column to average
        #[arg(long)]
        target: String,
        #[command(flatten)]
        data: DataArgs,
    },
}

enum CliError {
    Usage(String),
    Run(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::ArityOutOfRange(_)
            | ExperimentError::SelfPrediction { .. }
            | ExperimentError::NoRuns
            | ExperimentError::BadStep(_) => CliError::Usage(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and succeed
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        match e {
            CliError::Usage(msg) => {
                eprintln!("usage error: {msg}");
                std::process::exit(1);
            }
            CliError::Run(msg) => {
                eprintln!("error: {msg}");
                std::process::exit(2);
            }
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Learn {
            num_inputs,
            columns,
            runs,
            seed,
            out,
            save_model,
            data,
        } => learn(num_inputs, &columns, runs, seed, out, save_model, &data),
        Command::Sweep {
            manifest,
            enumerate,
            inputs,
            outputs,
            max_arity,
            runs,
            seed,
            prune,
            threshold,
            out,
            data,
        } => sweep(
            manifest, enumerate, &inputs, &outputs, max_arity, runs, seed, prune, threshold, out,
            &data,
        ),
        Command::Scan {
            poly,
            output,
            step,
            runs,
            seed,
            out,
            data,
        } => scan(&poly, &output, step, runs, seed, out, &data),
        Command::Lrp {
            model,
            out,
            meta,
            data,
        } => lrp_command(&model, out, meta, &data),
        Command::Report {
            results,
            num_inputs,
            min_accuracy,
            max_accuracy,
            min_knots,
            max_knots,
            inputs,
            outputs,
            latex,
            out,
        } => report(
            &results,
            num_inputs,
            min_accuracy,
            max_accuracy,
            min_knots,
            max_knots,
            &inputs,
            &outputs,
            latex,
            out,
        ),
        Command::ValidateDataset { data } => validate_dataset(&data),
        Command::MeanTable {
            group_by,
            target,
            data,
        } => mean_table_command(&group_by, &target, &data),
    }
}

fn parse_descriptors(names: &[String]) -> Result<Vec<FeatureDescriptor>, CliError> {
    names
        .iter()
        .map(|n| {
            FeatureDescriptor::parse(n).map_err(|e| match e {
                FeatureError::BadDescriptor(_) => CliError::Usage(e.to_string()),
                other => CliError::Run(other.to_string()),
            })
        })
        .collect()
}

fn write_or_print(out: Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(&path, text).map_err(|e| CliError::Run(e.to_string())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn learn(
    num_inputs: usize,
    columns: &[String],
    runs: usize,
    seed: u64,
    out: Option<PathBuf>,
    save_model: Option<PathBuf>,
    data: &DataArgs,
) -> Result<(), CliError> {
    if columns.len() != num_inputs + 1 {
        return Err(CliError::Usage(format!(
            "expected {num_inputs} inputs and 1 output, got {} names",
            columns.len()
        )));
    }
    let descriptors = parse_descriptors(&columns[..num_inputs])?;
    let output = &columns[num_inputs];
    let ds = data.dataset()?;
    let task = task_for_output(&ds, output)?;
    let spec = ExperimentSpec::new(descriptors, output, task, runs, seed)?;
    let artifacts = run_experiment_detailed(&ds, &spec, &data.settings())?;
    let row = ResultRow::from(&artifacts.result);
    println!("{}", row.to_line());
    if let Some(path) = out {
        append_result(&path, &row).map_err(|e| CliError::Run(e.to_string()))?;
    }
    if let Some(path) = save_model {
        let bundle = ModelBundle {
            inputs: spec.inputs().to_vec(),
            output: spec.output().to_string(),
            network: artifacts.networks[0].clone(),
        };
        bundle
            .save_file(&path)
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    manifest: Option<PathBuf>,
    enumerate: bool,
    inputs: &[String],
    outputs: &[String],
    max_arity: usize,
    runs: usize,
    seed: u64,
    prune: bool,
    threshold: f64,
    out: Option<PathBuf>,
    data: &DataArgs,
) -> Result<(), CliError> {
    if manifest.is_none() && !enumerate {
        return Err(CliError::Usage(
            "pass exactly one of --manifest or --enumerate".into(),
        ));
    }
    let ds = data.dataset()?;
    let specs: Vec<ExperimentSpec> = match (&manifest, enumerate) {
        (Some(path), false) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Run(e.to_string()))?;
            parse_manifest(&text)?
                .into_iter()
                .map(|entry| {
                    let task = task_for_output(&ds, &entry.output)?;
                    ExperimentSpec::new(entry.inputs, &entry.output, task, runs, seed)
                })
                .collect::<Result<_, _>>()?
        }
        (None, true) => {
            if inputs.is_empty() || outputs.is_empty() {
                return Err(CliError::Usage(
                    "--enumerate needs --inputs and --outputs".into(),
                ));
            }
            let plan = EnumerationPlan {
                max_arity,
                runs,
                seed_base: seed,
                min_knots: data.min_knots,
            };
            enumerate_experiments(&ds, inputs, outputs, &plan)?
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --manifest or --enumerate".into(),
            ));
        }
    };
    let results = run_many(&ds, &specs, &data.settings())?;
    let rows: Vec<ResultRow> = if prune {
        let kept = prune_results(&results, threshold);
        for k in &kept {
            for subset in &k.missing_subsets {
                eprintln!(
                    "note: kept {} -> {} without sub-experiment {}",
                    k.result.inputs.join("&"),
                    k.result.output,
                    subset.join("&")
                );
            }
        }
        kept.iter().map(|k| ResultRow::from(&k.result)).collect()
    } else {
        results.iter().map(ResultRow::from).collect()
    };
    for row in &rows {
        println!("{}", row.to_line());
        if let Some(path) = &out {
            append_result(path, row).map_err(|e| CliError::Run(e.to_string()))?;
        }
    }
    Ok(())
}

fn scan(
    poly: &str,
    output: &str,
    step: f64,
    runs: usize,
    seed: u64,
    out: Option<PathBuf>,
    data: &DataArgs,
) -> Result<(), CliError> {
    let ds = data.dataset()?;
    let grid = scan_grid(&ds, poly, output, step, runs, seed, &data.settings())?;
    let csv = emit_heatmap_plot_data(&grid).map_err(|e| CliError::Run(e.to_string()))?;
    write_or_print(out, &csv)
}

fn lrp_command(
    model: &Path,
    out: Option<PathBuf>,
    meta: Option<PathBuf>,
    data: &DataArgs,
) -> Result<(), CliError> {
    let bundle = ModelBundle::load_file(model)?;
    let ds = data.dataset()?;
    let mut required: Vec<&str> = bundle
        .inputs
        .iter()
        .flat_map(|d| d.required_columns())
        .collect();
    required.push(&bundle.output);
    required.sort_unstable();
    required.dedup();
    let complete = ds
        .complete_rows(&required)
        .map_err(|e| CliError::Run(e.to_string()))?;
    // rebuild the training row set so flattening windows line up
    let prepared = match bundle.network.config().task {
        Task::Regression => complete
            .preprocess_output_regression(&bundle.output)
            .map_err(|e| CliError::Run(e.to_string()))?,
        Task::Classification { .. } => complete,
    };
    let features = FeatureSet::resolve(&prepared, &bundle.inputs)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let matrix = features
        .build_matrix(&prepared)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let map = lrp(&bundle.network, &matrix).map_err(|e| CliError::Run(e.to_string()))?;
    let names = features.column_names();
    let n = map.per_sample.nrows().max(1) as f64;
    for index in rank_features(&map) {
        let mean_abs: f64 =
            map.per_sample.column(index).iter().map(|v| v.abs()).sum::<f64>() / n;
        println!("{}\t{}", names[index], mean_abs);
    }
    if let Some(path) = out {
        let ids: Vec<String> = prepared
            .records()
            .iter()
            .map(|r| r.knot_id.clone())
            .collect();
        fs::write(&path, relevance_csv(&map, &ids)).map_err(|e| CliError::Run(e.to_string()))?;
    }
    if let Some(path) = meta {
        fs::write(&path, relevance_metadata_csv(&names))
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

fn parse_filter(value: &str, allow_poly: bool) -> Result<ColumnFilter, CliError> {
    match value {
        "ALL" => Ok(ColumnFilter::All),
        "POLY" if allow_poly => Ok(ColumnFilter::Poly),
        other => {
            let names: Vec<String> = other
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if names.is_empty() {
                return Err(CliError::Usage(format!("empty column filter {other:?}")));
            }
            Ok(ColumnFilter::Named(names))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    results: &Path,
    num_inputs: Option<usize>,
    min_accuracy: Option<f64>,
    max_accuracy: Option<f64>,
    min_knots: Option<u64>,
    max_knots: Option<u64>,
    inputs: &str,
    outputs: &str,
    latex: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let rows = read_results_file(results).map_err(|e| CliError::Run(e.to_string()))?;
    let q = ResultQuery {
        num_inputs,
        min_accuracy: min_accuracy.unwrap_or(f64::NEG_INFINITY),
        max_accuracy: max_accuracy.unwrap_or(f64::INFINITY),
        min_knots: min_knots.unwrap_or(0),
        max_knots: max_knots.unwrap_or(u64::MAX),
        inputs: parse_filter(inputs, true)?,
        outputs: parse_filter(outputs, false)?,
    };
    let hits = query(&rows, &q);
    let text = if latex {
        emit_latex(&hits).map_err(|e| CliError::Run(e.to_string()))?
    } else {
        let mut lines = String::new();
        for row in &hits {
            lines.push_str(&row.to_line());
            lines.push('\n');
        }
        lines
    };
    write_or_print(out, &text)
}

fn validate_dataset(data: &DataArgs) -> Result<(), CliError> {
    let ds = data.dataset()?;
    let run = |e: &dyn std::fmt::Display| CliError::Run(e.to_string());

    // determinant identity across both polynomials
    let det_rows = ds
        .complete_rows(&[
            "jones_polynomial_vector",
            "alexander_polynomial_vector",
            "determinant",
        ])
        .map_err(|e| run(&e))?;
    let jones_idx = det_rows.column_index("jones_polynomial_vector").map_err(|e| run(&e))?;
    let alex_idx = det_rows
        .column_index("alexander_polynomial_vector")
        .map_err(|e| run(&e))?;
    let det_idx = det_rows.column_index("determinant").map_err(|e| run(&e))?;
    let mut det_mismatches = 0usize;
    let mut residual_violations = 0usize;
    for row in 0..det_rows.len() {
        let jones = det_rows.value(row, jones_idx).and_then(Value::as_poly);
        let alex = det_rows.value(row, alex_idx).and_then(Value::as_poly);
        let det = det_rows.value(row, det_idx).and_then(Value::as_i64);
        let (Some(jones), Some(alex), Some(det)) = (jones, alex, det) else {
            continue;
        };
        let dj = determinant_feature(jones).map_err(|e| run(&e))?;
        let da = determinant_feature(alex).map_err(|e| run(&e))?;
        if !(dj.within_tolerance() && da.within_tolerance()) {
            residual_violations += 1;
        }
        if dj.value != det as u64 || da.value != det as u64 {
            det_mismatches += 1;
        }
    }
    println!(
        "determinant identity: {} rows, {} mismatches, {} residual violations",
        det_rows.len(),
        det_mismatches,
        residual_violations
    );

    // genus bound from crossing number minus span
    let genus_rows = ds
        .complete_rows(&["jones_polynomial_vector", "crossing_number", "turaev_genus"])
        .map_err(|e| run(&e))?;
    let jones_idx = genus_rows
        .column_index("jones_polynomial_vector")
        .map_err(|e| run(&e))?;
    let crossing_idx = genus_rows.column_index("crossing_number").map_err(|e| run(&e))?;
    let genus_idx = genus_rows.column_index("turaev_genus").map_err(|e| run(&e))?;
    let mut bound_violations = 0usize;
    for row in 0..genus_rows.len() {
        let jones = genus_rows.value(row, jones_idx).and_then(Value::as_poly);
        let crossing = genus_rows.value(row, crossing_idx).and_then(Value::as_i64);
        let genus = genus_rows.value(row, genus_idx).and_then(Value::as_i64);
        let (Some(jones), Some(crossing), Some(genus)) = (jones, crossing, genus) else {
            continue;
        };
        let bound = turaev_feature(jones, crossing as u32).map_err(|e| run(&e))?;
        if genus > bound {
            bound_violations += 1;
        }
    }
    println!(
        "genus bound: {} rows, {} violations",
        genus_rows.len(),
        bound_violations
    );

    // alternating knots: polynomial span equals crossing number
    let alt_rows = ds
        .complete_rows(&["jones_polynomial_vector", "crossing_number", "alternating"])
        .map_err(|e| run(&e))?;
    let jones_idx = alt_rows
        .column_index("jones_polynomial_vector")
        .map_err(|e| run(&e))?;
    let crossing_idx = alt_rows.column_index("crossing_number").map_err(|e| run(&e))?;
    let alt_idx = alt_rows.column_index("alternating").map_err(|e| run(&e))?;
    let mut checked = 0usize;
    let mut span_mismatches = 0usize;
    for row in 0..alt_rows.len() {
        let jones = alt_rows.value(row, jones_idx).and_then(Value::as_poly);
        let crossing = alt_rows.value(row, crossing_idx).and_then(Value::as_i64);
        let alternating = alt_rows.value(row, alt_idx).and_then(Value::as_i64);
        let (Some(jones), Some(crossing), Some(1)) = (jones, crossing, alternating) else {
            continue;
        };
        checked += 1;
        if jones.is_zero() {
            continue;
        }
        if i64::from(span(jones).map_err(|e| run(&e))?) != crossing {
            span_mismatches += 1;
        }
    }
    println!(
        "alternating span: {checked} rows, {span_mismatches} mismatches"
    );

    if det_mismatches + residual_violations + bound_violations + span_mismatches > 0 {
        return Err(CliError::Run("dataset validation failed".into()));
    }
    Ok(())
}

fn mean_table_command(group_by: &str, target: &str, data: &DataArgs) -> Result<(), CliError> {
    let ds = data.dataset()?;
    let table = mean_table(&ds, group_by, target)?;
    println!("{},mean,stddev,count", table.group_by);
    for g in &table.groups {
        println!("{},{},{},{}", g.value, g.mean, g.stddev, g.count);
    }
    println!(
        "group-mean predictor accuracy: {} over {} knots (global mean: {})",
        table.predictor_accuracy, table.n, table.global_mean_accuracy
    );
    Ok(())
}
