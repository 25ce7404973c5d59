//! Results persistence and reporting: the `&`-separated results-file
//! format, filtering queries over result rows, and LaTeX / plot-data
//! emitters.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::experiments::{ExperimentResult, ScanGrid};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("results line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("no rows to lay out")]
    EmptyTable,
    #[error("no grid cells to plot")]
    EmptyGrid,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// The five polynomial coefficient-vector columns, as named in the dataset.
pub const POLYNOMIAL_COLUMNS: [&str; 5] = [
    "jones_polynomial_vector",
    "alexander_polynomial_vector",
    "conway_polynomial_vector",
    "homfly_polynomial_vector",
    "kauffman_polynomial_vector",
];

/// One results-file line: `input..&output&accuracy&baseline&n_knots`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub inputs: Vec<String>,
    pub output: String,
    pub accuracy: f64,
    pub baseline: f64,
    pub n_knots: u64,
}

impl From<&ExperimentResult> for ResultRow {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            inputs: r.inputs.clone(),
            output: r.output.clone(),
            accuracy: r.accuracy,
            baseline: r.baseline,
            n_knots: r.n_knots as u64,
        }
    }
}

impl ResultRow {
    /// Serializes with `&` separators; floats keep their shortest exact
    /// decimal form, so parsing the line back reproduces the same bits.
    pub fn to_line(&self) -> String {
        let mut fields = self.inputs.clone();
        fields.push(self.output.clone());
        fields.push(self.accuracy.to_string());
        fields.push(self.baseline.to_string());
        fields.push(self.n_knots.to_string());
        fields.join("&")
    }

    pub fn parse(text: &str, line: usize) -> Result<Self, ReportError> {
        let bad = |detail: String| ReportError::MalformedLine { line, detail };
        let fields: Vec<&str> = text.split('&').collect();
        if !(5..=7).contains(&fields.len()) {
            return Err(bad(format!(
                "expected 5 to 7 `&`-separated fields, got {}",
                fields.len()
            )));
        }
        let n_inputs = fields.len() - 4;
        let accuracy: f64 = fields[n_inputs + 1]
            .parse()
            .map_err(|_| bad(format!("bad accuracy {:?}", fields[n_inputs + 1])))?;
        let baseline: f64 = fields[n_inputs + 2]
            .parse()
            .map_err(|_| bad(format!("bad baseline {:?}", fields[n_inputs + 2])))?;
        let n_knots: u64 = fields[n_inputs + 3]
            .parse()
            .map_err(|_| bad(format!("bad knot count {:?}", fields[n_inputs + 3])))?;
        if fields[..=n_inputs].iter().any(|f| f.is_empty()) {
            return Err(bad("empty input or output name".into()));
        }
        Ok(Self {
            inputs: fields[..n_inputs].iter().map(|s| s.to_string()).collect(),
            output: fields[n_inputs].to_string(),
            accuracy,
            baseline,
            n_knots,
        })
    }
}

/// Parses a results file's text; blank lines are skipped.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>, ReportError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        rows.push(ResultRow::parse(trimmed, i + 1)?);
    }
    Ok(rows)
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    let text = std::fs::read_to_string(path)?;
    parse_results(&text)
}

/// Appends one row to a results file, creating it if needed.
pub fn append_result(path: &Path, row: &ResultRow) -> Result<(), ReportError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", row.to_line())?;
    Ok(())
}

/// Which input or output names a query accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnFilter {
    /// Any name.
    All,
    /// Only the five polynomial coefficient-vector columns.
    Poly,
    /// Only the listed names.
    Named(Vec<String>),
}

impl ColumnFilter {
    fn accepts(&self, name: &str) -> bool {
        match self {
            ColumnFilter::All => true,
            ColumnFilter::Poly => POLYNOMIAL_COLUMNS.contains(&name),
            ColumnFilter::Named(names) => names.iter().any(|n| n == name),
        }
    }
}

/// A filter over result rows; every bound is inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultQuery {
    pub num_inputs: Option<usize>,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub min_knots: u64,
    pub max_knots: u64,
    /// Every input of a matching row must be accepted.
    pub inputs: ColumnFilter,
    pub outputs: ColumnFilter,
}

impl Default for ResultQuery {
    fn default() -> Self {
        Self {
            num_inputs: None,
            min_accuracy: f64::NEG_INFINITY,
            max_accuracy: f64::INFINITY,
            min_knots: 0,
            max_knots: u64::MAX,
            inputs: ColumnFilter::All,
            outputs: ColumnFilter::All,
        }
    }
}

impl ResultQuery {
    pub fn matches(&self, row: &ResultRow) -> bool {
        if let Some(k) = self.num_inputs {
            if row.inputs.len() != k {
                return false;
            }
        }
        row.accuracy >= self.min_accuracy
            && row.accuracy <= self.max_accuracy
            && row.n_knots >= self.min_knots
            && row.n_knots <= self.max_knots
            && row.inputs.iter().all(|i| self.inputs.accepts(i))
            && self.outputs.accepts(&row.output)
    }
}

/// Keeps the rows matching `query`, preserving order.
pub fn query(rows: &[ResultRow], query: &ResultQuery) -> Vec<ResultRow> {
    rows.iter().filter(|r| query.matches(r)).cloned().collect()
}

fn latex_name(name: &str) -> String {
    name.replace('_', " ")
}

fn latex_accuracy(value: f64) -> String {
    if value < 0.0 {
        "0".to_string()
    } else {
        value.to_string()
    }
}

/// Lays rows out as a LaTeX table: one `Input k` column per input position,
/// then output, accuracy, baseline, and knot count. Underscores in names
/// become spaces; negative accuracies display as 0.
pub fn emit_latex(rows: &[ResultRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let arity = rows.iter().map(|r| r.inputs.len()).max().unwrap_or(1);
    let mut out = String::new();
    out.push_str("\\begin{tabular}{|");
    for _ in 0..arity + 4 {
        out.push_str("c|");
    }
    out.push_str("}\n\\hline\n");
    for i in 1..=arity {
        out.push_str(&format!("Input {i} &"));
    }
    out.push_str("Output & Accuracy & Mean/Mode & Number \\\\\\hline\n\\hline\n");
    for row in rows {
        for i in 0..arity {
            let cell = row.inputs.get(i).map(|s| latex_name(s)).unwrap_or_default();
            out.push_str(&cell);
            out.push('&');
        }
        out.push_str(&format!(
            "{}&{}&{}&{}\\\\\n\\hline\n",
            latex_name(&row.output),
            latex_accuracy(row.accuracy),
            row.baseline,
            row.n_knots
        ));
    }
    out.push_str("\\end{tabular}\n");
    Ok(out)
}

/// CSV of `re,im,accuracy` triples sorted by position.
pub fn emit_heatmap_plot_data(grid: &ScanGrid) -> Result<String, ReportError> {
    if grid.cells.is_empty() {
        return Err(ReportError::EmptyGrid);
    }
    let mut cells = grid.cells.clone();
    cells.sort_by(|a, b| {
        a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
    });
    let mut out = String::from("re,im,accuracy\n");
    for c in &cells {
        out.push_str(&format!("{},{},{}\n", c.re, c.im, c.accuracy));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ScanCell;
    use proptest::prelude::*;

    fn row(inputs: &[&str], output: &str, accuracy: f64, n: u64) -> ResultRow {
        ResultRow {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
            accuracy,
            baseline: 0.5,
            n_knots: n,
        }
    }

    #[test]
    fn line_round_trip() {
        let r = row(&["jones_polynomial_vector"], "volume", 0.957915108777278, 2970);
        let line = r.to_line();
        assert_eq!(
            line,
            "jones_polynomial_vector&volume&0.957915108777278&0.5&2970"
        );
        assert_eq!(ResultRow::parse(&line, 1).unwrap(), r);
    }

    #[test]
    fn multi_input_lines() {
        let r = row(&["a", "b", "c"], "out", 0.25, 1200);
        let parsed = ResultRow::parse(&r.to_line(), 3).unwrap();
        assert_eq!(parsed.inputs.len(), 3);
        assert_eq!(parsed, r);
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        for text in [
            "too&few&3",
            "a&b&c&d&e&f&g&h", // 8 fields: 4 inputs
            "a&out&oops&0.5&100",
            "a&out&0.5&0.5&many",
            "&out&0.5&0.5&100",
        ] {
            match ResultRow::parse(text, 7) {
                Err(ReportError::MalformedLine { line: 7, .. }) => {}
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn parse_results_skips_blank_lines() {
        let text = "a&out&0.5&0.4&1200\n\n  \nb&out&0.75&0.4&1200\n";
        let rows = parse_results(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].inputs, ["b"]);
    }

    #[test]
    fn query_bounds_are_inclusive_and_order_preserved() {
        let rows = vec![
            row(&["a"], "x", 0.90, 1000),
            row(&["b"], "x", 0.95, 2000),
            row(&["c"], "x", 0.89, 3000),
            row(&["d"], "y", 1.00, 4000),
        ];
        let q = ResultQuery {
            min_accuracy: 0.90,
            max_accuracy: 1.0,
            ..ResultQuery::default()
        };
        let hits = query(&rows, &q);
        let names: Vec<&str> = hits.iter().map(|r| r.inputs[0].as_str()).collect();
        assert_eq!(names, ["a", "b", "d"]);
        // idempotent
        assert_eq!(query(&hits, &q), hits);
    }

    #[test]
    fn query_filters_inputs_outputs_and_counts() {
        let rows = vec![
            row(&["jones_polynomial_vector"], "volume", 0.95, 2970),
            row(&["signature"], "volume", 0.80, 2970),
            row(&["jones_polynomial_vector", "signature"], "volume", 0.97, 2970),
            row(&["jones_polynomial_vector"], "epsilon", 0.95, 2977),
        ];
        let q = ResultQuery {
            num_inputs: Some(1),
            inputs: ColumnFilter::Poly,
            outputs: ColumnFilter::Named(vec!["volume".into()]),
            ..ResultQuery::default()
        };
        let hits = query(&rows, &q);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].inputs, ["jones_polynomial_vector"]);
        assert_eq!(hits[0].output, "volume");

        let knots = ResultQuery {
            min_knots: 2971,
            ..ResultQuery::default()
        };
        assert_eq!(query(&rows, &knots).len(), 1);
    }

    #[test]
    fn latex_layout_single_input() {
        let rows = vec![row(&["jones_polynomial_vector"], "volume", 0.5, 2970)];
        let table = emit_latex(&rows).unwrap();
        let expected = "\\begin{tabular}{|c|c|c|c|c|}\n\
                        \\hline\n\
                        Input 1 &Output & Accuracy & Mean/Mode & Number \\\\\\hline\n\
                        \\hline\n\
                        jones polynomial vector&volume&0.5&0.5&2970\\\\\n\
                        \\hline\n\
                        \\end{tabular}\n";
        assert_eq!(table, expected);
    }

    #[test]
    fn latex_layout_two_inputs_and_clamping() {
        let rows = vec![row(&["a_x", "b_y"], "out_z", -0.25, 1500)];
        let table = emit_latex(&rows).unwrap();
        assert!(table.starts_with("\\begin{tabular}{|c|c|c|c|c|c|}\n"));
        assert!(table.contains("Input 1 &Input 2 &Output & Accuracy & Mean/Mode & Number \\\\\\hline\n"));
        assert!(table.contains("a x&b y&out z&0&0.5&1500\\\\\n"));
        assert!(emit_latex(&[]).is_err());
    }

    #[test]
    fn heatmap_plot_data_is_sorted_csv() {
        let grid = ScanGrid {
            step: 1.0,
            cells: vec![
                ScanCell { re: 1.0, im: 0.0, accuracy: 0.75 },
                ScanCell { re: -1.0, im: 1.0, accuracy: 0.5 },
                ScanCell { re: -1.0, im: 0.0, accuracy: 0.25 },
            ],
        };
        let csv = emit_heatmap_plot_data(&grid).unwrap();
        assert_eq!(
            csv,
            "re,im,accuracy\n-1,0,0.25\n-1,1,0.5\n1,0,0.75\n"
        );
        let empty = ScanGrid { step: 1.0, cells: Vec::new() };
        assert!(matches!(
            emit_heatmap_plot_data(&empty),
            Err(ReportError::EmptyGrid)
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_rows_round_trip(
            inputs in prop::collection::vec("[a-z_]{1,12}", 1..=3),
            output in "[a-z_]{1,12}",
            accuracy in -1.0f64..1.0,
            baseline in 0.0f64..1.0,
            n in 0u64..100_000,
        ) {
            let r = ResultRow { inputs, output, accuracy, baseline, n_knots: n };
            let parsed = ResultRow::parse(&r.to_line(), 1).unwrap();
            prop_assert_eq!(parsed, r);
        }
    }
}
