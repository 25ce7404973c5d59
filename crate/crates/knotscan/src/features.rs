//! Feature descriptors: how dataset columns become network input columns.
//!
//! A descriptor names either a column (numeric columns contribute one
//! feature, polynomial columns their flattened coefficient vector), a
//! complex-point evaluation of a polynomial column, or a derived scalar
//! (span, determinant, crossing-minus-span bound). Descriptors have a
//! canonical string form used in manifests, results lines, and seeds.

use std::fmt;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::ingest::{Dataset, IngestError, InvariantKind, Value};
use crate::polynomial::{
    determinant_feature, evaluate, flatten, span, turaev_feature, PolynomialError, Window,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot parse feature descriptor {0:?}")]
    BadDescriptor(String),
    #[error(transparent)]
    UnknownColumn(#[from] IngestError),
    #[error("column {0:?} is not a polynomial column")]
    NotPolynomial(String),
    #[error("column {0:?} is not numeric")]
    NotNumeric(String),
    #[error("column {column:?}, knot {knot}: {source}")]
    Derivation {
        column: String,
        knot: String,
        source: PolynomialError,
    },
    #[error("knot {knot} is missing column {column:?} (filter to complete rows first)")]
    MissingValue { column: String, knot: String },
}

/// Which part of a complex evaluation becomes a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPart {
    /// Real and imaginary part as two features (the default).
    ReIm,
    Re,
    Im,
    Abs,
    Arg,
}

impl EvalPart {
    fn width(self) -> usize {
        match self {
            EvalPart::ReIm => 2,
            _ => 1,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            EvalPart::ReIm => "",
            EvalPart::Re => ":re",
            EvalPart::Im => ":im",
            EvalPart::Abs => ":abs",
            EvalPart::Arg => ":arg",
        }
    }
}

/// One network input source.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDescriptor {
    /// A column by name: one feature for numeric kinds, the flattened
    /// coefficient vector for polynomial kinds.
    Named(String),
    /// Polynomial column evaluated at a complex point.
    Eval {
        column: String,
        point: Complex64,
        part: EvalPart,
    },
    /// Exponent span of a polynomial column.
    Span(String),
    /// Crossing number minus polynomial span (an upper genus bound).
    TuraevBound { poly: String, crossing: String },
    /// Determinant derived from a polynomial column.
    Det(String),
}

pub const DEFAULT_CROSSING_COLUMN: &str = "crossing_number";

impl FeatureDescriptor {
    pub fn eval(column: &str, point: Complex64) -> Self {
        FeatureDescriptor::Eval {
            column: column.to_string(),
            point,
            part: EvalPart::ReIm,
        }
    }

    /// Dataset columns this descriptor needs present.
    pub fn required_columns(&self) -> Vec<&str> {
        match self {
            FeatureDescriptor::Named(c)
            | FeatureDescriptor::Eval { column: c, .. }
            | FeatureDescriptor::Span(c)
            | FeatureDescriptor::Det(c) => vec![c],
            FeatureDescriptor::TuraevBound { poly, crossing } => vec![poly, crossing],
        }
    }

    /// The column whose invariant this feature is derived from; used to
    /// forbid predicting an output from itself.
    pub fn primary_column(&self) -> &str {
        match self {
            FeatureDescriptor::Named(c)
            | FeatureDescriptor::Eval { column: c, .. }
            | FeatureDescriptor::Span(c)
            | FeatureDescriptor::Det(c)
            | FeatureDescriptor::TuraevBound { poly: c, .. } => c,
        }
    }

    /// Parses the canonical string form:
    /// `column`, `column@re+imi[:re|:im|:abs|:arg]`, `span(column)`,
    /// `turaev_bound(poly)` or `turaev_bound(poly;crossing)`, `det(column)`.
    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        let s = s.trim();
        let bad = || FeatureError::BadDescriptor(s.to_string());
        if s.is_empty() || s.contains('&') {
            return Err(bad());
        }
        if let Some(inner) = strip_call(s, "span") {
            return Ok(FeatureDescriptor::Span(inner.to_string()));
        }
        if let Some(inner) = strip_call(s, "det") {
            return Ok(FeatureDescriptor::Det(inner.to_string()));
        }
        if let Some(inner) = strip_call(s, "turaev_bound") {
            let (poly, crossing) = match inner.split_once(';') {
                Some((p, c)) => (p.trim(), c.trim()),
                None => (inner, DEFAULT_CROSSING_COLUMN),
            };
            return Ok(FeatureDescriptor::TuraevBound {
                poly: poly.to_string(),
                crossing: crossing.to_string(),
            });
        }
        if let Some((column, rest)) = s.split_once('@') {
            let (point_str, part) = match rest.rsplit_once(':') {
                Some((p, "re")) => (p, EvalPart::Re),
                Some((p, "im")) => (p, EvalPart::Im),
                Some((p, "abs")) => (p, EvalPart::Abs),
                Some((p, "arg")) => (p, EvalPart::Arg),
                Some(_) => return Err(bad()),
                None => (rest, EvalPart::ReIm),
            };
            let point = parse_complex(point_str).ok_or_else(bad)?;
            return Ok(FeatureDescriptor::Eval {
                column: column.trim().to_string(),
                point,
                part,
            });
        }
        Ok(FeatureDescriptor::Named(s.to_string()))
    }
}

/// Smallest window covering a single polynomial.
fn initial_window(p: &crate::polynomial::LaurentPolynomial) -> Window {
    let mut w = match p.degree_range() {
        Some((lo, hi)) => Window::single(lo, hi),
        None => Window::single(0, 0),
    };
    if p.variables() == 2 {
        w.secondary = p.degree_range_secondary();
    }
    w
}

fn strip_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .map(str::trim)
}

/// Parses `-0.6+0.1i` style complex literals; a bare real (`-1`) and a bare
/// imaginary (`0.5i`, `i`, `-i`) are accepted.
fn parse_complex(s: &str) -> Option<Complex64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    let (re_str, im_str): (&str, Option<&str>) = match s.strip_suffix('i') {
        Some(body) => {
            // find a +/- separating real and imaginary parts (not leading,
            // not an exponent sign)
            let bytes = body.as_bytes();
            let mut split = None;
            for i in (1..bytes.len()).rev() {
                let c = bytes[i];
                if (c == b'+' || c == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
                    split = Some(i);
                    break;
                }
            }
            match split {
                Some(i) => (&body[..i], Some(&body[i..])),
                None => ("", Some(body)),
            }
        }
        None => (s.as_str(), None),
    };
    let re: f64 = if re_str.is_empty() {
        0.0
    } else {
        re_str.parse().ok()?
    };
    let im: f64 = match im_str {
        None => 0.0,
        Some("") | Some("+") => 1.0,
        Some("-") => -1.0,
        Some(other) => other.parse().ok()?,
    };
    if !(re.is_finite() && im.is_finite()) {
        return None;
    }
    Some(Complex64::new(re, im))
}

fn format_complex(t: Complex64) -> String {
    if t.im >= 0.0 {
        format!("{}+{}i", t.re, t.im)
    } else {
        format!("{}-{}i", t.re, -t.im)
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDescriptor::Named(c) => write!(f, "{c}"),
            FeatureDescriptor::Eval {
                column,
                point,
                part,
            } => write!(f, "{column}@{}{}", format_complex(*point), part.suffix()),
            FeatureDescriptor::Span(c) => write!(f, "span({c})"),
            FeatureDescriptor::TuraevBound { poly, crossing } => {
                if crossing == DEFAULT_CROSSING_COLUMN {
                    write!(f, "turaev_bound({poly})")
                } else {
                    write!(f, "turaev_bound({poly};{crossing})")
                }
            }
            FeatureDescriptor::Det(c) => write!(f, "det({c})"),
        }
    }
}

/// A descriptor resolved against a dataset: column indices looked up and,
/// for flattened polynomials, the alignment window fixed over the rows the
/// experiment will actually use.
#[derive(Debug, Clone)]
enum ResolvedFeature {
    Numeric {
        index: usize,
    },
    Flattened {
        index: usize,
        window: Window,
    },
    Eval {
        index: usize,
        point: Complex64,
        part: EvalPart,
    },
    Span {
        index: usize,
    },
    TuraevBound {
        poly: usize,
        crossing: usize,
    },
    Det {
        index: usize,
    },
}

impl ResolvedFeature {
    fn width(&self) -> usize {
        match self {
            ResolvedFeature::Flattened { window, .. } => window.len(),
            ResolvedFeature::Eval { part, .. } => part.width(),
            _ => 1,
        }
    }
}

/// A set of descriptors resolved against a dataset, ready to emit feature
/// matrices with a stable column layout.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    descriptors: Vec<FeatureDescriptor>,
    resolved: Vec<ResolvedFeature>,
    width: usize,
}

impl FeatureSet {
    /// Validates descriptors against the dataset and freezes flattening
    /// windows over its rows. Pass the already-filtered dataset so windows
    /// match the rows being learned from.
    pub fn resolve(ds: &Dataset, descriptors: &[FeatureDescriptor]) -> Result<Self, FeatureError> {
        let poly_index = |name: &str| -> Result<usize, FeatureError> {
            let idx = ds.column_index(name)?;
            if ds.schema()[idx].1 != InvariantKind::PolynomialVector {
                return Err(FeatureError::NotPolynomial(name.to_string()));
            }
            Ok(idx)
        };
        let resolved = descriptors
            .iter()
            .map(|d| {
                Ok(match d {
                    FeatureDescriptor::Named(name) => {
                        let index = ds.column_index(name)?;
                        match ds.schema()[index].1 {
                            InvariantKind::PolynomialVector => {
                                let mut window: Option<Window> = None;
                                for row in 0..ds.len() {
                                    if let Some(p) =
                                        ds.value(row, index).and_then(Value::as_poly)
                                    {
                                        match window.as_mut() {
                                            Some(w) => w.include(p),
                                            None => window = Some(initial_window(p)),
                                        }
                                    }
                                }
                                ResolvedFeature::Flattened {
                                    index,
                                    window: window.unwrap_or(Window::single(0, 0)),
                                }
                            }
                            k if k.is_numeric() => ResolvedFeature::Numeric { index },
                            _ => return Err(FeatureError::NotNumeric(name.clone())),
                        }
                    }
                    FeatureDescriptor::Eval {
                        column,
                        point,
                        part,
                    } => ResolvedFeature::Eval {
                        index: poly_index(column)?,
                        point: *point,
                        part: *part,
                    },
                    FeatureDescriptor::Span(name) => ResolvedFeature::Span {
                        index: poly_index(name)?,
                    },
                    FeatureDescriptor::TuraevBound { poly, crossing } => {
                        let crossing_idx = ds.column_index(crossing)?;
                        if !ds.schema()[crossing_idx].1.is_numeric() {
                            return Err(FeatureError::NotNumeric(crossing.clone()));
                        }
                        ResolvedFeature::TuraevBound {
                            poly: poly_index(poly)?,
                            crossing: crossing_idx,
                        }
                    }
                    FeatureDescriptor::Det(name) => ResolvedFeature::Det {
                        index: poly_index(name)?,
                    },
                })
            })
            .collect::<Result<Vec<_>, FeatureError>>()?;
        let width = resolved.iter().map(ResolvedFeature::width).sum();
        Ok(Self {
            descriptors: descriptors.to_vec(),
            resolved,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    /// Human-readable name per feature column, aligned with matrix columns.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width);
        for (d, r) in self.descriptors.iter().zip(&self.resolved) {
            match r {
                ResolvedFeature::Flattened { window, .. } => {
                    let (lo1, hi1) = window.primary;
                    match window.secondary {
                        None => {
                            for e in lo1..=hi1 {
                                names.push(format!("{d}[{e}]"));
                            }
                        }
                        Some((lo2, hi2)) => {
                            for e1 in lo1..=hi1 {
                                for e2 in lo2..=hi2 {
                                    names.push(format!("{d}[{e1},{e2}]"));
                                }
                            }
                        }
                    }
                }
                ResolvedFeature::Eval { part: EvalPart::ReIm, .. } => {
                    names.push(format!("{d}:re"));
                    names.push(format!("{d}:im"));
                }
                _ => names.push(d.to_string()),
            }
        }
        names
    }

    /// Builds the feature matrix for the dataset's records. All referenced
    /// values must be present (filter with complete rows first).
    pub fn build_matrix(&self, ds: &Dataset) -> Result<Array2<f64>, FeatureError> {
        let mut matrix = Array2::zeros((ds.len(), self.width));
        for row in 0..ds.len() {
            let knot = &ds.records()[row].knot_id;
            let mut col = 0;
            for r in &self.resolved {
                let need = |index: usize| -> Result<&Value, FeatureError> {
                    ds.value(row, index)
                        .ok_or_else(|| FeatureError::MissingValue {
                            column: ds.schema()[index].0.clone(),
                            knot: knot.clone(),
                        })
                };
                let derivation = |index: usize, source: PolynomialError| FeatureError::Derivation {
                    column: ds.schema()[index].0.clone(),
                    knot: knot.clone(),
                    source,
                };
                let poly_at = |index: usize| -> Result<_, FeatureError> {
                    need(index)?
                        .as_poly()
                        .ok_or_else(|| FeatureError::NotPolynomial(ds.schema()[index].0.clone()))
                };
                let numeric_at = |index: usize| -> Result<f64, FeatureError> {
                    need(index)?
                        .as_f64()
                        .ok_or_else(|| FeatureError::NotNumeric(ds.schema()[index].0.clone()))
                };
                match r {
                    ResolvedFeature::Numeric { index } => {
                        matrix[(row, col)] = numeric_at(*index)?;
                        col += 1;
                    }
                    ResolvedFeature::Flattened { index, window } => {
                        let flat = flatten(poly_at(*index)?, *window)
                            .map_err(|e| derivation(*index, e))?;
                        for v in flat.values {
                            matrix[(row, col)] = v;
                            col += 1;
                        }
                    }
                    ResolvedFeature::Eval { index, point, part } => {
                        let v = evaluate(poly_at(*index)?, *point)
                            .map_err(|e| derivation(*index, e))?;
                        match part {
                            EvalPart::ReIm => {
                                matrix[(row, col)] = v.re;
                                matrix[(row, col + 1)] = v.im;
                                col += 2;
                            }
                            EvalPart::Re => {
                                matrix[(row, col)] = v.re;
                                col += 1;
                            }
                            EvalPart::Im => {
                                matrix[(row, col)] = v.im;
                                col += 1;
                            }
                            EvalPart::Abs => {
                                matrix[(row, col)] = v.norm();
                                col += 1;
                            }
                            EvalPart::Arg => {
                                matrix[(row, col)] = v.arg();
                                col += 1;
                            }
                        }
                    }
                    ResolvedFeature::Span { index } => {
                        let s =
                            span(poly_at(*index)?).map_err(|e| derivation(*index, e))?;
                        matrix[(row, col)] = f64::from(s);
                        col += 1;
                    }
                    ResolvedFeature::TuraevBound { poly, crossing } => {
                        let c = numeric_at(*crossing)?;
                        let s =
                            span(poly_at(*poly)?).map_err(|e| derivation(*poly, e))?;
                        matrix[(row, col)] = c - f64::from(s);
                        col += 1;
                    }
                    ResolvedFeature::Det { index } => {
                        let det = determinant_feature(poly_at(*index)?)
                            .map_err(|e| derivation(*index, e))?;
                        matrix[(row, col)] = det.value as f64;
                        col += 1;
                    }
                }
            }
        }
        Ok(matrix)
    }
}

/// Convenience wrapper retaining the Turaev feature semantics: crossing
/// number minus span, from dataset values (used by validators).
pub fn turaev_bound_value(
    poly: &crate::polynomial::LaurentPolynomial,
    crossing_number: u32,
) -> Result<i64, PolynomialError> {
    turaev_feature(poly, crossing_number)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_csv_text, IngestOptions};
    use approx::assert_abs_diff_eq;

    fn ds() -> Dataset {
        let csv = "\
name,crossing_number,tau,jones_polynomial_vector
3_1,3,1,\"[1, 1, 0, 1, -1]\"
4_1,4,0,\"[-2, 1, -1, 1, -1, 1]\"
5_2,5,1,\"[1, 1, -1, 2, -1, 1, -1]\"
";
        ingest_csv_text(csv, "test", &IngestOptions::default()).unwrap()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in [
            "tau",
            "jones_polynomial_vector",
            "jones_polynomial_vector@-0.6+0.1i",
            "jones_polynomial_vector@-1+0.2i:re",
            "jones_polynomial_vector@0.5-2i:abs",
            "span(jones_polynomial_vector)",
            "turaev_bound(jones_polynomial_vector)",
            "turaev_bound(jones_polynomial_vector;crossing_number)",
            "det(jones_polynomial_vector)",
        ] {
            let d = FeatureDescriptor::parse(s).unwrap();
            let shown = d.to_string();
            let reparsed = FeatureDescriptor::parse(&shown).unwrap();
            assert_eq!(d, reparsed, "{s} -> {shown}");
        }
        // the custom-crossing form collapses to the default display
        assert_eq!(
            FeatureDescriptor::parse("turaev_bound(j;crossing_number)")
                .unwrap()
                .to_string(),
            "turaev_bound(j)"
        );
    }

    #[test]
    fn parse_complex_forms() {
        let cases = [
            ("-0.6+0.1i", -0.6, 0.1),
            ("-1+0.2i", -1.0, 0.2),
            ("0.5-2i", 0.5, -2.0),
            ("2", 2.0, 0.0),
            ("-1", -1.0, 0.0),
            ("0.3i", 0.0, 0.3),
            ("i", 0.0, 1.0),
            ("-i", 0.0, -1.0),
            ("1e-2+1e-3i", 0.01, 0.001),
        ];
        for (s, re, im) in cases {
            let t = parse_complex(s).unwrap();
            assert_abs_diff_eq!(t.re, re);
            assert_abs_diff_eq!(t.im, im);
        }
        assert!(parse_complex("").is_none());
        assert!(parse_complex("abc").is_none());
    }

    #[test]
    fn rejects_bad_descriptors() {
        for s in ["", "a&b", "col@", "col@xyz", "col@1+2i:zz"] {
            assert!(FeatureDescriptor::parse(s).is_err(), "accepted {s:?}");
        }
    }

    #[test]
    fn numeric_column_single_feature() {
        let ds = ds();
        let fs = FeatureSet::resolve(&ds, &[FeatureDescriptor::Named("tau".into())]).unwrap();
        assert_eq!(fs.width(), 1);
        let m = fs.build_matrix(&ds).unwrap();
        assert_eq!(m.column(0).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn flattened_polynomial_window_covers_all_rows() {
        let ds = ds();
        let fs = FeatureSet::resolve(
            &ds,
            &[FeatureDescriptor::Named("jones_polynomial_vector".into())],
        )
        .unwrap();
        // exponents span -2..6 over the three rows
        assert_eq!(fs.width(), 9);
        let m = fs.build_matrix(&ds).unwrap();
        // trefoil: t + t^3 - t^4 within window starting at -2
        assert_eq!(
            m.row(0).to_vec(),
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0]
        );
        let names = fs.column_names();
        assert_eq!(names[0], "jones_polynomial_vector[-2]");
        assert_eq!(names[8], "jones_polynomial_vector[6]");
    }

    #[test]
    fn evaluation_features() {
        let ds = ds();
        let point = Complex64::new(-1.0, 0.0);
        let fs = FeatureSet::resolve(
            &ds,
            &[FeatureDescriptor::eval("jones_polynomial_vector", point)],
        )
        .unwrap();
        assert_eq!(fs.width(), 2);
        let m = fs.build_matrix(&ds).unwrap();
        // |J(-1)| = determinant: 3, 5, 7 for these knots
        assert_abs_diff_eq!(m[(0, 0)].abs(), 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m[(1, 0)].abs(), 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m[(2, 0)].abs(), 7.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m[(0, 1)], 0.0, epsilon = 1e-12);
        let names = fs.column_names();
        assert_eq!(names[0], "jones_polynomial_vector@-1+0i:re");
        assert_eq!(names[1], "jones_polynomial_vector@-1+0i:im");
    }

    #[test]
    fn derived_scalar_features() {
        let ds = ds();
        let fs = FeatureSet::resolve(
            &ds,
            &[
                FeatureDescriptor::Span("jones_polynomial_vector".into()),
                FeatureDescriptor::TuraevBound {
                    poly: "jones_polynomial_vector".into(),
                    crossing: "crossing_number".into(),
                },
                FeatureDescriptor::Det("jones_polynomial_vector".into()),
            ],
        )
        .unwrap();
        let m = fs.build_matrix(&ds).unwrap();
        // all three are alternating knots: span = crossing number
        assert_eq!(m.column(0).to_vec(), vec![3.0, 4.0, 5.0]);
        assert_eq!(m.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(m.column(2).to_vec(), vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn unknown_and_mistyped_columns_rejected() {
        let ds = ds();
        assert!(matches!(
            FeatureSet::resolve(&ds, &[FeatureDescriptor::Named("nope".into())]),
            Err(FeatureError::UnknownColumn(_))
        ));
        assert!(matches!(
            FeatureSet::resolve(&ds, &[FeatureDescriptor::Span("tau".into())]),
            Err(FeatureError::NotPolynomial(_))
        ));
        assert!(matches!(
            FeatureSet::resolve(&ds, &[FeatureDescriptor::Named("name".into())]),
            Err(FeatureError::NotNumeric(_))
        ));
    }

    #[test]
    fn missing_value_reported_with_knot() {
        let csv = "name,tau\na,1\nb,\n";
        let ds = ingest_csv_text(csv, "test", &IngestOptions::default()).unwrap();
        let fs = FeatureSet::resolve(&ds, &[FeatureDescriptor::Named("tau".into())]).unwrap();
        match fs.build_matrix(&ds) {
            Err(FeatureError::MissingValue { knot, .. }) => assert_eq!(knot, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
