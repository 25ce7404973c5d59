//! Laurent polynomial invariants and the scalar features derived from them.
//!
//! Knot polynomials arrive as coefficient vectors. This module parses them,
//! evaluates single-variable polynomials at complex points, and computes the
//! span, determinant and crossing-bound features used as network inputs.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolynomialError {
    #[error("cell {0:?} is not a recognized polynomial vector")]
    UnparseableCell(String),
    #[error("operation requires a nonzero polynomial")]
    ZeroPolynomial,
    #[error("operation requires a single-variable polynomial")]
    TwoVariable,
    #[error("evaluation at t = 0 with negative exponents")]
    EvaluationAtPole,
    #[error("evaluation produced a non-finite value")]
    NonFiniteEvaluation,
    #[error("window {window:?} does not cover exponent range {range:?}")]
    WindowTooSmall {
        window: (i32, i32),
        range: (i32, i32),
    },
}

/// Laurent polynomial with integer coefficients in one or two variables.
///
/// Terms are keyed by exponent pairs; single-variable polynomials keep the
/// second exponent at zero. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaurentPolynomial {
    terms: BTreeMap<(i32, i32), i64>,
    variables: u8,
}

impl LaurentPolynomial {
    /// Single-variable polynomial from (exponent, coefficient) terms.
    /// Duplicate exponents accumulate; zero coefficients are dropped.
    pub fn from_terms<I: IntoIterator<Item = (i32, i64)>>(terms: I) -> Self {
        let mut map = BTreeMap::new();
        for (e, c) in terms {
            *map.entry((e, 0)).or_insert(0) += c;
        }
        map.retain(|_, c| *c != 0);
        Self {
            terms: map,
            variables: 1,
        }
    }

    /// Two-variable polynomial from (exponent, exponent, coefficient) terms.
    pub fn from_terms2<I: IntoIterator<Item = (i32, i32, i64)>>(terms: I) -> Self {
        let mut map = BTreeMap::new();
        for (e1, e2, c) in terms {
            *map.entry((e1, e2)).or_insert(0) += c;
        }
        map.retain(|_, c| *c != 0);
        Self {
            terms: map,
            variables: 2,
        }
    }

    pub fn zero() -> Self {
        Self::from_terms([])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn variables(&self) -> u8 {
        self.variables
    }

    pub fn terms(&self) -> impl Iterator<Item = ((i32, i32), i64)> + '_ {
        self.terms.iter().map(|(&k, &v)| (k, v))
    }

    /// Inclusive exponent range of the primary variable, `None` when zero.
    pub fn degree_range(&self) -> Option<(i32, i32)> {
        let min = self.terms.keys().map(|k| k.0).min()?;
        let max = self.terms.keys().map(|k| k.0).max()?;
        Some((min, max))
    }

    /// Inclusive exponent range of the secondary variable.
    pub fn degree_range_secondary(&self) -> Option<(i32, i32)> {
        let min = self.terms.keys().map(|k| k.1).min()?;
        let max = self.terms.keys().map(|k| k.1).max()?;
        Some((min, max))
    }

    pub fn coefficient(&self, e1: i32, e2: i32) -> i64 {
        self.terms.get(&(e1, e2)).copied().unwrap_or(0)
    }

    /// Canonical cell text: dense `[min, c_min, ..., c_max]` for one variable,
    /// term list `[[e1, e2, c], ...]` for two.
    pub fn to_cell(&self) -> String {
        match self.variables {
            1 => {
                let Some((min, max)) = self.degree_range() else {
                    return "[0, 0]".to_string();
                };
                let coeffs: Vec<String> = (min..=max)
                    .map(|e| self.coefficient(e, 0).to_string())
                    .collect();
                format!("[{}, {}]", min, coeffs.join(", "))
            }
            _ => {
                let terms: Vec<String> = self
                    .terms()
                    .map(|((e1, e2), c)| format!("[{}, {}, {}]", e1, e2, c))
                    .collect();
                format!("[{}]", terms.join(", "))
            }
        }
    }
}

impl fmt::Display for LaurentPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_cell())
    }
}

/// Parses a polynomial cell.
///
/// Two forms are accepted and auto-detected by nesting:
/// a dense vector `[min_exp, c_min, ..., c_max]`, and an explicit term list
/// `[[e, c], ...]` (pairs) or `[[e1, e2, c], ...]` (triples, two variables).
/// Exponents must be integers; half-integer link conventions are rejected.
pub fn parse_polynomial(cell: &str) -> Result<LaurentPolynomial, PolynomialError> {
    let trimmed = cell.trim();
    let fail = || PolynomialError::UnparseableCell(cell.to_string());
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(fail)?;

    if !inner.contains('[') {
        // dense vector: min exponent followed by the contiguous coefficients
        let nums = parse_int_list(inner).ok_or_else(fail)?;
        if nums.len() < 2 {
            return Err(fail());
        }
        let min = i32::try_from(nums[0]).map_err(|_| fail())?;
        return Ok(LaurentPolynomial::from_terms(
            nums[1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (min + i as i32, c)),
        ));
    }

    let groups = split_groups(inner).ok_or_else(fail)?;
    let mut pairs = Vec::new();
    let mut triples = Vec::new();
    for g in &groups {
        let nums = parse_int_list(g).ok_or_else(fail)?;
        match nums.len() {
            2 => pairs.push((i32::try_from(nums[0]).map_err(|_| fail())?, nums[1])),
            3 => triples.push((
                i32::try_from(nums[0]).map_err(|_| fail())?,
                i32::try_from(nums[1]).map_err(|_| fail())?,
                nums[2],
            )),
            _ => return Err(fail()),
        }
    }
    match (pairs.is_empty(), triples.is_empty()) {
        (false, true) => Ok(LaurentPolynomial::from_terms(pairs)),
        (true, false) => Ok(LaurentPolynomial::from_terms2(triples)),
        _ => Err(fail()),
    }
}

fn parse_int_list(s: &str) -> Option<Vec<i64>> {
    s.split(',')
        .map(|tok| tok.trim().parse::<i64>().ok())
        .collect()
}

/// Splits `"[a, b], [c, d]"` into its bracketed groups.
fn split_groups(s: &str) -> Option<Vec<String>> {
    let mut groups = Vec::new();
    let mut depth = 0u32;
    let mut current = String::new();
    for ch in s.chars() {
        match ch {
            '[' => {
                if depth > 0 {
                    return None; // only one nesting level is meaningful
                }
                depth = 1;
                current.clear();
            }
            ']' => {
                if depth == 0 {
                    return None;
                }
                depth = 0;
                groups.push(current.clone());
            }
            ',' | ' ' if depth == 0 => {}
            _ if depth == 1 => current.push(ch),
            _ => return None,
        }
    }
    if depth != 0 || groups.is_empty() {
        return None;
    }
    Some(groups)
}

/// Validated complex evaluation point (both components finite).
pub fn checked_point(re: f64, im: f64) -> Result<Complex64, PolynomialError> {
    if re.is_finite() && im.is_finite() {
        Ok(Complex64::new(re, im))
    } else {
        Err(PolynomialError::NonFiniteEvaluation)
    }
}

/// Evaluates a single-variable polynomial at `t` by Horner recursion over the
/// contiguous exponent window, then shifts by the minimum degree.
pub fn evaluate(p: &LaurentPolynomial, t: Complex64) -> Result<Complex64, PolynomialError> {
    if p.variables() != 1 {
        return Err(PolynomialError::TwoVariable);
    }
    let Some((min, max)) = p.degree_range() else {
        return Ok(Complex64::new(0.0, 0.0));
    };
    if min < 0 && t.norm_sqr() == 0.0 {
        return Err(PolynomialError::EvaluationAtPole);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for e in (min..=max).rev() {
        acc = acc * t + Complex64::new(p.coefficient(e, 0) as f64, 0.0);
    }
    let value = acc * powi(t, min);
    if value.re.is_finite() && value.im.is_finite() {
        Ok(value)
    } else {
        Err(PolynomialError::NonFiniteEvaluation)
    }
}

fn powi(t: Complex64, n: i32) -> Complex64 {
    if n >= 0 {
        t.powu(n as u32)
    } else {
        Complex64::new(1.0, 0.0) / t.powu(n.unsigned_abs())
    }
}

/// Span of a nonzero single-variable polynomial: max degree minus min degree.
pub fn span(p: &LaurentPolynomial) -> Result<u32, PolynomialError> {
    if p.variables() != 1 {
        return Err(PolynomialError::TwoVariable);
    }
    let (min, max) = p.degree_range().ok_or(PolynomialError::ZeroPolynomial)?;
    Ok((max - min) as u32)
}

/// Determinant extracted from a polynomial: the rounded absolute value of the
/// evaluation at t = -1, together with the rounding residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterminantFeature {
    pub value: u64,
    /// Distance between |p(-1)| and the returned integer. Values above 1e-6
    /// indicate a data-quality problem in the source vector.
    pub residual: f64,
}

impl DeterminantFeature {
    pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

    pub fn within_tolerance(&self) -> bool {
        self.residual <= Self::RESIDUAL_TOLERANCE
    }
}

pub fn determinant_feature(p: &LaurentPolynomial) -> Result<DeterminantFeature, PolynomialError> {
    if p.is_zero() {
        return Err(PolynomialError::ZeroPolynomial);
    }
    let norm = evaluate(p, Complex64::new(-1.0, 0.0))?.norm();
    let value = norm.round();
    Ok(DeterminantFeature {
        value: value as u64,
        residual: (norm - value).abs(),
    })
}

/// Crossing number minus Jones span: an upper bound for the Turaev genus.
pub fn turaev_feature(jones: &LaurentPolynomial, crossing_number: u32) -> Result<i64, PolynomialError> {
    let s = span(jones)?;
    Ok(crossing_number as i64 - s as i64)
}

/// Alignment window shared by all flattened vectors in one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub primary: (i32, i32),
    pub secondary: Option<(i32, i32)>,
}

impl Window {
    pub fn single(min: i32, max: i32) -> Self {
        Self {
            primary: (min, max),
            secondary: None,
        }
    }

    pub fn len(&self) -> usize {
        let w1 = (self.primary.1 - self.primary.0 + 1) as usize;
        match self.secondary {
            Some((lo, hi)) => w1 * (hi - lo + 1) as usize,
            None => w1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grows the window to cover `p`'s exponent ranges.
    pub fn include(&mut self, p: &LaurentPolynomial) {
        if let Some((lo, hi)) = p.degree_range() {
            self.primary.0 = self.primary.0.min(lo);
            self.primary.1 = self.primary.1.max(hi);
        }
        if p.variables() == 2 {
            if let Some((lo, hi)) = p.degree_range_secondary() {
                let sec = self.secondary.get_or_insert((lo, hi));
                sec.0 = sec.0.min(lo);
                sec.1 = sec.1.max(hi);
            }
        }
    }
}

/// Dense coefficient vector aligned to a fixed exponent window.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedPolynomial {
    pub values: Vec<f64>,
    pub exponent_window: Window,
}

/// Flattens `p` over `window`; index i holds the coefficient of exponent
/// `window.primary.0 + i`, with zeros at absent exponents. Two-variable
/// polynomials flatten row-major over the rectangular window.
pub fn flatten(p: &LaurentPolynomial, window: Window) -> Result<FlattenedPolynomial, PolynomialError> {
    let check = |range: Option<(i32, i32)>, win: (i32, i32)| -> Result<(), PolynomialError> {
        if let Some(r) = range {
            if r.0 < win.0 || r.1 > win.1 {
                return Err(PolynomialError::WindowTooSmall {
                    window: win,
                    range: r,
                });
            }
        }
        Ok(())
    };
    check(p.degree_range(), window.primary)?;
    let sec = match (p.variables(), window.secondary) {
        (1, None) => None,
        (2, Some(w)) => {
            check(p.degree_range_secondary(), w)?;
            Some(w)
        }
        // 1-variable polynomial in a 2-variable window sits at secondary exponent 0
        (1, Some(w)) => {
            check(if p.is_zero() { None } else { Some((0, 0)) }, w)?;
            Some(w)
        }
        (2, None) => {
            return Err(PolynomialError::WindowTooSmall {
                window: (0, -1),
                range: p.degree_range_secondary().unwrap_or((0, 0)),
            })
        }
        _ => unreachable!(),
    };

    let mut values = vec![0.0; window.len()];
    for ((e1, e2), c) in p.terms() {
        let i = (e1 - window.primary.0) as usize;
        let idx = match sec {
            Some((lo, hi)) => i * (hi - lo + 1) as usize + (e2 - lo) as usize,
            None => i,
        };
        values[idx] = c as f64;
    }
    Ok(FlattenedPolynomial {
        values,
        exponent_window: window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly(terms: &[(i32, i64)]) -> LaurentPolynomial {
        LaurentPolynomial::from_terms(terms.iter().copied())
    }

    /// Term-by-term oracle, deliberately independent of the Horner path.
    fn naive_eval(p: &LaurentPolynomial, t: Complex64) -> Complex64 {
        p.terms()
            .map(|((e, _), c)| Complex64::new(c as f64, 0.0) * powi(t, e))
            .sum()
    }

    #[test]
    fn parses_dense_constant() {
        assert_eq!(parse_polynomial("[0, 1]").unwrap(), poly(&[(0, 1)]));
    }

    #[test]
    fn parses_dense_zero() {
        let p = parse_polynomial("[0, 0]").unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn parses_dense_trefoil_jones() {
        // t + t^3 - t^4
        let p = parse_polynomial("[1, 1, 0, 1, -1]").unwrap();
        assert_eq!(p, poly(&[(1, 1), (3, 1), (4, -1)]));
        assert_eq!(p.degree_range(), Some((1, 4)));
    }

    #[test]
    fn parses_term_list_single_variable() {
        let p = parse_polynomial("[[-4, -1], [-3, 1], [-1, 1]]").unwrap();
        assert_eq!(p, poly(&[(-4, -1), (-3, 1), (-1, 1)]));
    }

    #[test]
    fn parses_term_list_two_variables() {
        let p = parse_polynomial("[[2, 0, 2], [4, 0, -1], [2, 2, 1]]").unwrap();
        assert_eq!(p.variables(), 2);
        assert_eq!(p.coefficient(2, 0), 2);
        assert_eq!(p.coefficient(4, 0), -1);
        assert_eq!(p.coefficient(2, 2), 1);
    }

    #[test]
    fn rejects_garbage() {
        for cell in ["", "abc", "[1]", "[1.5, 2]", "[[1], [2]]", "[[1,2],[1,2,3]]"] {
            assert!(parse_polynomial(cell).is_err(), "accepted {cell:?}");
        }
    }

    #[test]
    fn cell_round_trip() {
        for cell in ["[0, 1]", "[-2, 1, -1, 1, -1, 1]", "[1, 1, 0, 1, -1]"] {
            let p = parse_polynomial(cell).unwrap();
            assert_eq!(p.to_cell(), cell);
            assert_eq!(parse_polynomial(&p.to_cell()).unwrap(), p);
        }
    }

    #[test]
    fn evaluates_zero_polynomial() {
        let v = evaluate(&LaurentPolynomial::zero(), Complex64::new(2.0, -1.0)).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn evaluates_constant_one() {
        let v = evaluate(&poly(&[(0, 1)]), Complex64::new(-0.6, 0.1)).unwrap();
        assert_eq!(v, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn trefoil_determinant_is_three() {
        let jones = poly(&[(1, 1), (3, 1), (4, -1)]);
        let det = determinant_feature(&jones).unwrap();
        assert_eq!(det.value, 3);
        assert!(det.within_tolerance());
    }

    #[test]
    fn pole_detected() {
        let p = poly(&[(-1, 1)]);
        assert_eq!(
            evaluate(&p, Complex64::new(0.0, 0.0)),
            Err(PolynomialError::EvaluationAtPole)
        );
    }

    #[test]
    fn span_basics() {
        assert_eq!(span(&poly(&[(0, 1)])).unwrap(), 0);
        assert_eq!(span(&poly(&[(-4, 1), (-3, 2), (-1, -1)])).unwrap(), 3);
        assert_eq!(
            span(&LaurentPolynomial::zero()),
            Err(PolynomialError::ZeroPolynomial)
        );
    }

    #[test]
    fn turaev_feature_is_crossing_minus_span() {
        let jones = poly(&[(1, 1), (3, 1), (4, -1)]);
        assert_eq!(turaev_feature(&jones, 3).unwrap(), 0);
        assert_eq!(turaev_feature(&jones, 5).unwrap(), 2);
    }

    #[test]
    fn flatten_constant() {
        let f = flatten(&poly(&[(0, 1)]), Window::single(-1, 1)).unwrap();
        assert_eq!(f.values, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn flatten_zero() {
        let f = flatten(&LaurentPolynomial::zero(), Window::single(0, 2)).unwrap();
        assert_eq!(f.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn flatten_rejects_small_window() {
        let err = flatten(&poly(&[(-2, 1), (3, 1)]), Window::single(0, 3)).unwrap_err();
        assert!(matches!(err, PolynomialError::WindowTooSmall { .. }));
    }

    #[test]
    fn flatten_two_variable_row_major() {
        let p = LaurentPolynomial::from_terms2([(0, 0, 1), (1, 1, -2)]);
        let mut w = Window::single(0, 1);
        w.secondary = Some((0, 1));
        let f = flatten(&p, w).unwrap();
        assert_eq!(f.values, vec![1.0, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn window_grows_to_cover() {
        let mut w = Window::single(0, 0);
        w.include(&poly(&[(-3, 1), (2, 5)]));
        w.include(&poly(&[(4, 1)]));
        assert_eq!(w.primary, (-3, 4));
        assert_eq!(w.len(), 8);
    }

    fn arb_poly() -> impl Strategy<Value = LaurentPolynomial> {
        proptest::collection::vec(((-20i32..=20), (-1000i64..=1000)), 0..12)
            .prop_map(LaurentPolynomial::from_terms)
    }

    proptest! {
        #[test]
        fn horner_matches_naive_sum(p in arb_poly(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let t = Complex64::new(re, im);
            prop_assume!(t.norm() > 1e-3 && t.norm() <= 2.0);
            let h = evaluate(&p, t).unwrap();
            let n = naive_eval(&p, t);
            let scale = h.norm().max(n.norm()).max(1.0);
            prop_assert!((h - n).norm() <= 1e-12 * scale, "h={h} n={n}");
        }

        #[test]
        fn conjugate_symmetry(p in arb_poly(), re in -2.0f64..2.0, im in 0.01f64..2.0) {
            let t = Complex64::new(re, im);
            prop_assume!(t.norm() > 1e-3);
            let a = evaluate(&p, t).unwrap();
            let b = evaluate(&p, t.conj()).unwrap();
            let scale = a.norm().max(1.0);
            prop_assert!((a.conj() - b).norm() <= 1e-12 * scale);
        }

        #[test]
        fn span_invariant_under_monomial_shift(p in arb_poly(), k in -10i32..=10) {
            prop_assume!(!p.is_zero());
            let shifted = LaurentPolynomial::from_terms(p.terms().map(|((e, _), c)| (e + k, c)));
            prop_assert_eq!(span(&p).unwrap(), span(&shifted).unwrap());
        }

        #[test]
        fn flatten_preserves_terms(p in arb_poly()) {
            let mut w = Window::single(-25, 25);
            w.include(&p);
            let f = flatten(&p, w).unwrap();
            for (i, &v) in f.values.iter().enumerate() {
                let e = w.primary.0 + i as i32;
                prop_assert_eq!(v, p.coefficient(e, 0) as f64);
            }
        }
    }
}
