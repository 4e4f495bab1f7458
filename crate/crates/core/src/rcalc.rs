//! The coefficient ring `ℂ[x_i^{±1/t}, (x_i − x_j)^{-1}]`, its branch-aware
//! evaluation, and truncated multivariate Puiseux series.
//!
//! Exponents of `x_i` are kept exactly as integer numerators over `t`; only
//! coefficients are floating point. Variables are 0-based in code and JSON and
//! 1-based (`z1`, `z2`, ...) in human-readable messages.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64 as C;
use num_rational::Rational64;
use num_traits::Zero;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{branch_log, CMatrix, ONE, ZERO};

/// Index of the pair `(i, j)`, `i < j`, in lexicographic order.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j < n`, in the order used by [`pair_index`].
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn ipow(z: C, k: i64) -> C {
    if k == 0 {
        ONE
    } else {
        z.powi(k as i32)
    }
}

/// Generalized binomial coefficient `r choose k`.
pub fn binom(r: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (r - i as f64) / (i as f64 + 1.0))
}

/// Exponent data of one monomial `∏ x_i^{powers_i/t} ∏_{i<j} (x_i − x_j)^{diffs_ij}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonoKey {
    pub powers: Vec<i64>,
    pub diffs: Vec<i64>,
}

impl MonoKey {
    pub fn one(nvars: usize) -> Self {
        MonoKey { powers: vec![0; nvars], diffs: vec![0; nvars * nvars.saturating_sub(1) / 2] }
    }

    pub fn nvars(&self) -> usize {
        self.powers.len()
    }

    pub fn times(&self, other: &MonoKey) -> MonoKey {
        MonoKey {
            powers: self.powers.iter().zip(&other.powers).map(|(a, b)| a + b).collect(),
            diffs: self.diffs.iter().zip(&other.diffs).map(|(a, b)| a + b).collect(),
        }
    }

    /// Total degree `Σ r_i + Σ m_ij`.
    pub fn degree(&self, t: u32) -> Rational64 {
        let p: i64 = self.powers.iter().sum();
        let d: i64 = self.diffs.iter().sum();
        Rational64::new(p, t as i64) + d
    }

    /// `∂/∂x_i` of the monomial as a list of (monomial, factor) pairs.
    pub fn differentiate(&self, i: usize, t: u32) -> Vec<(MonoKey, C)> {
        let n = self.nvars();
        let mut out = Vec::new();
        if self.powers[i] != 0 {
            let mut k = self.clone();
            k.powers[i] -= t as i64;
            out.push((k, C::new(self.powers[i] as f64 / t as f64, 0.0)));
        }
        for (a, b) in pairs(n) {
            let idx = pair_index(a, b, n);
            let m = self.diffs[idx];
            if m == 0 || (a != i && b != i) {
                continue;
            }
            let mut k = self.clone();
            k.diffs[idx] -= 1;
            let sign = if a == i { 1.0 } else { -1.0 };
            out.push((k, C::new(sign * m as f64, 0.0)));
        }
        out
    }

    /// Evaluate with `x_i^{r}` computed as `exp(r · logs[i])` for fractional `r`.
    pub fn eval_logs(&self, t: u32, z: &[C], logs: &[C]) -> Result<C> {
        let n = self.nvars();
        let mut v = ONE;
        for i in 0..n {
            let num = self.powers[i];
            if num == 0 {
                continue;
            }
            if num % t as i64 == 0 {
                let k = num / t as i64;
                if k < 0 && z[i] == ZERO {
                    return Err(Error::SingularPoint { factor: format!("z{}", i + 1) });
                }
                v *= ipow(z[i], k);
            } else {
                if z[i] == ZERO {
                    return Err(Error::SingularPoint { factor: format!("z{}", i + 1) });
                }
                v *= (logs[i] * (num as f64 / t as f64)).exp();
            }
        }
        for (a, b) in pairs(n) {
            let m = self.diffs[pair_index(a, b, n)];
            if m == 0 {
                continue;
            }
            let d = z[a] - z[b];
            if m < 0 && d == ZERO {
                return Err(Error::SingularPoint { factor: format!("z{}-z{}", a + 1, b + 1) });
            }
            v *= ipow(d, m);
        }
        Ok(v)
    }

    pub fn describe(&self, t: u32) -> String {
        let n = self.nvars();
        let mut parts = Vec::new();
        for i in 0..n {
            if self.powers[i] != 0 {
                parts.push(format!("z{}^({})", i + 1, Rational64::new(self.powers[i], t as i64)));
            }
        }
        for (a, b) in pairs(n) {
            let m = self.diffs[pair_index(a, b, n)];
            if m != 0 {
                parts.push(format!("(z{}-z{})^({m})", a + 1, b + 1));
            }
        }
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

/// Logs `l_{p_i}(z_i)` for each coordinate; zero coordinates get a zero log.
pub fn branch_logs(z: &[C], p: &[i64]) -> Vec<C> {
    z.iter().zip(p).map(|(&zi, &pi)| if zi == ZERO { ZERO } else { branch_log(zi, pi) }).collect()
}

/// An element of the coefficient ring.
#[derive(Debug, Clone, PartialEq)]
pub struct RElement {
    pub t: u32,
    pub nvars: usize,
    terms: BTreeMap<MonoKey, C>,
}

impl RElement {
    pub fn zero(t: u32, nvars: usize) -> Self {
        assert!(t > 0, "root order must be positive");
        RElement { t, nvars, terms: BTreeMap::new() }
    }

    pub fn constant(t: u32, nvars: usize, c: C) -> Self {
        Self::monomial(t, nvars, MonoKey::one(nvars), c)
    }

    pub fn monomial(t: u32, nvars: usize, key: MonoKey, c: C) -> Self {
        let mut e = Self::zero(t, nvars);
        e.add_term(key, c);
        e
    }

    /// `x_i^r` with `r ∈ (1/t)ℤ`.
    pub fn var_power(t: u32, nvars: usize, i: usize, r: Rational64) -> Result<Self> {
        let num = r * t as i64;
        if !num.is_integer() {
            return Err(Error::Domain(format!("exponent {r} is not a multiple of 1/{t}")));
        }
        let mut key = MonoKey::one(nvars);
        key.powers[i] = num.to_integer();
        Ok(Self::monomial(t, nvars, key, ONE))
    }

    /// `(x_i − x_j)^m` for any `i ≠ j`.
    pub fn diff_power(t: u32, nvars: usize, i: usize, j: usize, m: i64) -> Self {
        assert!(i != j);
        let mut key = MonoKey::one(nvars);
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, if m % 2 == 0 { 1.0 } else { -1.0 }) };
        key.diffs[pair_index(a, b, nvars)] = m;
        Self::monomial(t, nvars, key, C::new(sign, 0.0))
    }

    pub fn add_term(&mut self, key: MonoKey, c: C) {
        assert_eq!(key.nvars(), self.nvars, "monomial has wrong number of variables");
        if c == ZERO {
            return;
        }
        let entry = self.terms.entry(key.clone()).or_insert(ZERO);
        *entry += c;
        if *entry == ZERO {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> &BTreeMap<MonoKey, C> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(&self, c: C) -> Self {
        let mut out = Self::zero(self.t, self.nvars);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * c);
        }
        out
    }

    pub fn differentiate(&self, i: usize) -> Self {
        let mut out = Self::zero(self.t, self.nvars);
        for (k, v) in &self.terms {
            for (dk, f) in k.differentiate(i, self.t) {
                out.add_term(dk, v * f);
            }
        }
        out
    }

    /// Evaluate at `z` on the branch tuple `p`.
    pub fn eval(&self, z: &[C], p: &[i64]) -> Result<C> {
        self.eval_logs(z, &branch_logs(z, p))
    }

    /// Evaluate with caller-supplied logarithms of the coordinates.
    pub fn eval_logs(&self, z: &[C], logs: &[C]) -> Result<C> {
        if z.len() != self.nvars || logs.len() != self.nvars {
            return Err(Error::Shape(format!("evaluation point has {} coordinates, expected {}", z.len(), self.nvars)));
        }
        let mut acc = ZERO;
        for (k, v) in &self.terms {
            acc += v * k.eval_logs(self.t, z, logs)?;
        }
        Ok(acc)
    }

    /// Common degree of all monomials, or `None` for zero or inhomogeneous elements.
    pub fn degree(&self) -> Option<Rational64> {
        let mut degs = self.terms.keys().map(|k| k.degree(self.t));
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    /// Same monomials and coefficients agreeing to `tol`.
    pub fn approx_eq(&self, other: &RElement, tol: f64) -> bool {
        self.t == other.t
            && self.nvars == other.nvars
            && self.terms.len() == other.terms.len()
            && self.terms.iter().zip(&other.terms).all(|((k1, v1), (k2, v2))| k1 == k2 && (v1 - v2).norm() <= tol)
    }

    fn check_compatible(&self, other: &RElement) {
        assert!(self.t == other.t && self.nvars == other.nvars, "incompatible ring elements");
    }
}

impl fmt::Display for RElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(k, v)| format!("({:.6}{:+.6}i)*{}", v.re, v.im, k.describe(self.t)))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Add for &RElement {
    type Output = RElement;
    fn add(self, rhs: &RElement) -> RElement {
        self.check_compatible(rhs);
        let mut out = self.clone();
        for (k, v) in &rhs.terms {
            out.add_term(k.clone(), *v);
        }
        out
    }
}

impl Sub for &RElement {
    type Output = RElement;
    fn sub(self, rhs: &RElement) -> RElement {
        self + &(-rhs)
    }
}

impl Neg for &RElement {
    type Output = RElement;
    fn neg(self) -> RElement {
        self.scale(C::new(-1.0, 0.0))
    }
}

impl Mul for &RElement {
    type Output = RElement;
    fn mul(self, rhs: &RElement) -> RElement {
        self.check_compatible(rhs);
        let mut out = RElement::zero(self.t, self.nvars);
        for (k1, v1) in &self.terms {
            for (k2, v2) in &rhs.terms {
                out.add_term(k1.times(k2), v1 * v2);
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    coeff: [f64; 2],
    powers: Vec<i64>,
    #[serde(default)]
    diffs: BTreeMap<String, i64>,
}

#[derive(Serialize, Deserialize)]
struct RElementJson {
    t: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nvars: Option<usize>,
    terms: Vec<TermJson>,
}

impl Serialize for RElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.nvars;
        let terms = self
            .terms
            .iter()
            .map(|(k, v)| {
                let diffs = pairs(n)
                    .into_iter()
                    .filter_map(|(a, b)| {
                        let m = k.diffs[pair_index(a, b, n)];
                        (m != 0).then(|| (format!("{a},{b}"), m))
                    })
                    .collect();
                TermJson { coeff: [v.re, v.im], powers: k.powers.clone(), diffs }
            })
            .collect();
        RElementJson { t: self.t, nvars: Some(n), terms }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = RElementJson::deserialize(d)?;
        if raw.t == 0 {
            return Err(D::Error::custom("root order t must be positive"));
        }
        let n = match (raw.nvars, raw.terms.first()) {
            (Some(n), _) => n,
            (None, Some(term)) => term.powers.len(),
            (None, None) => return Err(D::Error::custom("empty ring element needs an explicit nvars")),
        };
        let mut e = RElement::zero(raw.t, n);
        for term in raw.terms {
            if term.powers.len() != n {
                return Err(D::Error::custom("powers length disagrees with nvars"));
            }
            let mut key = MonoKey { powers: term.powers, diffs: vec![0; n * n.saturating_sub(1) / 2] };
            for (name, m) in term.diffs {
                let (a, b) = name
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
                    .ok_or_else(|| D::Error::custom(format!("bad difference key {name:?}")))?;
                if a >= b || b >= n {
                    return Err(D::Error::custom(format!("difference key {name:?} must be \"i,j\" with i<j<{n}")));
                }
                key.diffs[pair_index(a, b, n)] += m;
            }
            e.add_term(key, C::new(term.coeff[0], term.coeff[1]));
        }
        Ok(e)
    }
}

/// A matrix with entries in the coefficient ring, stored as a sum of
/// monomials with constant matrix coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    pub t: u32,
    pub nvars: usize,
    pub rows: usize,
    pub cols: usize,
    terms: BTreeMap<MonoKey, CMatrix>,
}

impl RMatrix {
    pub fn zero(t: u32, nvars: usize, rows: usize, cols: usize) -> Self {
        RMatrix { t, nvars, rows, cols, terms: BTreeMap::new() }
    }

    pub fn add_term(&mut self, key: MonoKey, m: &CMatrix) {
        assert_eq!(m.shape(), (self.rows, self.cols));
        assert_eq!(key.nvars(), self.nvars);
        if m.iter().all(|x| *x == ZERO) {
            return;
        }
        let entry = self.terms.entry(key.clone()).or_insert_with(|| CMatrix::zeros(self.rows, self.cols));
        *entry += m;
        if entry.iter().all(|x| *x == ZERO) {
            self.terms.remove(&key);
        }
    }

    /// Add `f · m` for a scalar ring element `f`.
    pub fn add_scaled(&mut self, f: &RElement, m: &CMatrix) {
        for (k, v) in f.terms() {
            self.add_term(k.clone(), &(m * *v));
        }
    }

    pub fn terms(&self) -> &BTreeMap<MonoKey, CMatrix> {
        &self.terms
    }

    pub fn entry(&self, r: usize, c: usize) -> RElement {
        let mut e = RElement::zero(self.t, self.nvars);
        for (k, m) in &self.terms {
            e.add_term(k.clone(), m[(r, c)]);
        }
        e
    }

    pub fn from_entries(t: u32, nvars: usize, entries: &[Vec<RElement>]) -> Result<Self> {
        let rows = entries.len();
        let cols = entries.first().map_or(0, Vec::len);
        let mut out = Self::zero(t, nvars, rows, cols);
        for (r, row) in entries.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape("ragged matrix of ring elements".into()));
            }
            for (c, e) in row.iter().enumerate() {
                if e.t != t || e.nvars != nvars {
                    return Err(Error::Shape(format!("entry ({r},{c}) has t={} nvars={}", e.t, e.nvars)));
                }
                for (k, v) in e.terms() {
                    let mut m = CMatrix::zeros(rows, cols);
                    m[(r, c)] = *v;
                    out.add_term(k.clone(), &m);
                }
            }
        }
        Ok(out)
    }

    pub fn entries(&self) -> Vec<Vec<RElement>> {
        (0..self.rows).map(|r| (0..self.cols).map(|c| self.entry(r, c)).collect()).collect()
    }

    pub fn eval(&self, z: &[C], p: &[i64]) -> Result<CMatrix> {
        self.eval_logs(z, &branch_logs(z, p))
    }

    pub fn eval_logs(&self, z: &[C], logs: &[C]) -> Result<CMatrix> {
        if z.len() != self.nvars || logs.len() != self.nvars {
            return Err(Error::Shape(format!("evaluation point has {} coordinates, expected {}", z.len(), self.nvars)));
        }
        let mut acc = CMatrix::zeros(self.rows, self.cols);
        for (k, m) in &self.terms {
            acc += m * k.eval_logs(self.t, z, logs)?;
        }
        Ok(acc)
    }

    pub fn differentiate(&self, i: usize) -> Self {
        let mut out = Self::zero(self.t, self.nvars, self.rows, self.cols);
        for (k, m) in &self.terms {
            for (dk, f) in k.differentiate(i, self.t) {
                out.add_term(dk, &(m * f));
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero(self.t, self.nvars, self.cols, self.rows);
        for (k, m) in &self.terms {
            out.add_term(k.clone(), &m.transpose());
        }
        out
    }

    /// Common degree of every monomial, `None` if inhomogeneous or zero.
    pub fn degree(&self) -> Option<Rational64> {
        let mut degs = self.terms.keys().map(|k| k.degree(self.t));
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    /// Same monomial support, coefficient matrices agreeing entrywise to `tol`.
    pub fn approx_eq(&self, other: &RMatrix, tol: f64) -> bool {
        self.t == other.t
            && self.nvars == other.nvars
            && self.rows == other.rows
            && self.cols == other.cols
            && self.terms.len() == other.terms.len()
            && self.terms.iter().zip(&other.terms).all(|((k1, m1), (k2, m2))| {
                k1 == k2 && m1.iter().zip(m2.iter()).all(|(a, b)| (a - b).norm() <= tol)
            })
    }
}

impl Serialize for RMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.entries().serialize(s)
    }
}

impl RMatrix {
    /// Rebuild from the row-major nested array of ring elements.
    pub fn from_json_entries(t: u32, nvars: usize, value: serde_json::Value) -> Result<Self> {
        let entries: Vec<Vec<RElement>> = serde_json::from_value(value)?;
        Self::from_entries(t, nvars, &entries)
    }
}

/// Monomial key of a Puiseux series: exponents as numerators over the series
/// denominator, plus powers of `log η_v`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub exps: Vec<i64>,
    pub logs: Vec<u32>,
}

impl SeriesKey {
    pub fn plain(exps: Vec<i64>) -> Self {
        let n = exps.len();
        SeriesKey { exps, logs: vec![0; n] }
    }

    fn times(&self, other: &SeriesKey) -> SeriesKey {
        SeriesKey {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
            logs: self.logs.iter().zip(&other.logs).map(|(a, b)| a + b).collect(),
        }
    }
}

/// How the cutoffs of a series constrain its exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Every exponent `e_v` must lie below `cutoff_v`.
    PerVariable,
    /// The tail sums `e_v + e_{v+1} + ... + e_{N-1}` must lie below `cutoff_v`.
    /// This is the grading that radially ordered expansions preserve.
    TailSums,
}

/// A truncated multivariate Puiseux series with optional log powers.
#[derive(Debug, Clone, PartialEq)]
pub struct PuiseuxSeries {
    pub nvars: usize,
    pub den: u32,
    pub truncation: Truncation,
    /// Cutoff numerators over `den`; `None` means unbounded.
    pub cutoffs: Vec<Option<i64>>,
    terms: BTreeMap<SeriesKey, C>,
}

impl PuiseuxSeries {
    pub fn new(nvars: usize, den: u32, truncation: Truncation, cutoffs: Vec<Option<i64>>) -> Self {
        assert_eq!(cutoffs.len(), nvars);
        assert!(den > 0);
        PuiseuxSeries { nvars, den, truncation, cutoffs, terms: BTreeMap::new() }
    }

    pub fn admits(&self, exps: &[i64]) -> bool {
        match self.truncation {
            Truncation::PerVariable => exps.iter().zip(&self.cutoffs).all(|(e, c)| c.is_none_or(|c| *e < c)),
            Truncation::TailSums => {
                let mut tail = 0;
                for v in (0..self.nvars).rev() {
                    tail += exps[v];
                    if let Some(c) = self.cutoffs[v] {
                        if tail >= c {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    /// Insert a term; terms beyond the cutoffs are silently discarded.
    pub fn add_term(&mut self, key: SeriesKey, c: C) {
        if c == ZERO || !self.admits(&key.exps) {
            return;
        }
        let entry = self.terms.entry(key.clone()).or_insert(ZERO);
        *entry += c;
        if *entry == ZERO {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> &BTreeMap<SeriesKey, C> {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, exps: &[i64]) -> C {
        self.terms.get(&SeriesKey::plain(exps.to_vec())).copied().unwrap_or(ZERO)
    }

    fn merged_cutoffs(&self, other: &PuiseuxSeries) -> Vec<Option<i64>> {
        self.cutoffs
            .iter()
            .zip(&other.cutoffs)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(*a.min(b)),
                (Some(a), None) | (None, Some(a)) => Some(*a),
                (None, None) => None,
            })
            .collect()
    }

    fn check_compatible(&self, other: &PuiseuxSeries) {
        assert!(
            self.nvars == other.nvars && self.den == other.den && self.truncation == other.truncation,
            "incompatible series"
        );
    }

    pub fn scale(&self, c: C) -> Self {
        let mut out = Self::new(self.nvars, self.den, self.truncation, self.cutoffs.clone());
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * c);
        }
        out
    }

    pub fn add(&self, other: &PuiseuxSeries) -> Self {
        self.check_compatible(other);
        let mut out = Self::new(self.nvars, self.den, self.truncation, self.merged_cutoffs(other));
        for (k, v) in self.terms.iter().chain(&other.terms) {
            out.add_term(k.clone(), *v);
        }
        out
    }

    pub fn mul(&self, other: &PuiseuxSeries) -> Self {
        self.check_compatible(other);
        let mut out = Self::new(self.nvars, self.den, self.truncation, self.merged_cutoffs(other));
        for (k1, v1) in &self.terms {
            for (k2, v2) in &other.terms {
                out.add_term(k1.times(k2), v1 * v2);
            }
        }
        out
    }

    /// Evaluate at `η` on branch tuple `p`.
    pub fn eval(&self, eta: &[C], p: &[i64]) -> Result<C> {
        self.eval_logs(eta, &branch_logs(eta, p))
    }

    pub fn eval_logs(&self, eta: &[C], logs: &[C]) -> Result<C> {
        if eta.len() != self.nvars {
            return Err(Error::Shape(format!("series point has {} coordinates, expected {}", eta.len(), self.nvars)));
        }
        let den = self.den as i64;
        let mut acc = ZERO;
        for (k, c) in &self.terms {
            let mut v = *c;
            for i in 0..self.nvars {
                let e = k.exps[i];
                if (e < 0 || e % den != 0 || k.logs[i] > 0) && eta[i] == ZERO {
                    return Err(Error::SingularPoint { factor: format!("eta{}", i + 1) });
                }
                if e % den == 0 {
                    v *= ipow(eta[i], e / den);
                } else {
                    v *= (logs[i] * (e as f64 / den as f64)).exp();
                }
                if k.logs[i] > 0 {
                    v *= logs[i].powi(k.logs[i] as i32);
                }
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Exact per-variable minimum exponents; `None` stands for `+∞` (no terms).
    pub fn min_exponents(&self) -> Vec<Option<Rational64>> {
        series_min_exponents(self)
    }
}

/// Per-variable minimum exponent over stored terms; `None` is the `+∞` sentinel.
pub fn series_min_exponents(s: &PuiseuxSeries) -> Vec<Option<Rational64>> {
    (0..s.nvars)
        .map(|v| s.terms.keys().map(|k| k.exps[v]).min().map(|e| Rational64::new(e, s.den as i64)))
        .collect()
}

fn cutoff_numerator(q: Rational64, den: u32) -> i64 {
    (q * den as i64).ceil().to_integer()
}

/// Expand every `(x_i − x_j)^m`, `i < j`, in non-negative powers of `x_j / x_i`.
///
/// `cutoffs[v]` bounds the tail sum `e_v + ... + e_{N-1}`; it is usually left
/// unbounded for the first variable. Expansion only raises these tail sums, so
/// the truncation is exact.
pub fn iota_expand(f: &RElement, cutoffs: &[Option<Rational64>]) -> Result<PuiseuxSeries> {
    let n = f.nvars;
    if cutoffs.len() != n {
        return Err(Error::Shape(format!("{} cutoffs for {n} variables", cutoffs.len())));
    }
    if cutoffs.iter().skip(1).any(Option::is_none) {
        return Err(Error::Config("expansion cutoffs must be finite for every expanded variable".into()));
    }
    let t = f.t;
    let cut: Vec<Option<i64>> = cutoffs.iter().map(|c| c.map(|q| cutoff_numerator(q, t))).collect();
    let mut out = PuiseuxSeries::new(n, t, Truncation::TailSums, cut.clone());
    let ti = t as i64;
    for (key, coeff) in f.terms() {
        let mut partial = PuiseuxSeries::new(n, t, Truncation::TailSums, cut.clone());
        partial.add_term(SeriesKey::plain(key.powers.clone()), *coeff);
        for (a, b) in pairs(n) {
            let m = key.diffs[pair_index(a, b, n)];
            if m == 0 {
                continue;
            }
            let mut next = PuiseuxSeries::new(n, t, Truncation::TailSums, cut.clone());
            let mut k: u32 = 0;
            loop {
                if m >= 0 && k as i64 > m {
                    break;
                }
                let c = binom(m as f64, k) * if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut added = false;
                for (sk, v) in partial.terms() {
                    let mut exps = sk.exps.clone();
                    exps[a] += (m - k as i64) * ti;
                    exps[b] += k as i64 * ti;
                    if next.admits(&exps) {
                        added = true;
                        next.add_term(SeriesKey { exps, logs: sk.logs.clone() }, v * c);
                    }
                }
                if !added {
                    break;
                }
                k += 1;
            }
            partial = next;
        }
        out = out.add(&partial);
    }
    Ok(out)
}

/// Affine substitution `x_ℓ = c_ℓ + Σ_k b_{kℓ} η_k^{e_k}` used by [`compose_change`].
#[derive(Debug, Clone)]
pub struct Substitution {
    pub n_eta: usize,
    /// One Laurent polynomial in `η` per original variable; exponents are integers.
    pub forms: Vec<BTreeMap<Vec<i64>, C>>,
    /// Branch index used for `c^r` when a leading coefficient is raised to a
    /// fractional power.
    pub branches: Vec<i64>,
}

impl Substitution {
    /// Build from the matrix `b` (`b[(k, ℓ)]` multiplies `η_k^{exponents[k]}`
    /// in `x_ℓ`) and constants `gamma`. Coefficients smaller than
    /// `1e-12 · max|coeff|` are treated as exact zeros.
    pub fn affine(b: &CMatrix, gamma: &[C], exponents: &[i64], branches: Vec<i64>) -> Self {
        let n_eta = b.nrows();
        let scale = b.iter().chain(gamma).map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
        let forms = (0..b.ncols())
            .map(|l| {
                let mut form = BTreeMap::new();
                if gamma[l].norm() > 1e-12 * scale {
                    form.insert(vec![0; n_eta], gamma[l]);
                }
                for k in 0..n_eta {
                    if b[(k, l)].norm() > 1e-12 * scale {
                        let mut e = vec![0; n_eta];
                        e[k] = exponents[k];
                        *form.entry(e).or_insert(ZERO) += b[(k, l)];
                    }
                }
                form
            })
            .collect();
        Substitution { n_eta, forms, branches }
    }

    fn difference(&self, i: usize, j: usize) -> BTreeMap<Vec<i64>, C> {
        let mut d = self.forms[i].clone();
        for (e, v) in &self.forms[j] {
            *d.entry(e.clone()).or_insert(ZERO) -= v;
        }
        let scale = self.forms[i].values().chain(self.forms[j].values()).map(|x| x.norm()).fold(0.0, f64::max);
        d.retain(|_, v| v.norm() > 1e-12 * scale);
        d
    }
}

type Poly = BTreeMap<Vec<i64>, C>;

fn poly_mul_truncated(a: &Poly, b: &Poly, budget: &[i64]) -> Poly {
    let mut out = Poly::new();
    for (ea, va) in a {
        for (eb, vb) in b {
            let e: Vec<i64> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            if e.iter().zip(budget).all(|(x, c)| x < c) {
                *out.entry(e).or_insert(ZERO) += va * vb;
            }
        }
    }
    out
}

/// `P^r` for a Laurent polynomial `P` with integer exponents, split as
/// `coefficient · η^{shift} · (holomorphic series)`.
struct FactorPower {
    coefficient: C,
    /// Shift numerators over the series denominator.
    shift: Vec<i64>,
    /// Normalized holomorphic factor `(P/lead)^r` expressed as `1 + u` powers.
    base: Poly,
    power: f64,
    nonneg_integer: bool,
}

fn factor_power(poly: &Poly, r: Rational64, branch: i64, den: u32, name: &str) -> Result<FactorPower> {
    if poly.is_empty() {
        return Err(Error::Degenerate {
            factor: name.to_string(),
            detail: "the factor vanishes identically after the substitution".into(),
        });
    }
    let n = poly.keys().next().unwrap().len();
    let min: Vec<i64> = (0..n).map(|v| poly.keys().map(|e| e[v]).min().unwrap()).collect();
    let nonneg_integer = r.is_integer() && r >= Rational64::zero();
    let num = (r * den as i64).to_integer();
    let rel = |e: &Vec<i64>| e.iter().zip(&min).map(|(x, m)| x - m).collect::<Vec<i64>>();
    if nonneg_integer {
        let base = poly.iter().map(|(e, v)| (rel(e), *v)).collect();
        let k = r.to_integer();
        return Ok(FactorPower {
            coefficient: ONE,
            shift: min.iter().map(|m| m * k * den as i64).collect(),
            base,
            power: k as f64,
            nonneg_integer,
        });
    }
    let lead = *poly.get(&min).ok_or_else(|| Error::Degenerate {
        factor: name.to_string(),
        detail: "no single monomial dominates near the target point, so the configuration is not component-isolated"
            .into(),
    })?;
    let mut base = Poly::new();
    for (e, v) in poly {
        if *e != min {
            base.insert(rel(e), v / lead);
        }
    }
    let rf = *r.numer() as f64 / *r.denom() as f64;
    let coefficient = if r.is_integer() { ipow(lead, r.to_integer()) } else { (branch_log(lead, branch) * rf).exp() };
    Ok(FactorPower { coefficient, shift: min.iter().map(|m| m * num).collect(), base, power: rf, nonneg_integer })
}

impl FactorPower {
    /// The holomorphic part truncated to exponents (numerators over `den`)
    /// strictly below `budget`.
    fn holomorphic(&self, den: u32, budget: &[i64]) -> Poly {
        let n = budget.len();
        let d = den as i64;
        // work in integer exponents of η, then scale to numerators over den
        let int_budget: Vec<i64> = budget.iter().map(|b| if *b <= 0 { 0 } else { (b + d - 1) / d }).collect();
        let zero = vec![0i64; n];
        let mut result = Poly::new();
        if int_budget.contains(&0) {
            return result;
        }
        if self.nonneg_integer {
            let k = self.power as u32;
            let mut acc: Poly = [(zero.clone(), ONE)].into_iter().collect();
            for _ in 0..k {
                acc = poly_mul_truncated(&acc, &self.base, &int_budget);
            }
            result = acc;
        } else {
            let mut u_pow: Poly = [(zero.clone(), ONE)].into_iter().collect();
            let mut k: u32 = 0;
            while !u_pow.is_empty() {
                let c = binom(self.power, k);
                for (e, v) in &u_pow {
                    *result.entry(e.clone()).or_insert(ZERO) += v * c;
                }
                k += 1;
                u_pow = poly_mul_truncated(&u_pow, &self.base, &int_budget);
            }
        }
        result
            .into_iter()
            .map(|(e, v)| (e.iter().map(|x| x * d).collect::<Vec<_>>(), v))
            .filter(|(e, v)| *v != ZERO && e.iter().zip(budget).all(|(x, b)| x < b))
            .collect()
    }
}

/// Substitute into a single monomial; exponents of the result are numerators
/// over `t` and every term with all exponents below `cutoff` is exact.
pub fn compose_monomial(key: &MonoKey, t: u32, subst: &Substitution, cutoff: &[i64]) -> Result<PuiseuxSeries> {
    let n = key.nvars();
    if subst.forms.len() != n {
        return Err(Error::Shape(format!("substitution has {} forms for {n} variables", subst.forms.len())));
    }
    let m = subst.n_eta;
    let mut factors = Vec::new();
    for i in 0..n {
        if key.powers[i] != 0 {
            let r = Rational64::new(key.powers[i], t as i64);
            factors.push(factor_power(&subst.forms[i], r, subst.branches[i], t, &format!("z{}", i + 1))?);
        }
    }
    for (a, b) in pairs(n) {
        let e = key.diffs[pair_index(a, b, n)];
        if e != 0 {
            let diff = subst.difference(a, b);
            factors.push(factor_power(&diff, Rational64::from(e), 0, t, &format!("z{}-z{}", a + 1, b + 1))?);
        }
    }
    let mut shift = vec![0i64; m];
    let mut coefficient = ONE;
    for f in &factors {
        for v in 0..m {
            shift[v] += f.shift[v];
        }
        coefficient *= f.coefficient;
    }
    let budget: Vec<i64> = cutoff.iter().zip(&shift).map(|(c, s)| c - s).collect();
    let zero = vec![0i64; m];
    let mut acc: Poly = [(zero, coefficient)].into_iter().collect();
    if budget.iter().any(|b| *b <= 0) {
        acc.clear();
    }
    for f in &factors {
        if acc.is_empty() {
            break;
        }
        acc = poly_mul_truncated(&acc, &f.holomorphic(t, &budget), &budget);
    }
    let mut out = PuiseuxSeries::new(m, t, Truncation::PerVariable, cutoff.iter().map(|c| Some(*c)).collect());
    for (e, v) in acc {
        let exps = e.iter().zip(&shift).map(|(x, s)| x + s).collect();
        out.add_term(SeriesKey::plain(exps), v);
    }
    Ok(out)
}

/// Substitute the change of variables into `f` and expand as a truncated
/// Puiseux series in `η`. Cutoffs are per `η` variable and exclusive.
pub fn compose_change(f: &RElement, subst: &Substitution, cutoffs: &[Rational64]) -> Result<PuiseuxSeries> {
    if cutoffs.len() != subst.n_eta {
        return Err(Error::Shape(format!("{} cutoffs for {} variables", cutoffs.len(), subst.n_eta)));
    }
    let cut: Vec<i64> = cutoffs.iter().map(|q| cutoff_numerator(*q, f.t)).collect();
    let mut out = PuiseuxSeries::new(subst.n_eta, f.t, Truncation::PerVariable, cut.iter().map(|c| Some(*c)).collect());
    for (key, c) in f.terms() {
        out = out.add(&compose_monomial(key, f.t, subst, &cut)?.scale(*c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, real};

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn pair_indexing() {
        let ps = pairs(4);
        for (idx, (i, j)) in ps.iter().enumerate() {
            assert_eq!(pair_index(*i, *j, 4), idx);
        }
        assert_eq!(ps.len(), 6);
    }

    #[test]
    fn eval_examples() {
        let sqrt = RElement::var_power(2, 1, 0, r(1, 2)).unwrap();
        assert!((sqrt.eval(&[real(4.0)], &[0]).unwrap() - real(2.0)).norm() < 1e-15);
        assert!((sqrt.eval(&[real(4.0)], &[1]).unwrap() - real(-2.0)).norm() < 1e-14);
        let inv = RElement::diff_power(1, 2, 0, 1, -1);
        for p in [[0, 0], [3, -2]] {
            assert_eq!(inv.eval(&[real(3.0), real(1.0)], &p).unwrap(), real(0.5));
        }
        assert!(matches!(inv.eval(&[real(1.0), real(1.0)], &[0, 0]), Err(Error::SingularPoint { .. })));
        assert!(matches!(sqrt.eval(&[ZERO], &[0]), Err(Error::SingularPoint { .. })));
    }

    #[test]
    fn arg_convention_below_positive_axis() {
        // arg in [0, 2π): just below the positive real axis sits near 2π
        let sqrt = RElement::var_power(2, 1, 0, r(1, 2)).unwrap();
        let v = sqrt.eval(&[c(1.0, -1e-12)], &[0]).unwrap();
        assert!((v - real(-1.0)).norm() < 1e-10);
    }

    #[test]
    fn reversed_difference_sign() {
        let a = RElement::diff_power(1, 2, 1, 0, -1);
        let b = RElement::diff_power(1, 2, 0, 1, -1);
        assert_eq!(a, b.scale(real(-1.0)));
        let sq = RElement::diff_power(1, 2, 1, 0, 2);
        assert_eq!(sq, RElement::diff_power(1, 2, 0, 1, 2));
    }

    #[test]
    fn derivative_examples() {
        let sqrt = RElement::var_power(2, 1, 0, r(1, 2)).unwrap();
        let expect = RElement::var_power(2, 1, 0, r(-1, 2)).unwrap().scale(real(0.5));
        assert_eq!(sqrt.differentiate(0), expect);

        let inv = RElement::diff_power(1, 2, 0, 1, -1);
        assert_eq!(inv.differentiate(0), RElement::diff_power(1, 2, 0, 1, -2).scale(real(-1.0)));

        let f = &RElement::var_power(2, 2, 1, r(1, 2)).unwrap() * &RElement::diff_power(2, 2, 0, 1, -1);
        let df = f.differentiate(1);
        let z = [real(3.0), real(1.0)];
        let h = 1e-6;
        let fd = (f.eval(&[z[0], z[1] + h], &[0, 0]).unwrap() - f.eval(&[z[0], z[1] - h], &[0, 0]).unwrap()) / (2.0 * h);
        assert!((df.eval(&z, &[0, 0]).unwrap() - fd).norm() < 1e-8);
        // closed form: (1/2) z2^{-1/2}/(z1-z2) + z2^{1/2}/(z1-z2)^2 at (3,1) = 1/4 + 1/4
        assert!((df.eval(&z, &[0, 0]).unwrap() - real(0.5)).norm() < 1e-14);
    }

    #[test]
    fn degree_of_split_ratio() {
        let t = 2;
        let a = &(&RElement::var_power(t, 2, 1, r(1, 2)).unwrap() * &RElement::var_power(t, 2, 0, r(-1, 2)).unwrap())
            * &RElement::diff_power(t, 2, 0, 1, -1);
        assert_eq!(a.degree(), Some(r(-1, 1)));
        let mixed = &a + &RElement::constant(t, 2, ONE);
        assert_eq!(mixed.degree(), None);
    }

    #[test]
    fn json_round_trip() {
        let f = &(&RElement::var_power(3, 3, 2, r(2, 3)).unwrap() * &RElement::diff_power(3, 3, 0, 2, -2))
            .scale(c(0.25, -1.5))
            + &RElement::constant(3, 3, real(2.0));
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"0,2\":-2"));
        let back: RElement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let bad = r#"{"t":1,"terms":[{"coeff":[1,0],"powers":[0,0],"diffs":{"1,0":-1}}]}"#;
        assert!(serde_json::from_str::<RElement>(bad).is_err());
    }

    #[test]
    fn iota_geometric() {
        let f = RElement::diff_power(1, 2, 0, 1, -1);
        let s = iota_expand(&f, &[None, Some(r(3, 1))]).unwrap();
        assert_eq!(s.terms().len(), 3);
        assert_eq!(s.coefficient(&[-1, 0]), ONE);
        assert_eq!(s.coefficient(&[-2, 1]), ONE);
        assert_eq!(s.coefficient(&[-3, 2]), ONE);
    }

    #[test]
    fn iota_square_and_passthrough() {
        let f = RElement::diff_power(1, 2, 0, 1, -2);
        let s = iota_expand(&f, &[None, Some(r(2, 1))]).unwrap();
        assert_eq!(s.terms().len(), 2);
        assert_eq!(s.coefficient(&[-2, 0]), ONE);
        assert_eq!(s.coefficient(&[-3, 1]), real(2.0));
        let z = [real(2.0), real(0.1)];
        let series = s.eval(&z, &[0, 0]).unwrap();
        let exact = f.eval(&z, &[0, 0]).unwrap();
        // remainder 3·z2²/z1⁴ ≈ 1.9e-3
        assert!((series - exact).norm() < 3e-3);
        let big = iota_expand(&f, &[None, Some(r(20, 1))]).unwrap();
        assert!((big.eval(&z, &[0, 0]).unwrap() - exact).norm() < 1e-6);

        let sqrt = RElement::var_power(2, 2, 0, r(1, 2)).unwrap();
        let s = iota_expand(&sqrt, &[None, Some(r(1, 1))]).unwrap();
        assert_eq!(s.terms().len(), 1);
        assert_eq!(s.coefficient(&[1, 0]), ONE);
    }

    #[test]
    fn compose_examples() {
        // x^{-1}, η² = z
        let f = RElement::var_power(2, 1, 0, r(-1, 1)).unwrap();
        let sub = Substitution::affine(&CMatrix::identity(1, 1), &[ZERO], &[2], vec![0]);
        let s = compose_change(&f, &sub, &[r(5, 1)]).unwrap();
        assert_eq!(s.terms().len(), 1);
        assert_eq!(s.min_exponents(), vec![Some(r(-2, 1))]);

        // (x1-x2)^{-1} under ζ = (z1 − z2, z2)
        let f = RElement::diff_power(1, 2, 0, 1, -1);
        let b = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ONE, ONE]);
        let sub = Substitution::affine(&b, &[ZERO, ZERO], &[1, 1], vec![0, 0]);
        let s = compose_change(&f, &sub, &[r(4, 1), r(4, 1)]).unwrap();
        assert_eq!(s.terms().len(), 1);
        assert_eq!(s.coefficient(&[-1, 0]), ONE);

        // x^{1/2} with z = η² + 1
        let f = RElement::var_power(2, 1, 0, r(1, 2)).unwrap();
        let sub = Substitution::affine(&CMatrix::identity(1, 1), &[ONE], &[2], vec![0]);
        let s = compose_change(&f, &sub, &[r(5, 1)]).unwrap();
        assert!((s.coefficient(&[0]) - ONE).norm() < 1e-15);
        assert!((s.coefficient(&[4]) - real(0.5)).norm() < 1e-15);
        assert!((s.coefficient(&[8]) - real(-0.125)).norm() < 1e-15);
        let s = compose_change(&f, &sub, &[r(14, 1)]).unwrap();
        let eta = real(0.1);
        let zeta = 0.01f64;
        assert!((s.eval(&[eta], &[0]).unwrap() - real((1.0 + zeta).sqrt())).norm() < 1e-10);
    }

    #[test]
    fn compose_degenerate() {
        // z1 − z2 = η1 − η2 has no dominating monomial
        let f = RElement::diff_power(1, 2, 0, 1, -1);
        let sub = Substitution::affine(&CMatrix::identity(2, 2), &[ZERO, ZERO], &[1, 1], vec![0, 0]);
        assert!(matches!(compose_change(&f, &sub, &[r(3, 1), r(3, 1)]), Err(Error::Degenerate { .. })));
        // identical coordinates
        let b = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        let sub = Substitution::affine(&b, &[ZERO, ZERO], &[1, 1], vec![0, 0]);
        let err = compose_change(&f, &sub, &[r(3, 1), r(3, 1)]).unwrap_err();
        assert!(err.to_string().contains("z1-z2"));
    }

    #[test]
    fn compose_infinity_direction() {
        // z = 1/η with x^{-1} → η
        let f = RElement::var_power(1, 1, 0, r(-1, 1)).unwrap();
        let sub = Substitution::affine(&CMatrix::identity(1, 1), &[ZERO], &[-1], vec![0]);
        let s = compose_change(&f, &sub, &[r(3, 1)]).unwrap();
        assert_eq!(s.terms().len(), 1);
        assert_eq!(s.coefficient(&[1]), ONE);
        // z = 2 + 1/η: z^{-1} = η/(1 + 2η)
        let sub = Substitution::affine(&CMatrix::identity(1, 1), &[real(2.0)], &[-1], vec![0]);
        let s = compose_change(&f, &sub, &[r(6, 1)]).unwrap();
        for k in 1..6 {
            let expect = (-2.0f64).powi(k as i32 - 1);
            assert!((s.coefficient(&[k]) - real(expect)).norm() < 1e-12);
        }
    }

    #[test]
    fn min_exponents_examples() {
        let mut s = PuiseuxSeries::new(2, 2, Truncation::PerVariable, vec![None, None]);
        assert_eq!(s.min_exponents(), vec![None, None]);
        s.add_term(SeriesKey::plain(vec![0, 0]), ONE);
        s.add_term(SeriesKey::plain(vec![2, 2]), ONE);
        assert_eq!(s.min_exponents(), vec![Some(r(0, 1)), Some(r(0, 1))]);
        let mut s = PuiseuxSeries::new(2, 2, Truncation::PerVariable, vec![None, None]);
        s.add_term(SeriesKey::plain(vec![1, -1]), ONE);
        assert_eq!(s.min_exponents(), vec![Some(r(1, 2)), Some(r(-1, 2))]);
    }

    #[test]
    fn rmatrix_entries_round_trip() {
        let f = RElement::diff_power(1, 2, 0, 1, -1);
        let g = RElement::var_power(1, 2, 1, r(-1, 1)).unwrap();
        let entries = vec![vec![f.clone(), RElement::zero(1, 2)], vec![g.clone(), &f + &g]];
        let m = RMatrix::from_entries(1, 2, &entries).unwrap();
        assert_eq!(m.entries(), entries);
        let z = [real(2.0), real(0.5)];
        let v = m.eval(&z, &[0, 0]).unwrap();
        assert!((v[(1, 1)] - real(1.0 / 1.5 + 2.0)).norm() < 1e-14);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(RMatrix::from_json_entries(1, 2, json).unwrap(), m);
    }
}
