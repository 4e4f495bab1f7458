//! Coordinate changes around a singular point and the holomorphy check of the
//! transformed system `η_j ∂/∂η_j ψ = B_j(η) ψ`.
//!
//! A change is `ζ = z A − β` (row vectors) followed by `ζ_j = η_j^{s_j t}`
//! with `s_j = +1` for a target at `0` and `s_j = −1` for a target at `∞`.

use std::collections::BTreeMap;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::connection::ConnectionSystem;
use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, condition_number, eigenvalues, max_abs, recognize_rational, CMatrix, ONE, ZERO};
use crate::rcalc::{branch_logs, compose_monomial, SeriesKey, Substitution};
use crate::serial;

/// Default relative threshold below which series coefficients are dropped.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-13;

/// Target of one new coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delta {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "inf")]
    Infinity,
}

impl Delta {
    pub fn sign(self) -> i64 {
        match self {
            Delta::Zero => 1,
            Delta::Infinity => -1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChangeOfVariables {
    pub a: CMatrix,
    pub beta: Vec<C>,
    pub delta: Vec<Delta>,
    pub t: u32,
    /// Branch index for fractional powers of each `z_ℓ`'s leading coefficient.
    pub branches: Vec<i64>,
    /// `A^{-1}`; `z = ζ B + γ`.
    pub b: CMatrix,
    pub gamma: Vec<C>,
    pub condition: f64,
}

impl ChangeOfVariables {
    pub fn new(a: CMatrix, beta: Vec<C>, delta: Vec<Delta>, t: u32, branches: Option<Vec<i64>>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || beta.len() != n || delta.len() != n {
            return Err(Error::Shape(format!(
                "change of variables needs a square matrix with matching beta/delta (got {:?}, {}, {})",
                a.shape(),
                beta.len(),
                delta.len()
            )));
        }
        if t == 0 {
            return Err(Error::Config("root order t must be positive".into()));
        }
        let branches = branches.unwrap_or_else(|| vec![0; n]);
        if branches.len() != n {
            return Err(Error::Shape("one branch index per variable is required".into()));
        }
        let condition = condition_number(&a);
        let b = checked_inverse(&a, "change-of-variables matrix")?;
        let gamma = (0..n).map(|l| (0..n).map(|k| beta[k] * b[(k, l)]).sum()).collect();
        Ok(ChangeOfVariables { a, beta, delta, t, branches, b, gamma, condition })
    }

    /// Build from forms `ζ_j = Σ_ℓ c[j][ℓ] z_ℓ − β_j`.
    pub fn from_forms(coeffs: &CMatrix, beta: Vec<C>, delta: Vec<Delta>, t: u32) -> Result<Self> {
        Self::new(coeffs.transpose(), beta, delta, t, None)
    }

    pub fn identity(n: usize, t: u32) -> Self {
        Self::new(CMatrix::identity(n, n), vec![ZERO; n], vec![Delta::Zero; n], t, None).expect("identity change")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Exponent `s_j t` with `ζ_j = η_j^{s_j t}`.
    pub fn eta_exponent(&self, j: usize) -> i64 {
        self.delta[j].sign() * self.t as i64
    }

    pub fn substitution(&self) -> Substitution {
        let exps: Vec<i64> = (0..self.n()).map(|j| self.eta_exponent(j)).collect();
        Substitution::affine(&self.b, &self.gamma, &exps, self.branches.clone())
    }

    pub fn zeta_from_eta(&self, eta: &[C]) -> Vec<C> {
        eta.iter().enumerate().map(|(j, e)| e.powi(self.eta_exponent(j) as i32)).collect()
    }

    pub fn z_from_zeta(&self, zeta: &[C]) -> Vec<C> {
        let n = self.n();
        (0..n).map(|l| self.gamma[l] + (0..n).map(|k| zeta[k] * self.b[(k, l)]).sum::<C>()).collect()
    }

    pub fn z_from_eta(&self, eta: &[C]) -> Vec<C> {
        self.z_from_zeta(&self.zeta_from_eta(eta))
    }

    /// `log z_ℓ(η)` on the branch used by the series expansion: the branch
    /// of the leading coefficient, plus the leading exponents times `log η`,
    /// plus the principal logarithm of the normalized remainder.
    pub fn z_logs(&self, eta: &[C], eta_logs: &[C]) -> Result<Vec<C>> {
        let subst = self.substitution();
        let z = self.z_from_eta(eta);
        let n = self.n();
        (0..n)
            .map(|l| {
                let form = &subst.forms[l];
                let min: Vec<i64> = (0..n).map(|v| form.keys().map(|e| e[v]).min().unwrap_or(0)).collect();
                let lead = *form.get(&min).ok_or_else(|| Error::Degenerate {
                    factor: format!("z{}", l + 1),
                    detail: "no single monomial dominates near the target point".into(),
                })?;
                let mono: C = (0..n).map(|v| eta[v].powi(min[v] as i32)).product();
                let rest = z[l] / (lead * mono);
                let shift: C = (0..n).map(|v| eta_logs[v] * min[v] as f64).sum();
                Ok(crate::linalg::branch_log(lead, self.branches[l]) + shift + rest.ln())
            })
            .collect()
    }

    pub fn zeta_from_z(&self, z: &[C]) -> Vec<C> {
        let n = self.n();
        (0..n).map(|j| (0..n).map(|l| z[l] * self.a[(l, j)]).sum::<C>() - self.beta[j]).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ChangeJson {
    #[serde(with = "serial::matrix")]
    a: CMatrix,
    #[serde(with = "serial::complex_vec")]
    beta: Vec<C>,
    delta: Vec<Delta>,
    t: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branches: Option<Vec<i64>>,
}

impl Serialize for ChangeOfVariables {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChangeJson {
            a: self.a.clone(),
            beta: self.beta.clone(),
            delta: self.delta.clone(),
            t: self.t,
            branches: Some(self.branches.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChangeOfVariables {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ChangeJson::deserialize(d)?;
        ChangeOfVariables::new(raw.a, raw.beta, raw.delta, raw.t, raw.branches).map_err(serde::de::Error::custom)
    }
}

/// A truncated Puiseux series with matrix coefficients. Exponents are
/// numerators over `den`; every stored exponent lies below its cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    pub nvars: usize,
    pub den: u32,
    pub dim: usize,
    pub cutoffs: Vec<i64>,
    terms: BTreeMap<SeriesKey, CMatrix>,
}

impl SeriesMatrix {
    pub fn new(nvars: usize, den: u32, dim: usize, cutoffs: Vec<i64>) -> Self {
        SeriesMatrix { nvars, den, dim, cutoffs, terms: BTreeMap::new() }
    }

    pub fn add_term(&mut self, key: SeriesKey, m: &CMatrix) {
        if key.exps.iter().zip(&self.cutoffs).any(|(e, c)| e >= c) {
            return;
        }
        *self.terms.entry(key).or_insert_with(|| CMatrix::zeros(self.dim, self.dim)) += m;
    }

    pub fn terms(&self) -> &BTreeMap<SeriesKey, CMatrix> {
        &self.terms
    }

    /// Drop coefficients below `tol · max(1, largest entry)`, entrywise.
    pub fn prune(&mut self, tol: f64) {
        let scale = self.terms.values().map(max_abs).fold(1.0, f64::max);
        let cut = tol * scale;
        for m in self.terms.values_mut() {
            for x in m.iter_mut() {
                if x.norm() < cut {
                    *x = ZERO;
                }
            }
        }
        self.terms.retain(|_, m| m.iter().any(|x| *x != ZERO));
    }

    pub fn eval(&self, eta: &[C], p: &[i64]) -> Result<CMatrix> {
        self.eval_logs(eta, &branch_logs(eta, p))
    }

    pub fn eval_logs(&self, eta: &[C], logs: &[C]) -> Result<CMatrix> {
        let den = self.den as i64;
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for (k, m) in &self.terms {
            let mut v = ONE;
            for i in 0..self.nvars {
                let e = k.exps[i];
                if e == 0 && k.logs[i] == 0 {
                    continue;
                }
                if eta[i] == ZERO {
                    return Err(Error::SingularPoint { factor: format!("eta{}", i + 1) });
                }
                if e % den == 0 {
                    v *= eta[i].powi((e / den) as i32);
                } else {
                    v *= (logs[i] * (e as f64 / den as f64)).exp();
                }
                if k.logs[i] > 0 {
                    v *= logs[i].powi(k.logs[i] as i32);
                }
            }
            acc += m * v;
        }
        Ok(acc)
    }

    /// Exact per-variable minimum exponents; `None` when there are no terms.
    pub fn min_exponents(&self) -> Vec<Option<Rational64>> {
        (0..self.nvars)
            .map(|v| self.terms.keys().map(|k| k.exps[v]).min().map(|e| Rational64::new(e, self.den as i64)))
            .collect()
    }

    pub fn constant_term(&self) -> CMatrix {
        self.terms
            .get(&SeriesKey::plain(vec![0; self.nvars]))
            .cloned()
            .unwrap_or_else(|| CMatrix::zeros(self.dim, self.dim))
    }

    /// Power-series coefficients `H_m` in `η_j` with every other variable
    /// evaluated at `eta`; requires integer exponents in `η_j`.
    pub fn coefficients_along(&self, j: usize, eta: &[C], p: &[i64]) -> Result<Vec<CMatrix>> {
        let den = self.den as i64;
        let len = ((self.cutoffs[j] + den - 1) / den).max(0) as usize;
        let mut out = vec![CMatrix::zeros(self.dim, self.dim); len];
        let logs = branch_logs(eta, p);
        for (k, m) in &self.terms {
            let e = k.exps[j];
            if e < 0 || e % den != 0 || k.logs[j] != 0 {
                return Err(Error::Domain(format!(
                    "exponent {} of eta{} is not a nonnegative integer",
                    Rational64::new(e, den),
                    j + 1
                )));
            }
            let mut v = ONE;
            for i in (0..self.nvars).filter(|&i| i != j) {
                let ei = k.exps[i];
                if ei == 0 && k.logs[i] == 0 {
                    continue;
                }
                if ei % den == 0 {
                    v *= eta[i].powi((ei / den) as i32);
                } else {
                    v *= (logs[i] * (ei as f64 / den as f64)).exp();
                }
                if k.logs[i] > 0 {
                    v *= logs[i].powi(k.logs[i] as i32);
                }
            }
            out[(e / den) as usize] += m * v;
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct SeriesTermJson {
    exps: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    logs: Vec<u32>,
    #[serde(with = "serial::matrix")]
    matrix: CMatrix,
}

#[derive(Serialize, Deserialize)]
struct SeriesMatrixJson {
    nvars: usize,
    den: u32,
    dim: usize,
    cutoffs: Vec<i64>,
    terms: Vec<SeriesTermJson>,
}

impl Serialize for SeriesMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SeriesMatrixJson {
            nvars: self.nvars,
            den: self.den,
            dim: self.dim,
            cutoffs: self.cutoffs.clone(),
            terms: self
                .terms
                .iter()
                .map(|(k, m)| SeriesTermJson {
                    exps: k.exps.clone(),
                    logs: if k.logs.iter().all(|l| *l == 0) { vec![] } else { k.logs.clone() },
                    matrix: m.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SeriesMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = SeriesMatrixJson::deserialize(d)?;
        if raw.den == 0 || raw.cutoffs.len() != raw.nvars {
            return Err(D::Error::custom("series needs positive den and one cutoff per variable"));
        }
        let mut s = SeriesMatrix::new(raw.nvars, raw.den, raw.dim, raw.cutoffs);
        for term in raw.terms {
            let logs = if term.logs.is_empty() { vec![0; raw.nvars] } else { term.logs };
            if term.exps.len() != raw.nvars || logs.len() != raw.nvars || term.matrix.shape() != (raw.dim, raw.dim) {
                return Err(D::Error::custom("series term shape disagrees with header"));
            }
            s.add_term(SeriesKey { exps: term.exps, logs }, &term.matrix);
        }
        Ok(s)
    }
}

/// The system `η_j ∂/∂η_j ψ = B_j(η) ψ` after a change of variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformedSystem {
    pub change: ChangeOfVariables,
    pub n: usize,
    pub den: u32,
    #[serde(with = "serial::rational_vec")]
    pub cutoffs: Vec<Rational64>,
    pub prune_tol: f64,
    pub b: Vec<SeriesMatrix>,
    /// The same system with every cutoff raised by `t`, for verdict stability.
    pub probe: Vec<SeriesMatrix>,
}

fn build_b(
    conn: &ConnectionSystem,
    cov: &ChangeOfVariables,
    cutoff_nums: &[i64],
    prune_tol: f64,
) -> Result<Vec<SeriesMatrix>> {
    let n = conn.n;
    let subst = cov.substitution();
    let scale = cov.b.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let s = cov.eta_exponent(j);
        let shift = s * conn.t as i64;
        let mut budget = cutoff_nums.to_vec();
        budget[j] -= shift;
        let mut acc = SeriesMatrix::new(n, conn.t, conn.state_dim, cutoff_nums.to_vec());
        for l in 0..n {
            let b_jl = cov.b[(j, l)];
            if b_jl.norm() <= 1e-14 * scale {
                continue;
            }
            let factor = b_jl * s as f64;
            for (key, m) in conn.a[l].terms() {
                let series = compose_monomial(key, conn.t, &subst, &budget)?;
                for (sk, c) in series.terms() {
                    let mut exps = sk.exps.clone();
                    exps[j] += shift;
                    acc.add_term(SeriesKey { exps, logs: sk.logs.clone() }, &(m * (c * factor)));
                }
            }
        }
        acc.prune(prune_tol);
        out.push(acc);
    }
    Ok(out)
}

/// Pull the connection back through the change of variables and expand every
/// `B_j` below the given per-variable cutoffs (in units of `η`).
pub fn transform_system(
    conn: &ConnectionSystem,
    cov: &ChangeOfVariables,
    cutoffs: &[Rational64],
    prune_tol: f64,
) -> Result<TransformedSystem> {
    let n = conn.n;
    if cov.n() != n || cutoffs.len() != n {
        return Err(Error::Shape(format!(
            "change has {} variables and {} cutoffs for a connection in {n} variables",
            cov.n(),
            cutoffs.len()
        )));
    }
    let den = conn.t as i64;
    let nums: Vec<i64> = cutoffs.iter().map(|q| (*q * den).ceil().to_integer()).collect();
    let probe_nums: Vec<i64> = nums.iter().map(|q| q + cov.t as i64 * den).collect();
    let b = build_b(conn, cov, &nums, prune_tol)?;
    let probe = build_b(conn, cov, &probe_nums, prune_tol)?;
    Ok(TransformedSystem { change: cov.clone(), n, den: conn.t, cutoffs: cutoffs.to_vec(), prune_tol, b, probe })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub component: usize,
    pub exponents: Vec<Rational64>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularityVerdict {
    pub holomorphic: bool,
    pub offenders: Vec<Offender>,
    /// Per component `j`, the per-variable minimum exponents of `B_j`.
    pub min_exponents: Vec<Vec<Option<Rational64>>>,
}

fn verdict_of(b: &[SeriesMatrix]) -> SingularityVerdict {
    let mut offenders = Vec::new();
    for (j, s) in b.iter().enumerate() {
        for (k, m) in s.terms() {
            if k.exps.iter().any(|e| *e < 0) {
                offenders.push(Offender {
                    component: j,
                    exponents: k.exps.iter().map(|e| Rational64::new(*e, s.den as i64)).collect(),
                    magnitude: max_abs(m),
                });
            }
        }
    }
    SingularityVerdict {
        holomorphic: offenders.is_empty(),
        offenders,
        min_exponents: b.iter().map(SeriesMatrix::min_exponents).collect(),
    }
}

/// Holomorphy verdict from exact exponent lattices, confirmed against the
/// system expanded one step further.
pub fn check_simple_singularity(ts: &TransformedSystem) -> Result<SingularityVerdict> {
    let verdict = verdict_of(&ts.b);
    let probe = verdict_of(&ts.probe);
    if verdict.holomorphic != probe.holomorphic || verdict.min_exponents != probe.min_exponents {
        return Err(Error::Inconclusive(format!(
            "verdict changes when cutoffs are raised (min exponents {:?} vs {:?}); raise the cutoff",
            verdict.min_exponents, probe.min_exponents
        )));
    }
    Ok(verdict)
}

#[derive(Debug, Clone)]
pub struct IndicialData {
    pub h0: CMatrix,
    pub exponents: Vec<C>,
    /// Exact values when every exponent was recognised as a rational.
    pub rational: Option<Vec<Rational64>>,
    pub resonant: bool,
}

/// Maximum denominator tried when recognising exponents as rationals.
pub const RATIONAL_MAX_DEN: i64 = 1000;
const RATIONAL_TOL: f64 = 1e-9;

/// Indicial data of a holomorphic `η ψ' = H(η) ψ` from its constant term.
pub fn indicial_from_h0(h0: CMatrix) -> IndicialData {
    let exponents = eigenvalues(&h0);
    let rational: Option<Vec<Rational64>> = exponents
        .iter()
        .map(|z| if z.im.abs() <= RATIONAL_TOL { recognize_rational(z.re, RATIONAL_MAX_DEN, RATIONAL_TOL) } else { None })
        .collect();
    let resonant = match &rational {
        Some(rs) => rs.iter().any(|a| rs.iter().any(|b| (a - b).is_integer() && a > b)),
        None => exponents.iter().any(|a| {
            exponents.iter().any(|b| {
                let d = a - b;
                d.im.abs() < RATIONAL_TOL && d.re > 0.5 && (d.re - d.re.round()).abs() < RATIONAL_TOL
            })
        }),
    };
    IndicialData { h0, exponents, rational, resonant }
}

/// `H_0 = B_j(0)` and its eigenvalues; component `j` must be holomorphic.
pub fn indicial_data(ts: &TransformedSystem, j: usize) -> Result<IndicialData> {
    if j >= ts.n {
        return Err(Error::Config(format!("component {} out of range", j + 1)));
    }
    if let Some((k, _)) = ts.b[j].terms().iter().find(|(k, _)| k.exps.iter().any(|e| *e < 0)) {
        return Err(Error::NotHolomorphic(format!(
            "component {} has a term with exponents {:?}",
            j + 1,
            k.exps.iter().map(|e| Rational64::new(*e, ts.den as i64).to_string()).collect::<Vec<_>>()
        )));
    }
    Ok(indicial_from_h0(ts.b[j].constant_term()))
}

impl TransformedSystem {
    /// Distance in `η_j`, other coordinates fixed at `eta`, to the nearest
    /// point where some `z_ℓ` or `z_i − z_k` vanishes (other than `η_j = 0`).
    pub fn coefficient_radius(&self, j: usize, eta: &[C]) -> f64 {
        let cov = &self.change;
        let n = self.n;
        let mut zeta = cov.zeta_from_eta(eta);
        zeta[j] = ZERO;
        let base = cov.z_from_zeta(&zeta);
        // each factor is c0 + c1 ζ_j
        let mut factors: Vec<(C, C)> = (0..n).map(|l| (base[l], cov.b[(j, l)])).collect();
        for a in 0..n {
            for b in a + 1..n {
                factors.push((base[a] - base[b], cov.b[(j, a)] - cov.b[(j, b)]));
            }
        }
        let exponent = cov.eta_exponent(j) as f64;
        let mut radius = f64::INFINITY;
        for (c0, c1) in factors {
            if c1.norm() < 1e-14 || c0.norm() < 1e-14 {
                continue;
            }
            let root = (c0 / c1).norm();
            radius = radius.min(root.powf(1.0 / exponent));
        }
        radius
    }
}
