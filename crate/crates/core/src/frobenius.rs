//! Local fundamental solutions of `η ψ'(η) = H(η) ψ(η)` with `H` holomorphic.
//!
//! The solution is `Ψ(η) = S(η) η^{Λ_s} η^{Λ_n}` with `S(0) = Id`. `Λ_s` is
//! scalar on each eigenvalue cluster of `H(0)` and `Λ_n` commutes with it; in
//! the non-resonant case `Λ_s + Λ_n = H(0)`. When clusters differ by positive
//! integers, `Λ_n` picks up extra terms connecting them, which is where
//! logarithms come from.

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{branch_log, checked_inverse, expm, frobenius, max_abs, real, recognize_rational, schur, CMatrix, ONE, ZERO};
use crate::serial;

pub const DEFAULT_ORDER: usize = 40;
pub const CLUSTER_TOL: f64 = 1e-9;
/// Defective eigenvalues split by roughly the square root of machine
/// precision, so clustering uses a looser gap than rational snapping.
const GROUP_TOL: f64 = 1e-6;
/// Eigenvalues closer than this share a cluster even when distinct, since
/// splitting them would need an ill-conditioned change of basis. Their
/// spread stays in `Λ_n`.
const MERGE_TOL: f64 = 1e-2;

/// Coefficients `H_0, H_1, ...` of a holomorphic matrix series and the radius
/// of the disc on which the series is known to converge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalSystem {
    #[serde(with = "serial::matrix_vec")]
    pub coeffs: Vec<CMatrix>,
    pub radius: f64,
}

impl LocalSystem {
    pub fn dim(&self) -> usize {
        self.coeffs.first().map_or(0, CMatrix::nrows)
    }

    /// `H(η)` from the stored coefficients.
    pub fn eval(&self, eta: C) -> CMatrix {
        horner(&self.coeffs, eta)
    }
}

/// First-order companion system of the Gauss hypergeometric equation, in the
/// state `(y, η y')`.
pub fn hypergeometric_system(a: C, b: C, c: C, order: usize) -> LocalSystem {
    let mut coeffs = vec![CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ONE - c])];
    for _ in 1..=order {
        coeffs.push(CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, a * b, a + b + ONE - c]));
    }
    LocalSystem { coeffs, radius: 1.0 }
}

fn horner(coeffs: &[CMatrix], eta: C) -> CMatrix {
    let dim = coeffs.first().map_or(0, CMatrix::nrows);
    let mut acc = CMatrix::zeros(dim, dim);
    for m in coeffs.iter().rev() {
        acc = acc * eta + m;
    }
    acc
}

/// `η d/dη` of the series, i.e. `Σ m S_m η^m`.
fn horner_euler(coeffs: &[CMatrix], eta: C) -> CMatrix {
    let dim = coeffs.first().map_or(0, CMatrix::nrows);
    let mut acc = CMatrix::zeros(dim, dim);
    for (m, s) in coeffs.iter().enumerate().rev() {
        acc = acc * eta + s * real(m as f64);
    }
    acc
}

/// Two eigenvalue clusters whose exponents differ by a positive integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceShift {
    #[serde(with = "serial::complex")]
    pub upper: C,
    #[serde(with = "serial::complex")]
    pub lower: C,
    pub shift: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrobeniusSolution {
    /// Monodromy exponent: `Ψ(e^{2πi} η) = Ψ(η) exp(2πi Λ)`.
    #[serde(with = "serial::matrix")]
    pub lambda: CMatrix,
    #[serde(with = "serial::matrix")]
    pub lambda_s: CMatrix,
    #[serde(with = "serial::matrix")]
    pub lambda_n: CMatrix,
    #[serde(with = "serial::matrix_vec")]
    pub s_coeffs: Vec<CMatrix>,
    pub order: usize,
    pub radius_estimate: f64,
    pub resonance_shifts: Vec<ResonanceShift>,
    /// Eigenvalues of `H(0)`, in cluster order.
    #[serde(with = "serial::complex_vec")]
    pub exponents: Vec<C>,
    /// `|det S_0|`.
    pub s0_determinant: f64,
    /// Relative residual of the differential equation at `|η| = radius/4`.
    pub residual: f64,
}

/// Swap adjacent diagonal entries `k`, `k+1` of the upper-triangular `t`,
/// updating the unitary `z` so that `z t z^*` is unchanged.
fn swap_schur(t: &mut CMatrix, z: &mut CMatrix, k: usize) {
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let x = t[(k, k + 1)];
    let v0 = x;
    let v1 = b - a;
    let norm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    if norm == 0.0 {
        return;
    }
    let (cc, ss) = (v0 / norm, v1 / norm);
    // columns of q: (c, s) and (-conj(s), conj(c))
    let n = t.nrows();
    for row in 0..n {
        let p = t[(row, k)];
        let q = t[(row, k + 1)];
        t[(row, k)] = p * cc + q * ss;
        t[(row, k + 1)] = -p * ss.conj() + q * cc.conj();
        let p = z[(row, k)];
        let q = z[(row, k + 1)];
        z[(row, k)] = p * cc + q * ss;
        z[(row, k + 1)] = -p * ss.conj() + q * cc.conj();
    }
    for col in 0..n {
        let p = t[(k, col)];
        let q = t[(k + 1, col)];
        t[(k, col)] = p * cc.conj() + q * ss.conj();
        t[(k + 1, col)] = -p * ss + q * cc;
    }
    t[(k + 1, k)] = ZERO;
}

/// Solve `A X − X B = R` for upper-triangular `A`, `B`.
fn sylvester_triangular(a: &CMatrix, b: &CMatrix, r: &CMatrix) -> Result<CMatrix> {
    let (p, q) = (a.nrows(), b.nrows());
    let mut x = CMatrix::zeros(p, q);
    for j in 0..q {
        let mut rhs = r.column(j).into_owned();
        for i in 0..j {
            rhs += x.column(i) * b[(i, j)];
        }
        let shift = b[(j, j)];
        for row in (0..p).rev() {
            let mut acc = rhs[row];
            for col in row + 1..p {
                acc -= a[(row, col)] * x[(col, j)];
            }
            let d = a[(row, row)] - shift;
            if d.norm() < 1e-12 {
                return Err(Error::Internal(format!(
                    "Sylvester equation is singular outside the resonance set (pivot {d})"
                )));
            }
            x[(row, j)] = acc / d;
        }
    }
    Ok(x)
}

struct ClusterForm {
    /// `H_0 = T (D + N) T^{-1}`.
    t: CMatrix,
    t_inv: CMatrix,
    /// Block offsets and sizes.
    blocks: Vec<(usize, usize)>,
    /// Representative eigenvalue of each block.
    mu: Vec<C>,
    /// Upper-triangular diagonal blocks `B_K = μ_K + N_K`; the diagonal of
    /// `N_K` is the spread of a merged cluster and zero otherwise.
    diag_blocks: Vec<CMatrix>,
}

fn snap(z: C) -> C {
    if z.im.abs() <= CLUSTER_TOL {
        if let Some(r) = recognize_rational(z.re, 1000, CLUSTER_TOL) {
            return real(*r.numer() as f64 / *r.denom() as f64);
        }
    }
    z
}

fn cluster_form(h0: &CMatrix) -> Result<ClusterForm> {
    let n = h0.nrows();
    let (mut z, mut t) = schur(h0);
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = ZERO;
        }
    }
    // assign cluster ids by first appearance
    let mut reps: Vec<C> = Vec::new();
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let ev = t[(i, i)];
        match reps.iter().position(|r| (r - ev).norm() <= MERGE_TOL * (1.0 + r.norm())) {
            Some(k) => ids.push(k),
            None => {
                reps.push(ev);
                ids.push(reps.len() - 1);
            }
        }
    }
    // bubble clusters into contiguous runs
    let mut swapped = true;
    while swapped {
        swapped = false;
        for k in 0..n.saturating_sub(1) {
            if ids[k] > ids[k + 1] {
                swap_schur(&mut t, &mut z, k);
                ids.swap(k, k + 1);
                swapped = true;
            }
        }
    }
    let mut blocks = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || ids[k] != ids[start] {
            blocks.push((start, k - start));
            start = k;
        }
    }
    // decouple blocks: T = P diag(B_K) P^{-1} with P unit block upper triangular
    let mut p = CMatrix::identity(n, n);
    for (bi, &(off, size)) in blocks.iter().enumerate() {
        let rest = off + size;
        if rest >= n || bi + 1 == blocks.len() {
            continue;
        }
        let a = t.view((off, off), (size, size)).into_owned();
        let b = t.view((rest, rest), (n - rest, n - rest)).into_owned();
        let cmat = t.view((off, rest), (size, n - rest)).into_owned();
        let x = sylvester_triangular(&a, &b, &(-cmat))?;
        // T <- P_k^{-1} T P_k with P_k = [[I, X],[0, I]]
        let mut pk = CMatrix::identity(n, n);
        pk.view_mut((off, rest), (size, n - rest)).copy_from(&x);
        let mut pk_inv = CMatrix::identity(n, n);
        pk_inv.view_mut((off, rest), (size, n - rest)).copy_from(&(-x));
        t = &pk_inv * &t * &pk;
        p = &p * &pk;
    }
    let mu: Vec<C> = blocks
        .iter()
        .map(|&(off, size)| snap((0..size).map(|i| t[(off + i, off + i)]).sum::<C>() / real(size as f64)))
        .collect();
    let diag_blocks = blocks
        .iter()
        .zip(&mu)
        .map(|(&(off, size), m)| {
            let mut b = t.view((off, off), (size, size)).into_owned();
            for i in 0..size {
                if (b[(i, i)] - m).norm() <= GROUP_TOL * (1.0 + m.norm()) {
                    b[(i, i)] = *m;
                }
                for j in 0..i {
                    b[(i, j)] = ZERO;
                }
            }
            b
        })
        .collect();
    let tt = z * p;
    let t_inv = checked_inverse(&tt, "eigenvalue cluster basis")?;
    Ok(ClusterForm { t: tt, t_inv, blocks, mu, diag_blocks })
}

fn integer_gap(upper: C, lower: C) -> Option<usize> {
    let d = upper - lower;
    let m = d.re.round();
    (m >= 1.0 && (d - real(m)).norm() <= GROUP_TOL * (1.0 + upper.norm())).then_some(m as usize)
}

/// Frobenius fundamental solution to order `M`, using `H_0 .. H_M`.
pub fn frobenius_fundamental(system: &LocalSystem, order: usize) -> Result<FrobeniusSolution> {
    if order < 1 {
        return Err(Error::Config("Frobenius order must be at least 1".into()));
    }
    let h = &system.coeffs;
    if h.is_empty() {
        return Err(Error::Config("local system has no coefficients".into()));
    }
    let n = system.dim();
    if h.iter().any(|m| m.shape() != (n, n)) || h.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
        return Err(Error::Config("local system coefficients must be finite square matrices of equal size".into()));
    }
    let cf = cluster_form(&h[0])?;
    let hc: Vec<CMatrix> =
        (0..=order).map(|q| h.get(q).map_or_else(|| CMatrix::zeros(n, n), |m| &cf.t_inv * m * &cf.t)).collect();

    let nb = cf.blocks.len();
    let mut s: Vec<CMatrix> = vec![CMatrix::identity(n, n)];
    let mut r: Vec<CMatrix> = vec![CMatrix::zeros(n, n)];
    let mut shifts = Vec::new();
    for m in 1..=order {
        let mut rhs = CMatrix::zeros(n, n);
        for q in 1..=m {
            rhs += &hc[q] * &s[m - q];
        }
        for q in 1..m {
            rhs -= &s[m - q] * &r[q];
        }
        let mut sm = CMatrix::zeros(n, n);
        let mut rm = CMatrix::zeros(n, n);
        for k in 0..nb {
            let (ko, ks) = cf.blocks[k];
            for l in 0..nb {
                let (lo, ls) = cf.blocks[l];
                let sub = rhs.view((ko, lo), (ks, ls)).into_owned();
                if integer_gap(cf.mu[k], cf.mu[l]) == Some(m) {
                    rm.view_mut((ko, lo), (ks, ls)).copy_from(&sub);
                    shifts.push(ResonanceShift { upper: cf.mu[k], lower: cf.mu[l], shift: m });
                } else {
                    // m X + X B_L − B_K X = sub  ⇔  B_K X − X (B_L + m) = −sub
                    let bl = &cf.diag_blocks[l] + CMatrix::identity(ls, ls) * real(m as f64);
                    let x = sylvester_triangular(&cf.diag_blocks[k], &bl, &(-sub))?;
                    sm.view_mut((ko, lo), (ks, ls)).copy_from(&x);
                }
            }
        }
        s.push(sm);
        r.push(rm);
    }

    // D = diag(μ_K), C = N + Σ R_m, base exponent per integer-linked class
    let mut d = CMatrix::zeros(n, n);
    let mut nil = CMatrix::zeros(n, n);
    let mut base = CMatrix::zeros(n, n);
    for (k, &(off, size)) in cf.blocks.iter().enumerate() {
        let lowest = (0..nb)
            .filter(|&l| integer_gap(cf.mu[k], cf.mu[l]).is_some())
            .map(|l| cf.mu[l])
            .min_by(|a, b| a.re.total_cmp(&b.re))
            .unwrap_or(cf.mu[k]);
        for i in 0..size {
            d[(off + i, off + i)] = cf.mu[k];
            base[(off + i, off + i)] = lowest;
        }
        let nk = &cf.diag_blocks[k] - CMatrix::identity(size, size) * cf.mu[k];
        nil.view_mut((off, off), (size, size)).copy_from(&nk);
    }
    let exponents: Vec<C> = (0..n).map(|i| d[(i, i)] + nil[(i, i)]).collect();
    let mut cmat = nil;
    for rm in &r {
        cmat += rm;
    }
    let conj = |m: &CMatrix| &cf.t * m * &cf.t_inv;
    let lambda_s = conj(&d);
    let lambda_n = conj(&cmat);
    let lambda = conj(&(base + &cmat));
    let s_coeffs: Vec<CMatrix> = s.iter().map(conj).collect();
    let r_orig: Vec<CMatrix> = r.iter().map(conj).collect();

    let mut sol = FrobeniusSolution {
        lambda,
        lambda_s,
        lambda_n,
        s0_determinant: s_coeffs[0].determinant().norm(),
        s_coeffs,
        order,
        radius_estimate: system.radius,
        resonance_shifts: shifts,
        exponents,
        residual: 0.0,
    };
    sol.radius_estimate = match radius_estimate(&sol, system) {
        Ok(rad) => rad,
        Err(Error::InsufficientData(_)) => system.radius,
        Err(e) => return Err(e),
    };
    sol.residual = series_residual(&sol, system, &r_orig, real(sol.radius_estimate.min(1e6) / 4.0));
    if !(sol.residual < 1e-8) {
        return Err(Error::Internal(format!("Frobenius recursion leaves residual {:.3e}", sol.residual)));
    }
    Ok(sol)
}

/// Relative residual of `η S' = H S − S Ĥ(η)`, where `Ĥ` is the normal form
/// `Λ_s + N + Σ_m R_m η^m` that `η^{Λ_s} η^{Λ_n}` solves. This vanishes
/// exactly when `Ψ` solves the original equation.
fn series_residual(sol: &FrobeniusSolution, system: &LocalSystem, r: &[CMatrix], eta: C) -> f64 {
    let n = system.dim();
    let s = horner(&sol.s_coeffs, eta);
    let ds = horner_euler(&sol.s_coeffs, eta);
    let h = horner(&system.coeffs[..system.coeffs.len().min(sol.order + 1)], eta);
    // normal form: Λ_s + (Λ_n − Σ R_m) + Σ R_m η^m
    let mut r_sum = CMatrix::zeros(n, n);
    let mut r_eval = CMatrix::zeros(n, n);
    for (m, rm) in r.iter().enumerate() {
        r_sum += rm;
        r_eval += rm * eta.powi(m as i32);
    }
    let normal = &sol.lambda_s + (&sol.lambda_n - r_sum) + r_eval;
    let res = ds - &h * &s + &s * normal;
    let scale = frobenius(&h) * frobenius(&s) + frobenius(&s) * frobenius(&sol.lambda_s) + 1.0;
    frobenius(&res) / scale
}

/// `min(r_H, 1 / max_{last five m} ‖S_m‖^{1/m})`.
pub fn radius_estimate(sol: &FrobeniusSolution, system: &LocalSystem) -> Result<f64> {
    if sol.s_coeffs.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "{} series coefficients; at least 8 are needed for a radius estimate",
            sol.s_coeffs.len()
        )));
    }
    let m_max = sol.s_coeffs.len() - 1;
    let growth = (m_max - 4..=m_max)
        .map(|m| frobenius(&sol.s_coeffs[m]).powf(1.0 / m as f64))
        .fold(0.0, f64::max);
    let ratio = if growth > 0.0 { 1.0 / growth } else { f64::INFINITY };
    Ok(system.radius.min(ratio))
}

#[derive(Debug, Clone)]
pub struct SolutionValue {
    pub value: CMatrix,
    pub in_disc: bool,
}

/// `Ψ(η)` on the branch `l_p(η)`.
pub fn eval_solution(sol: &FrobeniusSolution, eta: C, p: i64) -> Result<SolutionValue> {
    if eta == ZERO {
        return Err(Error::SingularPoint { factor: "eta".into() });
    }
    eval_solution_log(sol, eta, branch_log(eta, p))
}

/// `Ψ(η)` with a caller-supplied value of `log η`.
pub fn eval_solution_log(sol: &FrobeniusSolution, eta: C, log_eta: C) -> Result<SolutionValue> {
    let in_disc = eta.norm() < sol.radius_estimate;
    if !in_disc {
        log::warn!("evaluating Frobenius solution at |eta| = {} outside the estimated radius {}", eta.norm(), sol.radius_estimate);
    }
    let s = horner(&sol.s_coeffs, eta);
    let value = s * expm(&(&sol.lambda_s * log_eta)) * expm(&(&sol.lambda_n * log_eta));
    Ok(SolutionValue { value, in_disc })
}

/// `exp(2πi Λ)`.
pub fn local_monodromy(sol: &FrobeniusSolution) -> CMatrix {
    expm(&(&sol.lambda * C::new(0.0, std::f64::consts::TAU)))
}

/// Exponents recognised as exact rationals where possible.
pub fn exact_exponents(sol: &FrobeniusSolution) -> Vec<Option<Rational64>> {
    sol.exponents
        .iter()
        .map(|z| if z.im.abs() < CLUSTER_TOL { recognize_rational(z.re, 1000, CLUSTER_TOL) } else { None })
        .collect()
}

/// Largest entry of `S_m` for `m ≥ 1`; zero for constant non-resonant systems.
pub fn tail_magnitude(sol: &FrobeniusSolution) -> f64 {
    sol.s_coeffs.iter().skip(1).map(max_abs).fold(0.0, f64::max)
}
