//! Small dense complex linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C>;
pub type CVector = DVector<C>;

pub const ZERO: C = C { re: 0.0, im: 0.0 };
pub const ONE: C = C { re: 1.0, im: 0.0 };
pub const I: C = C { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn real(x: f64) -> C {
    C::new(x, 0.0)
}

/// Kronecker product `a ⊗ b` with `a` as the slow (outer) index.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse with a condition-number guard.
pub fn checked_inverse(m: &CMatrix, what: &str) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(Error::Shape(format!("{what}: matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let cond = condition_number(m);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Numeric(format!(
            "{what}: matrix is singular (condition number {cond:.3e})"
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("{what}: inversion failed (condition number {cond:.3e})")))
}

/// Solve `U x = b` for upper-triangular `U`.
pub fn solve_upper(u: &CMatrix, b: &CVector) -> Result<CVector> {
    let n = u.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= u[(i, j)] * x[j];
        }
        let d = u[(i, i)];
        if d.norm() < 1e-300 {
            return Err(Error::Numeric(format!("zero pivot at row {i} in triangular solve")));
        }
        x[i] = acc / d;
    }
    Ok(x)
}

/// Complex Schur decomposition `m = Q T Q^*` with `T` upper triangular.
pub fn schur(m: &CMatrix) -> (CMatrix, CMatrix) {
    m.clone().schur().unpack()
}

/// Eigenvalues with multiplicity, read off the Schur form.
pub fn eigenvalues(m: &CMatrix) -> Vec<C> {
    let (_, t) = schur(m);
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Matrix exponential.
pub fn expm(m: &CMatrix) -> CMatrix {
    m.clone().exp()
}

/// Principal-branch aware logarithm `l_p(z) = log|z| + i(arg z + 2πp)` with
/// `arg z ∈ [0, 2π)`.
pub fn branch_log(z: C, p: i64) -> C {
    let mut arg = z.im.atan2(z.re);
    if arg < 0.0 {
        arg += std::f64::consts::TAU;
    }
    // atan2 can return exactly 2π after the shift for tiny negative imaginary parts
    if arg >= std::f64::consts::TAU {
        arg -= std::f64::consts::TAU;
    }
    C::new(z.norm().ln(), arg + std::f64::consts::TAU * p as f64)
}

/// Split a continuous logarithm value into the `(p, arg)` pair of the
/// `l_p` convention.
pub fn branch_of_log(log: C) -> (i64, f64) {
    let p = (log.im / std::f64::consts::TAU).floor();
    (p as i64, log.im - p * std::f64::consts::TAU)
}

/// Branch index `p` for which `l_p(z)` equals a continuously followed
/// logarithm of `z`, robust to `z` lying on the cut up to roundoff.
pub fn branch_index(z: C, log: C) -> i64 {
    ((log.im - branch_log(z, 0).im) / std::f64::consts::TAU).round() as i64
}

/// Recognise `x` as a rational with denominator at most `max_den`.
pub fn recognize_rational(x: f64, max_den: i64, tol: f64) -> Option<num_rational::Rational64> {
    if !x.is_finite() {
        return None;
    }
    for den in 1..=max_den {
        let num = (x * den as f64).round();
        if (num / den as f64 - x).abs() <= tol {
            return Some(num_rational::Rational64::new(num as i64, den));
        }
    }
    None
}
