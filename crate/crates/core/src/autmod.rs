//! Finite-order automorphisms of a Lie algebra, described by their eigendata.
//!
//! An automorphism of order `t` acts on an eigenbasis `{a^i}_{i∈I}` by
//! `g a^i = e^{2πi α^i} a^i` with `α^i ∈ [0,1) ∩ (1/t)ℤ`. The doubled index
//! set `𝓘 = I ⊔ I'` adjoins the dual vectors `a^{i'}`; here `I` occupies
//! positions `0..dim` and `I'` positions `dim..2·dim`, with `i' = i + dim`.

use num_complex::Complex64 as C;
use num_rational::Rational64;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::liealg::{LieAlgebraData, ModuleRep};
use crate::linalg::{checked_inverse, commutator, max_abs, CMatrix, CVector, ONE, ZERO};

const EIGEN_TOL: f64 = 1e-10;

/// Eigendata of a finite-order semisimple automorphism.
#[derive(Debug, Clone)]
pub struct AutomorphismData {
    pub order: u32,
    pub dim: usize,
    /// `α^i` for every `i ∈ 𝓘`.
    pub alpha: Vec<Rational64>,
    /// The involution `i ↦ i'` on `𝓘`.
    pub prime: Vec<usize>,
    /// Coordinates of every `a^i`, `i ∈ 𝓘`, in the Lie algebra basis.
    pub eigenbasis: Vec<CVector>,
    pub matrix_g: CMatrix,
    /// Columns are the eigenvectors `a^i`, `i ∈ I`.
    eigen_matrix: CMatrix,
    eigen_inverse: CMatrix,
}

/// `α' = 0` for `α = 0`, else `1 − α`.
pub fn alpha_prime(alpha: Rational64) -> Result<Rational64> {
    if alpha < Rational64::zero() || alpha >= Rational64::one() {
        return Err(Error::Domain(format!("alpha {alpha} lies outside [0, 1)")));
    }
    if alpha.is_zero() {
        Ok(Rational64::zero())
    } else {
        Ok(Rational64::one() - alpha)
    }
}

fn reduce_unit(r: Rational64) -> Rational64 {
    r - r.floor()
}

fn root_of_unity(alpha: Rational64) -> C {
    let x = *alpha.numer() as f64 / *alpha.denom() as f64;
    C::from_polar(1.0, std::f64::consts::TAU * x)
}

fn lcm(a: i64, b: i64) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

impl AutomorphismData {
    /// Inner automorphism `Ad exp(2πi H)` where the Cartan element `H` has
    /// eigenvalue `fractions[k]` on the `k`-th simple root.
    pub fn inner(alg: &LieAlgebraData, fractions: &[Rational64]) -> Result<Self> {
        let roots = alg
            .roots
            .as_ref()
            .ok_or_else(|| Error::Config("algebra carries no root data for inner automorphisms".into()))?;
        let rank = roots.first().map_or(0, Vec::len);
        if fractions.len() != rank {
            return Err(Error::Config(format!("{} fractions supplied for rank {rank}", fractions.len())));
        }
        let alphas: Vec<Rational64> = roots
            .iter()
            .map(|root| {
                reduce_unit(root.iter().zip(fractions).fold(Rational64::zero(), |acc, (&m, q)| acc + *q * m))
            })
            .collect();
        let order = fractions.iter().fold(1i64, |acc, q| lcm(acc, *q.denom()));
        let order = u32::try_from(order).map_err(|_| Error::Config("automorphism order too large".into()))?;
        let g = CMatrix::from_diagonal(&CVector::from_iterator(alphas.len(), alphas.iter().map(|a| root_of_unity(*a))));
        let eigvecs = CMatrix::identity(alg.dim, alg.dim);
        Self::from_eigendata(alg, g, order, alphas, eigvecs)
    }

    /// A finite-order automorphism supplied as a matrix in the algebra basis.
    /// The order and an eigenbasis are recovered from spectral projectors.
    pub fn from_matrix(alg: &LieAlgebraData, g: CMatrix) -> Result<Self> {
        if g.shape() != (alg.dim, alg.dim) {
            return Err(Error::Shape(format!("automorphism matrix is {:?}, expected {}x{}", g.shape(), alg.dim, alg.dim)));
        }
        let id = CMatrix::identity(alg.dim, alg.dim);
        let mut powers = vec![id.clone()];
        let mut order = None;
        for s in 1..=1024u32 {
            let next = powers.last().unwrap() * &g;
            if max_abs(&(&next - &id)) < EIGEN_TOL {
                order = Some(s);
                break;
            }
            powers.push(next);
        }
        let order = order.ok_or_else(|| Error::Config("automorphism matrix does not have finite order <= 1024".into()))?;
        let t = order as usize;
        let mut alphas = Vec::new();
        let mut columns: Vec<CVector> = Vec::new();
        for k in 0..t {
            let mut proj = CMatrix::zeros(alg.dim, alg.dim);
            for (s, gs) in powers.iter().enumerate() {
                let phase = C::from_polar(1.0, -std::f64::consts::TAU * (k * s) as f64 / t as f64);
                proj += gs * phase;
            }
            proj /= C::new(t as f64, 0.0);
            // Gram–Schmidt over the projector's columns picks a basis of the eigenspace.
            let mut basis: Vec<CVector> = Vec::new();
            for col in 0..alg.dim {
                let mut v: CVector = proj.column(col).into_owned();
                for b in &basis {
                    let coeff = b.dotc(&v);
                    v -= b * coeff;
                }
                let norm = v.norm();
                if norm > 1e-8 {
                    basis.push(v / C::new(norm, 0.0));
                }
            }
            for v in basis {
                alphas.push(Rational64::new(k as i64, t as i64));
                columns.push(v);
            }
        }
        if columns.len() != alg.dim {
            return Err(Error::Numeric(format!(
                "eigenspaces of the automorphism span dimension {} instead of {}",
                columns.len(),
                alg.dim
            )));
        }
        let eigvecs = CMatrix::from_columns(&columns);
        Self::from_eigendata(alg, g, order, alphas, eigvecs)
    }

    fn from_eigendata(
        alg: &LieAlgebraData,
        g: CMatrix,
        order: u32,
        alphas: Vec<Rational64>,
        eigen_matrix: CMatrix,
    ) -> Result<Self> {
        let dim = alg.dim;
        let eigen_inverse = checked_inverse(&eigen_matrix, "automorphism eigenbasis")?;
        let gram = eigen_matrix.transpose() * &alg.form * &eigen_matrix;
        let dual_coords = checked_inverse(&gram, "eigenbasis Gram matrix")?;
        let mut eigenbasis: Vec<CVector> = (0..dim).map(|i| eigen_matrix.column(i).into_owned()).collect();
        let mut alpha = alphas.clone();
        for i in 0..dim {
            // a^{i'} = Σ_j D_ij a^j
            let mut v = CVector::zeros(dim);
            for j in 0..dim {
                v += eigen_matrix.column(j) * dual_coords[(i, j)];
            }
            eigenbasis.push(v);
            alpha.push(alpha_prime(alphas[i])?);
        }
        let prime = (0..2 * dim).map(|i| if i < dim { i + dim } else { i - dim }).collect();
        let aut = AutomorphismData { order, dim, alpha, prime, eigenbasis, matrix_g: g, eigen_matrix, eigen_inverse };
        aut.check_invariants(alg)?;
        Ok(aut)
    }

    pub fn index_len(&self) -> usize {
        2 * self.dim
    }

    pub fn is_dual_index(&self, i: usize) -> bool {
        i >= self.dim
    }

    pub fn label(&self, alg: &LieAlgebraData, i: usize) -> String {
        let base = if self.eigen_matrix == CMatrix::identity(self.dim, self.dim) {
            alg.basis_labels[i % self.dim].clone()
        } else {
            format!("a{}", i % self.dim)
        };
        if self.is_dual_index(i) {
            format!("{base}'")
        } else {
            base
        }
    }

    /// Coordinates of `a^i` (`i ∈ 𝓘`) in the eigenbasis `{a^j}_{j∈I}`.
    pub fn eigen_coords(&self, i: usize) -> CVector {
        &self.eigen_inverse * &self.eigenbasis[i]
    }

    pub fn to_eigen_coords(&self, algebra_coords: &CVector) -> CVector {
        &self.eigen_inverse * algebra_coords
    }

    pub fn is_identity(&self) -> bool {
        self.order == 1
    }

    /// Verify every structural invariant of the eigendata; returns the worst
    /// deviation on success.
    pub fn check_invariants(&self, alg: &LieAlgebraData) -> Result<f64> {
        let dim = self.dim;
        let g = &self.matrix_g;
        let mut worst: f64 = 0.0;
        // automorphism
        for i in 0..dim {
            for j in 0..dim {
                let (a, b) = (alg.basis_vector(i), alg.basis_vector(j));
                let lhs = g * alg.bracket(&a, &b);
                let rhs = alg.bracket(&(g * &a), &(g * &b));
                worst = worst.max((lhs - rhs).camax());
            }
        }
        if worst > EIGEN_TOL {
            return Err(Error::Config(format!("matrix is not a Lie algebra automorphism (deviation {worst:.3e})")));
        }
        // exact order
        let id = CMatrix::identity(dim, dim);
        let mut power = id.clone();
        for s in 1..=self.order {
            power = &power * g;
            let dev = max_abs(&(&power - &id));
            if s < self.order && dev < EIGEN_TOL {
                return Err(Error::Config(format!("g^{s} = Id but order was declared as {}", self.order)));
            }
            if s == self.order {
                if dev > EIGEN_TOL {
                    return Err(Error::Config(format!("g^{} deviates from Id by {dev:.3e}", self.order)));
                }
                worst = worst.max(dev);
            }
        }
        for i in 0..2 * dim {
            let a = self.alpha[i];
            if a < Rational64::zero() || a >= Rational64::one() || !(a * self.order as i64).is_integer() {
                return Err(Error::Config(format!("alpha {a} is not in [0,1) ∩ (1/{})Z", self.order)));
            }
            let v = &self.eigenbasis[i];
            let dev = (g * v - v * root_of_unity(a)).camax();
            if dev > EIGEN_TOL {
                return Err(Error::Numeric(format!("a^{i} is not an eigenvector (deviation {dev:.3e})")));
            }
            worst = worst.max(dev);
            if self.prime[self.prime[i]] != i {
                return Err(Error::Internal("index involution is not an involution".into()));
            }
            if self.alpha[self.prime[i]] != alpha_prime(a)? && i < dim {
                return Err(Error::Internal(format!("alpha pairing violated at index {i}")));
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let pairing = alg.pairing(&self.eigenbasis[i + dim], &self.eigenbasis[j]);
                let expect = if i == j { ONE } else { ZERO };
                let dev = (pairing - expect).norm();
                if dev > 1e-12 {
                    return Err(Error::Numeric(format!("dual basis pairing ({i}',{j}) off by {dev:.3e}")));
                }
                worst = worst.max(dev);
            }
        }
        Ok(worst)
    }
}

/// Indices `i ∈ I` with `α^i = 0`.
pub fn fixed_subalgebra(aut: &AutomorphismData) -> Vec<usize> {
    (0..aut.dim).filter(|&i| aut.alpha[i].is_zero()).collect()
}

/// What to place in the twisted slot.
#[derive(Debug, Clone)]
pub enum TwistedSlotSpec {
    /// One-dimensional, zero action.
    Trivial,
    /// Explicit matrices for fixed-subalgebra eigenbasis indices.
    Matrices { dim: usize, entries: Vec<(usize, CMatrix)> },
    /// Restriction of a representation of the whole algebra.
    Restrict(ModuleRep),
}

/// Representation of the fixed subalgebra on the twisted slot, indexed by the
/// eigenbasis `I`; non-fixed indices carry no action.
pub fn twisted_slot_rep(alg: &LieAlgebraData, aut: &AutomorphismData, spec: &TwistedSlotSpec) -> Result<ModuleRep> {
    let fixed = fixed_subalgebra(aut);
    let mut rep = match spec {
        TwistedSlotSpec::Trivial => {
            let mut action = vec![None; aut.dim];
            for &i in &fixed {
                action[i] = Some(CMatrix::zeros(1, 1));
            }
            return Ok(ModuleRep { dim: 1, action, weight_label: Some("trivial".into()), conformal_weight: None });
        }
        TwistedSlotSpec::Matrices { dim, entries } => {
            let mut action = vec![None; aut.dim];
            for (i, m) in entries {
                if *i >= aut.dim {
                    return Err(Error::Config(format!("twisted slot index {i} out of range")));
                }
                if !fixed.contains(i) {
                    return Err(Error::Config(format!(
                        "twisted slot matrix supplied for index {i}, which is not in the fixed subalgebra"
                    )));
                }
                if m.shape() != (*dim, *dim) {
                    return Err(Error::Shape(format!("twisted slot matrix {i} is {:?}", m.shape())));
                }
                action[*i] = Some(m.clone());
            }
            if let Some(missing) = fixed.iter().find(|&&i| action[i].is_none()) {
                return Err(Error::Config(format!("twisted slot lacks a matrix for fixed index {missing}")));
            }
            ModuleRep { dim: *dim, action, weight_label: None, conformal_weight: None }
        }
        TwistedSlotSpec::Restrict(full) => {
            if full.action.len() != alg.dim || !full.is_total() {
                return Err(Error::Shape("restricted representation must cover the whole algebra".into()));
            }
            let mut action = vec![None; aut.dim];
            for &i in &fixed {
                action[i] = Some(full.act(&aut.eigenbasis[i])?);
            }
            ModuleRep { dim: full.dim, action, weight_label: full.weight_label.clone(), conformal_weight: None }
        }
    };
    // homomorphism on the fixed subalgebra, in eigenbasis coordinates
    let mut worst: f64 = 0.0;
    for &i in &fixed {
        for &j in &fixed {
            let br = alg.bracket(&aut.eigenbasis[i], &aut.eigenbasis[j]);
            let lhs = rep.act(&aut.to_eigen_coords(&br))?;
            let rhs = commutator(rep.action[i].as_ref().unwrap(), rep.action[j].as_ref().unwrap());
            worst = worst.max(max_abs(&(lhs - rhs)));
        }
    }
    if worst > 1e-10 {
        return Err(Error::Config(format!("twisted slot matrices are not a representation (deviation {worst:.3e})")));
    }
    rep.weight_label.get_or_insert_with(|| format!("fixed-subalgebra rep of dim {}", rep.dim));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{build_algebra, build_irrep_sl2, AlgebraSpec};
    use crate::linalg::{c, real};

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn alpha_prime_values() {
        assert_eq!(alpha_prime(r(0, 1)).unwrap(), r(0, 1));
        assert_eq!(alpha_prime(r(1, 2)).unwrap(), r(1, 2));
        assert_eq!(alpha_prime(r(1, 3)).unwrap(), r(2, 3));
        assert!(matches!(alpha_prime(r(1, 1)), Err(Error::Domain(_))));
        assert!(matches!(alpha_prime(r(-1, 4)), Err(Error::Domain(_))));
    }

    #[test]
    fn sl2_half_order() {
        let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[r(1, 2)]).unwrap();
        assert_eq!(aut.order, 2);
        assert_eq!(&aut.alpha[..3], &[r(1, 2), r(0, 1), r(1, 2)]);
        // e' = f, h' = h/2, f' = e
        assert_eq!(&aut.alpha[3..], &[r(1, 2), r(0, 1), r(1, 2)]);
        assert_eq!(fixed_subalgebra(&aut), vec![1]);
        // independent check: conjugate by diag(i, -i) and read off eigenvalues
        let u = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.0, 1.0), c(0.0, -1.0)]));
        let uinv = u.clone().try_inverse().unwrap();
        let mats = alg.defining.as_ref().unwrap();
        for (k, m) in mats.iter().enumerate() {
            let conj = &u * m * &uinv;
            let lambda = root_of_unity(aut.alpha[k]);
            assert!(max_abs(&(conj - m * lambda)) < 1e-14);
        }
    }

    #[test]
    fn identity_automorphism() {
        let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[r(0, 1)]).unwrap();
        assert_eq!(aut.order, 1);
        assert!(aut.alpha.iter().all(|a| a.is_zero()));
        assert_eq!(aut.matrix_g, CMatrix::identity(3, 3));
        assert_eq!(fixed_subalgebra(&aut), vec![0, 1, 2]);
    }

    #[test]
    fn sl3_third_order() {
        let alg = build_algebra(&AlgebraSpec::sl(3)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[r(1, 3), r(0, 1)]).unwrap();
        assert_eq!(aut.order, 3);
        // basis: e12 e13 e23 h1 h2 f12 f13 f23
        let expect = [r(1, 3), r(1, 3), r(0, 1), r(0, 1), r(0, 1), r(2, 3), r(2, 3), r(0, 1)];
        assert_eq!(&aut.alpha[..8], &expect);
        assert_eq!(fixed_subalgebra(&aut), vec![2, 3, 4, 7]);
        for i in 0..8 {
            assert_eq!(aut.alpha[aut.prime[i]], alpha_prime(aut.alpha[i]).unwrap());
        }
    }

    #[test]
    fn wrong_fraction_count() {
        let alg = build_algebra(&AlgebraSpec::sl(3)).unwrap();
        assert!(matches!(AutomorphismData::inner(&alg, &[r(1, 2)]), Err(Error::Config(_))));
    }

    #[test]
    fn matrix_automorphism_recovers_eigendata() {
        let alg = build_algebra(&AlgebraSpec::sl(3)).unwrap();
        let inner = AutomorphismData::inner(&alg, &[r(1, 3), r(1, 3)]).unwrap();
        let from_matrix = AutomorphismData::from_matrix(&alg, inner.matrix_g.clone()).unwrap();
        assert_eq!(from_matrix.order, 3);
        let mut a: Vec<_> = inner.alpha[..8].to_vec();
        let mut b: Vec<_> = from_matrix.alpha[..8].to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn non_automorphism_rejected() {
        let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
        let mut g = CMatrix::identity(3, 3);
        g[(0, 0)] = real(-1.0);
        assert!(AutomorphismData::from_matrix(&alg, g).is_err());
    }

    #[test]
    fn fixed_subalgebra_closed() {
        let alg = build_algebra(&AlgebraSpec::sl(3)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[r(1, 3), r(0, 1)]).unwrap();
        let fixed = fixed_subalgebra(&aut);
        for &i in &fixed {
            for &j in &fixed {
                let br = alg.bracket(&aut.eigenbasis[i], &aut.eigenbasis[j]);
                assert!((&aut.matrix_g * &br - &br).camax() < 1e-12);
            }
        }
    }

    #[test]
    fn twisted_slot_specs() {
        let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[r(1, 2)]).unwrap();
        let triv = twisted_slot_rep(&alg, &aut, &TwistedSlotSpec::Trivial).unwrap();
        assert_eq!(triv.dim, 1);
        assert!(triv.action[0].is_none() && triv.action[1].is_some());
        let charge = CMatrix::from_element(1, 1, real(0.7));
        let rep = twisted_slot_rep(&alg, &aut, &TwistedSlotSpec::Matrices { dim: 1, entries: vec![(1, charge.clone())] })
            .unwrap();
        assert_eq!(rep.action[1].as_ref().unwrap(), &charge);
        let bad = TwistedSlotSpec::Matrices { dim: 1, entries: vec![(0, charge)] };
        assert!(matches!(twisted_slot_rep(&alg, &aut, &bad), Err(Error::Config(_))));

        let ident = AutomorphismData::inner(&alg, &[r(0, 1)]).unwrap();
        let half = build_irrep_sl2(r(1, 2)).unwrap();
        let full = twisted_slot_rep(&alg, &ident, &TwistedSlotSpec::Restrict(half.clone())).unwrap();
        assert!(full.is_total());
        assert_eq!(full.action, half.action);
    }
}
