//! Ω operators and the twisted KZ connection matrices `A_ℓ(z)`.
//!
//! The state space is `W_0 ⊗ W_1 ⊗ ... ⊗ W_N ⊗ W_{N+1}` with slot 0 outermost
//! in the Kronecker order. Slot 0 is passive, slots `1..=N` carry
//! representations of the whole algebra and slot `N+1` (the twisted slot)
//! carries a representation of the fixed subalgebra. Points are 0-based in
//! code: point `ℓ` lives in slot `ℓ + 1`.
//!
//! The connection acts on the dual of the tensor space, so every stored
//! `A_ℓ` is the transpose of the corresponding tensor operator and solutions
//! satisfy `∂_ℓ ψ = A_ℓ ψ`.

use std::collections::BTreeMap;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::autmod::{fixed_subalgebra, AutomorphismData};
use crate::error::{Error, Result};
use crate::liealg::{dual_basis, LieAlgebraData, ModuleRep};
use crate::linalg::{commutator, frobenius, kron, max_abs, real, CMatrix};
use crate::rcalc::{MonoKey, RElement, RMatrix};
use crate::serial;

/// Which product represents `a^i(0) a^{i'}(0)` on a single slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorOrdering {
    /// `ρ(a^i) ρ(a^{i'})`.
    #[default]
    Displayed,
    /// `ρ(a^{i'}) ρ(a^i)`.
    Swapped,
}

/// Representations placed in the slots of the tensor product.
#[derive(Debug, Clone)]
pub struct SlotReps {
    pub passive_dim: usize,
    pub untwisted: Vec<ModuleRep>,
    /// Indexed by the automorphism eigenbasis; defined on fixed indices.
    pub twisted: ModuleRep,
}

impl SlotReps {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.passive_dim];
        d.extend(self.untwisted.iter().map(|r| r.dim));
        d.push(self.twisted.dim);
        d
    }
}

/// The operators entering the connection, on the full tensor space.
#[derive(Debug, Clone)]
pub struct OmegaSet {
    pub n: usize,
    pub dims: Vec<usize>,
    pub level: C,
    pub prefactor: C,
    pub ordering: OperatorOrdering,
    /// `pair_ops[ℓ][p][i]`, empty for `ℓ = p`.
    pub pair_ops: Vec<Vec<Vec<CMatrix>>>,
    pub slot_ops: Vec<CMatrix>,
    /// Worst commutator of the α-class sums with the fixed-subalgebra action.
    pub equivariance_deviation: f64,
}

impl OmegaSet {
    pub fn state_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Largest entrywise difference `Ω^i_{ℓp} − Ω^{i'}_{pℓ}`.
    pub fn symmetry_deviation(&self, aut: &AutomorphismData) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..self.n {
            for p in 0..self.n {
                if l == p {
                    continue;
                }
                for (i, op) in self.pair_ops[l][p].iter().enumerate() {
                    worst = worst.max(max_abs(&(op - &self.pair_ops[p][l][aut.prime[i]])));
                }
            }
        }
        worst
    }
}

/// Operator acting as `m` on slot `slot` and as the identity elsewhere.
pub fn embed(dims: &[usize], slot: usize, m: &CMatrix) -> CMatrix {
    let before: usize = dims[..slot].iter().product();
    let after: usize = dims[slot + 1..].iter().product();
    kron(&kron(&CMatrix::identity(before, before), m), &CMatrix::identity(after, after))
}

fn shifted_level(alg: &LieAlgebraData, level: C) -> Result<C> {
    let h = *alg.dual_coxeter.numer() as f64 / *alg.dual_coxeter.denom() as f64;
    let shifted = level + real(h);
    if shifted.norm() < 1e-12 {
        return Err(Error::CriticalLevel { level: format!("{level}") });
    }
    Ok(shifted)
}

fn check_slots(alg: &LieAlgebraData, aut: &AutomorphismData, slots: &SlotReps) -> Result<()> {
    if slots.untwisted.is_empty() {
        return Err(Error::Config("at least one untwisted slot is required".into()));
    }
    if slots.passive_dim == 0 {
        return Err(Error::Shape("passive slot dimension must be positive".into()));
    }
    for (k, rep) in slots.untwisted.iter().enumerate() {
        if rep.action.len() != alg.dim || !rep.is_total() {
            return Err(Error::Shape(format!("untwisted slot {} must represent the whole algebra", k + 1)));
        }
    }
    if slots.twisted.action.len() != aut.dim {
        return Err(Error::Shape(format!(
            "twisted slot covers {} indices, automorphism eigenbasis has {}",
            slots.twisted.action.len(),
            aut.dim
        )));
    }
    if let Some(i) = fixed_subalgebra(aut).into_iter().find(|&i| slots.twisted.action[i].is_none()) {
        return Err(Error::Shape(format!("twisted slot lacks an action for fixed index {i}")));
    }
    Ok(())
}

/// Build every `Ω^i_{ℓp}` and `Ω_ℓ` on the full tensor space.
pub fn build_omega_set(
    alg: &LieAlgebraData,
    aut: &AutomorphismData,
    level: C,
    slots: &SlotReps,
    ordering: OperatorOrdering,
) -> Result<OmegaSet> {
    let shifted = shifted_level(alg, level)?;
    check_slots(alg, aut, slots)?;
    let n = slots.untwisted.len();
    let dims = slots.dims();
    let prefactor = C::new(1.0, 0.0) / (shifted * 2.0);
    let idx_len = aut.index_len();

    // ρ_ℓ(a^i) for every point ℓ and every i ∈ 𝓘, on the slot alone
    let mut local: Vec<Vec<CMatrix>> = Vec::with_capacity(n);
    for rep in &slots.untwisted {
        local.push(aut.eigenbasis.iter().map(|v| rep.act(v)).collect::<Result<_>>()?);
    }
    let mut embedded: Vec<Vec<CMatrix>> = Vec::with_capacity(n);
    for (l, mats) in local.iter().enumerate() {
        embedded.push(mats.iter().map(|m| embed(&dims, l + 1, m)).collect());
    }
    let twisted_slot = n + 1;
    let mut twisted_ops: Vec<Option<CMatrix>> = vec![None; idx_len];
    for i in 0..idx_len {
        if aut.alpha[i].is_zero() {
            let m = slots.twisted.act(&aut.eigen_coords(i))?;
            twisted_ops[i] = Some(embed(&dims, twisted_slot, &m));
        }
    }

    let mut pair_ops = vec![vec![Vec::new(); n]; n];
    for l in 0..n {
        for p in 0..n {
            if l == p {
                continue;
            }
            pair_ops[l][p] = (0..idx_len)
                .map(|i| &embedded[l][aut.prime[i]] * &embedded[p][i] * prefactor)
                .collect();
        }
    }

    let total = dims.iter().product();
    let mut slot_ops = Vec::with_capacity(n);
    for l in 0..n {
        let mut op = CMatrix::zeros(total, total);
        for i in 0..idx_len {
            let alpha = aut.alpha[i];
            if alpha.is_zero() {
                op += &embedded[l][aut.prime[i]] * twisted_ops[i].as_ref().unwrap();
            } else {
                let a = *alpha.numer() as f64 / *alpha.denom() as f64;
                let (x, y) = (&local[l][i], &local[l][aut.prime[i]]);
                let prod = match ordering {
                    OperatorOrdering::Displayed => x * y,
                    OperatorOrdering::Swapped => y * x,
                };
                op -= embed(&dims, l + 1, &prod) * real(a);
            }
        }
        slot_ops.push(op * prefactor);
    }

    let mut omega =
        OmegaSet { n, dims, level, prefactor, ordering, pair_ops, slot_ops, equivariance_deviation: 0.0 };
    omega.equivariance_deviation = equivariance_deviation(&omega, aut, &embedded, &twisted_ops);
    if omega.equivariance_deviation > 1e-10 {
        return Err(Error::Internal(format!(
            "Ω operators fail to commute with the fixed subalgebra (deviation {:.3e})",
            omega.equivariance_deviation
        )));
    }
    Ok(omega)
}

/// Individual `Ω^i` need not commute with a non-abelian fixed subalgebra; the
/// sums over indices sharing the same `α` do.
fn equivariance_deviation(
    omega: &OmegaSet,
    aut: &AutomorphismData,
    embedded: &[Vec<CMatrix>],
    twisted_ops: &[Option<CMatrix>],
) -> f64 {
    let n = omega.n;
    let total = omega.state_dim();
    let fixed = fixed_subalgebra(aut);
    let mut actions = Vec::new();
    for &i in &fixed {
        let mut act = twisted_ops[i].clone().unwrap_or_else(|| CMatrix::zeros(total, total));
        for emb in embedded.iter().take(n) {
            act += &emb[i];
        }
        actions.push(act);
    }
    let mut classes: BTreeMap<Rational64, Vec<usize>> = BTreeMap::new();
    for i in 0..aut.index_len() {
        classes.entry(aut.alpha[i]).or_default().push(i);
    }
    let mut worst: f64 = 0.0;
    for l in 0..n {
        for p in 0..n {
            if l == p {
                continue;
            }
            for members in classes.values() {
                let mut sum = CMatrix::zeros(total, total);
                for &i in members {
                    sum += &omega.pair_ops[l][p][i];
                }
                for act in &actions {
                    worst = worst.max(max_abs(&commutator(&sum, act)));
                }
            }
        }
        for act in &actions {
            worst = worst.max(max_abs(&commutator(&omega.slot_ops[l], act)));
        }
    }
    worst
}

/// Descriptive data carried along with a connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionMetadata {
    pub algebra: String,
    #[serde(with = "serial::complex")]
    pub level: C,
    pub dims: Vec<usize>,
    pub slot_labels: Vec<String>,
    pub ordering: OperatorOrdering,
    pub automorphism_order: u32,
}

/// The matrices `A_ℓ(z)` with entries in the coefficient ring.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionSystem {
    pub n: usize,
    pub t: u32,
    pub state_dim: usize,
    pub a: Vec<RMatrix>,
    pub alpha_table: Vec<Rational64>,
    pub branch_convention: String,
    pub metadata: ConnectionMetadata,
}

pub const BRANCH_CONVENTION: &str = "l_p(z) = ln|z| + i(arg z + 2 pi p), arg z in [0, 2 pi)";

fn ratio_factor(t: u32, n: usize, l: usize, p: usize, alpha: Rational64) -> Result<RElement> {
    // z_p^α z_ℓ^{-α} (z_ℓ - z_p)^{-1}
    let up = RElement::var_power(t, n, p, alpha)?;
    let down = RElement::var_power(t, n, l, -alpha)?;
    Ok(&(&up * &down) * &RElement::diff_power(t, n, l, p, -1))
}

/// Assemble `A_ℓ = Σ_i Σ_{p≠ℓ} z_p^{α^i} z_ℓ^{-α^i} (z_ℓ - z_p)^{-1} Ω^i_{ℓp} + z_ℓ^{-1} Ω_ℓ`,
/// transposed to act on the dual space.
pub fn assemble_connection(omega: &OmegaSet, aut: &AutomorphismData, metadata: ConnectionMetadata) -> Result<ConnectionSystem> {
    let n = omega.n;
    let t = aut.order;
    let dim = omega.state_dim();
    let mut a = Vec::with_capacity(n);
    for l in 0..n {
        let mut m = RMatrix::zero(t, n, dim, dim);
        for p in 0..n {
            if p == l {
                continue;
            }
            let mut by_alpha: BTreeMap<Rational64, CMatrix> = BTreeMap::new();
            for (i, op) in omega.pair_ops[l][p].iter().enumerate() {
                *by_alpha.entry(aut.alpha[i]).or_insert_with(|| CMatrix::zeros(dim, dim)) += op;
            }
            for (alpha, op) in by_alpha {
                m.add_scaled(&ratio_factor(t, n, l, p, alpha)?, &op.transpose());
            }
        }
        m.add_scaled(&RElement::var_power(t, n, l, Rational64::from(-1))?, &omega.slot_ops[l].transpose());
        a.push(m);
    }
    Ok(ConnectionSystem {
        n,
        t,
        state_dim: dim,
        a,
        alpha_table: aut.alpha.clone(),
        branch_convention: BRANCH_CONVENTION.into(),
        metadata,
    })
}

/// Untwisted KZ connection with the last slot sitting at the origin, built
/// directly from a dual basis of the algebra without automorphism data.
pub fn classical_connection(
    alg: &LieAlgebraData,
    level: C,
    slots: &SlotReps,
    metadata: ConnectionMetadata,
) -> Result<ConnectionSystem> {
    let shifted = shifted_level(alg, level)?;
    let n = slots.untwisted.len();
    if slots.twisted.action.len() != alg.dim || !slots.twisted.is_total() {
        return Err(Error::Shape("the origin slot must represent the whole algebra".into()));
    }
    let dims = slots.dims();
    let dim: usize = dims.iter().product();
    let duals = dual_basis(alg)?;
    let mut reps: Vec<&ModuleRep> = slots.untwisted.iter().collect();
    reps.push(&slots.twisted);
    // Σ_i ρ_x(a^{i'}) ρ_y(a^i) / (k + h^∨) for slots x, y (0-based among 1..=N+1)
    let casimir_tensor = |x: usize, y: usize| -> Result<CMatrix> {
        let mut acc = CMatrix::zeros(dim, dim);
        for (i, dual) in duals.iter().enumerate() {
            let left = embed(&dims, x + 1, &reps[x].act(dual)?);
            let right = embed(&dims, y + 1, reps[y].action[i].as_ref().unwrap());
            acc += left * right;
        }
        Ok(acc / shifted)
    };
    let mut a = Vec::with_capacity(n);
    for l in 0..n {
        let mut m = RMatrix::zero(1, n, dim, dim);
        for p in 0..n {
            if p != l {
                m.add_scaled(&RElement::diff_power(1, n, l, p, -1), &casimir_tensor(l, p)?.transpose());
            }
        }
        m.add_scaled(&RElement::var_power(1, n, l, Rational64::from(-1))?, &casimir_tensor(l, n)?.transpose());
        a.push(m);
    }
    Ok(ConnectionSystem {
        n,
        t: 1,
        state_dim: dim,
        a,
        alpha_table: vec![Rational64::zero(); 2 * alg.dim],
        branch_convention: BRANCH_CONVENTION.into(),
        metadata,
    })
}

/// Result of sampling `Σ_ℓ z_ℓ A_ℓ(z)`.
#[derive(Debug, Clone)]
pub struct EulerReport {
    pub mean: CMatrix,
    pub samples: Vec<CMatrix>,
    pub deviation: f64,
}

/// Result of the consistency check at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessReport {
    pub residual: f64,
    /// Roundoff-level bound on the residual computation itself.
    pub est_error: f64,
    /// Pair `(ℓ, m)` attaining the maximum.
    pub worst_pair: Option<(usize, usize)>,
}

impl ConnectionSystem {
    pub fn eval(&self, z: &[C], p: &[i64]) -> Result<Vec<CMatrix>> {
        self.a.iter().map(|m| m.eval(z, p)).collect()
    }

    pub fn eval_logs(&self, z: &[C], logs: &[C]) -> Result<Vec<CMatrix>> {
        self.a.iter().map(|m| m.eval_logs(z, logs)).collect()
    }

    /// `Σ_ℓ z_ℓ A_ℓ(z)` at one point.
    pub fn euler_matrix(&self, z: &[C], p: &[i64]) -> Result<CMatrix> {
        let mats = self.eval(z, p)?;
        let mut e = CMatrix::zeros(self.state_dim, self.state_dim);
        for (zl, m) in z.iter().zip(&mats) {
            e += m * *zl;
        }
        Ok(e)
    }

    /// Every monomial of every `A_ℓ` is `z_ℓ^{-1}` or
    /// `z_p^{a} z_ℓ^{-a} (z_ℓ - z_p)^{-1}` for some `p ≠ ℓ`.
    pub fn has_expected_shape(&self) -> bool {
        let n = self.n;
        let t = self.t as i64;
        self.a.iter().enumerate().all(|(l, m)| {
            m.terms().keys().all(|k| {
                let slot_term = {
                    let mut e = MonoKey::one(n);
                    e.powers[l] = -t;
                    *k == e
                };
                slot_term
                    || (0..n).filter(|&p| p != l).any(|p| {
                        let a = k.powers[p];
                        let mut e = MonoKey::one(n);
                        e.powers[p] = a;
                        e.powers[l] = -a;
                        let (lo, hi) = (l.min(p), l.max(p));
                        e.diffs[crate::rcalc::pair_index(lo, hi, n)] = -1;
                        let same_up_to_sign = *k == e;
                        same_up_to_sign && (0..t).contains(&a)
                    })
            })
        })
    }
}

/// Sample the Euler contraction and report its spread.
pub fn euler_contraction(conn: &ConnectionSystem, points: &[Vec<C>], branches: &[Vec<i64>]) -> Result<EulerReport> {
    if points.is_empty() || points.len() != branches.len() {
        return Err(Error::Config("euler contraction needs matching, nonempty point and branch lists".into()));
    }
    let samples: Vec<CMatrix> =
        points.iter().zip(branches).map(|(z, p)| conn.euler_matrix(z, p)).collect::<Result<_>>()?;
    let mut mean = CMatrix::zeros(conn.state_dim, conn.state_dim);
    for s in &samples {
        mean += s;
    }
    mean /= real(samples.len() as f64);
    let deviation = samples.iter().map(|s| max_abs(&(s - &mean))).fold(0.0, f64::max);
    Ok(EulerReport { mean, samples, deviation })
}

/// `max_{ℓ<m} ‖∂_ℓ A_m − ∂_m A_ℓ − [A_ℓ, A_m]‖_F`, derivatives taken exactly.
pub fn flatness_residual(conn: &ConnectionSystem, z: &[C], p: &[i64]) -> Result<FlatnessReport> {
    let n = conn.n;
    let mats = conn.eval(z, p)?;
    let mut report = FlatnessReport { residual: 0.0, est_error: 0.0, worst_pair: None };
    for l in 0..n {
        for m in l + 1..n {
            let d_l_am = conn.a[m].differentiate(l).eval(z, p)?;
            let d_m_al = conn.a[l].differentiate(m).eval(z, p)?;
            let prod_lm = &mats[l] * &mats[m];
            let prod_ml = &mats[m] * &mats[l];
            let res = &d_l_am - &d_m_al - (&prod_lm - &prod_ml);
            let value = frobenius(&res);
            let scale = frobenius(&d_l_am) + frobenius(&d_m_al) + 2.0 * frobenius(&mats[l]) * frobenius(&mats[m]);
            let err = 8.0 * f64::EPSILON * conn.state_dim as f64 * scale;
            if report.worst_pair.is_none() || value > report.residual {
                report.residual = value;
                report.worst_pair = Some((l, m));
            }
            report.est_error = report.est_error.max(err);
        }
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct ConnectionJson {
    n: usize,
    t: u32,
    state_dim: usize,
    #[serde(with = "serial::rational_vec")]
    alpha_table: Vec<Rational64>,
    branch_convention: String,
    metadata: ConnectionMetadata,
    a: Vec<serde_json::Value>,
}

impl Serialize for ConnectionSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let a = self.a.iter().map(serde_json::to_value).collect::<std::result::Result<Vec<_>, _>>().map_err(S::Error::custom)?;
        ConnectionJson {
            n: self.n,
            t: self.t,
            state_dim: self.state_dim,
            alpha_table: self.alpha_table.clone(),
            branch_convention: self.branch_convention.clone(),
            metadata: self.metadata.clone(),
            a,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConnectionSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ConnectionJson::deserialize(d)?;
        if raw.a.len() != raw.n {
            return Err(D::Error::custom(format!("{} connection matrices for n = {}", raw.a.len(), raw.n)));
        }
        let a = raw
            .a
            .into_iter()
            .map(|v| RMatrix::from_json_entries(raw.t, raw.n, v))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        if a.iter().any(|m| m.rows != raw.state_dim || m.cols != raw.state_dim) {
            return Err(D::Error::custom("connection matrix shape disagrees with state_dim"));
        }
        Ok(ConnectionSystem {
            n: raw.n,
            t: raw.t,
            state_dim: raw.state_dim,
            a,
            alpha_table: raw.alpha_table,
            branch_convention: raw.branch_convention,
            metadata: raw.metadata,
        })
    }
}

/// Negate every term of `A_ℓ` that contains a difference factor. For `N = 2`
/// this turns `(z_2 − z_1)^{-1} Ω_{12}` in `A_2` into `(z_1 − z_2)^{-1} Ω_{12}`,
/// giving a system whose coefficients have the same singular locus but which
/// lacks a simple singularity along `z_1 = z_2`.
pub fn flip_pair_terms(conn: &ConnectionSystem, l: usize) -> Result<ConnectionSystem> {
    if l >= conn.n {
        return Err(Error::Config(format!("point {} out of range", l + 1)));
    }
    let mut out = conn.clone();
    let mut m = RMatrix::zero(conn.t, conn.n, conn.state_dim, conn.state_dim);
    for (k, coeff) in conn.a[l].terms() {
        let sign = if k.diffs.iter().any(|d| *d != 0) { -1.0 } else { 1.0 };
        m.add_term(k.clone(), &(coeff * real(sign)));
    }
    out.a[l] = m;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autmod::{twisted_slot_rep, TwistedSlotSpec};
    use crate::liealg::{build_algebra, build_irrep_sl2, AlgebraSpec};
    use crate::linalg::c;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn meta(dims: Vec<usize>) -> ConnectionMetadata {
        ConnectionMetadata {
            algebra: "sl(2)".into(),
            level: real(1.0),
            dims,
            slot_labels: vec![],
            ordering: OperatorOrdering::Displayed,
            automorphism_order: 1,
        }
    }

    fn sl2_setup(fraction: Rational64, n: usize, twisted: TwistedSlotSpec) -> (LieAlgebraData, AutomorphismData, SlotReps) {
        let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
        let aut = AutomorphismData::inner(&alg, &[fraction]).unwrap();
        let half = build_irrep_sl2(r(1, 2)).unwrap();
        let tw = twisted_slot_rep(&alg, &aut, &twisted).unwrap();
        (alg, aut, SlotReps { passive_dim: 1, untwisted: vec![half; n], twisted: tw })
    }

    #[test]
    fn twisted_slot_operator_single_point() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 1, TwistedSlotSpec::Trivial);
        let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        // e f + f e = Id on spin 1/2, weighted by α = 1/2 twice
        let expect = CMatrix::identity(2, 2) * real(-1.0 / 6.0);
        assert!(max_abs(&(&omega.slot_ops[0] - &expect)) < 1e-15);
        let conn = assemble_connection(&omega, &aut, meta(omega.dims.clone())).unwrap();
        assert_eq!(conn.a[0].terms().len(), 1);
        let z = [c(0.3, 0.8)];
        let a = conn.eval(&z, &[0]).unwrap();
        assert!(max_abs(&(&a[0] - &expect / z[0])) < 1e-15);
        assert!(conn.has_expected_shape());
    }

    #[test]
    fn swapped_ordering_same_for_symmetric_sum() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 1, TwistedSlotSpec::Trivial);
        let a = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        let b = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Swapped).unwrap();
        assert!(max_abs(&(&a.slot_ops[0] - &b.slot_ops[0])) < 1e-15);
    }

    #[test]
    fn symmetry_and_shape_two_points() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 2, TwistedSlotSpec::Trivial);
        let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        assert!(omega.symmetry_deviation(&aut) < 1e-12);
        let conn = assemble_connection(&omega, &aut, meta(omega.dims.clone())).unwrap();
        assert!(conn.has_expected_shape());
        for m in &conn.a {
            assert_eq!(m.degree(), Some(r(-1, 1)));
        }
    }

    #[test]
    fn classical_pair_operator_spectrum() {
        let (alg, aut, slots) = sl2_setup(r(0, 1), 2, TwistedSlotSpec::Trivial);
        let k = 1.0;
        let omega = build_omega_set(&alg, &aut, real(k), &slots, OperatorOrdering::Displayed).unwrap();
        let total: CMatrix = omega.pair_ops[0][1].iter().fold(CMatrix::zeros(4, 4), |acc, m| acc + m);
        let mut eig: Vec<f64> = total.symmetric_eigenvalues().iter().map(|x| x * (k + 2.0)).collect();
        eig.sort_by(f64::total_cmp);
        let expect = [-1.5, 0.5, 0.5, 0.5];
        for (a, b) in eig.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{eig:?}");
        }
        assert!(omega.slot_ops.iter().all(|m| max_abs(m) == 0.0));
    }

    #[test]
    fn classical_path_matches() {
        let (alg, aut, slots) = sl2_setup(r(0, 1), 2, TwistedSlotSpec::Restrict(build_irrep_sl2(r(1, 2)).unwrap()));
        let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        let twisted = assemble_connection(&omega, &aut, meta(omega.dims.clone())).unwrap();
        let classical = classical_connection(&alg, real(1.0), &slots, meta(omega.dims.clone())).unwrap();
        for (a, b) in twisted.a.iter().zip(&classical.a) {
            assert!(a.approx_eq(b, 1e-14));
        }
    }

    #[test]
    fn critical_level_rejected() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 1, TwistedSlotSpec::Trivial);
        assert!(matches!(
            build_omega_set(&alg, &aut, real(-2.0), &slots, OperatorOrdering::Displayed),
            Err(Error::CriticalLevel { .. })
        ));
    }

    #[test]
    fn euler_and_flatness_single_point() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 1, TwistedSlotSpec::Trivial);
        let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        let conn = assemble_connection(&omega, &aut, meta(omega.dims.clone())).unwrap();
        let rep = euler_contraction(&conn, &[vec![c(2.0, 1.0)], vec![c(-0.5, 0.1)]], &[vec![0], vec![3]]).unwrap();
        assert!(rep.deviation < 1e-15);
        assert!(max_abs(&(&rep.mean + CMatrix::identity(2, 2) / real(6.0))) < 1e-15);
        let flat = flatness_residual(&conn, &[c(2.0, 1.0)], &[0]).unwrap();
        assert_eq!(flat.residual, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let (alg, aut, slots) = sl2_setup(r(1, 2), 2, TwistedSlotSpec::Trivial);
        let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
        let conn = assemble_connection(&omega, &aut, meta(omega.dims.clone())).unwrap();
        let text = serde_json::to_string(&conn).unwrap();
        let back: ConnectionSystem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, conn);
    }
}
