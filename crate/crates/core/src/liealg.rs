//! Finite-dimensional simple Lie algebras given by structure constants and an
//! invariant form, together with the finite-dimensional representations that
//! serve as slot state spaces.
//!
//! The built-in family is `sl(n)` in its Cartan–Weyl basis with the trace form
//! of the defining representation, so that long roots have squared length 2
//! and the dual Coxeter number is `n`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, commutator, condition_number, max_abs, real, CMatrix, CVector, ZERO};
use crate::serial;

/// Tolerance used when validating structural identities.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Which algebra to build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgebraSpec {
    pub name: String,
    pub n: usize,
}

impl AlgebraSpec {
    pub fn sl(n: usize) -> Self {
        AlgebraSpec { name: "sl".into(), n }
    }
}

impl fmt::Display for AlgebraSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.n)
    }
}

impl FromStr for AlgebraSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| Error::Config(format!("cannot parse algebra `{s}`")))?;
        if !s.ends_with(')') {
            return Err(Error::Config(format!("cannot parse algebra `{s}`")));
        }
        let name = s[..open].trim().to_lowercase();
        let n = s[open + 1..s.len() - 1]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("cannot parse algebra size in `{s}`")))?;
        Ok(AlgebraSpec { name, n })
    }
}

/// Structure constants, invariant form and bookkeeping for a Lie algebra.
#[derive(Debug, Clone)]
pub struct LieAlgebraData {
    pub name: String,
    pub dim: usize,
    pub basis_labels: Vec<String>,
    /// `c[i][j][k]` flattened, with `[a^i, a^j] = Σ_k c[i][j][k] a^k`.
    structure: Vec<C>,
    /// Gram matrix `G[i][j] = (a^i, a^j)`.
    pub form: CMatrix,
    pub dual_coxeter: Rational64,
    /// Defining-representation matrices of the basis, when known.
    pub defining: Option<Vec<CMatrix>>,
    /// Root of each basis vector in simple-root coordinates (zero for Cartan).
    pub roots: Option<Vec<Vec<i64>>>,
}

/// Maximum deviations found by [`LieAlgebraData::validate`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureReport {
    pub antisymmetry: f64,
    pub jacobi: f64,
    pub invariance: f64,
    pub form_symmetry: f64,
    pub form_condition: f64,
}

impl LieAlgebraData {
    /// Assemble from raw data and check every structural invariant.
    pub fn new(
        name: impl Into<String>,
        basis_labels: Vec<String>,
        structure: Vec<C>,
        form: CMatrix,
        dual_coxeter: Rational64,
    ) -> Result<Self> {
        let dim = basis_labels.len();
        if dim == 0 {
            return Err(Error::Config("Lie algebra must have positive dimension".into()));
        }
        if structure.len() != dim * dim * dim {
            return Err(Error::Shape(format!(
                "structure constants have {} entries, expected {}",
                structure.len(),
                dim * dim * dim
            )));
        }
        if form.shape() != (dim, dim) {
            return Err(Error::Shape(format!("form is {:?}, expected {dim}x{dim}", form.shape())));
        }
        let alg = LieAlgebraData {
            name: name.into(),
            dim,
            basis_labels,
            structure,
            form,
            dual_coxeter,
            defining: None,
            roots: None,
        };
        let report = alg.validate();
        if report.antisymmetry > STRUCTURE_TOL
            || report.jacobi > STRUCTURE_TOL
            || report.invariance > STRUCTURE_TOL
            || report.form_symmetry > STRUCTURE_TOL
        {
            return Err(Error::Config(format!("structure data violates Lie algebra invariants: {report:?}")));
        }
        if !report.form_condition.is_finite() || report.form_condition > 1e12 {
            return Err(Error::Numeric(format!(
                "invariant form is singular (condition number {:.3e})",
                report.form_condition
            )));
        }
        Ok(alg)
    }

    /// Build from a basis of matrices closed under commutators; structure
    /// constants and the trace form are computed from the matrices.
    pub fn from_matrix_basis(
        name: impl Into<String>,
        basis_labels: Vec<String>,
        matrices: Vec<CMatrix>,
        dual_coxeter: Rational64,
    ) -> Result<Self> {
        let dim = matrices.len();
        if basis_labels.len() != dim {
            return Err(Error::Shape("one label per basis matrix required".into()));
        }
        let form = CMatrix::from_fn(dim, dim, |i, j| (&matrices[i] * &matrices[j]).trace());
        let form_inv = checked_inverse(&form, "trace form")?;
        let mut structure = vec![ZERO; dim * dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let br = commutator(&matrices[i], &matrices[j]);
                let rhs = CVector::from_fn(dim, |k, _| (&matrices[k] * &br).trace());
                let coords = &form_inv * rhs;
                for k in 0..dim {
                    structure[(i * dim + j) * dim + k] = coords[k];
                }
            }
        }
        let mut alg = Self::new(name, basis_labels, structure, form, dual_coxeter)?;
        alg.defining = Some(matrices);
        Ok(alg)
    }

    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> C {
        self.structure[(i * self.dim + j) * self.dim + k]
    }

    /// Bracket of two elements given by coordinates in the basis.
    pub fn bracket(&self, x: &CVector, y: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for i in 0..self.dim {
            if x[i] == ZERO {
                continue;
            }
            for j in 0..self.dim {
                let w = x[i] * y[j];
                if w == ZERO {
                    continue;
                }
                for k in 0..self.dim {
                    out[k] += w * self.structure_constant(i, j, k);
                }
            }
        }
        out
    }

    /// The (bilinear, not sesquilinear) invariant form on coordinates.
    pub fn pairing(&self, x: &CVector, y: &CVector) -> C {
        (x.transpose() * &self.form * y)[(0, 0)]
    }

    pub fn basis_vector(&self, i: usize) -> CVector {
        let mut v = CVector::zeros(self.dim);
        v[i] = real(1.0);
        v
    }

    /// Check antisymmetry, Jacobi, form invariance and form symmetry.
    pub fn validate(&self) -> StructureReport {
        let d = self.dim;
        let mut antisymmetry: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    antisymmetry = antisymmetry
                        .max((self.structure_constant(i, j, k) + self.structure_constant(j, i, k)).norm());
                }
            }
        }
        let mut jacobi: f64 = 0.0;
        let mut invariance: f64 = 0.0;
        for i in 0..d {
            let a = self.basis_vector(i);
            for j in 0..d {
                let b = self.basis_vector(j);
                let ab = self.bracket(&a, &b);
                for k in 0..d {
                    let cc = self.basis_vector(k);
                    let bc = self.bracket(&b, &cc);
                    let ca = self.bracket(&cc, &a);
                    let jac = self.bracket(&a, &bc) + self.bracket(&b, &ca) + self.bracket(&cc, &ab);
                    jacobi = jacobi.max(jac.iter().fold(0.0, |m, z| m.max(z.norm())));
                    let ac = self.bracket(&a, &cc);
                    invariance = invariance.max((self.pairing(&ab, &cc) + self.pairing(&b, &ac)).norm());
                }
            }
        }
        let form_symmetry = max_abs(&(&self.form - self.form.transpose()));
        StructureReport {
            antisymmetry,
            jacobi,
            invariance,
            form_symmetry,
            form_condition: condition_number(&self.form),
        }
    }
}

/// Construct one of the supported algebras.
pub fn build_algebra(spec: &AlgebraSpec) -> Result<LieAlgebraData> {
    match spec.name.as_str() {
        "sl" if spec.n >= 2 => build_sl(spec.n),
        "sl" => Err(Error::Config(format!("sl(n) requires n >= 2, got {}", spec.n))),
        other => Err(Error::Config(format!("unsupported algebra `{other}`"))),
    }
}

fn unit(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = real(1.0);
    m
}

fn build_sl(n: usize) -> Result<LieAlgebraData> {
    let mut labels = Vec::new();
    let mut mats = Vec::new();
    let mut roots = Vec::new();
    let rank = n - 1;
    let positive: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let root_of = |i: usize, j: usize, sign: i64| -> Vec<i64> {
        (0..rank).map(|k| if k >= i && k < j { sign } else { 0 }).collect()
    };
    for &(i, j) in &positive {
        labels.push(if n == 2 { "e".to_string() } else { format!("e_{}{}", i + 1, j + 1) });
        mats.push(unit(n, i, j));
        roots.push(root_of(i, j, 1));
    }
    for k in 0..rank {
        labels.push(if n == 2 { "h".to_string() } else { format!("h_{}", k + 1) });
        mats.push(unit(n, k, k) - unit(n, k + 1, k + 1));
        roots.push(vec![0; rank]);
    }
    for &(i, j) in &positive {
        labels.push(if n == 2 { "f".to_string() } else { format!("f_{}{}", i + 1, j + 1) });
        mats.push(unit(n, j, i));
        roots.push(root_of(i, j, -1));
    }
    let mut alg = LieAlgebraData::from_matrix_basis(format!("sl({n})"), labels, mats, Rational64::from(n as i64))?;
    alg.roots = Some(roots);
    Ok(alg)
}

/// Dual basis `a^{i'}` with `(a^{i'}, a^j) = δ_ij`, as coordinate vectors in
/// the original basis.
pub fn dual_basis(alg: &LieAlgebraData) -> Result<Vec<CVector>> {
    let inv = checked_inverse(&alg.form, "invariant form")?;
    Ok((0..alg.dim).map(|i| inv.row(i).transpose()).collect())
}

/// A finite-dimensional representation, possibly defined only on a subset of
/// basis indices (twisted slots carry an action of the fixed subalgebra only).
#[derive(Debug, Clone)]
pub struct ModuleRep {
    pub dim: usize,
    /// `ρ(a^i)` per basis index; `None` where the action is undefined.
    pub action: Vec<Option<CMatrix>>,
    pub weight_label: Option<String>,
    pub conformal_weight: Option<C>,
}

impl ModuleRep {
    /// Representation defined on every basis index. Matrices are checked for
    /// shape only; use [`ModuleRep::check_homomorphism`] for the bracket.
    pub fn from_matrices(dim: usize, matrices: Vec<CMatrix>) -> Result<Self> {
        for (i, m) in matrices.iter().enumerate() {
            if m.shape() != (dim, dim) {
                return Err(Error::Shape(format!("action matrix {i} is {:?}, expected {dim}x{dim}", m.shape())));
            }
        }
        Ok(ModuleRep { dim, action: matrices.into_iter().map(Some).collect(), weight_label: None, conformal_weight: None })
    }

    /// The one-dimensional zero representation on `len` basis indices.
    pub fn trivial(len: usize) -> Self {
        ModuleRep {
            dim: 1,
            action: vec![Some(CMatrix::zeros(1, 1)); len],
            weight_label: Some("trivial".into()),
            conformal_weight: Some(ZERO),
        }
    }

    pub fn is_total(&self) -> bool {
        self.action.iter().all(Option::is_some)
    }

    /// `ρ(Σ_k x_k a^k)`; coordinates on undefined indices must vanish.
    pub fn act(&self, coords: &CVector) -> Result<CMatrix> {
        if coords.len() != self.action.len() {
            return Err(Error::Shape(format!(
                "element has {} coordinates but representation covers {} basis vectors",
                coords.len(),
                self.action.len()
            )));
        }
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for (k, x) in coords.iter().enumerate() {
            match &self.action[k] {
                Some(m) => {
                    if *x != ZERO {
                        out += m * *x;
                    }
                }
                None if x.norm() > 1e-9 => {
                    return Err(Error::Domain(format!(
                        "representation is undefined on basis index {k} (coefficient {x})"
                    )))
                }
                None => {}
            }
        }
        Ok(out)
    }

    /// Largest deviation of `ρ([a^i,a^j]) − [ρ(a^i), ρ(a^j)]` over basis pairs.
    pub fn check_homomorphism(&self, alg: &LieAlgebraData) -> Result<f64> {
        if self.action.len() != alg.dim || !self.is_total() {
            return Err(Error::Shape("representation must be defined on the whole algebra".into()));
        }
        let mut worst: f64 = 0.0;
        for i in 0..alg.dim {
            for j in 0..alg.dim {
                let br = alg.bracket(&alg.basis_vector(i), &alg.basis_vector(j));
                let lhs = self.act(&br)?;
                let rhs = commutator(self.action[i].as_ref().unwrap(), self.action[j].as_ref().unwrap());
                worst = worst.max(max_abs(&(lhs - rhs)));
            }
        }
        Ok(worst)
    }

    /// Validated user-supplied representation of the whole algebra.
    pub fn validated(alg: &LieAlgebraData, dim: usize, matrices: Vec<CMatrix>) -> Result<Self> {
        if matrices.len() != alg.dim {
            return Err(Error::Shape(format!("{} matrices supplied for a {}-dimensional algebra", matrices.len(), alg.dim)));
        }
        let rep = Self::from_matrices(dim, matrices)?;
        let dev = rep.check_homomorphism(alg)?;
        if dev > 1e-10 {
            return Err(Error::Config(format!("supplied matrices are not a representation (deviation {dev:.3e})")));
        }
        Ok(rep)
    }
}

#[derive(Serialize, Deserialize)]
struct ModuleRepJson {
    dim: usize,
    action: Vec<Option<Vec<Vec<[f64; 2]>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conformal_weight: Option<[f64; 2]>,
}

impl Serialize for ModuleRep {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModuleRepJson {
            dim: self.dim,
            action: self.action.iter().map(|m| m.as_ref().map(serial::matrix_to_json)).collect(),
            weight_label: self.weight_label.clone(),
            conformal_weight: self.conformal_weight.map(serial::complex_to_json),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModuleRep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ModuleRepJson::deserialize(d)?;
        let action = raw
            .action
            .iter()
            .map(|m| m.as_ref().map(|rows| serial::matrix_from_json(rows)).transpose())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(ModuleRep {
            dim: raw.dim,
            action,
            weight_label: raw.weight_label,
            conformal_weight: raw.conformal_weight.map(serial::complex_from_json),
        })
    }
}

/// `Σ_i ρ(a^i) ρ(a^{i'})`.
pub fn casimir_matrix(alg: &LieAlgebraData, rep: &ModuleRep) -> Result<CMatrix> {
    if rep.action.len() != alg.dim || !rep.is_total() {
        return Err(Error::Shape(format!(
            "representation covers {} basis vectors, algebra has dimension {}",
            rep.action.len(),
            alg.dim
        )));
    }
    let duals = dual_basis(alg)?;
    let mut cas = CMatrix::zeros(rep.dim, rep.dim);
    for (i, dual) in duals.iter().enumerate() {
        cas += rep.action[i].as_ref().unwrap() * rep.act(dual)?;
    }
    Ok(cas)
}

/// Lowest conformal weight `c_ρ / (2(k + h^∨))` of an irreducible slot.
pub fn conformal_weight(alg: &LieAlgebraData, rep: &ModuleRep, level: C) -> Result<C> {
    let shifted = level + real(*alg.dual_coxeter.numer() as f64 / *alg.dual_coxeter.denom() as f64);
    if shifted.norm() < 1e-12 {
        return Err(Error::CriticalLevel { level: format!("{level}") });
    }
    let cas = casimir_matrix(alg, rep)?;
    let scalar = cas.trace() / real(rep.dim as f64);
    let deviation = max_abs(&(&cas - CMatrix::identity(rep.dim, rep.dim) * scalar));
    if deviation > 1e-9 {
        return Err(Error::NotIrreducible { deviation });
    }
    Ok(scalar / (shifted * 2.0))
}

/// The `(2j+1)`-dimensional irreducible representation of `sl(2)` in the
/// weight basis `m = j, j-1, …, -j`, for the basis order `(e, h, f)`.
pub fn build_irrep_sl2(spin: Rational64) -> Result<ModuleRep> {
    let twice = spin * 2;
    if !twice.is_integer() || spin < Rational64::from(0) {
        return Err(Error::Config(format!("spin must be a nonnegative half-integer, got {spin}")));
    }
    let two_j = *twice.numer() as usize;
    let dim = two_j + 1;
    let j = two_j as f64 / 2.0;
    let mut e = CMatrix::zeros(dim, dim);
    let mut h = CMatrix::zeros(dim, dim);
    let mut f = CMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let m = j - idx as f64;
        h[(idx, idx)] = real(2.0 * m);
        if idx > 0 {
            // e |m> = sqrt((j-m)(j+m+1)) |m+1>
            e[(idx - 1, idx)] = real(((j - m) * (j + m + 1.0)).sqrt());
        }
        if idx + 1 < dim {
            // f |m> = sqrt((j+m)(j-m+1)) |m-1>
            f[(idx + 1, idx)] = real(((j + m) * (j - m + 1.0)).sqrt());
        }
    }
    let mut rep = ModuleRep::from_matrices(dim, vec![e, h, f])?;
    rep.weight_label = Some(format!("spin {spin}"));
    Ok(rep)
}
