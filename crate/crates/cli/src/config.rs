//! Run configuration: the JSON document that drives every stage.

use std::path::PathBuf;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use tkz_core::autmod::{twisted_slot_rep, AutomorphismData, TwistedSlotSpec};
use tkz_core::connection::{
    assemble_connection, build_omega_set, classical_connection, ConnectionMetadata, ConnectionSystem, OmegaSet,
    OperatorOrdering, SlotReps,
};
use tkz_core::liealg::{build_algebra, build_irrep_sl2, AlgebraSpec, LieAlgebraData, ModuleRep};
use tkz_core::linalg::CMatrix;
use tkz_core::serial::{matrix_from_json, JsonRational};
use tkz_core::singular::{ChangeOfVariables, Delta};
use tkz_core::transport::PathSpec;
use tkz_core::{Error, Result};

pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

/// Level `k`, either exact or complex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelSpec {
    Exact(JsonRational),
    Complex([f64; 2]),
    Real(f64),
}

impl LevelSpec {
    pub fn value(&self) -> Result<C> {
        match *self {
            LevelSpec::Exact(r) => {
                if r.den == 0 {
                    return Err(Error::Config("level has zero denominator".into()));
                }
                Ok(C::new(r.num as f64 / r.den as f64, 0.0))
            }
            LevelSpec::Complex([re, im]) => Ok(C::new(re, im)),
            LevelSpec::Real(x) => Ok(C::new(x, 0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AutomorphismSpec {
    #[default]
    Identity,
    /// `Ad exp(2πi H)` with `H` taking these values on the simple roots.
    Inner { fractions: Vec<JsonRational> },
    Matrix { matrix: JsonMatrix },
}

/// A representation of the whole algebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModuleSpec {
    Trivial,
    /// Irreducible sl(2) module of the given spin.
    Spin { spin: JsonRational },
    /// One matrix per basis vector of the algebra.
    Matrices { dim: usize, matrices: Vec<JsonMatrix> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexedMatrix {
    pub index: usize,
    pub matrix: JsonMatrix,
}

/// What sits in the twisted slot (the slot at the origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TwistedSpec {
    Trivial,
    /// Matrices for the fixed-subalgebra eigenbasis indices.
    Matrices { dim: usize, entries: Vec<IndexedMatrix> },
    /// Restriction of a module of the whole algebra.
    Restrict { module: ModuleSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotsSpec {
    pub untwisted: Vec<ModuleSpec>,
    pub twisted: TwistedSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    pub flatness_points: usize,
    pub euler_points: usize,
    pub seed: u64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec { flatness_points: 10, euler_points: 20, seed: 0 }
    }
}

/// `ζ_j = Σ_ℓ forms[j][ℓ] z_ℓ − beta[j]`, `ζ_j = η_j^{±t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub forms: JsonMatrix,
    pub beta: Vec<[f64; 2]>,
    pub delta: Vec<Delta>,
    #[serde(default)]
    pub branches: Option<Vec<i64>>,
    /// Exclusive per-variable cutoffs in units of `η`.
    pub cutoffs: Vec<JsonRational>,
}

impl ChangeSpec {
    pub fn build(&self, t: u32) -> Result<ChangeOfVariables> {
        let forms = to_matrix(&self.forms, "change forms")?;
        let beta = self.beta.iter().map(|&[re, im]| C::new(re, im)).collect();
        ChangeOfVariables::new(forms.transpose(), beta, self.delta.clone(), t, self.branches.clone())
    }

    pub fn cutoffs(&self) -> Result<Vec<Rational64>> {
        self.cutoffs.iter().map(|r| rational(*r)).collect()
    }

    pub fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("change{}", index + 1))
    }
}

/// Path in `η` along which the local solution is compared with transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSpec {
    /// Values of the expansion coordinate; the others stay at `at`.
    pub path: Vec<[f64; 2]>,
}

/// A local solve along one coordinate of a change of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSpec {
    /// Index into `changes`, from 0.
    pub change: usize,
    /// Expansion coordinate, from 1.
    pub component: usize,
    /// Values of the other `η` coordinates (the entry for `component` is ignored).
    pub at: Vec<[f64; 2]>,
    #[serde(default)]
    pub branches: Option<Vec<i64>>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default, rename = "match")]
    pub matching: Option<MatchSpec>,
}

fn default_order() -> usize {
    tkz_core::frobenius::DEFAULT_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub transport: f64,
    pub prune: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { transport: 1e-11, prune: tkz_core::singular::DEFAULT_PRUNE_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub report: Option<PathBuf>,
    pub connection: Option<PathBuf>,
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// For example `"sl(2)"`.
    pub algebra: String,
    pub level: LevelSpec,
    #[serde(default)]
    pub automorphism: AutomorphismSpec,
    /// Number of untwisted insertion points.
    pub n: usize,
    /// Build the untwisted connection directly, with the origin slot carrying
    /// a module of the whole algebra.
    #[serde(default)]
    pub classical: bool,
    #[serde(default)]
    pub ordering: OperatorOrdering,
    #[serde(default = "one")]
    pub passive_dim: usize,
    pub slots: SlotsSpec,
    #[serde(default)]
    pub checks: CheckSpec,
    #[serde(default)]
    pub changes: Vec<ChangeSpec>,
    #[serde(default)]
    pub local: Vec<LocalSpec>,
    #[serde(default)]
    pub paths: Vec<PathSpec>,
    #[serde(default)]
    pub loops: Vec<PathSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

pub fn rational(r: JsonRational) -> Result<Rational64> {
    if r.den == 0 {
        return Err(Error::Config(format!("rational {}/0 has zero denominator", r.num)));
    }
    Ok(Rational64::new(r.num, r.den))
}

pub fn to_matrix(rows: &JsonMatrix, what: &str) -> Result<CMatrix> {
    matrix_from_json(rows).map_err(|e| Error::Config(format!("{what}: {e}")))
}

pub fn to_complex(v: &[[f64; 2]]) -> Vec<C> {
    v.iter().map(|&[re, im]| C::new(re, im)).collect()
}

/// Everything built from the algebraic part of a configuration.
pub struct Built {
    pub algebra: LieAlgebraData,
    pub automorphism: AutomorphismData,
    pub omega: Option<OmegaSet>,
    pub connection: ConnectionSystem,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-reference checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.slots.untwisted.len() != self.n {
            return Err(Error::Config(format!(
                "{} untwisted slot specs supplied for n = {}",
                self.slots.untwisted.len(),
                self.n
            )));
        }
        if self.passive_dim == 0 {
            return Err(Error::Config("passive_dim must be positive".into()));
        }
        for (k, ch) in self.changes.iter().enumerate() {
            let n = self.n;
            if ch.forms.len() != n || ch.forms.iter().any(|r| r.len() != n) {
                return Err(Error::Config(format!("change {} needs an {n}x{n} matrix of forms", k + 1)));
            }
            if ch.beta.len() != n || ch.delta.len() != n || ch.cutoffs.len() != n {
                return Err(Error::Config(format!("change {} needs {n} beta, delta and cutoff entries", k + 1)));
            }
        }
        for (k, loc) in self.local.iter().enumerate() {
            if loc.change >= self.changes.len() {
                return Err(Error::Config(format!("local solve {} refers to missing change {}", k + 1, loc.change)));
            }
            if loc.component == 0 || loc.component > self.n || loc.at.len() != self.n {
                return Err(Error::Config(format!("local solve {} has a bad component or point", k + 1)));
            }
        }
        for p in self.paths.iter().chain(&self.loops) {
            if p.vertices.iter().any(|v| v.len() != self.n) || p.branch_start.len() != self.n {
                return Err(Error::Config(format!("paths must have {} coordinates per vertex", self.n)));
            }
        }
        if !(self.tolerances.transport > 0.0) || !(self.tolerances.prune >= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn level(&self) -> Result<C> {
        self.level.value()
    }

    pub fn algebra_spec(&self) -> Result<AlgebraSpec> {
        self.algebra.parse()
    }

    pub fn build(&self) -> Result<Built> {
        let algebra = build_algebra(&self.algebra_spec()?)?;
        let level = self.level()?;
        let automorphism = match &self.automorphism {
            AutomorphismSpec::Identity => {
                let rank = algebra.roots.as_ref().and_then(|r| r.first()).map_or(0, Vec::len);
                if rank > 0 {
                    AutomorphismData::inner(&algebra, &vec![Rational64::from(0); rank])?
                } else {
                    AutomorphismData::from_matrix(&algebra, CMatrix::identity(algebra.dim, algebra.dim))?
                }
            }
            AutomorphismSpec::Inner { fractions } => {
                let fr = fractions.iter().map(|r| rational(*r)).collect::<Result<Vec<_>>>()?;
                AutomorphismData::inner(&algebra, &fr)?
            }
            AutomorphismSpec::Matrix { matrix } => AutomorphismData::from_matrix(&algebra, to_matrix(matrix, "automorphism")?)?,
        };
        let untwisted = self.slots.untwisted.iter().map(|m| module(&algebra, m)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = untwisted.iter().map(|r| r.weight_label.clone().unwrap_or_default()).collect();
        if self.classical {
            if !automorphism.is_identity() {
                return Err(Error::Config("a classical run requires the identity automorphism".into()));
            }
            let origin = match &self.slots.twisted {
                TwistedSpec::Trivial => ModuleRep::trivial(algebra.dim),
                TwistedSpec::Restrict { module: m } => module(&algebra, m)?,
                TwistedSpec::Matrices { .. } => {
                    return Err(Error::Config("the origin slot of a classical run must be a module of the whole algebra".into()))
                }
            };
            let slots = SlotReps { passive_dim: self.passive_dim, untwisted, twisted: origin };
            let meta = self.metadata(&slots, labels, 1);
            let connection = classical_connection(&algebra, level, &slots, meta)?;
            return Ok(Built { algebra, automorphism, omega: None, connection });
        }
        let twisted_spec = match &self.slots.twisted {
            TwistedSpec::Trivial => TwistedSlotSpec::Trivial,
            TwistedSpec::Matrices { dim, entries } => TwistedSlotSpec::Matrices {
                dim: *dim,
                entries: entries
                    .iter()
                    .map(|e| Ok((e.index, to_matrix(&e.matrix, "twisted slot matrix")?)))
                    .collect::<Result<_>>()?,
            },
            TwistedSpec::Restrict { module: m } => TwistedSlotSpec::Restrict(module(&algebra, m)?),
        };
        let twisted = twisted_slot_rep(&algebra, &automorphism, &twisted_spec)?;
        let slots = SlotReps { passive_dim: self.passive_dim, untwisted, twisted };
        let omega = build_omega_set(&algebra, &automorphism, level, &slots, self.ordering)?;
        let meta = self.metadata(&slots, labels, automorphism.order);
        let connection = assemble_connection(&omega, &automorphism, meta)?;
        Ok(Built { algebra, automorphism, omega: Some(omega), connection })
    }

    fn metadata(&self, slots: &SlotReps, mut labels: Vec<String>, order: u32) -> ConnectionMetadata {
        labels.push(slots.twisted.weight_label.clone().unwrap_or_default());
        ConnectionMetadata {
            algebra: self.algebra.clone(),
            level: self.level().unwrap_or_default(),
            dims: slots.dims(),
            slot_labels: labels,
            ordering: self.ordering,
            automorphism_order: order,
        }
    }
}

pub fn module(alg: &LieAlgebraData, spec: &ModuleSpec) -> Result<ModuleRep> {
    match spec {
        ModuleSpec::Trivial => Ok(ModuleRep::trivial(alg.dim)),
        ModuleSpec::Spin { spin } => {
            if alg.dim != 3 {
                return Err(Error::Config("spin modules are only available for sl(2)".into()));
            }
            build_irrep_sl2(rational(*spin)?)
        }
        ModuleSpec::Matrices { dim, matrices } => {
            let mats = matrices.iter().map(|m| to_matrix(m, "module matrix")).collect::<Result<Vec<_>>>()?;
            ModuleRep::validated(alg, *dim, mats)
        }
    }
}
