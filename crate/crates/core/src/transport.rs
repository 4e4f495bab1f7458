//! Parallel transport of solutions along polylines, monodromy around loops,
//! and comparison of transported solutions with local series solutions.
//!
//! Transport solves `dψ/ds = (Σ_ℓ A_ℓ(x(s)) ẋ_ℓ(s)) ψ` with an adaptive
//! Dormand–Prince 5(4) integrator. Logarithms of every multivalued quantity
//! are followed continuously along the path; discrete branch indices are only
//! read off at the endpoints.

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::connection::ConnectionSystem;
use crate::error::{Error, Result};
use crate::frobenius::{eval_solution_log, FrobeniusSolution, LocalSystem};
use crate::linalg::{branch_index, branch_log, checked_inverse, frobenius, max_abs, real, CMatrix, CVector, ZERO};
use crate::rcalc::pairs;
use crate::serial;
use crate::singular::ChangeOfVariables;

/// A flat connection in path coordinates `x`, with the multivalued quantities
/// its coefficients depend on.
pub trait PathConnection: Sync {
    fn nvars(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// Names of the quantities whose arguments are followed along a path.
    fn tracked_names(&self) -> Vec<String>;
    fn tracked(&self, x: &[C]) -> Vec<C>;
    /// Logarithms of the tracked quantities at a starting point, given the
    /// logarithms of the coordinates themselves.
    fn initial_logs(&self, x: &[C], coord_logs: &[C]) -> Result<Vec<C>>;
    /// Distance to the nearest singular component, and its name.
    fn singular_distance(&self, x: &[C]) -> (f64, String);
    /// `A_ℓ(x)` for every coordinate, given logs of the tracked quantities.
    fn matrices(&self, x: &[C], logs: &[C]) -> Result<Vec<CMatrix>>;
}

impl PathConnection for ConnectionSystem {
    fn nvars(&self) -> usize {
        self.n
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn tracked_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n).map(|l| format!("z{}", l + 1)).collect();
        names.extend(pairs(self.n).into_iter().map(|(a, b)| format!("z{}-z{}", a + 1, b + 1)));
        names
    }

    fn tracked(&self, x: &[C]) -> Vec<C> {
        let mut out = x.to_vec();
        out.extend(pairs(self.n).into_iter().map(|(a, b)| x[a] - x[b]));
        out
    }

    fn initial_logs(&self, x: &[C], coord_logs: &[C]) -> Result<Vec<C>> {
        let mut out = coord_logs.to_vec();
        out.extend(pairs(self.n).into_iter().map(|(a, b)| branch_log(x[a] - x[b], 0)));
        Ok(out)
    }

    fn singular_distance(&self, x: &[C]) -> (f64, String) {
        let mut best = (f64::INFINITY, String::new());
        for (l, z) in x.iter().enumerate() {
            if z.norm() < best.0 {
                best = (z.norm(), format!("z{}", l + 1));
            }
        }
        for (a, b) in pairs(self.n) {
            let d = (x[a] - x[b]).norm() / std::f64::consts::SQRT_2;
            if d < best.0 {
                best = (d, format!("z{}-z{}", a + 1, b + 1));
            }
        }
        best
    }

    fn matrices(&self, x: &[C], logs: &[C]) -> Result<Vec<CMatrix>> {
        self.eval_logs(x, &logs[..self.n])
    }
}

/// `η ψ' = H(η) ψ` viewed as a connection `A(η) = H(η)/η` on the punctured
/// disc of convergence.
pub struct LocalPath<'a> {
    pub system: &'a LocalSystem,
}

impl PathConnection for LocalPath<'_> {
    fn nvars(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.system.dim()
    }

    fn tracked_names(&self) -> Vec<String> {
        vec!["eta".into()]
    }

    fn tracked(&self, x: &[C]) -> Vec<C> {
        x.to_vec()
    }

    fn initial_logs(&self, _x: &[C], coord_logs: &[C]) -> Result<Vec<C>> {
        Ok(coord_logs.to_vec())
    }

    fn singular_distance(&self, x: &[C]) -> (f64, String) {
        let r = x[0].norm();
        let edge = self.system.radius - r;
        if r <= edge {
            (r, "eta".into())
        } else {
            (edge, "boundary of the convergence disc".into())
        }
    }

    fn matrices(&self, x: &[C], _logs: &[C]) -> Result<Vec<CMatrix>> {
        if x[0] == ZERO {
            return Err(Error::SingularPoint { factor: "eta".into() });
        }
        Ok(vec![self.system.eval(x[0]) / x[0]])
    }
}

/// A connection pulled back to the coordinates `η` of a change of variables:
/// `Ã_j(η) = Σ_ℓ A_ℓ(z(η)) ∂z_ℓ/∂η_j`.
pub struct PulledBack<'a> {
    pub conn: &'a ConnectionSystem,
    pub change: &'a ChangeOfVariables,
}

impl PulledBack<'_> {
    /// `∂ζ_j/∂η_j`.
    fn jacobian(&self, eta: &[C]) -> Vec<C> {
        (0..eta.len())
            .map(|j| {
                let e = self.change.eta_exponent(j);
                eta[j].powi((e - 1) as i32) * e as f64
            })
            .collect()
    }
}

impl PathConnection for PulledBack<'_> {
    fn nvars(&self) -> usize {
        self.conn.n
    }

    fn state_dim(&self) -> usize {
        self.conn.state_dim
    }

    fn tracked_names(&self) -> Vec<String> {
        self.conn.tracked_names()
    }

    fn tracked(&self, x: &[C]) -> Vec<C> {
        self.conn.tracked(&self.change.z_from_eta(x))
    }

    fn initial_logs(&self, x: &[C], coord_logs: &[C]) -> Result<Vec<C>> {
        let z = self.change.z_from_eta(x);
        let mut out = self.change.z_logs(x, coord_logs)?;
        out.extend(pairs(self.conn.n).into_iter().map(|(a, b)| branch_log(z[a] - z[b], 0)));
        Ok(out)
    }

    fn singular_distance(&self, x: &[C]) -> (f64, String) {
        let n = self.conn.n;
        let z = self.change.z_from_eta(x);
        let jac = self.jacobian(x);
        let b = &self.change.b;
        let mut best = (f64::INFINITY, String::new());
        for (j, e) in x.iter().enumerate() {
            if e.norm() < best.0 {
                best = (e.norm(), format!("eta{}", j + 1));
            }
        }
        // first-order distance |f| / |∇_η f| for every singular form f
        let mut consider = |value: C, grad: Vec<C>, name: String| {
            let g = grad.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let d = if g > 0.0 { value.norm() / g } else { f64::INFINITY };
            if d < best.0 {
                best = (d, name);
            }
        };
        for l in 0..n {
            consider(z[l], (0..n).map(|j| b[(j, l)] * jac[j]).collect(), format!("z{}", l + 1));
        }
        for (a, c) in pairs(n) {
            consider(
                z[a] - z[c],
                (0..n).map(|j| (b[(j, a)] - b[(j, c)]) * jac[j]).collect(),
                format!("z{}-z{}", a + 1, c + 1),
            );
        }
        best
    }

    fn matrices(&self, x: &[C], logs: &[C]) -> Result<Vec<CMatrix>> {
        let n = self.conn.n;
        let z = self.change.z_from_eta(x);
        let a = self.conn.eval_logs(&z, &logs[..n])?;
        let jac = self.jacobian(x);
        Ok((0..n)
            .map(|j| {
                let mut m = CMatrix::zeros(self.conn.state_dim, self.conn.state_dim);
                for (l, al) in a.iter().enumerate() {
                    let d = self.change.b[(j, l)] * jac[j];
                    if d != ZERO {
                        m += al * d;
                    }
                }
                m
            })
            .collect())
    }
}

/// A polyline in path coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(with = "vertex_list")]
    pub vertices: Vec<Vec<C>>,
    /// Branch index `p` of `l_p(x_ℓ)` for every coordinate at the first vertex.
    pub branch_start: Vec<i64>,
    #[serde(default)]
    pub avoid_margin: f64,
}

mod vertex_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<C>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = v.iter().map(|p| p.iter().map(|z| [z.re, z.im]).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<C>>, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|p| p.into_iter().map(|[re, im]| C::new(re, im)).collect()).collect())
    }
}

impl PathSpec {
    pub fn new(vertices: Vec<Vec<C>>, branch_start: Vec<i64>, avoid_margin: f64) -> Self {
        PathSpec { vertices, branch_start, avoid_margin }
    }

    /// Straight segment from `a` to `b` on the principal branches.
    pub fn segment(a: Vec<C>, b: Vec<C>) -> Self {
        let n = a.len();
        PathSpec { vertices: vec![a, b], branch_start: vec![0; n], avoid_margin: 0.0 }
    }

    /// Closed polygon approximating the circle `center + radius e^{iθ}` in
    /// coordinate `j` (counterclockwise when `turns > 0`), other coordinates
    /// held at `base`.
    pub fn circle(base: &[C], j: usize, center: C, radius: f64, turns: i32, sides: usize) -> Self {
        let total = sides * turns.unsigned_abs() as usize;
        let dir = f64::from(turns.signum());
        let vertices = (0..=total)
            .map(|k| {
                let theta = dir * std::f64::consts::TAU * (k % sides) as f64 / sides as f64;
                let mut v = base.to_vec();
                v[j] = center + C::from_polar(radius, theta);
                v
            })
            .collect();
        PathSpec { vertices, branch_start: vec![0; base.len()], avoid_margin: 0.0 }
    }

    pub fn is_closed(&self) -> bool {
        match (self.vertices.first(), self.vertices.last()) {
            (Some(a), Some(b)) if self.vertices.len() > 1 => {
                a.iter().zip(b).all(|(x, y)| (x - y).norm() <= 1e-12 * (1.0 + x.norm()))
            }
            _ => false,
        }
    }

    /// This path followed by `other`, which must start where this one ends.
    pub fn concat(&self, other: &PathSpec) -> Result<PathSpec> {
        let (Some(end), Some(start)) = (self.vertices.last(), other.vertices.first()) else {
            return Err(Error::Config("cannot concatenate an empty path".into()));
        };
        if end.iter().zip(start).any(|(x, y)| (x - y).norm() > 1e-12 * (1.0 + x.norm())) {
            return Err(Error::Config("paths do not meet".into()));
        }
        let mut vertices = self.vertices.clone();
        vertices.extend(other.vertices.iter().skip(1).cloned());
        Ok(PathSpec { vertices, branch_start: self.branch_start.clone(), avoid_margin: self.avoid_margin.max(other.avoid_margin) })
    }

    /// The same polyline traversed backwards, starting on `branch_start`.
    pub fn reversed(&self, branch_start: Vec<i64>) -> PathSpec {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        PathSpec { vertices, branch_start, avoid_margin: self.avoid_margin }
    }

    fn validate(&self, conn: &dyn PathConnection) -> Result<()> {
        let n = conn.nvars();
        if self.vertices.len() < 2 {
            return Err(Error::Config("a path needs at least two vertices".into()));
        }
        if self.vertices.iter().any(|v| v.len() != n) || self.branch_start.len() != n {
            return Err(Error::Shape(format!("path vertices and branch tuple must have {n} coordinates")));
        }
        if self.vertices.iter().flatten().any(|z| !z.is_finite()) || !(self.avoid_margin >= 0.0) {
            return Err(Error::Config("path vertices and margin must be finite".into()));
        }
        // sample every segment densely enough to catch a crossing of the locus
        for w in self.vertices.windows(2) {
            let len = w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>().sqrt();
            let mut s = 0.0;
            while s <= 1.0 {
                let x: Vec<C> = w[0].iter().zip(&w[1]).map(|(a, b)| a + (b - a) * s).collect();
                let (d, name) = conn.singular_distance(&x);
                if !(d > self.avoid_margin) || d == 0.0 {
                    return Err(Error::Proximity { component: name, distance: d });
                }
                if len == 0.0 {
                    break;
                }
                s += (0.25 * d / len).max(1e-6);
            }
        }
        Ok(())
    }
}

/// Outcome of transporting one vector.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub psi: CVector,
    /// Accumulated local error estimates.
    pub est_error: f64,
    pub steps: usize,
    pub rejected: usize,
    /// Final vertex of the path.
    pub end: Vec<C>,
    /// Continuous logarithms of the coordinates at the end of the path.
    pub coord_logs: Vec<C>,
    /// Continuous logarithms of the tracked quantities at the end of the path.
    pub tracked_logs: Vec<C>,
}

impl PathResult {
    pub fn coord_branches(&self) -> Vec<i64> {
        self.end.iter().zip(&self.coord_logs).map(|(z, l)| branch_index(*z, *l)).collect()
    }
}

/// End-of-path branch of one tracked quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub name: String,
    pub branch: i64,
    #[serde(with = "serial::complex")]
    pub log: C,
}

pub fn branch_states(conn: &dyn PathConnection, end: &[C], logs: &[C]) -> Vec<BranchState> {
    conn.tracked_names()
        .into_iter()
        .zip(conn.tracked(end))
        .zip(logs)
        .map(|((name, w), &log)| BranchState { name, branch: branch_index(w, log), log })
        .collect()
}

const A21: f64 = 1.0 / 5.0;
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B5: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const ERR: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
const NODES: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const MIN_STEP: f64 = 1e-12;
const MAX_STEPS: usize = 2_000_000;

/// Logarithm continuation from `(w0, log0)` to `w`; `None` when the argument
/// jumps too far to be followed reliably.
fn continue_log(w0: C, log0: C, w: C) -> Option<C> {
    if w == ZERO {
        return None;
    }
    let step = (w / w0).ln();
    (step.im.abs() < std::f64::consts::FRAC_PI_2).then_some(log0 + step)
}

struct Segment<'a> {
    conn: &'a dyn PathConnection,
    start: &'a [C],
    dir: Vec<C>,
}

impl Segment<'_> {
    fn point(&self, s: f64) -> Vec<C> {
        self.start.iter().zip(&self.dir).map(|(a, d)| a + d * s).collect()
    }

    /// The coefficient matrix `Σ_ℓ A_ℓ ẋ_ℓ` at `s`, with logs continued from
    /// the reference point; `None` asks for a smaller step.
    fn generator(&self, s: f64, reference: &(Vec<C>, Vec<C>, Vec<C>)) -> Result<Option<(CMatrix, Vec<C>, Vec<C>)>> {
        let x = self.point(s);
        let (ref_coords, ref_coord_logs, ref_logs) = reference;
        let ref_tracked = self.conn.tracked(ref_coords);
        let tracked = self.conn.tracked(&x);
        let mut logs = Vec::with_capacity(tracked.len());
        for ((w0, l0), w) in ref_tracked.iter().zip(ref_logs).zip(&tracked) {
            match continue_log(*w0, *l0, *w) {
                Some(l) => logs.push(l),
                None => return Ok(None),
            }
        }
        let mut coord_logs = Vec::with_capacity(x.len());
        for ((w0, l0), w) in ref_coords.iter().zip(ref_coord_logs).zip(&x) {
            match continue_log(*w0, *l0, *w) {
                Some(l) => coord_logs.push(l),
                None => return Ok(None),
            }
        }
        let mats = self.conn.matrices(&x, &logs)?;
        let dim = self.conn.state_dim();
        let mut g = CMatrix::zeros(dim, dim);
        for (m, d) in mats.iter().zip(&self.dir) {
            if *d != ZERO {
                g += m * *d;
            }
        }
        Ok(Some((g, coord_logs, logs)))
    }
}

/// Transport `psi0` along the path with local error at most `tol` per step.
pub fn integrate_path(conn: &dyn PathConnection, path: &PathSpec, psi0: &CVector, tol: f64) -> Result<PathResult> {
    path.validate(conn)?;
    if psi0.len() != conn.state_dim() {
        return Err(Error::Shape(format!("initial vector has length {}, expected {}", psi0.len(), conn.state_dim())));
    }
    if psi0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial vector must be finite".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let first = &path.vertices[0];
    let mut coord_logs: Vec<C> = first.iter().zip(&path.branch_start).map(|(z, p)| branch_log(*z, *p)).collect();
    let mut logs = conn.initial_logs(first, &coord_logs)?;
    let mut psi = psi0.clone();
    let mut est_error = 0.0;
    let (mut steps, mut rejected) = (0usize, 0usize);
    for w in path.vertices.windows(2) {
        let seg = Segment { conn, start: &w[0], dir: w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect() };
        let speed = seg.dir.iter().map(|d| d.norm_sqr()).sum::<f64>().sqrt();
        if speed == 0.0 {
            continue;
        }
        let mut s = 0.0;
        let mut h = 0.05f64.min(0.5 * conn.singular_distance(&w[0]).0 / speed);
        let mut reference = (w[0].clone(), coord_logs.clone(), logs.clone());
        let mut k1 = match seg.generator(0.0, &reference)? {
            Some((g, _, _)) => &g * &psi,
            None => return Err(Error::Internal("logarithm continuation failed at a path vertex".into())),
        };
        while s < 1.0 {
            if steps + rejected > MAX_STEPS {
                let (d, name) = conn.singular_distance(&seg.point(s));
                return Err(Error::Proximity { component: name, distance: d });
            }
            let (dist, name) = conn.singular_distance(&seg.point(s));
            if !(dist > path.avoid_margin) {
                return Err(Error::Proximity { component: name, distance: dist });
            }
            h = h.min(0.5 * dist / speed).min(1.0 - s);
            if h < MIN_STEP {
                return Err(Error::Proximity { component: name, distance: dist });
            }
            match dopri_step(&seg, s, h, &psi, &k1, &reference)? {
                StepOutcome::Retry => {
                    rejected += 1;
                    h *= 0.5;
                }
                StepOutcome::Done { y, err, k_last, end_logs, end_coord_logs } => {
                    let scale = psi.iter().chain(y.iter()).map(|v| v.norm()).fold(1.0, f64::max);
                    let ratio = err / (tol * scale);
                    if ratio <= 1.0 {
                        s += h;
                        psi = y;
                        k1 = k_last;
                        est_error += err;
                        steps += 1;
                        reference = (seg.point(s), end_coord_logs, end_logs);
                    } else {
                        rejected += 1;
                    }
                    let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                    h *= factor;
                }
            }
        }
        coord_logs = reference.1;
        logs = reference.2;
    }
    log::debug!("transport finished in {steps} steps ({rejected} rejected), est_error {est_error:.3e}");
    let end = path.vertices.last().unwrap().clone();
    Ok(PathResult { psi, est_error, steps, rejected, end, coord_logs, tracked_logs: logs })
}

enum StepOutcome {
    Retry,
    Done { y: CVector, err: f64, k_last: CVector, end_logs: Vec<C>, end_coord_logs: Vec<C> },
}

fn dopri_step(
    seg: &Segment,
    s: f64,
    h: f64,
    y: &CVector,
    k1: &CVector,
    reference: &(Vec<C>, Vec<C>, Vec<C>),
) -> Result<StepOutcome> {
    let hc = real(h);
    let mut ks: Vec<CVector> = vec![k1.clone()];
    let rows: [&[f64]; 5] = [&[A21], &A3, &A4, &A5, &A6];
    for (stage, row) in rows.iter().enumerate() {
        let mut arg = y.clone();
        for (a, k) in row.iter().zip(&ks) {
            if *a != 0.0 {
                arg += k * (hc * *a);
            }
        }
        match seg.generator(s + NODES[stage + 1] * h, reference)? {
            Some((g, _, _)) => ks.push(&g * arg),
            None => return Ok(StepOutcome::Retry),
        }
    }
    let mut y5 = y.clone();
    for (b, k) in B5.iter().zip(&ks) {
        if *b != 0.0 {
            y5 += k * (hc * *b);
        }
    }
    let Some((g, end_coord_logs, end_logs)) = seg.generator(s + h, reference)? else {
        return Ok(StepOutcome::Retry);
    };
    let k7 = &g * &y5;
    let mut e = CVector::zeros(y.len());
    for (c, k) in ERR.iter().zip(ks.iter().chain(std::iter::once(&k7))) {
        if *c != 0.0 {
            e += k * (hc * *c);
        }
    }
    let err = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !err.is_finite() || y5.iter().any(|v| !v.is_finite()) {
        return Ok(StepOutcome::Retry);
    }
    Ok(StepOutcome::Done { y: y5, err, k_last: k7, end_logs, end_coord_logs })
}

/// Transport of every column of `psi0`, columns processed in parallel and
/// assembled in order.
#[derive(Debug, Clone)]
pub struct MatrixTransport {
    pub value: CMatrix,
    pub est_error: f64,
    pub end: Vec<C>,
    pub coord_logs: Vec<C>,
    pub tracked_logs: Vec<C>,
}

impl MatrixTransport {
    pub fn coord_branches(&self) -> Vec<i64> {
        self.end.iter().zip(&self.coord_logs).map(|(z, l)| branch_index(*z, *l)).collect()
    }
}

pub fn transport_matrix(conn: &dyn PathConnection, path: &PathSpec, psi0: &CMatrix, tol: f64) -> Result<MatrixTransport> {
    let cols: Vec<CVector> = psi0.column_iter().map(|c| c.into_owned()).collect();
    let results: Vec<Result<PathResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cols.iter().map(|c| scope.spawn(move || integrate_path(conn, path, c, tol))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("transport worker panicked".into()))))
            .collect()
    });
    let results: Vec<PathResult> = results.into_iter().collect::<Result<_>>()?;
    let Some(first) = results.first() else {
        return Err(Error::Shape("no columns to transport".into()));
    };
    let value = CMatrix::from_columns(&results.iter().map(|r| r.psi.clone()).collect::<Vec<_>>());
    Ok(MatrixTransport {
        value,
        est_error: results.iter().map(|r| r.est_error).fold(0.0, f64::max),
        end: first.end.clone(),
        coord_logs: first.coord_logs.clone(),
        tracked_logs: first.tracked_logs.clone(),
    })
}

/// Monodromy `M` of a closed loop: transported value `= M · initial value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonodromyResult {
    #[serde(rename = "loop")]
    pub loop_path: PathSpec,
    #[serde(with = "serial::matrix")]
    pub matrix: CMatrix,
    /// Difference from the same computation with half the step sizes.
    pub est_error: f64,
    #[serde(with = "serial::complex")]
    pub determinant: C,
    pub end_branches: Vec<i64>,
    pub tracked: Vec<BranchState>,
}

/// Ratio by which the tolerance is lowered to halve the step sizes of a
/// fifth-order method.
const HALVING_RATIO: f64 = 32.0;

pub fn monodromy_loop(conn: &dyn PathConnection, path: &PathSpec, basis_seed: &CMatrix, tol: f64) -> Result<MonodromyResult> {
    if !path.is_closed() {
        return Err(Error::Config("monodromy requires a closed loop".into()));
    }
    let n = conn.state_dim();
    if basis_seed.shape() != (n, n) {
        return Err(Error::Shape(format!("basis seed is {:?}, expected {n}x{n}", basis_seed.shape())));
    }
    let seed_inv = checked_inverse(basis_seed, "monodromy basis seed")?;
    let coarse = transport_matrix(conn, path, basis_seed, tol)?;
    let fine = transport_matrix(conn, path, basis_seed, tol / HALVING_RATIO)?;
    let m_coarse = &coarse.value * &seed_inv;
    let matrix = &fine.value * &seed_inv;
    let determinant = matrix.determinant();
    if determinant.norm() == 0.0 || !determinant.is_finite() {
        return Err(Error::Numeric("monodromy matrix is singular".into()));
    }
    Ok(MonodromyResult {
        loop_path: path.clone(),
        est_error: max_abs(&(&m_coarse - &matrix)),
        determinant,
        end_branches: fine.coord_branches(),
        tracked: branch_states(conn, &fine.end, &fine.tracked_logs),
        matrix,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchReport {
    /// `‖transported − local‖_F / ‖local‖_F` at the end of the path.
    pub residual: f64,
    pub est_error: f64,
    #[serde(with = "serial::matrix")]
    pub transported: CMatrix,
    #[serde(with = "serial::matrix")]
    pub local: CMatrix,
}

/// Transport the local fundamental matrix from the path's first vertex to its
/// last and compare with the local solution evaluated there. The local
/// solution is a series in coordinate `j`; every other coordinate must stay
/// fixed along the path.
pub fn match_local_global(
    sol: &FrobeniusSolution,
    conn: &dyn PathConnection,
    j: usize,
    path: &PathSpec,
    tol: f64,
) -> Result<MatchReport> {
    if j >= conn.nvars() || path.vertices.is_empty() {
        return Err(Error::Config("matching coordinate out of range or empty path".into()));
    }
    let anchor = &path.vertices[0];
    let end = path.vertices.last().unwrap();
    for v in &path.vertices {
        if v.iter().zip(anchor).enumerate().any(|(i, (a, b))| i != j && a != b) {
            return Err(Error::Config("only the expansion coordinate may vary along a matching path".into()));
        }
        if v[j].norm() >= sol.radius_estimate {
            return Err(Error::Domain(format!(
                "path point |eta| = {} lies outside the local solution's disc of radius {}",
                v[j].norm(),
                sol.radius_estimate
            )));
        }
    }
    let start_log = branch_log(anchor[j], path.branch_start[j]);
    let psi_a = eval_solution_log(sol, anchor[j], start_log)?.value;
    let moved = transport_matrix(conn, path, &psi_a, tol)?;
    let local = eval_solution_log(sol, end[j], moved.coord_logs[j])?.value;
    let residual = frobenius(&(&moved.value - &local)) / frobenius(&local);
    Ok(MatchReport { residual, est_error: moved.est_error, transported: moved.value, local })
}
