//! The staged pipeline behind `tkz run`.

use std::fmt;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::Serialize;

use tkz_core::connection::{euler_contraction, flatness_residual, ConnectionSystem};
use tkz_core::frobenius::{exact_exponents, frobenius_fundamental, local_monodromy, FrobeniusSolution, LocalSystem};
use tkz_core::linalg::{eigenvalues, max_abs, CMatrix};
use tkz_core::serial::{self, JsonRational};
use tkz_core::singular::{check_simple_singularity, indicial_data, transform_system, TransformedSystem};
use tkz_core::transport::{
    branch_states, match_local_global, monodromy_loop, transport_matrix, BranchState, MatchReport, MonodromyResult,
    PathSpec, PulledBack,
};
use tkz_core::{Error, ErrorClass};

use crate::config::{to_complex, ChangeSpec, RunConfig};
use crate::output::{format_float, rng, sample_branches, sample_points, to_csv};

/// A failure tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Numeric => 3,
        ErrorClass::Inconclusive => 4,
    }
}

fn stage<T>(name: &'static str, r: tkz_core::Result<T>) -> Result<T, StageError> {
    r.map_err(|error| StageError { stage: name, error })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionSummary {
    pub n: usize,
    pub root_order: u32,
    pub state_dim: usize,
    pub dims: Vec<usize>,
    pub classical: bool,
    pub terms_per_component: Vec<usize>,
    pub degrees: Vec<Option<String>>,
    pub expected_shape: bool,
    pub symmetry_deviation: Option<f64>,
    pub equivariance_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerSummary {
    #[serde(with = "serial::matrix")]
    pub mean: CMatrix,
    pub deviation: f64,
    pub per_point: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessRow {
    #[serde(with = "serial::complex_vec")]
    pub point: Vec<C>,
    pub residual: f64,
    pub est_error: f64,
    pub worst_pair: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OffenderRow {
    pub component: usize,
    pub exponents: Vec<JsonRational>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndicialRow {
    pub component: usize,
    #[serde(with = "serial::matrix")]
    pub h0: CMatrix,
    #[serde(with = "serial::complex_vec")]
    pub exponents: Vec<C>,
    pub exact: Option<Vec<JsonRational>>,
    pub resonant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingularSummary {
    pub change: String,
    pub holomorphic: bool,
    pub offenders: Vec<OffenderRow>,
    pub min_exponents: Vec<Vec<Option<JsonRational>>>,
    pub indicial: Vec<IndicialRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalSummary {
    pub change: String,
    pub component: usize,
    pub coefficients_used: usize,
    pub solution: FrobeniusSolution,
    #[serde(with = "serial::complex_vec")]
    pub exponents: Vec<C>,
    pub exact_exponents: Vec<Option<JsonRational>>,
    #[serde(with = "serial::matrix")]
    pub monodromy: CMatrix,
    #[serde(rename = "match")]
    pub matching: Option<MatchReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSummary {
    pub path: PathSpec,
    #[serde(with = "serial::matrix")]
    pub value: CMatrix,
    pub est_error: f64,
    pub end_branches: Vec<i64>,
    pub tracked: Vec<BranchState>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CsvExports {
    pub exponents: String,
    pub flatness: String,
    pub euler: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub algebra: String,
    #[serde(with = "serial::complex")]
    pub level: C,
    pub connection: ConnectionSummary,
    pub euler: EulerSummary,
    pub flatness: Vec<FlatnessRow>,
    pub flatness_max: f64,
    pub singular: Vec<SingularSummary>,
    pub local: Vec<LocalSummary>,
    pub transports: Vec<TransportSummary>,
    pub monodromy: Vec<MonodromyResult>,
    pub csv: CsvExports,
}

/// Everything produced by a run, including the connection for export.
pub struct RunOutput {
    pub report: Report,
    pub connection: ConnectionSystem,
}

fn json_rational(r: Rational64) -> JsonRational {
    r.into()
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput, StageError> {
    stage("config", cfg.validate())?;
    let built = stage("connection", cfg.build())?;
    let conn = built.connection;
    let n = conn.n;
    log::info!("connection built: n = {n}, t = {}, state dimension {}", conn.t, conn.state_dim);

    let summary = ConnectionSummary {
        n,
        root_order: conn.t,
        state_dim: conn.state_dim,
        dims: conn.metadata.dims.clone(),
        classical: cfg.classical,
        terms_per_component: conn.a.iter().map(|m| m.terms().len()).collect(),
        degrees: conn.a.iter().map(|m| m.degree().map(|d| d.to_string())).collect(),
        expected_shape: conn.has_expected_shape(),
        symmetry_deviation: built.omega.as_ref().map(|o| o.symmetry_deviation(&built.automorphism)),
        equivariance_deviation: built.omega.as_ref().map(|o| o.equivariance_deviation),
    };

    let mut sampler = rng(cfg.checks.seed);
    let euler_points = sample_points(&mut sampler, n, cfg.checks.euler_points.max(1));
    let euler_branches = sample_branches(&mut sampler, n, euler_points.len());
    let euler = stage("euler", euler_contraction(&conn, &euler_points, &euler_branches))?;
    let per_point: Vec<f64> = euler.samples.iter().map(|s| max_abs(&(s - &euler.mean))).collect();
    log::info!("euler contraction deviation {:.3e}", euler.deviation);

    let flat_points = sample_points(&mut sampler, n, cfg.checks.flatness_points);
    let mut flatness = Vec::with_capacity(flat_points.len());
    for z in &flat_points {
        let rep = stage("flatness", flatness_residual(&conn, z, &vec![0; n]))?;
        flatness.push(FlatnessRow { point: z.clone(), residual: rep.residual, est_error: rep.est_error, worst_pair: rep.worst_pair });
    }
    let flatness_max = flatness.iter().map(|f| f.residual).fold(0.0, f64::max);
    log::info!("max flatness residual {flatness_max:.3e}");

    let mut singular = Vec::new();
    let mut transformed: Vec<TransformedSystem> = Vec::new();
    for (k, ch) in cfg.changes.iter().enumerate() {
        let cutoffs = stage("singular", ch.cutoffs())?;
        let (summary, ts) = stage("singular", analyze_change(&conn, ch, k, &cutoffs, cfg.tolerances.prune))?;
        log::info!("change {}: holomorphic = {}", summary.change, summary.holomorphic);
        singular.push(summary);
        transformed.push(ts);
    }

    let mut local = Vec::new();
    for loc in &cfg.local {
        let ts = &transformed[loc.change];
        let j = loc.component - 1;
        let at = to_complex(&loc.at);
        let branches = loc.branches.clone().unwrap_or_else(|| vec![0; n]);
        let mut summary = stage("local", solve_local(ts, j, &at, &branches, loc.order))?;
        summary.change = cfg.changes[loc.change].label(loc.change);
        if let Some(m) = &loc.matching {
            let vertices = m
                .path
                .iter()
                .map(|&[re, im]| {
                    let mut v = at.clone();
                    v[j] = C::new(re, im);
                    v
                })
                .collect();
            let path = PathSpec::new(vertices, branches.clone(), 0.0);
            let pulled = PulledBack { conn: &conn, change: &ts.change };
            let rep = stage("local", match_local_global(&summary.solution, &pulled, j, &path, cfg.tolerances.transport))?;
            log::info!("local/global residual {:.3e}", rep.residual);
            summary.matching = Some(rep);
        }
        local.push(summary);
    }

    let seed = CMatrix::identity(conn.state_dim, conn.state_dim);
    let mut transports = Vec::new();
    for path in &cfg.paths {
        let out = stage("transport", transport_matrix(&conn, path, &seed, cfg.tolerances.transport))?;
        transports.push(TransportSummary {
            path: path.clone(),
            est_error: out.est_error,
            end_branches: out.coord_branches(),
            tracked: branch_states(&conn, &out.end, &out.tracked_logs),
            value: out.value,
        });
    }
    let mut monodromy = Vec::new();
    for lp in &cfg.loops {
        monodromy.push(stage("monodromy", monodromy_loop(&conn, lp, &seed, cfg.tolerances.transport))?);
    }

    let csv = stage("report", csv_exports(&singular, &local, &flatness, &per_point))?;
    let report = Report {
        algebra: cfg.algebra.clone(),
        level: stage("config", cfg.level())?,
        connection: summary,
        euler: EulerSummary { mean: euler.mean, deviation: euler.deviation, per_point },
        flatness,
        flatness_max,
        singular,
        local,
        transports,
        monodromy,
        csv,
    };
    Ok(RunOutput { report, connection: conn })
}

/// Transform the connection by one change of variables and decide holomorphy.
pub fn analyze_change(
    conn: &ConnectionSystem,
    spec: &ChangeSpec,
    index: usize,
    cutoffs: &[Rational64],
    prune: f64,
) -> tkz_core::Result<(SingularSummary, TransformedSystem)> {
    let cov = spec.build(conn.t)?;
    let ts = transform_system(conn, &cov, cutoffs, prune)?;
    let verdict = check_simple_singularity(&ts)?;
    let mut indicial = Vec::new();
    if verdict.holomorphic {
        for j in 0..conn.n {
            let data = indicial_data(&ts, j)?;
            indicial.push(IndicialRow {
                component: j + 1,
                h0: data.h0,
                exponents: data.exponents,
                exact: data.rational.map(|v| v.into_iter().map(json_rational).collect()),
                resonant: data.resonant,
            });
        }
    }
    let summary = SingularSummary {
        change: spec.label(index),
        holomorphic: verdict.holomorphic,
        offenders: verdict
            .offenders
            .iter()
            .map(|o| OffenderRow {
                component: o.component + 1,
                exponents: o.exponents.iter().copied().map(json_rational).collect(),
                magnitude: o.magnitude,
            })
            .collect(),
        min_exponents: verdict.min_exponents.iter().map(|v| v.iter().map(|e| e.map(json_rational)).collect()).collect(),
        indicial,
    };
    Ok((summary, ts))
}

/// Frobenius solution along coordinate `j` (from 0) with the others fixed at `at`.
pub fn solve_local(
    ts: &TransformedSystem,
    j: usize,
    at: &[C],
    branches: &[i64],
    order: usize,
) -> tkz_core::Result<LocalSummary> {
    if j >= ts.n || at.len() != ts.n || branches.len() != ts.n {
        return Err(Error::Config(format!("local solve needs a component in 1..={} and {} coordinates", ts.n, ts.n)));
    }
    let coeffs = ts.b[j].coefficients_along(j, at, branches)?;
    if coeffs.is_empty() {
        return Err(Error::Config("cutoff leaves no coefficients".into()));
    }
    let used = coeffs.len();
    let system = LocalSystem { coeffs, radius: ts.coefficient_radius(j, at) };
    // the truncated coefficients carry no information beyond the cutoff
    let order = order.min(used - 1).max(1);
    let sol = frobenius_fundamental(&system, order)?;
    Ok(LocalSummary {
        change: String::new(),
        component: j + 1,
        coefficients_used: used,
        exponents: sol.exponents.clone(),
        exact_exponents: exact_exponents(&sol).into_iter().map(|e| e.map(json_rational)).collect(),
        monodromy: local_monodromy(&sol),
        solution: sol,
        matching: None,
    })
}

fn exact_text(r: &Option<JsonRational>) -> String {
    r.map(|r| format!("{}/{}", r.num, r.den)).unwrap_or_default()
}

fn csv_exports(
    singular: &[SingularSummary],
    local: &[LocalSummary],
    flatness: &[FlatnessRow],
    euler: &[f64],
) -> tkz_core::Result<CsvExports> {
    let wrap = |e: csv::Error| Error::Internal(format!("CSV export failed: {e}"));
    let mut rows = Vec::new();
    for s in singular {
        for ind in &s.indicial {
            for (k, z) in ind.exponents.iter().enumerate() {
                let exact = ind.exact.as_ref().map(|v| v[k]);
                rows.push(vec![
                    "indicial".into(),
                    s.change.clone(),
                    ind.component.to_string(),
                    k.to_string(),
                    format_float(z.re),
                    format_float(z.im),
                    exact_text(&exact),
                ]);
            }
        }
    }
    for l in local {
        for (k, z) in l.exponents.iter().enumerate() {
            rows.push(vec![
                "local".into(),
                l.change.clone(),
                l.component.to_string(),
                k.to_string(),
                format_float(z.re),
                format_float(z.im),
                exact_text(l.exact_exponents.get(k).unwrap_or(&None)),
            ]);
        }
    }
    let exponents =
        to_csv(&["source", "change", "component", "index", "re", "im", "exact"], &rows).map_err(wrap)?;
    let rows: Vec<Vec<String>> = flatness
        .iter()
        .enumerate()
        .map(|(k, f)| vec![k.to_string(), format_float(f.residual), format_float(f.est_error)])
        .collect();
    let flat = to_csv(&["point", "residual", "est_error"], &rows).map_err(wrap)?;
    let rows: Vec<Vec<String>> = euler.iter().enumerate().map(|(k, d)| vec![k.to_string(), format_float(*d)]).collect();
    let eul = to_csv(&["point", "deviation_from_mean"], &rows).map_err(wrap)?;
    Ok(CsvExports { exponents, flatness: flat, euler: eul })
}
