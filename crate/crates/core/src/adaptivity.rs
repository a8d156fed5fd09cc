//! Mean-value marking and the outer adaptive loop: enriched primal solve,
//! balanced coarse solve, enriched adjoint, estimate, mark, refine.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_residual, run_rule};
use crate::error::{Error, Result};
use crate::estimator::{effectivity, estimate, solve_enriched_adjoint, EstimatorBreakdown, ReferenceValue, SpacePair};
use crate::fespace::{ConstraintSet, DiscreteFunction};
use crate::goals::{catalog, NamedFunctional};
use crate::linalg::max_norm;
use crate::mesh::{CellMarks, Mesh};
use crate::multigoal::{build_combined, GoalSet};
use crate::problems::{sine_solution, PLaplace, Problem, Quasilinear};
use crate::solver::{adaptive_newton_multigoal, nested_tolerance, newton_solve, NewtonConfig, NewtonStop};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// p-Laplacian with constant right-hand side and zero boundary values.
    PLaplace { p: f64, eps: f64, rhs: f64 },
    /// p-Laplacian manufactured from `sin(6x + 6y)`.
    PLaplaceSine { p: f64, eps: f64 },
    Quasilinear,
}

impl ProblemSpec {
    pub fn build(&self) -> Box<dyn Problem> {
        match *self {
            ProblemSpec::PLaplace { p, eps, rhs } => Box::new(PLaplace::with_constant_rhs(p, eps, rhs)),
            ProblemSpec::PLaplaceSine { p, eps } => Box::new(PLaplace::manufactured(p, eps, sine_solution())),
            ProblemSpec::Quasilinear => Box::new(Quasilinear),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshSpec {
    UnitSquare { n: usize },
    /// Unit square with `n x n` cells, interior vertices moved randomly by
    /// up to `factor` times their shortest edge (seeded by the run seed).
    DistortedSquare { n: usize, factor: f64 },
    /// Cheese domain after `refinements` uniform refinements.
    Cheese { refinements: usize },
    /// Slit square `(-1,1)^2` with `n x n` cells.
    Slit { n: usize },
}

impl MeshSpec {
    pub fn build(&self, seed: u64) -> Result<Mesh> {
        Ok(match *self {
            MeshSpec::UnitSquare { n } => Mesh::unit_square(n),
            MeshSpec::DistortedSquare { n, factor } => Mesh::unit_square(n).distort(factor, seed)?,
            MeshSpec::Cheese { refinements } => (0..refinements).fold(Mesh::cheese(), |m, _| m.refine_uniform()),
            MeshSpec::Slit { n } => Mesh::slit(n),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Functional catalog id (`example1a`, `example1b`, `example1c`, `example2`).
    pub experiment: String,
    pub problem: ProblemSpec,
    pub mesh: MeshSpec,
    pub degree: usize,
    pub enriched_degree: usize,
    pub tol_dis: f64,
    pub max_levels: usize,
    pub max_dofs: usize,
    /// Per-functional weights; empty means all ones.
    #[serde(default)]
    pub omegas: Vec<f64>,
    /// Known values keyed by functional name.
    #[serde(default)]
    pub reference: BTreeMap<String, ReferenceEntry>,
    /// Replace the balanced stopping rule of the coarse solve by
    /// `||A(u)||_inf <= tol`.
    #[serde(default)]
    pub fixed_newton_tol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Extend marks to all siblings of a marked cell.
    #[serde(default)]
    pub complete_siblings: bool,
    /// Residual ratio above which the enriched primal Newton solve
    /// reassembles its Jacobian (0 reassembles every iteration).
    #[serde(default = "default_reuse_ratio")]
    pub jacobian_reuse_ratio: f64,
}

fn default_reuse_ratio() -> f64 {
    NewtonConfig::primal().rebuild_ratio
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.degree == 0 || self.enriched_degree <= self.degree {
            return bad("enriched_degree must exceed degree >= 1");
        }
        if self.tol_dis.is_nan() || self.tol_dis <= 0.0 {
            return bad("tol_dis must be positive");
        }
        if !(0.0..=1.0).contains(&self.jacobian_reuse_ratio) {
            return bad("jacobian_reuse_ratio must lie in [0, 1]");
        }
        if self.max_levels == 0 {
            return bad("max_levels must be at least 1");
        }
        match self.problem {
            ProblemSpec::PLaplace { p, eps, .. } | ProblemSpec::PLaplaceSine { p, eps } if !(p > 1.0 && eps > 0.0) => {
                return bad("p-Laplacian needs p > 1 and eps > 0");
            }
            _ => {}
        }
        let n = self.functionals()?.len();
        if !self.omegas.is_empty() && (self.omegas.len() != n || self.omegas.iter().any(|w| !(*w > 0.0))) {
            return bad("omegas needs one positive weight per functional");
        }
        let names: Vec<String> = self.functionals()?.into_iter().map(|f| f.name).collect();
        if let Some(k) = self.reference.keys().find(|k| !names.contains(k)) {
            return Err(Error::Config(format!("reference for unknown functional `{k}`")));
        }
        if self.reference.values().any(|r| !(r.uncertainty >= 0.0)) {
            return bad("reference uncertainties must be nonnegative");
        }
        let nc = self.problem.build().n_components();
        let needs = if self.experiment == "example2" { 3 } else { 1 };
        if nc != needs {
            return Err(Error::Config(format!("experiment {} needs a {needs}-component problem", self.experiment)));
        }
        Ok(())
    }

    pub fn functionals(&self) -> Result<Vec<NamedFunctional>> {
        catalog(&self.experiment)
    }

    pub fn omegas_or_default(&self, n: usize) -> Vec<f64> {
        if self.omegas.is_empty() {
            vec![1.0; n]
        } else {
            self.omegas.clone()
        }
    }

    pub fn references(&self, names: &[String]) -> Vec<Option<ReferenceValue>> {
        names.iter().map(|n| self.reference.get(n).map(|r| ReferenceValue::new(r.value, r.uncertainty))).collect()
    }
}

/// A reference value as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub value: f64,
    #[serde(default)]
    pub uncertainty: f64,
    /// Where the value comes from (closed form, literature, overkill run).
    #[serde(default)]
    pub source: String,
}

impl ReferenceEntry {
    pub fn new(value: f64, uncertainty: f64, source: &str) -> Self {
        ReferenceEntry { value, uncertainty, source: source.to_string() }
    }
}

/// Where the "true" error of a record comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Reference,
    /// Enriched solution `u_h2` stands in for the exact one.
    Surrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub level: usize,
    pub dofs: usize,
    pub enriched_dofs: usize,
    pub cells: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub rel_errors: Vec<Option<f64>>,
    /// `sum_i omega_i |J_i(u) - J_i(u_h)| / |J_i(u_h)|` (with one goal:
    /// `|J(u) - J(u_h)|`).
    pub j_e_error: f64,
    pub error_source: ErrorSource,
    /// Same with `u_h2` in place of `u`.
    pub j_e_surrogate: f64,
    pub eta_h: f64,
    pub eta_primal: f64,
    pub eta_adjoint: f64,
    pub i_eff: Option<f64>,
    pub i_effp: Option<f64>,
    pub i_effa: Option<f64>,
    pub newton_steps: usize,
    pub enriched_newton_steps: usize,
    pub eta_m: f64,
    pub eta_m_threshold: f64,
    pub pu_defect: f64,
    pub distribution_defect: f64,
    pub max_cell_level: u32,
    pub wall_ms: u64,
}

/// Everything computed on one level, handed to an observer.
pub struct LevelState<'a> {
    pub level: usize,
    pub mesh: &'a Arc<Mesh>,
    pub u_h: &'a DiscreteFunction,
    pub z_h: &'a DiscreteFunction,
    pub u_h2: &'a DiscreteFunction,
    pub z_h2: &'a DiscreteFunction,
    pub breakdown: &'a EstimatorBreakdown,
    pub record: &'a ConvergenceRecord,
}

/// Cells with `eta_K` at or above the mean. Values within a relative
/// `1e-12` of the mean count as ties.
pub fn mark_average(cellwise: &[f64], mesh: &Mesh) -> CellMarks {
    assert_eq!(cellwise.len(), mesh.n_active_cells());
    if cellwise.is_empty() {
        return CellMarks::new();
    }
    let mean = cellwise.iter().sum::<f64>() / cellwise.len() as f64;
    let threshold = mean * (1.0 - 1e-12);
    mesh.active_cells()
        .iter()
        .zip(cellwise)
        .filter(|(_, &e)| e >= threshold)
        .map(|(&c, _)| c)
        .collect()
}

/// Adds the active siblings of every marked cell, so cells that were
/// refined together stay on one level.
pub fn complete_siblings(marks: &CellMarks, mesh: &Mesh) -> CellMarks {
    let mut out = marks.clone();
    for c in marks.iter() {
        if let Some(children) = mesh.cell(c).parent.and_then(|p| mesh.cell(p).children) {
            for s in children {
                if mesh.is_active(s) {
                    out.insert(s);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marking {
    Average,
    All,
}

/// The level-1 guess: one at free nodes, boundary data on constrained ones.
pub fn initial_guess(cs: &ConstraintSet) -> DiscreteFunction {
    let mut u = DiscreteFunction::from_coeffs(cs.space(), vec![1.0; cs.n_dofs()]);
    cs.distribute(&mut u.coeffs);
    u
}

fn carry_over(prev: Option<&DiscreteFunction>, cs: &ConstraintSet) -> Result<DiscreteFunction> {
    match prev {
        None => Ok(initial_guess(cs)),
        Some(p) => {
            let mut u = p.transfer_to_refined(cs.space())?;
            cs.distribute(&mut u.coeffs);
            Ok(u)
        }
    }
}

pub fn run_adaptive(cfg: &RunConfig) -> Result<Vec<ConvergenceRecord>> {
    run_with(cfg, Marking::Average, &mut |_| Ok(()))
}

pub fn run_uniform(cfg: &RunConfig) -> Result<Vec<ConvergenceRecord>> {
    run_with(cfg, Marking::All, &mut |_| Ok(()))
}

/// The adaptive loop with a per-level observer (used for VTK output).
pub fn run_with(
    cfg: &RunConfig,
    marking: Marking,
    observer: &mut dyn FnMut(&LevelState) -> Result<()>,
) -> Result<Vec<ConvergenceRecord>> {
    cfg.validate()?;
    let problem = cfg.problem.build();
    let problem = problem.as_ref();
    let named = cfg.functionals()?;
    let names: Vec<String> = named.iter().map(|f| f.name.clone()).collect();
    let goals = GoalSet::new(named.into_iter().map(|f| f.expr).collect(), cfg.omegas_or_default(names.len()));
    let references = cfg.references(&names);
    let rule = run_rule(cfg.enriched_degree);
    let stop = cfg.fixed_newton_tol.map_or(NewtonStop::Balanced, NewtonStop::Fixed);
    let primal_newton = NewtonConfig { rebuild_ratio: cfg.jacobian_reuse_ratio, ..NewtonConfig::primal() };

    let mut mesh = Arc::new(cfg.mesh.build(cfg.seed)?);
    let mut prev: Option<(DiscreteFunction, DiscreteFunction)> = None;
    let mut eta_prev = 1e-8;
    let mut records = Vec::new();
    for level in 1..=cfg.max_levels {
        let started = Instant::now();
        let sp = SpacePair::new(problem, mesh.clone(), cfg.degree, cfg.enriched_degree)?;
        if level > 1 && sp.coarse.n_dofs() > cfg.max_dofs {
            info!("stopping: {} dofs exceed the cap {}", sp.coarse.n_dofs(), cfg.max_dofs);
            break;
        }
        let at = |e: Error| e.at_level(level);

        // enriched primal, nested tolerance
        let u2_0 = carry_over(prev.as_ref().map(|p| &p.1), &sp.cs2).map_err(at)?;
        let r0 = max_norm(&assemble_residual(problem, &sp.cs2, &u2_0, &rule).map_err(at)?);
        let tol = nested_tolerance(level, r0);
        let (u_h2, st2) = newton_solve(problem, &sp.cs2, u2_0, tol, &primal_newton, &rule).map_err(at)?;
        let enriched_values = goals.values(&u_h2, &rule).map_err(at)?;

        // coarse primal and adjoint, balanced against the previous estimate
        let u0 = carry_over(prev.as_ref().map(|p| &p.0), &sp.cs).map_err(at)?;
        let (u_h, z_h, st) = adaptive_newton_multigoal(
            problem,
            &goals,
            &sp.cs,
            u0,
            eta_prev,
            &enriched_values,
            stop,
            &NewtonConfig::balanced(),
            &rule,
        )
        .map_err(at)?;

        // goal of the estimator, enriched adjoint, estimate
        let values = goals.values(&u_h, &rule).map_err(at)?;
        let (jfun, j_e_surrogate) = if goals.len() == 1 {
            (goals.functionals[0].clone(), (enriched_values[0] - values[0]).abs())
        } else {
            let c = build_combined(&goals.functionals, &u_h, &u_h2, &goals.omegas, &rule).map_err(at)?;
            (c.functional(), c.combined_error_value())
        };
        let z_h2 = solve_enriched_adjoint(problem, &jfun, &sp.cs2, &u_h2, &rule).map_err(at)?;
        let b = estimate(problem, &jfun, &u_h, &z_h, &u_h2, &z_h2, &rule).map_err(at)?;

        let rel_errors: Vec<Option<f64>> = references
            .iter()
            .zip(&values)
            .map(|(r, v)| r.as_ref().map(|r| ((r.value - v) / r.value).abs()))
            .collect();
        let all_refs = references.iter().all(Option::is_some);
        let (j_e_error, error_source) = if all_refs {
            let e = if goals.len() == 1 {
                (references[0].as_ref().map(|r| r.value).unwrap() - values[0]).abs()
            } else {
                (0..goals.len())
                    .map(|i| goals.omegas[i] * (references[i].as_ref().unwrap().value - values[i]).abs() / values[i].abs())
                    .sum()
            };
            (e, ErrorSource::Reference)
        } else {
            (j_e_surrogate, ErrorSource::Surrogate)
        };
        let eff = effectivity(j_e_error, &b).ok();
        let record = ConvergenceRecord {
            level,
            dofs: sp.coarse.n_dofs(),
            enriched_dofs: sp.enriched.n_dofs(),
            cells: mesh.n_active_cells(),
            names: names.clone(),
            values,
            rel_errors,
            j_e_error,
            error_source,
            j_e_surrogate,
            eta_h: b.eta_h,
            eta_primal: b.eta_primal_signed,
            eta_adjoint: b.eta_adjoint_signed,
            i_eff: eff.map(|e| e.i_eff),
            i_effp: eff.map(|e| e.i_effp),
            i_effa: eff.map(|e| e.i_effa),
            newton_steps: st.newton.iterations,
            enriched_newton_steps: st2.iterations,
            eta_m: st.eta_m.last().copied().unwrap_or(f64::NAN),
            eta_m_threshold: st.threshold,
            pu_defect: b.pu_defect(),
            distribution_defect: b.distribution_defect(),
            max_cell_level: mesh.max_level(),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        info!(
            "level {level}: dofs={} eta={:.4e} err={:.4e} I_eff={:?} newton={}+{}",
            record.dofs, record.eta_h, record.j_e_error, record.i_eff, record.newton_steps, record.enriched_newton_steps
        );
        observer(&LevelState {
            level,
            mesh: &mesh,
            u_h: &u_h,
            z_h: &z_h,
            u_h2: &u_h2,
            z_h2: &z_h2,
            breakdown: &b,
            record: &record,
        })?;
        records.push(record);

        if b.eta_h < cfg.tol_dis || level == cfg.max_levels {
            break;
        }
        eta_prev = b.eta_h;
        let marks = match marking {
            Marking::Average if cfg.complete_siblings => complete_siblings(&mark_average(&b.cellwise, &mesh), &mesh),
            Marking::Average => mark_average(&b.cellwise, &mesh),
            Marking::All => mesh.active_cells().iter().copied().collect(),
        };
        mesh = Arc::new(mesh.refine(&marks).map_err(at)?);
        prev = Some((u_h, u_h2));
    }
    Ok(records)
}

// ------------------------------------------------------------------ output

fn sci(v: f64) -> String {
    format!("{v:.15e}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), sci)
}

/// Column names of the records CSV.
pub fn csv_header(names: &[String]) -> Vec<String> {
    let mut h = vec!["level".to_string(), "dofs".to_string()];
    for n in names {
        h.push(format!("{n}_value"));
        h.push(format!("{n}_rel_error"));
    }
    for c in ["J_E_error", "eta_h", "eta_primal", "eta_adjoint", "I_eff", "I_effp", "I_effa", "newton_steps", "wall_ms"] {
        h.push(c.to_string());
    }
    h
}

fn csv_row(r: &ConvergenceRecord) -> Vec<String> {
    let mut row = vec![r.level.to_string(), r.dofs.to_string()];
    for (v, e) in r.values.iter().zip(&r.rel_errors) {
        row.push(sci(*v));
        row.push(opt(*e));
    }
    row.extend([
        sci(r.j_e_error),
        sci(r.eta_h),
        sci(r.eta_primal),
        sci(r.eta_adjoint),
        opt(r.i_eff),
        opt(r.i_effp),
        opt(r.i_effa),
        r.newton_steps.to_string(),
        r.wall_ms.to_string(),
    ]);
    row
}

pub fn write_csv(records: &[ConvergenceRecord], out: impl Write) -> Result<()> {
    let names = records.first().map(|r| r.names.clone()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(csv_header(&names)).map_err(err)?;
    for r in records {
        w.write_record(csv_row(r)).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table with a `#` header line.
pub fn write_gnuplot(records: &[ConvergenceRecord], mut out: impl Write) -> Result<()> {
    let names = records.first().map(|r| r.names.clone()).unwrap_or_default();
    writeln!(out, "# {}", csv_header(&names).join(" "))?;
    for r in records {
        writeln!(out, "{}", csv_row(r).join(" "))?;
    }
    Ok(())
}

pub fn write_csv_file(records: &[ConvergenceRecord], path: &Path) -> Result<()> {
    write_csv(records, std::fs::File::create(path)?)
}

/// A records CSV read back: functional names and numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub functionals: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_csv(input: impl std::io::Read) -> Result<CsvTable> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |m: String| Error::MalformedCsv(m);
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < 11 || header[0] != "level" || header[1] != "dofs" {
        return Err(bad("missing level/dofs columns".into()));
    }
    let functionals: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_suffix("_value").map(str::to_string))
        .collect();
    if header != csv_header(&functionals) {
        return Err(bad(format!("unexpected columns: {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("row {}: `{s}` is not a number", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(bad(format!("row {} has {} fields, expected {}", i + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, functionals, rows })
}
