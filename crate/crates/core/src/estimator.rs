//! Dual weighted residual estimator with enriched-space weights, localized
//! by the bilinear partition of unity and spread over cells.

use std::sync::Arc;

use crate::assembly::{assemble_jacobian, linearized_density, linearized_form, residual_density, weighted_primal_residual};
use crate::error::{Error, Result};
use crate::fespace::{basis, CellGeometry, ConstraintSet, DiscreteFunction, Difference, FeSpace};
use crate::goals::{assemble_functional_gradient, FunctionalExpr};
use crate::linalg::Factorization;
use crate::problems::Problem;
use crate::quadrature::QuadRule;

#[derive(Clone, Debug)]
pub struct EstimatorBreakdown {
    /// Primal plus adjoint part, before taking the absolute value.
    pub eta_signed: f64,
    pub eta_h: f64,
    /// `1/2 rho(u_h)(z_h2 - i_h z_h2)`.
    pub eta_primal_signed: f64,
    /// `1/2 rho*(u_h, z_h)(u_h2 - u_h)`.
    pub eta_adjoint_signed: f64,
    /// Signed contribution of every bilinear hat, indexed by the nodes of
    /// the Q1 space on the mesh; hanging nodes are folded into their masters
    /// and hold zero.
    pub nodal: Vec<f64>,
    /// Nonnegative indicator per active cell, in `Mesh::active_cells` order.
    pub cellwise: Vec<f64>,
}

impl EstimatorBreakdown {
    /// `|sum_i eta_i - eta_signed| / |eta_signed|`.
    pub fn pu_defect(&self) -> f64 {
        let sum: f64 = self.nodal.iter().sum();
        relative(sum, self.eta_signed)
    }

    /// `|sum_K eta_K - sum_i |eta_i|| / sum_i |eta_i|`.
    pub fn distribution_defect(&self) -> f64 {
        let abs: f64 = self.nodal.iter().map(|v| v.abs()).sum();
        relative(self.cellwise.iter().sum(), abs)
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

/// Known value of a goal functional and its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReferenceValue {
    pub value: f64,
    pub uncertainty: f64,
}

impl ReferenceValue {
    pub fn exact(value: f64) -> Self {
        ReferenceValue { value, uncertainty: 0.0 }
    }

    pub fn new(value: f64, uncertainty: f64) -> Self {
        assert!(uncertainty >= 0.0);
        ReferenceValue { value, uncertainty }
    }
}

/// One entry per goal functional, `None` where nothing is known.
pub type ReferenceValues = Vec<Option<ReferenceValue>>;

/// Solves `A'(u_h2)(v, z) = J'(u_h2)(v)` on the space of `u_h2`, with
/// homogeneous versions of the constraints in `cs2`.
pub fn solve_enriched_adjoint(
    problem: &dyn Problem,
    functional: &FunctionalExpr,
    cs2: &ConstraintSet,
    u_h2: &DiscreteFunction,
    rule: &QuadRule,
) -> Result<DiscreteFunction> {
    let k = assemble_jacobian(problem, cs2, u_h2, rule)?;
    let rhs = assemble_functional_gradient(functional, cs2, u_h2, rule)?;
    let mut z = Factorization::new(&k)?.solve_transpose(&rhs)?;
    cs2.homogeneous().distribute(&mut z);
    Ok(DiscreteFunction::from_coeffs(cs2.space(), z))
}

/// The estimator
/// `1/2 rho(u_h)(z_h2 - i_h z_h2) + 1/2 rho*(u_h, z_h)(u_h2 - u_h)`,
/// evaluated globally and per bilinear hat.
pub fn estimate(
    problem: &dyn Problem,
    functional: &FunctionalExpr,
    u_h: &DiscreteFunction,
    z_h: &DiscreteFunction,
    u_h2: &DiscreteFunction,
    z_h2: &DiscreteFunction,
    rule: &QuadRule,
) -> Result<EstimatorBreakdown> {
    let mesh = u_h.mesh().clone();
    let iz = z_h2.interpolate_to(&u_h.space)?;
    let wz = Difference::new(z_h2, &iz)?;
    let wu = Difference::new(u_h2, u_h)?;

    let eta_primal_signed = 0.5 * weighted_primal_residual(problem, u_h, &wz, rule)?;
    let eta_adjoint_signed =
        0.5 * (functional.derivative(u_h, &wu, rule)? - linearized_form(problem, u_h, z_h, &wu, rule)?);

    let pu = FeSpace::new(mesh.clone(), 1, 1);
    let mut nodal = vec![0.0; pu.n_nodes()];
    let hats: Vec<(Vec<f64>, Vec<[f64; 2]>)> = rule.points.iter().map(|&xi| basis(1, xi)).collect();
    for &cell in mesh.active_cells() {
        let geo = CellGeometry::new(&mesh, cell, rule);
        let primal = residual_density(problem, u_h, &wz, cell, rule, &geo);
        let adjoint = linearized_density(problem, u_h, z_h, &wu, cell, rule, &geo);
        let nodes = pu.cell_nodes(cell);
        for (q, (psi, dpsi)) in hats.iter().enumerate() {
            for a in 0..4 {
                let g = geo.physical(q, dpsi[a]);
                let p = primal.a[q] * psi[a] + primal.b[q][0] * g[0] + primal.b[q][1] * g[1];
                let d = adjoint.a[q] * psi[a] + adjoint.b[q][0] * g[0] + adjoint.b[q][1] * g[1];
                // rho = -A and rho* = J' - A'; the J' part is added below
                nodal[nodes[a]] -= 0.5 * geo.jxw[q] * (p + d);
            }
        }
    }
    let leaf_values = functional.leaf_values(u_h, rule)?;
    let partials = functional.partials_from_leaves(&leaf_values);
    for (leaf, c) in functional.leaves().into_iter().zip(partials) {
        if c == 0.0 {
            continue;
        }
        leaf.localize(&wu, rule, &mut |cell, v| {
            for (a, &n) in pu.cell_nodes(cell).iter().enumerate() {
                nodal[n] += 0.5 * c * v[a];
            }
        })?;
    }
    for hc in pu.hanging_constraints() {
        let v = std::mem::take(&mut nodal[hc.node]);
        for &(m, w) in &hc.masters {
            nodal[m] += w * v;
        }
    }
    let cellwise = distribute_to_cells(&nodal, &pu);
    let eta_signed = eta_primal_signed + eta_adjoint_signed;
    Ok(EstimatorBreakdown {
        eta_signed,
        eta_h: eta_signed.abs(),
        eta_primal_signed,
        eta_adjoint_signed,
        nodal,
        cellwise,
    })
}

/// Splits every `|eta_i|` equally among the active cells having node `i`
/// of the Q1 space `pu` as a corner.
pub fn distribute_to_cells(nodal: &[f64], pu: &FeSpace) -> Vec<f64> {
    assert_eq!(pu.degree(), 1);
    let active = pu.mesh().active_cells();
    let mut count = vec![0usize; pu.n_nodes()];
    for &c in active {
        for &n in pu.cell_nodes(c) {
            count[n] += 1;
        }
    }
    active
        .iter()
        .map(|&c| pu.cell_nodes(c).iter().map(|&n| nodal[n].abs() / count[n] as f64).sum())
        .collect()
}

/// Effectivity indices against a true error `J(u) - J(u_h)`: the full
/// estimator and each part without the factor 1/2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Effectivity {
    pub i_eff: f64,
    pub i_effp: f64,
    pub i_effa: f64,
}

pub fn effectivity(true_error: f64, b: &EstimatorBreakdown) -> Result<Effectivity> {
    if true_error == 0.0 {
        return Err(Error::ZeroTrueError);
    }
    let e = true_error.abs();
    Ok(Effectivity {
        i_eff: b.eta_h / e,
        i_effp: (2.0 * b.eta_primal_signed).abs() / e,
        i_effa: (2.0 * b.eta_adjoint_signed).abs() / e,
    })
}

/// Spaces and constraints of one mesh at degrees `r` and `r_enriched`.
pub struct SpacePair {
    pub coarse: Arc<FeSpace>,
    pub enriched: Arc<FeSpace>,
    pub cs: ConstraintSet,
    pub cs2: ConstraintSet,
}

impl SpacePair {
    pub fn new(problem: &dyn Problem, mesh: Arc<crate::mesh::Mesh>, r: usize, r_enriched: usize) -> Result<SpacePair> {
        let nc = problem.n_components();
        let coarse = Arc::new(FeSpace::new(mesh.clone(), r, nc));
        let enriched = Arc::new(FeSpace::new(mesh, r_enriched, nc));
        let cs = ConstraintSet::new(&coarse, &problem.dirichlet())?;
        let cs2 = ConstraintSet::new(&enriched, &problem.dirichlet())?;
        Ok(SpacePair { coarse, enriched, cs, cs2 })
    }
}
