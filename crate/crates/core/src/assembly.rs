//! Residual and Jacobian assembly with constraint condensation, and the
//! cellwise weighted-residual kernels shared with the estimator.

use crate::error::{Error, Result};
use crate::fespace::{CellGeometry, ConstraintSet, DiscreteFunction, Field, ShapeTable};
use crate::linalg::SparseMatrix;
use crate::problems::Problem;
use crate::quadrature::QuadRule;

/// Gauss rule with `r_enriched + 2` points per direction, used for every
/// integral of a run.
pub fn run_rule(r_enriched: usize) -> QuadRule {
    QuadRule::gauss(r_enriched + 2)
}

/// State of a discrete function at the quadrature points of one cell.
struct QpState {
    u: Vec<Vec<f64>>,
    grad: Vec<Vec<[f64; 2]>>,
}

fn cell_state(u: &DiscreteFunction, cell: usize, table: &ShapeTable, geo: &CellGeometry) -> QpState {
    let nc = u.space.n_components();
    let nodes = u.space.cell_nodes(cell);
    let nq = geo.jxw.len();
    let mut vals = vec![vec![0.0; nc]; nq];
    let mut grads = vec![vec![[0.0; 2]; nc]; nq];
    for q in 0..nq {
        for (a, &n) in nodes.iter().enumerate() {
            let phi = table.values[q][a];
            let g = geo.physical(q, table.grads[q][a]);
            for c in 0..nc {
                let coef = u.coeffs[n * nc + c];
                vals[q][c] += coef * phi;
                grads[q][c][0] += coef * g[0];
                grads[q][c][1] += coef * g[1];
            }
        }
    }
    QpState { u: vals, grad: grads }
}

fn check_space(cs: &ConstraintSet, u: &DiscreteFunction) {
    assert!(
        std::sync::Arc::ptr_eq(cs.space(), &u.space),
        "constraints and function must share one space"
    );
}

/// `A(u)(phi_i)` for every dof, condensed: hanging rows are distributed to
/// their masters and constrained entries are zero.
pub fn assemble_residual(problem: &dyn Problem, cs: &ConstraintSet, u: &DiscreteFunction, rule: &QuadRule) -> Result<Vec<f64>> {
    check_space(cs, u);
    let space = &u.space;
    let mesh = space.mesh();
    let nc = space.n_components();
    let table = ShapeTable::new(space.degree(), rule);
    let nloc = table.n_basis;
    let mut out = vec![0.0; space.n_dofs()];
    let mut val = vec![0.0; nc];
    let mut flux = vec![[0.0; 2]; nc];
    let mut local = vec![0.0; nloc * nc];
    for &cell in mesh.active_cells() {
        let geo = CellGeometry::new(mesh, cell, rule);
        let st = cell_state(u, cell, &table, &geo);
        local.fill(0.0);
        for q in 0..rule.len() {
            problem.residual(geo.points[q], &st.u[q], &st.grad[q], &mut val, &mut flux);
            let w = geo.jxw[q];
            for a in 0..nloc {
                let phi = table.values[q][a];
                let g = geo.physical(q, table.grads[q][a]);
                for c in 0..nc {
                    local[c * nloc + a] += w * (val[c] * phi + flux[c][0] * g[0] + flux[c][1] * g[1]);
                }
            }
        }
        if local.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureFailure { cell });
        }
        for (i, d) in space.cell_dofs(cell).into_iter().enumerate() {
            out[d] += local[i];
        }
    }
    cs.condense_vector(&mut out);
    Ok(out)
}

/// Matrix of `A'(u)(phi_j, phi_i)` (row `i` = test function), condensed with
/// the homogeneous version of `cs`; constrained rows are scaled identity rows.
pub fn assemble_jacobian(problem: &dyn Problem, cs: &ConstraintSet, u: &DiscreteFunction, rule: &QuadRule) -> Result<SparseMatrix> {
    check_space(cs, u);
    let space = &u.space;
    let mesh = space.mesh();
    let nc = space.n_components();
    let table = ShapeTable::new(space.degree(), rule);
    let nloc = table.n_basis;
    let nl = nloc * nc;
    let mut matrix = SparseMatrix::from_pattern(&cs.sparsity());
    let mut t = vec![0.0; 9 * nc * nc];
    let mut local = vec![0.0; nl * nl];
    let mut tmp = vec![0.0; 3 * nc];
    let mut ei = Vec::new();
    let mut ej = Vec::new();
    let mut expanded: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nl];
    // TODO: build local matrices for chunks of cells in parallel and scatter
    // them in cell order, so the sum stays bitwise reproducible
    for &cell in mesh.active_cells() {
        let geo = CellGeometry::new(mesh, cell, rule);
        let st = cell_state(u, cell, &table, &geo);
        local.fill(0.0);
        for q in 0..rule.len() {
            problem.tangent(geo.points[q], &st.u[q], &st.grad[q], &mut t);
            let w = geo.jxw[q];
            let shp: Vec<[f64; 3]> = (0..nloc)
                .map(|a| {
                    let g = geo.physical(q, table.grads[q][a]);
                    [table.values[q][a], g[0], g[1]]
                })
                .collect();
            for cp in 0..nc {
                for b in 0..nloc {
                    let s = shp[b];
                    let mut any = false;
                    for row in 0..3 * nc {
                        let base = row * 3 * nc + 3 * cp;
                        let v = t[base] * s[0] + t[base + 1] * s[1] + t[base + 2] * s[2];
                        tmp[row] = v;
                        any |= v != 0.0;
                    }
                    if !any {
                        continue;
                    }
                    let col = cp * nloc + b;
                    for c in 0..nc {
                        let (t0, t1, t2) = (tmp[3 * c], tmp[3 * c + 1], tmp[3 * c + 2]);
                        if t0 == 0.0 && t1 == 0.0 && t2 == 0.0 {
                            continue;
                        }
                        for a in 0..nloc {
                            let r = shp[a];
                            local[(c * nloc + a) * nl + col] += w * (r[0] * t0 + r[1] * t1 + r[2] * t2);
                        }
                    }
                }
            }
        }
        if local.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureFailure { cell });
        }
        let dofs = space.cell_dofs(cell);
        for (i, &d) in dofs.iter().enumerate() {
            cs.expand(d, &mut expanded[i]);
        }
        for i in 0..nl {
            ei.clone_from(&expanded[i]);
            for j in 0..nl {
                let v = local[i * nl + j];
                if v == 0.0 {
                    continue;
                }
                ej.clone_from(&expanded[j]);
                for &(gi, wi) in &ei {
                    for &(gj, wj) in &ej {
                        matrix.add(gi, gj, wi * wj * v);
                    }
                }
            }
        }
    }
    let mut diag_sum = 0.0;
    let mut count = 0usize;
    for i in 0..matrix.n() {
        if !cs.is_constrained(i) {
            diag_sum += matrix.get(i, i).abs();
            count += 1;
        }
    }
    let scale = if count > 0 && diag_sum > 0.0 { diag_sum / count as f64 } else { 1.0 };
    for i in 0..matrix.n() {
        if cs.is_constrained(i) {
            matrix.add(i, i, scale);
        }
    }
    Ok(matrix)
}

/// Per quadrature point data of a weighted form on one cell: the form
/// tested with `w * psi` integrates to `sum_q jxw * (a * psi + b . grad psi)`.
#[derive(Clone, Debug)]
pub struct WeightedDensity {
    pub jxw: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<[f64; 2]>,
}

impl WeightedDensity {
    pub fn integral(&self) -> f64 {
        self.jxw.iter().zip(&self.a).map(|(w, a)| w * a).sum()
    }
}

/// Density of `A(u)(w)` on `cell`.
pub fn residual_density(
    problem: &dyn Problem,
    u: &DiscreteFunction,
    w: &dyn Field,
    cell: usize,
    rule: &QuadRule,
    geo: &CellGeometry,
) -> WeightedDensity {
    let nc = u.space.n_components();
    let mut val = vec![0.0; nc];
    let mut flux = vec![[0.0; 2]; nc];
    let mut out = WeightedDensity { jxw: geo.jxw.clone(), a: Vec::with_capacity(rule.len()), b: Vec::with_capacity(rule.len()) };
    for (q, &xi) in rule.points.iter().enumerate() {
        let (uv, ug) = u.eval_in_cell(cell, xi);
        let (wv, wg) = w.eval(cell, xi);
        problem.residual(geo.points[q], &uv, &ug, &mut val, &mut flux);
        let mut a = 0.0;
        let mut b = [0.0; 2];
        for c in 0..nc {
            a += val[c] * wv[c] + flux[c][0] * wg[c][0] + flux[c][1] * wg[c][1];
            b[0] += wv[c] * flux[c][0];
            b[1] += wv[c] * flux[c][1];
        }
        out.a.push(a);
        out.b.push(b);
    }
    out
}

/// Density of `A'(u)(w, z)`, i.e. the linearization at `u` in direction `w`
/// tested with `z`.
pub fn linearized_density(
    problem: &dyn Problem,
    u: &DiscreteFunction,
    z: &DiscreteFunction,
    w: &dyn Field,
    cell: usize,
    rule: &QuadRule,
    geo: &CellGeometry,
) -> WeightedDensity {
    let nc = u.space.n_components();
    let mut t = vec![0.0; 9 * nc * nc];
    let mut out = WeightedDensity { jxw: geo.jxw.clone(), a: Vec::with_capacity(rule.len()), b: Vec::with_capacity(rule.len()) };
    for (q, &xi) in rule.points.iter().enumerate() {
        let (uv, ug) = u.eval_in_cell(cell, xi);
        let (zv, zg) = z.eval_in_cell(cell, xi);
        let (wv, wg) = w.eval(cell, xi);
        problem.tangent(geo.points[q], &uv, &ug, &mut t);
        // m[c'][j] = sum over test rows of z-data times tangent
        let mut a = 0.0;
        let mut b = [0.0; 2];
        for cp in 0..nc {
            let mut m = [0.0; 3];
            for c in 0..nc {
                let zt = [zv[c], zg[c][0], zg[c][1]];
                for k in 0..3 {
                    let row = (3 * c + k) * 3 * nc + 3 * cp;
                    for (j, mj) in m.iter_mut().enumerate() {
                        *mj += zt[k] * t[row + j];
                    }
                }
            }
            a += m[0] * wv[cp] + m[1] * wg[cp][0] + m[2] * wg[cp][1];
            b[0] += m[1] * wv[cp];
            b[1] += m[2] * wv[cp];
        }
        out.a.push(a);
        out.b.push(b);
    }
    out
}

fn check_mesh(u: &DiscreteFunction, w: &dyn Field) -> Result<()> {
    if !std::sync::Arc::ptr_eq(u.mesh(), w.mesh()) {
        return Err(Error::MeshMismatch);
    }
    Ok(())
}

/// `rho(u)(w) = -A(u)(w)`; `w` may come from any space on the same mesh.
pub fn weighted_primal_residual(problem: &dyn Problem, u: &DiscreteFunction, w: &dyn Field, rule: &QuadRule) -> Result<f64> {
    check_mesh(u, w)?;
    let mesh = u.mesh();
    let mut sum = 0.0;
    for &cell in mesh.active_cells() {
        let geo = CellGeometry::new(mesh, cell, rule);
        sum += residual_density(problem, u, w, cell, rule, &geo).integral();
    }
    Ok(-sum)
}

/// `A'(u)(w, z)`.
pub fn linearized_form(problem: &dyn Problem, u: &DiscreteFunction, z: &DiscreteFunction, w: &dyn Field, rule: &QuadRule) -> Result<f64> {
    check_mesh(u, w)?;
    check_mesh(u, z)?;
    let mesh = u.mesh();
    let mut sum = 0.0;
    for &cell in mesh.active_cells() {
        let geo = CellGeometry::new(mesh, cell, rule);
        sum += linearized_density(problem, u, z, w, cell, rule, &geo).integral();
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::FeSpace;
    use crate::linalg::{max_norm, solve_direct};
    use crate::mesh::Mesh;
    use crate::problems::{PLaplace, Quasilinear};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(mesh: Mesh, r: usize, problem: &dyn Problem) -> (Arc<FeSpace>, ConstraintSet) {
        let s = Arc::new(FeSpace::new(Arc::new(mesh), r, problem.n_components()));
        let cs = ConstraintSet::new(&s, &problem.dirichlet()).unwrap();
        (s, cs)
    }

    #[test]
    fn hat_function_load() {
        let pb = PLaplace::with_constant_rhs(2.0, 1.0, 1.0);
        let (s, cs) = setup(Mesh::unit_square(2), 1, &pb);
        let u = DiscreteFunction::zeros(&s);
        let r = assemble_residual(&pb, &cs, &u, &run_rule(2)).unwrap();
        let centre = (0..s.n_nodes()).find(|&n| s.node_point(n) == [0.5, 0.5]).unwrap();
        assert!((r[centre] + 0.25).abs() < 1e-15);
        assert_eq!(r.iter().filter(|v| **v != 0.0).count(), 1);

        let pb2 = PLaplace::with_constant_rhs(2.0, 1.0, 2.0);
        let r2 = assemble_residual(&pb2, &cs, &u, &run_rule(2)).unwrap();
        assert!((r2[centre] - 2.0 * r[centre]).abs() < 1e-15);
    }

    #[test]
    fn linear_dirichlet_state_has_unit_energy() {
        // u = x, f = 0 on one cell: int grad u . grad v with v = x gives 1
        let pb = PLaplace::new(2.0, 0.3, Arc::new(|_, _| 0.0), Arc::new(|p, _| p[0]));
        let s = Arc::new(FeSpace::new(Arc::new(Mesh::unit_square(1)), 1, 1));
        let u = DiscreteFunction::interpolate(&s, |p, _| vec![p[0]]);
        let v = DiscreteFunction::interpolate(&s, |p, _| vec![p[0]]);
        let r = weighted_primal_residual(&pb, &u, &v, &run_rule(2)).unwrap();
        assert!((r + 1.0).abs() < 1e-14);
        let zero = DiscreteFunction::zeros(&s);
        let pb0 = PLaplace::with_constant_rhs(3.0, 0.3, 0.0);
        assert_eq!(weighted_primal_residual(&pb0, &zero, &v, &run_rule(2)).unwrap(), 0.0);
    }

    #[test]
    fn mass_row_sums_are_areas() {
        // the run rule integrates products of enriched basis functions exactly
        for r in 1..=4 {
            let s = Arc::new(FeSpace::new(Arc::new(Mesh::unit_square(2)), r + 1, 1));
            let rule = run_rule(r + 1);
            let table = ShapeTable::new(r + 1, &rule);
            for &c in s.mesh().active_cells() {
                let geo = CellGeometry::new(s.mesh(), c, &rule);
                let mut total = 0.0;
                for a in 0..table.n_basis {
                    for b in 0..table.n_basis {
                        total += (0..rule.len()).map(|q| geo.jxw[q] * table.values[q][a] * table.values[q][b]).sum::<f64>();
                    }
                }
                assert!((total - 0.25).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stiffness_properties() {
        let rule = run_rule(3);
        let p2 = PLaplace::with_constant_rhs(2.0, 1.0, 1.0);
        let p2b = PLaplace::with_constant_rhs(2.0, 1e-3, 1.0);
        let mesh = Mesh::unit_square(2).refine(&[0].into_iter().collect()).unwrap();
        let (s, cs) = setup(mesh, 2, &p2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut u = DiscreteFunction::from_coeffs(&s, (0..s.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        cs.distribute(&mut u.coeffs);
        let a = assemble_jacobian(&p2, &cs, &u, &rule).unwrap();
        let b = assemble_jacobian(&p2b, &cs, &DiscreteFunction::zeros(&s), &rule).unwrap();
        for i in 0..a.n() {
            for (j, v) in a.row(i) {
                assert!((v - b.get(i, j)).abs() < 1e-14);
            }
        }
        let ra = assemble_residual(&p2, &cs, &u, &rule).unwrap();
        let rb = assemble_residual(&p2b, &cs, &u, &rule).unwrap();
        assert!(ra.iter().zip(&rb).all(|(x, y)| (x - y).abs() < 1e-14));

        let p4 = PLaplace::with_constant_rhs(4.0, 1.0, 1.0);
        let j4 = assemble_jacobian(&p4, &cs, &u, &rule).unwrap();
        assert!(j4.asymmetry() <= 1e-12);
    }

    fn fd_check(problem: &dyn Problem, mesh: Mesh, r: usize, seed: u64) {
        let rule = run_rule(r + 1);
        let (s, cs) = setup(mesh, r, problem);
        let hom = cs.homogeneous();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let mut u = DiscreteFunction::from_coeffs(&s, (0..s.n_dofs()).map(|_| rng.gen_range(-0.5..0.5)).collect());
            cs.distribute(&mut u.coeffs);
            let mut d: Vec<f64> = (0..s.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            hom.distribute(&mut d);
            let jac = assemble_jacobian(problem, &cs, &u, &rule).unwrap();
            let jd = jac.matvec(&d);
            let h = 1e-6 * (1.0 + max_norm(&u.coeffs));
            let mut up = u.clone();
            up.axpy(h, &d);
            let mut um = u.clone();
            um.axpy(-h, &d);
            let rp = assemble_residual(problem, &cs, &up, &rule).unwrap();
            let rm = assemble_residual(problem, &cs, &um, &rule).unwrap();
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * h)).collect();
            let mut err: f64 = 0.0;
            for i in 0..fd.len() {
                if !cs.is_constrained(i) {
                    err = err.max((fd[i] - jd[i]).abs());
                }
            }
            assert!(err <= 1e-6 * (1.0 + max_norm(&jd)), "fd mismatch {err}");
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        for p in [1.5, 4.0, 5.0] {
            let pb = PLaplace::with_constant_rhs(p, 0.5, 1.0);
            fd_check(&pb, Mesh::unit_square(2).refine(&[1].into_iter().collect()).unwrap(), 2, 3);
        }
        fd_check(&Quasilinear, Mesh::slit(2).refine(&[0].into_iter().collect()).unwrap(), 1, 4);
    }

    #[test]
    fn hanging_condensation_matches_conforming_solution() {
        // a linear harmonic function lies in the constrained Q1 space and
        // must be reproduced exactly
        let pb = PLaplace::new(2.0, 1.0, Arc::new(|_, _| 0.0), Arc::new(|p, _| 1.0 + 2.0 * p[0] - 3.0 * p[1]));
        let mesh = Mesh::unit_square(2).refine(&[0].into_iter().collect()).unwrap();
        let mesh = mesh.refine(&[4].into_iter().collect()).unwrap();
        let (s, cs) = setup(mesh, 1, &pb);
        let rule = run_rule(2);
        let mut u = DiscreteFunction::zeros(&s);
        cs.distribute(&mut u.coeffs);
        let jac = assemble_jacobian(&pb, &cs, &u, &rule).unwrap();
        let res = assemble_residual(&pb, &cs, &u, &rule).unwrap();
        let mut d = solve_direct(&jac, &res.iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        cs.homogeneous().distribute(&mut d);
        u.axpy(1.0, &d);
        for n in 0..s.n_nodes() {
            let p = s.node_point(n);
            assert!((u.coeffs[n] - (1.0 + 2.0 * p[0] - 3.0 * p[1])).abs() < 1e-10);
        }
        let res = assemble_residual(&pb, &cs, &u, &rule).unwrap();
        assert!(max_norm(&res) < 1e-10);
    }

    #[test]
    fn primal_weight_is_linear() {
        let pb = PLaplace::with_constant_rhs(4.0, 1.0, 1.0);
        let mesh = Arc::new(Mesh::unit_square(2).refine(&[2].into_iter().collect()).unwrap());
        let s = Arc::new(FeSpace::new(mesh.clone(), 1, 1));
        let s2 = Arc::new(FeSpace::new(mesh, 2, 1));
        let rule = run_rule(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_fn = |sp: &Arc<FeSpace>| {
            let mut f = DiscreteFunction::from_coeffs(sp, (0..sp.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            ConstraintSet::hanging_only(sp).distribute(&mut f.coeffs);
            f
        };
        let u = rand_fn(&s);
        let (w1, w2, w3) = (rand_fn(&s2), rand_fn(&s2), rand_fn(&s2));
        let mut comb = w1.clone();
        comb.axpy(2.0, &w2.coeffs);
        comb.axpy(-0.5, &w3.coeffs);
        let f = |w: &DiscreteFunction| weighted_primal_residual(&pb, &u, w, &rule).unwrap();
        let lhs = f(&comb);
        let rhs = f(&w1) + 2.0 * f(&w2) - 0.5 * f(&w3);
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
