//! Goal functionals as expression trees over linear leaves (point values and
//! weighted integrals), with values, directional derivatives, assembled
//! gradients and partition-of-unity localization.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{basis, ConstraintSet, DiscreteFunction, FeSpace, Field};
use crate::mesh::{bilinear_shape, Mesh, Point, Side};
use crate::problems::slit_profile;
use crate::quadrature::QuadRule;

/// Weight of an integral functional: one factor per solution component.
pub type WeightFn = Arc<dyn Fn(Point) -> Result<Vec<f64>> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Domain,
    /// `[x0, x1, y0, y1]`
    Box([f64; 4]),
}

#[derive(Clone)]
pub enum Leaf {
    PointValue { point: Point, component: usize, side: Option<Side> },
    WeightedIntegral { weight: WeightFn, region: Region },
}

#[derive(Clone)]
pub enum FunctionalExpr {
    Leaf(Leaf),
    Sum(Vec<FunctionalExpr>),
    Scale(f64, Box<FunctionalExpr>),
    Product(Vec<FunctionalExpr>),
    Power(Box<FunctionalExpr>, u32),
    Shift(Box<FunctionalExpr>, f64),
}

impl std::fmt::Debug for FunctionalExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FunctionalExpr::Leaf(Leaf::PointValue { point, component, .. }) => {
                write!(f, "u{}({}, {})", component + 1, point[0], point[1])
            }
            FunctionalExpr::Leaf(Leaf::WeightedIntegral { region, .. }) => write!(f, "int[{region:?}]"),
            FunctionalExpr::Sum(v) => f.debug_tuple("Sum").field(v).finish(),
            FunctionalExpr::Scale(c, e) => write!(f, "{c} * {e:?}"),
            FunctionalExpr::Product(v) => f.debug_tuple("Product").field(v).finish(),
            FunctionalExpr::Power(e, k) => write!(f, "({e:?})^{k}"),
            FunctionalExpr::Shift(e, c) => write!(f, "({e:?} + {c})"),
        }
    }
}

impl FunctionalExpr {
    pub fn point(point: Point, component: usize) -> FunctionalExpr {
        FunctionalExpr::Leaf(Leaf::PointValue { point, component, side: None })
    }

    pub fn point_on_side(point: Point, component: usize, side: Side) -> FunctionalExpr {
        FunctionalExpr::Leaf(Leaf::PointValue { point, component, side: Some(side) })
    }

    pub fn integral(weight: WeightFn, region: Region) -> FunctionalExpr {
        FunctionalExpr::Leaf(Leaf::WeightedIntegral { weight, region })
    }

    /// `int_region u_component` for an `n_components` field.
    pub fn mean_of(component: usize, n_components: usize, region: Region) -> FunctionalExpr {
        let weight: WeightFn = Arc::new(move |_| {
            let mut w = vec![0.0; n_components];
            w[component] = 1.0;
            Ok(w)
        });
        FunctionalExpr::integral(weight, region)
    }

    pub fn times(self, other: FunctionalExpr) -> FunctionalExpr {
        match self {
            FunctionalExpr::Product(mut v) => {
                v.push(other);
                FunctionalExpr::Product(v)
            }
            e => FunctionalExpr::Product(vec![e, other]),
        }
    }

    pub fn plus(self, other: FunctionalExpr) -> FunctionalExpr {
        match self {
            FunctionalExpr::Sum(mut v) => {
                v.push(other);
                FunctionalExpr::Sum(v)
            }
            e => FunctionalExpr::Sum(vec![e, other]),
        }
    }

    pub fn scaled(self, c: f64) -> FunctionalExpr {
        FunctionalExpr::Scale(c, Box::new(self))
    }

    pub fn shifted(self, c: f64) -> FunctionalExpr {
        FunctionalExpr::Shift(Box::new(self), c)
    }

    pub fn pow(self, k: u32) -> FunctionalExpr {
        assert!(k >= 1, "powers must be positive");
        FunctionalExpr::Power(Box::new(self), k)
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            FunctionalExpr::Leaf(l) => out.push(l),
            FunctionalExpr::Sum(v) | FunctionalExpr::Product(v) => v.iter().for_each(|e| e.collect_leaves(out)),
            FunctionalExpr::Scale(_, e) | FunctionalExpr::Power(e, _) | FunctionalExpr::Shift(e, _) => {
                e.collect_leaves(out)
            }
        }
    }

    /// Value and directional derivative from leaf values `vals` and leaf
    /// derivatives `dvals` (forward mode).
    fn forward(&self, vals: &[f64], dvals: &[f64], idx: &mut usize) -> (f64, f64) {
        match self {
            FunctionalExpr::Leaf(_) => {
                let k = *idx;
                *idx += 1;
                (vals[k], dvals[k])
            }
            FunctionalExpr::Sum(v) => v.iter().fold((0.0, 0.0), |(a, b), e| {
                let (x, dx) = e.forward(vals, dvals, idx);
                (a + x, b + dx)
            }),
            FunctionalExpr::Scale(c, e) => {
                let (x, dx) = e.forward(vals, dvals, idx);
                (c * x, c * dx)
            }
            FunctionalExpr::Shift(e, c) => {
                let (x, dx) = e.forward(vals, dvals, idx);
                (x + c, dx)
            }
            FunctionalExpr::Power(e, k) => {
                let (x, dx) = e.forward(vals, dvals, idx);
                (x.powi(*k as i32), *k as f64 * x.powi(*k as i32 - 1) * dx)
            }
            FunctionalExpr::Product(v) => v.iter().fold((1.0, 0.0), |(p, dp), e| {
                let (x, dx) = e.forward(vals, dvals, idx);
                (p * x, dp * x + p * dx)
            }),
        }
    }

    pub fn leaf_values(&self, u: &dyn Field, rule: &QuadRule) -> Result<Vec<f64>> {
        self.leaves().into_iter().map(|l| l.apply(u, rule)).collect()
    }

    /// Value from precomputed leaf values.
    pub fn value_from_leaves(&self, vals: &[f64]) -> f64 {
        self.forward(vals, &vec![0.0; vals.len()], &mut 0).0
    }

    /// `dJ/dL_k` at the given leaf values.
    pub fn partials_from_leaves(&self, vals: &[f64]) -> Vec<f64> {
        (0..vals.len())
            .map(|k| {
                let mut d = vec![0.0; vals.len()];
                d[k] = 1.0;
                self.forward(vals, &d, &mut 0).1
            })
            .collect()
    }

    pub fn eval(&self, u: &dyn Field, rule: &QuadRule) -> Result<f64> {
        Ok(self.value_from_leaves(&self.leaf_values(u, rule)?))
    }

    /// `J'(u)(v)`.
    pub fn derivative(&self, u: &dyn Field, v: &dyn Field, rule: &QuadRule) -> Result<f64> {
        let vals = self.leaf_values(u, rule)?;
        let dvals = self.leaf_values(v, rule)?;
        Ok(self.forward(&vals, &dvals, &mut 0).1)
    }

    /// Unconstrained vector of `J'(u)(phi_i)`.
    pub fn gradient(&self, space: &FeSpace, u: &dyn Field, rule: &QuadRule) -> Result<Vec<f64>> {
        let partials = self.partials_from_leaves(&self.leaf_values(u, rule)?);
        let mut out = vec![0.0; space.n_dofs()];
        for (leaf, c) in self.leaves().into_iter().zip(partials) {
            if c != 0.0 {
                leaf.add_gradient(space, rule, c, &mut out)?;
            }
        }
        Ok(out)
    }
}

/// `J'(u)(phi_i)` condensed with `cs` (constrained entries zero).
pub fn assemble_functional_gradient(
    functional: &FunctionalExpr,
    cs: &ConstraintSet,
    u: &DiscreteFunction,
    rule: &QuadRule,
) -> Result<Vec<f64>> {
    let mut g = functional.gradient(cs.space(), u, rule)?;
    cs.condense_vector(&mut g);
    Ok(g)
}

impl Leaf {
    /// The (linear) leaf applied to a field.
    pub fn apply(&self, f: &dyn Field, rule: &QuadRule) -> Result<f64> {
        match self {
            Leaf::PointValue { point, component, side } => {
                let (cell, xi) = f
                    .mesh()
                    .locate(*point, *side)
                    .ok_or(Error::PointOutsideDomain { x: point[0], y: point[1] })?;
                Ok(f.eval(cell, xi).0[*component])
            }
            Leaf::WeightedIntegral { weight, region } => {
                let mut sum = 0.0;
                let mut err = None;
                integration_points(f.mesh(), *region, rule, |cell, xi, x, jxw| {
                    if err.is_some() {
                        return;
                    }
                    match weight(x) {
                        Ok(w) => {
                            if w.iter().all(|&v| v == 0.0) {
                                return;
                            }
                            let (v, _) = f.eval(cell, xi);
                            sum += jxw * w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                        }
                        Err(e) => err = Some(e),
                    }
                });
                match err {
                    Some(e) => Err(e),
                    None => Ok(sum),
                }
            }
        }
    }

    fn add_gradient(&self, space: &FeSpace, rule: &QuadRule, scale: f64, out: &mut [f64]) -> Result<()> {
        let r = space.degree();
        let nc = space.n_components();
        match self {
            Leaf::PointValue { point, component, side } => {
                let (cell, xi) =
                    space.mesh().locate(*point, *side).ok_or(Error::PointOutsideDomain { x: point[0], y: point[1] })?;
                let (phi, _) = basis(r, xi);
                for (a, &n) in space.cell_nodes(cell).iter().enumerate() {
                    out[n * nc + component] += scale * phi[a];
                }
                Ok(())
            }
            Leaf::WeightedIntegral { weight, region } => {
                let mut err = None;
                integration_points(space.mesh(), *region, rule, |cell, xi, x, jxw| {
                    if err.is_some() {
                        return;
                    }
                    match weight(x) {
                        Ok(w) => {
                            if w.iter().all(|&v| v == 0.0) {
                                return;
                            }
                            let (phi, _) = basis(r, xi);
                            for (a, &n) in space.cell_nodes(cell).iter().enumerate() {
                                for c in 0..nc {
                                    out[n * nc + c] += scale * jxw * w[c] * phi[a];
                                }
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                });
                err.map_or(Ok(()), Err)
            }
        }
    }

    /// Calls `sink(cell, [L(f psi_0), .., L(f psi_3)])` with the four bilinear
    /// hat functions of each contributing cell.
    pub fn localize(&self, f: &dyn Field, rule: &QuadRule, sink: &mut dyn FnMut(usize, [f64; 4])) -> Result<()> {
        match self {
            Leaf::PointValue { point, component, side } => {
                let (cell, xi) =
                    f.mesh().locate(*point, *side).ok_or(Error::PointOutsideDomain { x: point[0], y: point[1] })?;
                let v = f.eval(cell, xi).0[*component];
                sink(cell, bilinear_shape(xi).map(|p| v * p));
                Ok(())
            }
            Leaf::WeightedIntegral { weight, region } => {
                let mut err = None;
                let mut current: Option<(usize, [f64; 4])> = None;
                integration_points(f.mesh(), *region, rule, |cell, xi, x, jxw| {
                    if err.is_some() {
                        return;
                    }
                    match current {
                        Some((c, acc)) if c != cell => {
                            sink(c, acc);
                            current = Some((cell, [0.0; 4]));
                        }
                        None => current = Some((cell, [0.0; 4])),
                        _ => {}
                    }
                    match weight(x) {
                        Ok(w) => {
                            if w.iter().all(|&v| v == 0.0) {
                                return;
                            }
                            let (v, _) = f.eval(cell, xi);
                            let val = jxw * w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                            let psi = bilinear_shape(xi);
                            let acc = &mut current.as_mut().expect("set above").1;
                            for a in 0..4 {
                                acc[a] += val * psi[a];
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                if let Some((c, acc)) = current {
                    sink(c, acc);
                }
                Ok(())
            }
        }
    }
}

/// Visits `(cell, xi, x, jxw)` for a quadrature of `region`. Axis-aligned
/// cells cut by a box are integrated exactly over the overlap by mapping the
/// rule onto the overlapping reference sub-rectangle; other cut cells fall
/// back to 8x8 sub-squares selected by their mapped centres.
pub fn integration_points(mesh: &Mesh, region: Region, rule: &QuadRule, mut visit: impl FnMut(usize, [f64; 2], Point, f64)) {
    let full = |cell: usize, visit: &mut dyn FnMut(usize, [f64; 2], Point, f64), x0: [f64; 2], h: [f64; 2]| {
        for (q, p) in rule.points.iter().enumerate() {
            let xi = [x0[0] + h[0] * p[0], x0[1] + h[1] * p[1]];
            let j = mesh.jacobian(cell, xi);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            visit(cell, xi, mesh.map_point(cell, xi), rule.weights[q] * det * h[0] * h[1]);
        }
    };
    for &cell in mesh.active_cells() {
        match region {
            Region::Domain => full(cell, &mut visit, [0.0, 0.0], [1.0, 1.0]),
            Region::Box(b) => {
                let bb = mesh.bounding_box(cell);
                let (ox0, ox1) = (bb[0].max(b[0]), bb[1].min(b[1]));
                let (oy0, oy1) = (bb[2].max(b[2]), bb[3].min(b[3]));
                if ox1 <= ox0 || oy1 <= oy0 {
                    continue;
                }
                if let Some(rect) = mesh.axis_aligned_rect(cell) {
                    let (hx, hy) = (rect[1] - rect[0], rect[3] - rect[2]);
                    let s0 = [(ox0 - rect[0]) / hx, (oy0 - rect[2]) / hy];
                    let s1 = [(ox1 - rect[0]) / hx, (oy1 - rect[2]) / hy];
                    full(cell, &mut visit, s0, [s1[0] - s0[0], s1[1] - s0[1]]);
                } else {
                    let inside = |p: Point| p[0] >= b[0] && p[0] <= b[1] && p[1] >= b[2] && p[1] <= b[3];
                    let all_in = mesh.cell(cell).vertices.iter().all(|&v| inside(mesh.vertex(v)));
                    if all_in {
                        full(cell, &mut visit, [0.0, 0.0], [1.0, 1.0]);
                        continue;
                    }
                    let n = 8;
                    let h = 1.0 / n as f64;
                    for j in 0..n {
                        for i in 0..n {
                            let x0 = [i as f64 * h, j as f64 * h];
                            if inside(mesh.map_point(cell, [x0[0] + 0.5 * h, x0[1] + 0.5 * h])) {
                                full(cell, &mut visit, x0, [h, h]);
                            }
                        }
                    }
                }
            }
        }
    }
}

// ------------------------------------------------------------------ catalog

#[derive(Clone, Debug)]
pub struct NamedFunctional {
    pub name: String,
    pub expr: FunctionalExpr,
}

fn named(name: &str, expr: FunctionalExpr) -> NamedFunctional {
    NamedFunctional { name: name.to_string(), expr }
}

/// Exact value of `int_{x<y} (y - x) sign(y) sqrt(sqrt(x^2+y^2) - x)` over
/// `(-1,1)^2`, from adaptive quadrature of the closed form.
pub const SLIT_WEDGE_INTEGRAL: f64 = 1.107_022_632_975_473_7;

/// `chi_C`: `y - x` above the diagonal, zero elsewhere.
pub fn chi_c(x: Point) -> f64 {
    if x[0] < x[1] {
        x[1] - x[0]
    } else {
        0.0
    }
}

/// `chi_D`: indicator of the open first quadrant.
pub fn chi_d(x: Point) -> f64 {
    if x[0] > 0.0 && x[1] > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Weight `(-4 chi_D, 2 chi_D / (1 - profile), 4 chi_D)`; fails where the
/// denominator is not bounded away from zero.
pub fn phi_d(x: Point) -> Result<Vec<f64>> {
    let chi = chi_d(x);
    if chi == 0.0 {
        return Ok(vec![0.0; 3]);
    }
    let denom = 1.0 - slit_profile(x, None);
    if denom.abs() < 1e-8 {
        return Err(Error::FunctionalSingular {
            x: x[0],
            y: x[1],
            detail: format!("|1 - profile| = {:.3e}", denom.abs()),
        });
    }
    Ok(vec![-4.0 * chi, 2.0 * chi / denom, 4.0 * chi])
}

/// Goal functionals of each experiment family. Names: `example1a`
/// (integral on the unit square), `example1b` (point value), `example1c`
/// (four cheese functionals), `example2` (six slit-domain functionals).
pub fn catalog(name: &str) -> Result<Vec<NamedFunctional>> {
    type F = FunctionalExpr;
    match name {
        "example1a" => Ok(vec![named("J1", F::mean_of(0, 1, Region::Domain))]),
        "example1b" => Ok(vec![named("J1", F::point([0.6, 0.6], 0))]),
        "example1c" => {
            let cheese = Mesh::cheese();
            let area: f64 = cheese.active_cells().iter().map(|&c| cheese.area(c)).sum();
            let j1 = F::point([2.9, 2.1], 0).shifted(1.0).times(F::point([2.1, 2.9], 0).shifted(1.0));
            let j2 = F::mean_of(0, 1, Region::Domain).plus(F::point([2.5, 2.5], 0).scaled(-area)).pow(2);
            let j3 = F::mean_of(0, 1, Region::Box([2.0, 3.0, 2.0, 3.0]));
            let j4 = F::point([0.6, 0.6], 0);
            Ok(vec![named("J1", j1), named("J2", j2), named("J3", j3), named("J4", j4)])
        }
        "example2" => {
            let ja = || F::point([-0.5, 0.01], 2);
            let jb = || F::point([-0.01, 0.01], 0);
            let jc = || F::integral(Arc::new(|x| Ok(vec![0.0, 0.0, chi_c(x)])), Region::Domain);
            let jd = || F::integral(Arc::new(phi_d), Region::Domain);
            let je = || F::point([-0.9, -0.9], 0);
            let jf = || F::point([-0.9, -0.1], 1);
            Ok(vec![
                named("J1", jb().times(jd())),
                named("J2", ja().times(jc())),
                named("J3", ja().times(jc()).times(jf())),
                named("J4", jb().times(je())),
                named("J5", jb().pow(3).times(je())),
                named("J6", jc()),
            ])
        }
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}
