//! Continuous Lagrange spaces `Q_c^r` on hierarchical quad meshes, affine
//! constraints (hanging nodes and Dirichlet data) and discrete functions.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh, Point, Side, FACE_VERTICES};
use crate::quadrature::QuadRule;

/// Scalar data on the domain. The side argument selects the branch on the
/// two lips of a slit and is `None` where the distinction is meaningless.
pub type ScalarFn = Arc<dyn Fn(Point, Option<Side>) -> f64 + Send + Sync>;

/// Values and derivatives of the 1D equispaced Lagrange basis of degree `r`.
pub fn lagrange_1d(r: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes: Vec<f64> = (0..=r).map(|k| k as f64 / r as f64).collect();
    let mut val = vec![0.0; r + 1];
    let mut der = vec![0.0; r + 1];
    for k in 0..=r {
        let mut v = 1.0;
        let mut d = 0.0;
        for m in 0..=r {
            if m == k {
                continue;
            }
            let denom = nodes[k] - nodes[m];
            d = d * (t - nodes[m]) / denom + v / denom;
            v *= (t - nodes[m]) / denom;
        }
        val[k] = v;
        der[k] = d;
    }
    (val, der)
}

/// Tensor-product basis on the reference square, local index `j*(r+1)+i`:
/// values and reference gradients.
pub fn basis(r: usize, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
    let (vx, dx) = lagrange_1d(r, xi[0]);
    let (vy, dy) = lagrange_1d(r, xi[1]);
    let n = r + 1;
    let mut val = Vec::with_capacity(n * n);
    let mut grad = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            val.push(vx[i] * vy[j]);
            grad.push([dx[i] * vy[j], vx[i] * dy[j]]);
        }
    }
    (val, grad)
}

/// Reference coordinates of local node `a` of a degree-`r` cell.
pub fn node_ref(r: usize, a: usize) -> [f64; 2] {
    let (i, j) = (a % (r + 1), a / (r + 1));
    [i as f64 / r as f64, j as f64 / r as f64]
}

/// Basis values and reference gradients tabulated on a quadrature rule.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub n_basis: usize,
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

impl ShapeTable {
    pub fn new(r: usize, rule: &QuadRule) -> ShapeTable {
        let mut values = Vec::with_capacity(rule.len());
        let mut grads = Vec::with_capacity(rule.len());
        for &p in &rule.points {
            let (v, g) = basis(r, p);
            values.push(v);
            grads.push(g);
        }
        ShapeTable { n_basis: (r + 1) * (r + 1), values, grads }
    }
}

/// Mapped quadrature data of one cell.
#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub points: Vec<Point>,
    pub jxw: Vec<f64>,
    /// `inv[q][j][i] = d xi_j / d x_i`
    pub inv: Vec<[[f64; 2]; 2]>,
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, cell: usize, rule: &QuadRule) -> CellGeometry {
        let n = rule.len();
        let mut points = Vec::with_capacity(n);
        let mut jxw = Vec::with_capacity(n);
        let mut inv = Vec::with_capacity(n);
        for (q, &xi) in rule.points.iter().enumerate() {
            points.push(mesh.map_point(cell, xi));
            let j = mesh.jacobian(cell, xi);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            jxw.push(det * rule.weights[q]);
            inv.push([[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]]);
        }
        CellGeometry { points, jxw, inv }
    }

    /// Physical gradient from a reference gradient at quadrature point `q`.
    #[inline]
    pub fn physical(&self, q: usize, g: [f64; 2]) -> [f64; 2] {
        let m = &self.inv[q];
        [g[0] * m[0][0] + g[1] * m[1][0], g[0] * m[0][1] + g[1] * m[1][1]]
    }
}

/// Physical gradient from a reference gradient at an arbitrary point.
pub fn physical_gradient(mesh: &Mesh, cell: usize, xi: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let j = mesh.jacobian(cell, xi);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let m = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    [g[0] * m[0][0] + g[1] * m[1][0], g[0] * m[0][1] + g[1] * m[1][1]]
}

/// A node-level linear constraint `node = sum w * master`.
#[derive(Clone, Debug)]
pub struct NodeConstraint {
    pub node: usize,
    pub masters: Vec<(usize, f64)>,
}

#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    n_components: usize,
    node_points: Vec<Point>,
    node_side: Vec<Option<Side>>,
    /// Bit 0: on a Dirichlet face, bit 1: on a Neumann face.
    node_tags: Vec<u8>,
    cell_nodes: Vec<Vec<usize>>,
    hanging: Vec<NodeConstraint>,
}

impl FeSpace {
    /// Numbers the nodes by active cell id, then by local lexicographic index.
    pub fn new(mesh: Arc<Mesh>, degree: usize, n_components: usize) -> FeSpace {
        assert!(degree >= 1 && n_components >= 1);
        let r = degree;
        let n_loc = (r + 1) * (r + 1);
        let mut vertex_node = vec![usize::MAX; mesh.n_vertices()];
        let mut edge_nodes: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut node_points = Vec::new();
        let mut node_side = Vec::new();
        let mut cell_nodes = vec![Vec::new(); mesh.cells().len()];

        for &c in mesh.active_cells() {
            let cell = mesh.cell(c);
            let side = mesh.side_hint(c);
            let mut nodes = Vec::with_capacity(n_loc);
            for a in 0..n_loc {
                let (i, j) = (a % (r + 1), a / (r + 1));
                let fresh = |node_points: &mut Vec<Point>, node_side: &mut Vec<Option<Side>>| {
                    node_points.push(mesh.map_point(c, node_ref(r, a)));
                    node_side.push(side);
                    node_points.len() - 1
                };
                let corner = match (i, j) {
                    (0, 0) => Some(0),
                    (i, 0) if i == r => Some(1),
                    (0, j) if j == r => Some(2),
                    (i, j) if i == r && j == r => Some(3),
                    _ => None,
                };
                let id = if let Some(k) = corner {
                    let v = cell.vertices[k];
                    if vertex_node[v] == usize::MAX {
                        vertex_node[v] = fresh(&mut node_points, &mut node_side);
                    }
                    vertex_node[v]
                } else if let Some((f, k)) = face_position(r, i, j) {
                    let e = cell.faces[f];
                    let forward = mesh.edge(e).vertices[0] == cell.vertices[FACE_VERTICES[f][0]];
                    let slot = if forward { k - 1 } else { r - k - 1 };
                    if !edge_nodes.contains_key(&e) {
                        // create all interior nodes of the edge in edge order
                        let mut list = Vec::with_capacity(r - 1);
                        for s in 1..r {
                            let kk = if forward { s } else { r - s };
                            let (ii, jj) = face_local(r, f, kk);
                            node_points.push(mesh.map_point(c, node_ref(r, jj * (r + 1) + ii)));
                            node_side.push(side);
                            list.push(node_points.len() - 1);
                        }
                        edge_nodes.insert(e, list);
                    }
                    edge_nodes[&e][slot]
                } else {
                    fresh(&mut node_points, &mut node_side)
                };
                nodes.push(id);
            }
            cell_nodes[c] = nodes;
        }

        let mut node_tags = vec![0u8; node_points.len()];
        for &c in mesh.active_cells() {
            for f in 0..4 {
                if let Some(tag) = mesh.edge(mesh.cell(c).faces[f]).boundary {
                    let bit = match tag {
                        BoundaryTag::Dirichlet => 1,
                        BoundaryTag::Neumann => 2,
                    };
                    for k in 0..=r {
                        let (i, j) = face_local(r, f, k);
                        node_tags[cell_nodes[c][j * (r + 1) + i]] |= bit;
                    }
                }
            }
        }

        let mut hanging = Vec::new();
        for (c, f) in mesh.hanging_faces() {
            let e = mesh.cell(c).faces[f];
            let edge = mesh.edge(e);
            let [c0, c1] = edge.children.expect("hanging face is refined");
            let mid = edge.midpoint.expect("refined edge has a midpoint");
            let mut coarse = Vec::with_capacity(r + 1);
            coarse.push(vertex_node[edge.vertices[0]]);
            if r > 1 {
                coarse.extend_from_slice(&edge_nodes[&e]);
            }
            coarse.push(vertex_node[edge.vertices[1]]);
            let mut fine: Vec<(usize, f64)> = vec![(vertex_node[mid], 0.5)];
            if r > 1 {
                for (half, ch) in [c0, c1].into_iter().enumerate() {
                    let list = &edge_nodes[&ch];
                    debug_assert_eq!(mesh.edge(ch).vertices[0], if half == 0 { edge.vertices[0] } else { mid });
                    for (k, &n) in list.iter().enumerate() {
                        fine.push((n, 0.5 * half as f64 + (k + 1) as f64 / (2 * r) as f64));
                    }
                }
            }
            for (node, t) in fine {
                let (l, _) = lagrange_1d(r, t);
                let masters: Vec<(usize, f64)> =
                    coarse.iter().zip(&l).filter(|(_, w)| w.abs() > 1e-13).map(|(&m, &w)| (m, w)).collect();
                hanging.push(NodeConstraint { node, masters });
            }
        }
        hanging.sort_by_key(|h| h.node);
        hanging.dedup_by_key(|h| h.node);

        FeSpace { mesh, degree, n_components, node_points, node_side, node_tags, cell_nodes, hanging }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_nodes(&self) -> usize {
        self.node_points.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.node_points.len() * self.n_components
    }

    pub fn n_local_nodes(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn dof(&self, node: usize, component: usize) -> usize {
        node * self.n_components + component
    }

    pub fn node_point(&self, node: usize) -> Point {
        self.node_points[node]
    }

    pub fn node_side(&self, node: usize) -> Option<Side> {
        self.node_side[node]
    }

    pub fn node_on(&self, node: usize, tag: BoundaryTag) -> bool {
        let bit = match tag {
            BoundaryTag::Dirichlet => 1,
            BoundaryTag::Neumann => 2,
        };
        self.node_tags[node] & bit != 0
    }

    /// Global nodes of an active cell in local lexicographic order.
    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        &self.cell_nodes[cell]
    }

    /// Global dofs of an active cell, component-blocked: local index `c * n_loc + a`.
    pub fn cell_dofs(&self, cell: usize) -> Vec<usize> {
        let nodes = &self.cell_nodes[cell];
        let mut out = Vec::with_capacity(nodes.len() * self.n_components);
        for c in 0..self.n_components {
            out.extend(nodes.iter().map(|&n| n * self.n_components + c));
        }
        out
    }

    pub fn hanging_constraints(&self) -> &[NodeConstraint] {
        &self.hanging
    }

    pub fn same_mesh(&self, other: &FeSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }
}

/// Face and position along it of a local node that lies on a face interior.
fn face_position(r: usize, i: usize, j: usize) -> Option<(usize, usize)> {
    if i == 0 {
        Some((0, j))
    } else if i == r {
        Some((1, j))
    } else if j == 0 {
        Some((2, i))
    } else if j == r {
        Some((3, i))
    } else {
        None
    }
}

/// Local (i, j) of the node at position `k` along face `f`.
fn face_local(r: usize, f: usize, k: usize) -> (usize, usize) {
    match f {
        0 => (0, k),
        1 => (r, k),
        2 => (k, 0),
        _ => (k, r),
    }
}

// ----------------------------------------------------------------- constraints

/// Dirichlet data for one component on faces carrying `tag`.
#[derive(Clone)]
pub struct DirichletSpec {
    pub tag: BoundaryTag,
    pub component: usize,
    pub data: ScalarFn,
}

impl std::fmt::Debug for DirichletSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletSpec").field("tag", &self.tag).field("component", &self.component).finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintLine {
    pub entries: Vec<(usize, f64)>,
    pub inhomogeneity: f64,
}

/// Closed affine constraints: no master of a line is itself constrained.
#[derive(Debug)]
pub struct ConstraintSet {
    space: Arc<FeSpace>,
    lines: Vec<Option<ConstraintLine>>,
    pattern: OnceLock<Arc<Vec<Vec<usize>>>>,
}

impl Clone for ConstraintSet {
    fn clone(&self) -> Self {
        ConstraintSet { space: self.space.clone(), lines: self.lines.clone(), pattern: OnceLock::new() }
    }
}

impl ConstraintSet {
    /// Hanging-node constraints of the space plus nodal Dirichlet values.
    pub fn new(space: &Arc<FeSpace>, dirichlet: &[DirichletSpec]) -> Result<ConstraintSet> {
        let nc = space.n_components();
        let mut lines: Vec<Option<ConstraintLine>> = vec![None; space.n_dofs()];
        for spec in dirichlet {
            assert!(spec.component < nc, "dirichlet component out of range");
            for node in 0..space.n_nodes() {
                if !space.node_on(node, spec.tag) {
                    continue;
                }
                let value = (spec.data)(space.node_point(node), space.node_side(node));
                let dof = space.dof(node, spec.component);
                match &lines[dof] {
                    Some(old) if (old.inhomogeneity - value).abs() > 1e-12 => {
                        return Err(Error::ConflictingConstraints { dof, first: old.inhomogeneity, second: value });
                    }
                    Some(_) => {}
                    None => lines[dof] = Some(ConstraintLine { entries: Vec::new(), inhomogeneity: value }),
                }
            }
        }
        for h in space.hanging_constraints() {
            for c in 0..nc {
                let dof = space.dof(h.node, c);
                if lines[dof].is_none() {
                    let entries = h.masters.iter().map(|&(m, w)| (space.dof(m, c), w)).collect();
                    lines[dof] = Some(ConstraintLine { entries, inhomogeneity: 0.0 });
                }
            }
        }
        let mut set = ConstraintSet { space: space.clone(), lines, pattern: OnceLock::new() };
        set.close();
        Ok(set)
    }

    /// Hanging-node constraints only.
    pub fn hanging_only(space: &Arc<FeSpace>) -> ConstraintSet {
        ConstraintSet::new(space, &[]).expect("no dirichlet data, no conflicts")
    }

    fn close(&mut self) {
        let n = self.lines.len();
        let mut resolved = vec![false; n];
        for i in 0..n {
            self.resolve(i, &mut resolved);
        }
    }

    fn resolve(&mut self, i: usize, resolved: &mut [bool]) {
        if resolved[i] || self.lines[i].is_none() {
            resolved[i] = true;
            return;
        }
        let line = self.lines[i].clone().expect("checked above");
        let mut acc: Vec<(usize, f64)> = Vec::new();
        let mut inhom = line.inhomogeneity;
        for &(m, w) in &line.entries {
            if self.lines[m].is_some() {
                self.resolve(m, resolved);
                let sub = self.lines[m].as_ref().expect("resolved line");
                inhom += w * sub.inhomogeneity;
                acc.extend(sub.entries.iter().map(|&(k, v)| (k, w * v)));
            } else {
                acc.push((m, w));
            }
        }
        acc.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (k, v) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged.retain(|e| e.1.abs() > 1e-14);
        self.lines[i] = Some(ConstraintLine { entries: merged, inhomogeneity: inhom });
        resolved[i] = true;
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn n_dofs(&self) -> usize {
        self.lines.len()
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.lines[dof].is_some()
    }

    pub fn line(&self, dof: usize) -> Option<&ConstraintLine> {
        self.lines[dof].as_ref()
    }

    pub fn n_constrained(&self) -> usize {
        self.lines.iter().filter(|l| l.is_some()).count()
    }

    /// Same constraints with all inhomogeneities removed.
    pub fn homogeneous(&self) -> ConstraintSet {
        let lines = self
            .lines
            .iter()
            .map(|l| l.as_ref().map(|l| ConstraintLine { entries: l.entries.clone(), inhomogeneity: 0.0 }))
            .collect();
        let pattern = OnceLock::new();
        if let Some(p) = self.pattern.get() {
            let _ = pattern.set(p.clone());
        }
        ConstraintSet { space: self.space.clone(), lines, pattern }
    }

    /// Overwrites constrained entries from their masters.
    pub fn distribute(&self, x: &mut [f64]) {
        for (i, line) in self.lines.iter().enumerate() {
            if let Some(l) = line {
                x[i] = l.inhomogeneity + l.entries.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
            }
        }
    }

    /// Applies the transposed distribution to a residual-type vector and
    /// zeroes the constrained entries.
    pub fn condense_vector(&self, r: &mut [f64]) {
        for (i, line) in self.lines.iter().enumerate() {
            if let Some(l) = line {
                let v = r[i];
                for &(j, w) in &l.entries {
                    r[j] += w * v;
                }
                r[i] = 0.0;
            }
        }
    }

    /// Maps a global dof to the unconstrained dofs it depends on.
    pub fn expand(&self, dof: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        match &self.lines[dof] {
            Some(l) => out.extend_from_slice(&l.entries),
            None => out.push((dof, 1.0)),
        }
    }

    /// Column pattern of the condensed matrix: rows of unconstrained dofs
    /// couple through cells, constrained rows hold only the diagonal.
    pub fn sparsity(&self) -> Arc<Vec<Vec<usize>>> {
        self.pattern
            .get_or_init(|| {
                let n = self.lines.len();
                let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
                let mut buf = Vec::new();
                let mut expanded: Vec<usize> = Vec::new();
                for &c in self.space.mesh().active_cells() {
                    expanded.clear();
                    for d in self.space.cell_dofs(c) {
                        self.expand(d, &mut buf);
                        expanded.extend(buf.iter().map(|e| e.0));
                    }
                    expanded.sort_unstable();
                    expanded.dedup();
                    for &i in &expanded {
                        rows[i].extend_from_slice(&expanded);
                    }
                }
                for (i, row) in rows.iter_mut().enumerate() {
                    row.push(i);
                    row.sort_unstable();
                    row.dedup();
                }
                Arc::new(rows)
            })
            .clone()
    }
}

// ------------------------------------------------------------ discrete functions

#[derive(Clone, Debug)]
pub struct DiscreteFunction {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl DiscreteFunction {
    pub fn zeros(space: &Arc<FeSpace>) -> DiscreteFunction {
        DiscreteFunction { space: space.clone(), coeffs: vec![0.0; space.n_dofs()] }
    }

    pub fn from_coeffs(space: &Arc<FeSpace>, coeffs: Vec<f64>) -> DiscreteFunction {
        assert_eq!(coeffs.len(), space.n_dofs(), "coefficient vector does not match the space");
        DiscreteFunction { space: space.clone(), coeffs }
    }

    /// Nodal interpolant of `f`, which returns one value per component.
    pub fn interpolate(space: &Arc<FeSpace>, f: impl Fn(Point, Option<Side>) -> Vec<f64>) -> DiscreteFunction {
        let nc = space.n_components();
        let mut coeffs = vec![0.0; space.n_dofs()];
        for node in 0..space.n_nodes() {
            let v = f(space.node_point(node), space.node_side(node));
            for c in 0..nc {
                coeffs[node * nc + c] = v[c];
            }
        }
        let mut out = DiscreteFunction { space: space.clone(), coeffs };
        ConstraintSet::hanging_only(space).distribute(&mut out.coeffs);
        out
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    /// Coefficients of one cell, component-blocked like [`FeSpace::cell_dofs`].
    pub fn cell_coeffs(&self, cell: usize) -> Vec<f64> {
        self.space.cell_dofs(cell).into_iter().map(|d| self.coeffs[d]).collect()
    }

    /// Value and physical gradient of every component at reference point `xi` of `cell`.
    pub fn eval_in_cell(&self, cell: usize, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let r = self.space.degree();
        let (phi, dphi) = basis(r, xi);
        let nodes = self.space.cell_nodes(cell);
        let nc = self.space.n_components();
        let mut val = vec![0.0; nc];
        let mut gref = vec![[0.0; 2]; nc];
        for (a, &n) in nodes.iter().enumerate() {
            for c in 0..nc {
                let u = self.coeffs[n * nc + c];
                val[c] += u * phi[a];
                gref[c][0] += u * dphi[a][0];
                gref[c][1] += u * dphi[a][1];
            }
        }
        let grad = gref.into_iter().map(|g| physical_gradient(self.mesh(), cell, xi, g)).collect();
        (val, grad)
    }

    pub fn value_at(&self, p: Point, component: usize, side: Option<Side>) -> Result<f64> {
        let (cell, xi) = self.mesh().locate(p, side).ok_or(Error::PointOutsideDomain { x: p[0], y: p[1] })?;
        Ok(self.eval_in_cell(cell, xi).0[component])
    }

    /// Nodal interpolation into another space on the same mesh.
    pub fn interpolate_to(&self, target: &Arc<FeSpace>) -> Result<DiscreteFunction> {
        if !self.space.same_mesh(target) {
            return Err(Error::MeshMismatch);
        }
        self.transfer_by(target, |c, xi| Some((c, xi)))
    }

    /// Interpolation into a space on a refinement of this function's mesh,
    /// evaluating each target node in its ancestor cell.
    pub fn transfer_to_refined(&self, target: &Arc<FeSpace>) -> Result<DiscreteFunction> {
        let source = self.mesh().clone();
        let fine = target.mesh().clone();
        if fine.cells().len() < source.cells().len() {
            return Err(Error::MeshMismatch);
        }
        self.transfer_by(target, |c, xi| fine.ancestor_coords(c, xi, |k| source.is_active(k)))
    }

    fn transfer_by(
        &self,
        target: &Arc<FeSpace>,
        locate: impl Fn(usize, [f64; 2]) -> Option<(usize, [f64; 2])>,
    ) -> Result<DiscreteFunction> {
        let nc = self.space.n_components();
        if target.n_components() != nc {
            return Err(Error::MeshMismatch);
        }
        let r = target.degree();
        let mut coeffs = vec![0.0; target.n_dofs()];
        let mut done = vec![false; target.n_nodes()];
        for &c in target.mesh().active_cells() {
            for (a, &n) in target.cell_nodes(c).iter().enumerate() {
                if done[n] {
                    continue;
                }
                let (sc, sxi) = locate(c, node_ref(r, a)).ok_or(Error::MeshMismatch)?;
                let (val, _) = self.eval_in_cell(sc, sxi);
                for k in 0..nc {
                    coeffs[n * nc + k] = val[k];
                }
                done[n] = true;
            }
        }
        ConstraintSet::hanging_only(target).distribute(&mut coeffs);
        Ok(DiscreteFunction { space: target.clone(), coeffs })
    }

    pub fn axpy(&mut self, a: f64, x: &[f64]) {
        for (u, v) in self.coeffs.iter_mut().zip(x) {
            *u += a * v;
        }
    }
}

/// Anything evaluable cellwise on a mesh: values and physical gradients of
/// each component at a reference point of an active cell.
pub trait Field {
    fn mesh(&self) -> &Arc<Mesh>;
    fn n_components(&self) -> usize;
    fn eval(&self, cell: usize, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>);
}

impl Field for DiscreteFunction {
    fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    fn n_components(&self) -> usize {
        self.space.n_components()
    }

    fn eval(&self, cell: usize, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        self.eval_in_cell(cell, xi)
    }
}

/// `a - b` for two functions on the same mesh, possibly of different degree.
pub struct Difference<'a> {
    pub a: &'a DiscreteFunction,
    pub b: &'a DiscreteFunction,
}

impl<'a> Difference<'a> {
    pub fn new(a: &'a DiscreteFunction, b: &'a DiscreteFunction) -> Result<Difference<'a>> {
        if !a.space.same_mesh(&b.space) || a.space.n_components() != b.space.n_components() {
            return Err(Error::MeshMismatch);
        }
        Ok(Difference { a, b })
    }
}

impl Field for Difference<'_> {
    fn mesh(&self) -> &Arc<Mesh> {
        self.a.mesh()
    }

    fn n_components(&self) -> usize {
        self.a.space.n_components()
    }

    fn eval(&self, cell: usize, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (mut va, mut ga) = self.a.eval_in_cell(cell, xi);
        let (vb, gb) = self.b.eval_in_cell(cell, xi);
        for c in 0..va.len() {
            va[c] -= vb[c];
            ga[c][0] -= gb[c][0];
            ga[c][1] -= gb[c][1];
        }
        (va, ga)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(mesh: Mesh, r: usize, nc: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Arc::new(mesh), r, nc))
    }

    fn hanging_mesh() -> Mesh {
        Mesh::unit_square(2).refine(&[0].into_iter().collect()).unwrap()
    }

    #[test]
    fn dof_counts() {
        assert_eq!(space(Mesh::unit_square(2), 1, 1).n_dofs(), 9);
        assert_eq!(space(Mesh::unit_square(2), 2, 1).n_dofs(), 25);
        assert_eq!(space(Mesh::unit_square(4), 3, 1).n_dofs(), 169);
        assert_eq!(space(Mesh::unit_square(2), 2, 3).n_dofs(), 75);
        assert_eq!(space(Mesh::cheese().refine_uniform(), 1, 1).n_dofs(), 117);
        // slit lips carry separate nodes
        assert_eq!(space(Mesh::slit(4), 1, 1).n_dofs(), 25 + 2);
        assert_eq!(space(Mesh::slit(4), 2, 1).n_dofs(), 81 + 4);
    }

    #[test]
    fn node_points_match_distinct_support_points() {
        for r in 1..=4 {
            let s = space(Mesh::unit_square(3), r, 1);
            let mut pts: Vec<(i64, i64)> = (0..s.n_nodes())
                .map(|n| {
                    let p = s.node_point(n);
                    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
                })
                .collect();
            pts.sort();
            pts.dedup();
            assert_eq!(pts.len(), s.n_nodes());
            assert_eq!(s.n_nodes(), (3 * r + 1) * (3 * r + 1));
        }
    }

    #[test]
    fn q1_hanging_weights_are_halves() {
        let s = space(hanging_mesh(), 1, 1);
        let h = s.hanging_constraints();
        assert_eq!(h.len(), 2);
        for c in h {
            assert_eq!(c.masters.len(), 2);
            assert!(c.masters.iter().all(|&(_, w)| (w - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn hanging_weights_sum_to_one() {
        for r in 1..=4 {
            let s = space(hanging_mesh(), r, 1);
            for c in s.hanging_constraints() {
                let sum: f64 = c.masters.iter().map(|m| m.1).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn homogeneous_dirichlet_on_uniform_mesh() {
        let s = space(Mesh::unit_square(3), 2, 1);
        let zero: ScalarFn = Arc::new(|_, _| 0.0);
        let cs = ConstraintSet::new(&s, &[DirichletSpec { tag: BoundaryTag::Dirichlet, component: 0, data: zero }]).unwrap();
        assert_eq!(cs.n_constrained(), 4 * 6);
        for d in 0..cs.n_dofs() {
            if let Some(l) = cs.line(d) {
                assert!(l.entries.is_empty() && l.inhomogeneity == 0.0);
            }
        }
    }

    #[test]
    fn slit_dirichlet_copies_get_both_branches() {
        let s = space(Mesh::slit(4), 1, 1);
        let g: ScalarFn = Arc::new(|p: Point, side: Option<Side>| {
            let sign = match side {
                Some(sd) if p[1] == 0.0 => sd.sign(),
                _ => p[1].signum() * (p[1] != 0.0) as i32 as f64,
            };
            sign * ((p[0] * p[0] + p[1] * p[1]).sqrt() - p[0]).sqrt()
        });
        let cs = ConstraintSet::new(&s, &[DirichletSpec { tag: BoundaryTag::Dirichlet, component: 0, data: g.clone() }])
            .unwrap();
        // nodes at (-1, 0) lie on the Dirichlet boundary; the lip nodes at
        // (-0.5, 0) are Neumann only
        let expected = 2f64.sqrt();
        let mut seen = Vec::new();
        for n in 0..s.n_nodes() {
            if s.node_point(n) == [-1.0, 0.0] {
                seen.push(cs.line(n).unwrap().inhomogeneity);
            }
            if s.node_point(n) == [-0.5, 0.0] {
                assert!(!cs.is_constrained(n));
                let v = g(s.node_point(n), s.node_side(n));
                assert!((v.abs() - 1.0).abs() < 1e-15);
            }
        }
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen.len(), 2);
        assert!((seen[0] + expected).abs() < 1e-15 && (seen[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn conflicting_dirichlet_values() {
        let s = space(Mesh::unit_square(1), 1, 1);
        let a: ScalarFn = Arc::new(|_, _| 0.0);
        let b: ScalarFn = Arc::new(|_, _| 1.0);
        let err = ConstraintSet::new(
            &s,
            &[
                DirichletSpec { tag: BoundaryTag::Dirichlet, component: 0, data: a },
                DirichletSpec { tag: BoundaryTag::Dirichlet, component: 0, data: b },
            ],
        );
        assert!(matches!(err, Err(Error::ConflictingConstraints { .. })));
    }

    #[test]
    fn bilinear_average() {
        let s = space(Mesh::unit_square(1), 1, 1);
        let f = DiscreteFunction::interpolate(&s, |p, _| vec![p[0] + p[1] + 0.0 * p[0] * p[1]]);
        // corner values (0,1,1,2)
        assert!((f.value_at([0.5, 0.5], 0, None).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(f.value_at([2.0, 0.5], 0, None), Err(Error::PointOutsideDomain { .. })));
    }

    #[test]
    fn interpolation_between_degrees() {
        let m = Arc::new(Mesh::unit_square(1));
        let s1 = Arc::new(FeSpace::new(m.clone(), 1, 1));
        let s2 = Arc::new(FeSpace::new(m.clone(), 2, 1));
        let bubble = DiscreteFunction::interpolate(&s2, |p, _| vec![p[0] * (1.0 - p[0])]);
        let down = bubble.interpolate_to(&s1).unwrap();
        assert!(down.coeffs.iter().all(|&c| c.abs() < 1e-15));

        let lin = DiscreteFunction::interpolate(&s1, |p, _| vec![1.0 + 2.0 * p[0] - p[1]]);
        let back = lin.interpolate_to(&s2).unwrap().interpolate_to(&s1).unwrap();
        for (a, b) in lin.coeffs.iter().zip(&back.coeffs) {
            assert!((a - b).abs() < 1e-14);
        }
        let other = Arc::new(FeSpace::new(Arc::new(Mesh::unit_square(1)), 1, 1));
        assert!(matches!(lin.interpolate_to(&other), Err(Error::MeshMismatch)));
    }

    #[test]
    fn distribute_is_idempotent_and_continuous() {
        for r in 1..=3 {
            let s = space(hanging_mesh().refine(&[7].into_iter().collect()).unwrap(), r, 2);
            let cs = ConstraintSet::hanging_only(&s);
            let mut x: Vec<f64> = (0..s.n_dofs()).map(|i| ((i * 7919) % 23) as f64 * 0.1 - 1.0).collect();
            cs.distribute(&mut x);
            let once = x.clone();
            cs.distribute(&mut x);
            assert_eq!(once, x);
            let f = DiscreteFunction::from_coeffs(&s, x);
            let mesh = s.mesh();
            for (c, face) in mesh.hanging_faces() {
                let e = mesh.edge(mesh.cell(c).faces[face]);
                let [a, b] = e.vertices.map(|v| mesh.vertex(v));
                for k in 1..6 {
                    let t = k as f64 / 6.0 + 0.013;
                    let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    // coarse side
                    let xi = mesh.inverse_map(c, p).unwrap();
                    let coarse = f.eval_in_cell(c, xi).0;
                    // fine side: any other active cell containing p
                    for &k2 in mesh.active_cells() {
                        if k2 == c {
                            continue;
                        }
                        if let Some(xi2) = mesh.inverse_map(k2, p) {
                            let fine = f.eval_in_cell(k2, xi2).0;
                            for comp in 0..2 {
                                assert!((coarse[comp] - fine[comp]).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn transfer_to_refined_is_exact() {
        let m0 = Arc::new(Mesh::unit_square(2));
        let s0 = Arc::new(FeSpace::new(m0.clone(), 2, 1));
        let f = DiscreteFunction::interpolate(&s0, |p, _| vec![p[0] * p[0] - 3.0 * p[0] * p[1] + p[1]]);
        let m1 = Arc::new(m0.refine(&[1, 2].into_iter().collect()).unwrap());
        let s1 = Arc::new(FeSpace::new(m1, 2, 1));
        let g = f.transfer_to_refined(&s1).unwrap();
        for p in [[0.1, 0.2], [0.7, 0.3], [0.33, 0.9], [0.5, 0.5]] {
            assert!((f.value_at(p, 0, None).unwrap() - g.value_at(p, 0, None).unwrap()).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn interpolation_reproduces_polynomials(rs in 1usize..4, rt in 1usize..4, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let m = Arc::new(Mesh::unit_square(2).refine(&[3].into_iter().collect()).unwrap());
            let ss = Arc::new(FeSpace::new(m.clone(), rs, 1));
            let st = Arc::new(FeSpace::new(m.clone(), rt, 1));
            let d = rs.min(rt) as i32;
            let poly = move |p: Point| a * p[0].powi(d) + b * p[1].powi(d) + p[0] * p[1].powi(d - 1);
            let f = DiscreteFunction::interpolate(&ss, move |p, _| vec![poly(p)]);
            let g = f.interpolate_to(&st).unwrap();
            for p in [[0.13, 0.77], [0.61, 0.52], [0.9, 0.05]] {
                prop_assert!((g.value_at(p, 0, None).unwrap() - poly(p)).abs() < 1e-12);
            }
        }
    }
}
