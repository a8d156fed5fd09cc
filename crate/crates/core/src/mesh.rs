//! Hierarchical quadrilateral meshes with 1-irregular hanging vertices.
//!
//! Cells are bilinear images of the unit square. Local vertex order is
//! lexicographic: `v0=(0,0)`, `v1=(1,0)`, `v2=(0,1)`, `v3=(1,1)`, and local
//! faces are `f0: x=0`, `f1: x=1`, `f2: y=0`, `f3: y=1`. Refinement splits a
//! cell into four children in the reference square, so every child is the
//! exact image of a reference sub-square and finite element spaces on
//! successive meshes are nested.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Boundary condition type carried by a boundary face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Which lip of a slit a point is approached from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Above,
    Below,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Above => 1.0,
            Side::Below => -1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// `children[0]` touches `vertices[0]`, `children[1]` touches `vertices[1]`.
    pub children: Option<[usize; 2]>,
    pub midpoint: Option<usize>,
    pub boundary: Option<BoundaryTag>,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub vertices: [usize; 4],
    pub faces: [usize; 4],
    pub level: u32,
    pub parent: Option<usize>,
    pub children: Option<[usize; 4]>,
}

/// Local (start, end) vertex of each face, in the face's own parameter direction.
pub const FACE_VERTICES: [[usize; 2]; 4] = [[0, 2], [1, 3], [0, 1], [2, 3]];

/// Set of active cells flagged for refinement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CellMarks(BTreeSet<usize>);

impl CellMarks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell: usize) {
        self.0.insert(cell);
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.0.contains(&cell)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<usize> for CellMarks {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        CellMarks(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    active: Vec<usize>,
    /// (above, below) vertex pairs sharing coordinates along a slit.
    slit_seam: Vec<(usize, usize)>,
}

impl Mesh {
    /// Builds a level-0 mesh. Faces adjacent to a single cell are boundary
    /// faces and are tagged by `tag(a, b)` from their endpoint coordinates.
    pub fn from_coarse(
        vertices: Vec<Point>,
        cells: Vec<[usize; 4]>,
        tag: impl Fn(Point, Point) -> BoundaryTag,
        slit_seam: Vec<(usize, usize)>,
    ) -> Mesh {
        let mut edges: Vec<Edge> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut count: Vec<usize> = Vec::new();
        let mut out_cells = Vec::with_capacity(cells.len());
        for verts in cells {
            let mut faces = [0usize; 4];
            for (f, fv) in FACE_VERTICES.iter().enumerate() {
                let (a, b) = (verts[fv[0]], verts[fv[1]]);
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge { vertices: [a, b], children: None, midpoint: None, boundary: None });
                    count.push(0);
                    edges.len() - 1
                });
                count[id] += 1;
                faces[f] = id;
            }
            out_cells.push(Cell { vertices: verts, faces, level: 0, parent: None, children: None });
        }
        for (e, edge) in edges.iter_mut().enumerate() {
            if count[e] == 1 {
                edge.boundary = Some(tag(vertices[edge.vertices[0]], vertices[edge.vertices[1]]));
            }
        }
        let active = (0..out_cells.len()).collect();
        Mesh { vertices, cells: out_cells, edges, active, slit_seam }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Active (leaf) cell ids in increasing order.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active_cells(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, c: usize) -> bool {
        c < self.cells.len() && self.cells[c].children.is_none()
    }

    pub fn slit_seam(&self) -> &[(usize, usize)] {
        &self.slit_seam
    }

    pub fn max_level(&self) -> u32 {
        self.active.iter().map(|&c| self.cells[c].level).max().unwrap_or(0)
    }

    // ---------------------------------------------------------------- geometry

    pub fn map_point(&self, c: usize, xi: [f64; 2]) -> Point {
        let v = self.cells[c].vertices.map(|i| self.vertices[i]);
        let n = bilinear_shape(xi);
        let mut p = [0.0; 2];
        for a in 0..4 {
            p[0] += n[a] * v[a][0];
            p[1] += n[a] * v[a][1];
        }
        p
    }

    /// `J[i][j] = d x_i / d xi_j`.
    pub fn jacobian(&self, c: usize, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let v = self.cells[c].vertices.map(|i| self.vertices[i]);
        let (s, t) = (xi[0], xi[1]);
        let dn_ds = [-(1.0 - t), 1.0 - t, -t, t];
        let dn_dt = [-(1.0 - s), -s, 1.0 - s, s];
        let mut j = [[0.0; 2]; 2];
        for a in 0..4 {
            for i in 0..2 {
                j[i][0] += dn_ds[a] * v[a][i];
                j[i][1] += dn_dt[a] * v[a][i];
            }
        }
        j
    }

    pub fn centroid(&self, c: usize) -> Point {
        self.map_point(c, [0.5, 0.5])
    }

    /// Side of the `y = 0` line the cell lies on; selects the slit branch of
    /// boundary data evaluated at nodes of this cell.
    pub fn side_hint(&self, c: usize) -> Option<Side> {
        let y = self.centroid(c)[1];
        if y > 0.0 {
            Some(Side::Above)
        } else if y < 0.0 {
            Some(Side::Below)
        } else {
            None
        }
    }

    pub fn bounding_box(&self, c: usize) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for &v in &self.cells[c].vertices {
            let p = self.vertices[v];
            bb[0] = bb[0].min(p[0]);
            bb[1] = bb[1].max(p[0]);
            bb[2] = bb[2].min(p[1]);
            bb[3] = bb[3].max(p[1]);
        }
        bb
    }

    /// `[x0, x1, y0, y1]` if the cell is an axis-aligned rectangle.
    pub fn axis_aligned_rect(&self, c: usize) -> Option<[f64; 4]> {
        let v = self.cells[c].vertices.map(|i| self.vertices[i]);
        let aligned = v[0][1] == v[1][1] && v[2][1] == v[3][1] && v[0][0] == v[2][0] && v[1][0] == v[3][0];
        aligned.then(|| [v[0][0], v[1][0], v[0][1], v[2][1]])
    }

    /// Reference coordinates of `p` in cell `c`, if `p` lies in the closed cell.
    pub fn inverse_map(&self, c: usize, p: Point) -> Option<[f64; 2]> {
        let mut xi = [0.5, 0.5];
        for _ in 0..50 {
            let x = self.map_point(c, xi);
            let r = [p[0] - x[0], p[1] - x[1]];
            let j = self.jacobian(c, xi);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-300 {
                return None;
            }
            let d = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (-j[1][0] * r[0] + j[0][0] * r[1]) / det];
            xi[0] += d[0];
            xi[1] += d[1];
            if d[0].abs() + d[1].abs() < 1e-15 {
                break;
            }
        }
        let tol = 1e-10;
        let inside = xi.iter().all(|&s| s >= -tol && s <= 1.0 + tol);
        inside.then(|| xi.map(|s| s.clamp(0.0, 1.0)))
    }

    /// Finds the active cell with the smallest id that contains `p`. When
    /// `side` is given only cells on that side of `y = 0` qualify.
    pub fn locate(&self, p: Point, side: Option<Side>) -> Option<(usize, [f64; 2])> {
        let tol = 1e-12;
        for &c in &self.active {
            let bb = self.bounding_box(c);
            let scale = (bb[1] - bb[0]).max(bb[3] - bb[2]);
            let eps = tol * (1.0 + scale);
            if p[0] < bb[0] - eps || p[0] > bb[1] + eps || p[1] < bb[2] - eps || p[1] > bb[3] + eps {
                continue;
            }
            if let Some(s) = side {
                if self.side_hint(c) != Some(s) {
                    continue;
                }
            }
            if let Some(xi) = self.inverse_map(c, p) {
                return Some((c, xi));
            }
        }
        None
    }

    pub fn contains(&self, p: Point) -> bool {
        self.locate(p, None).is_some()
    }

    /// Jacobian determinants at the four corners; for a bilinear map these
    /// bound the determinant over the whole cell.
    pub fn corner_jacobians(&self, c: usize) -> [f64; 4] {
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]].map(|xi| {
            let j = self.jacobian(c, xi);
            j[0][0] * j[1][1] - j[0][1] * j[1][0]
        })
    }

    pub fn area(&self, c: usize) -> f64 {
        // exact for bilinear maps: det J is affine in each reference variable
        let d = self.corner_jacobians(c);
        0.25 * d.iter().sum::<f64>()
    }

    // ---------------------------------------------------------------- topology

    /// For every vertex, the active cells having it as a corner.
    pub fn vertex_cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for &c in &self.active {
            for &v in &self.cells[c].vertices {
                out[v].push(c);
            }
        }
        out
    }

    /// Active-cell faces that are refined on the other side, as (cell, local face).
    pub fn hanging_faces(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &c in &self.active {
            for f in 0..4 {
                if self.edges[self.cells[c].faces[f]].children.is_some() {
                    out.push((c, f));
                }
            }
        }
        out
    }

    pub fn hanging_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .hanging_faces()
            .into_iter()
            .filter_map(|(c, f)| self.edges[self.cells[c].faces[f]].midpoint)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Vertices on a boundary face of an active cell.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut b = vec![false; self.vertices.len()];
        for &c in &self.active {
            for &e in &self.cells[c].faces {
                if self.edges[e].boundary.is_some() {
                    for &v in &self.edges[e].vertices {
                        b[v] = true;
                    }
                }
            }
        }
        for &(a, bv) in &self.slit_seam {
            b[a] = true;
            b[bv] = true;
        }
        b
    }

    /// Child of edge `e` adjacent to vertex `v` and the other child.
    fn edge_halves_from(&self, e: usize, v: usize) -> (usize, usize) {
        let ch = self.edges[e].children.expect("edge refined");
        if self.edges[e].vertices[0] == v {
            (ch[0], ch[1])
        } else {
            debug_assert_eq!(self.edges[e].vertices[1], v);
            (ch[1], ch[0])
        }
    }

    // -------------------------------------------------------------- refinement

    fn refine_edge(&mut self, e: usize) -> usize {
        if let Some(m) = self.edges[e].midpoint {
            return m;
        }
        let [a, b] = self.edges[e].vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        self.vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        let m = self.vertices.len() - 1;
        let tag = self.edges[e].boundary;
        self.edges.push(Edge { vertices: [a, m], children: None, midpoint: None, boundary: tag });
        self.edges.push(Edge { vertices: [m, b], children: None, midpoint: None, boundary: tag });
        let n = self.edges.len();
        self.edges[e].children = Some([n - 2, n - 1]);
        self.edges[e].midpoint = Some(m);
        m
    }

    fn new_edge(&mut self, a: usize, b: usize) -> usize {
        self.edges.push(Edge { vertices: [a, b], children: None, midpoint: None, boundary: None });
        self.edges.len() - 1
    }

    fn refine_cell(&mut self, c: usize) {
        let cell = self.cells[c].clone();
        debug_assert!(cell.children.is_none());
        let mids = cell.faces.map(|e| self.refine_edge(e));
        let v = cell.vertices;
        let center = {
            let p = v.map(|i| self.vertices[i]);
            [0.25 * (p[0][0] + p[1][0] + p[2][0] + p[3][0]), 0.25 * (p[0][1] + p[1][1] + p[2][1] + p[3][1])]
        };
        self.vertices.push(center);
        let ctr = self.vertices.len() - 1;
        // g[row][col] with row along y, col along x
        let g = [[v[0], mids[2], v[1]], [mids[0], ctr, mids[1]], [v[2], mids[3], v[3]]];

        let halves: Vec<(usize, usize)> =
            (0..4).map(|f| self.edge_halves_from(cell.faces[f], v[FACE_VERTICES[f][0]])).collect();
        let h_left = self.new_edge(g[1][0], g[1][1]);
        let h_right = self.new_edge(g[1][1], g[1][2]);
        let v_bottom = self.new_edge(g[0][1], g[1][1]);
        let v_top = self.new_edge(g[1][1], g[2][1]);
        let pick = |half: (usize, usize), i: usize| if i == 0 { half.0 } else { half.1 };

        let first = self.cells.len();
        for cy in 0..2 {
            for cx in 0..2 {
                let verts = [g[cy][cx], g[cy][cx + 1], g[cy + 1][cx], g[cy + 1][cx + 1]];
                let vertical_inner = if cy == 0 { v_bottom } else { v_top };
                let horizontal_inner = if cx == 0 { h_left } else { h_right };
                let faces = [
                    if cx == 0 { pick(halves[0], cy) } else { vertical_inner },
                    if cx == 1 { pick(halves[1], cy) } else { vertical_inner },
                    if cy == 0 { pick(halves[2], cx) } else { horizontal_inner },
                    if cy == 1 { pick(halves[3], cx) } else { horizontal_inner },
                ];
                self.cells.push(Cell {
                    vertices: verts,
                    faces,
                    level: cell.level + 1,
                    parent: Some(c),
                    children: None,
                });
            }
        }
        self.cells[c].children = Some([first, first + 1, first + 2, first + 3]);
    }

    fn rebuild_active(&mut self) {
        self.active = (0..self.cells.len()).filter(|&c| self.cells[c].children.is_none()).collect();
    }

    /// Splits every marked cell into four and refines further cells until no
    /// face carries more than one hanging vertex.
    pub fn refine(&self, marks: &CellMarks) -> Result<Mesh> {
        for c in marks.iter() {
            if !self.is_active(c) {
                return Err(Error::InactiveCell(c));
            }
        }
        let mut mesh = self.clone();
        for c in marks.iter() {
            mesh.refine_cell(c);
        }
        mesh.rebuild_active();
        loop {
            let extra: Vec<usize> = mesh
                .active
                .iter()
                .copied()
                .filter(|&c| {
                    mesh.cells[c].faces.iter().any(|&e| {
                        mesh.edges[e]
                            .children
                            .is_some_and(|ch| ch.iter().any(|&h| mesh.edges[h].children.is_some()))
                    })
                })
                .collect();
            if extra.is_empty() {
                break;
            }
            for c in extra {
                mesh.refine_cell(c);
            }
            mesh.rebuild_active();
        }
        Ok(mesh)
    }

    pub fn refine_uniform(&self) -> Mesh {
        let marks: CellMarks = self.active.iter().copied().collect();
        self.refine(&marks).expect("active cells are valid marks")
    }

    /// True when no face of an active cell has a refined child face.
    pub fn is_one_irregular(&self) -> bool {
        self.active.iter().all(|&c| {
            self.cells[c].faces.iter().all(|&e| {
                self.edges[e].children.is_none_or(|ch| ch.iter().all(|&h| self.edges[h].children.is_none()))
            })
        })
    }

    /// Walks up the hierarchy from `c` to the first ancestor accepted by
    /// `pred`, returning it with the reference coordinates of `xi` in it.
    pub fn ancestor_coords(&self, mut c: usize, mut xi: [f64; 2], pred: impl Fn(usize) -> bool) -> Option<(usize, [f64; 2])> {
        loop {
            if pred(c) {
                return Some((c, xi));
            }
            let parent = self.cells[c].parent?;
            let k = self.cells[parent].children?.iter().position(|&h| h == c)?;
            let (cx, cy) = ((k % 2) as f64, (k / 2) as f64);
            xi = [0.5 * (cx + xi[0]), 0.5 * (cy + xi[1])];
            c = parent;
        }
    }

    // ---------------------------------------------------------------- builders

    /// Uniform `n x n` mesh of the unit square, all boundary faces Dirichlet.
    pub fn unit_square(n: usize) -> Mesh {
        assert!(n >= 1, "need at least one cell per side");
        structured(n, n, [0.0, 1.0], [0.0, 1.0], |_, _| true, |_, _| BoundaryTag::Dirichlet)
    }

    /// The cheese domain: a `(2hx+1) x (2hy+1)` block of unit squares with the
    /// squares at odd (i, j) removed; all boundaries Dirichlet.
    pub fn cheese_with_holes(hx: usize, hy: usize) -> Mesh {
        let (nx, ny) = (2 * hx + 1, 2 * hy + 1);
        structured(
            nx,
            ny,
            [0.0, nx as f64],
            [0.0, ny as f64],
            |i, j| !(i % 2 == 1 && j % 2 == 1),
            |_, _| BoundaryTag::Dirichlet,
        )
    }

    /// `[0,5]^2` with four unit holes, the coarse mesh of the reentrant-corner
    /// experiments.
    pub fn cheese() -> Mesh {
        Mesh::cheese_with_holes(2, 2)
    }

    /// `(-1,1)^2` cut along `(-1,0) x {0}`, `n x n` cells (`n` even). Vertices
    /// on the cut (except the tip) are duplicated; the two lips are Neumann,
    /// the outer boundary Dirichlet.
    pub fn slit(n: usize) -> Mesh {
        assert!(n >= 2 && n % 2 == 0, "slit mesh needs an even number of cells per side");
        let h = 2.0 / n as f64;
        let mut vertices = Vec::new();
        let mut index = vec![vec![0usize; n + 1]; n + 1];
        let mut below = vec![usize::MAX; n + 1];
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([-1.0 + i as f64 * h, -1.0 + j as f64 * h]);
                index[j][i] = vertices.len() - 1;
            }
        }
        let mid = n / 2;
        let mut seam = Vec::new();
        for i in 0..mid {
            vertices.push(vertices[index[mid][i]]);
            below[i] = vertices.len() - 1;
            seam.push((index[mid][i], below[i]));
        }
        let mut cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let vid = |ii: usize, jj: usize| {
                    if jj == mid && j < mid && ii < mid {
                        below[ii]
                    } else {
                        index[jj][ii]
                    }
                };
                cells.push([vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)]);
            }
        }
        Mesh::from_coarse(
            vertices,
            cells,
            |a, b| {
                if a[1] == 0.0 && b[1] == 0.0 {
                    BoundaryTag::Neumann
                } else {
                    BoundaryTag::Dirichlet
                }
            },
            seam,
        )
    }

    /// Moves every interior vertex by a uniform random vector with components
    /// in `[-factor h, factor h]`, `h` the shortest incident edge. Uses a
    /// ChaCha8 stream seeded with `seed`; boundary vertices stay fixed.
    pub fn distort(&self, factor: f64, seed: u64) -> Result<Mesh> {
        assert!((0.0..0.5).contains(&factor), "distortion factor must lie in [0, 0.5)");
        if !self.hanging_faces().is_empty() {
            return Err(Error::DistortionOfHangingMesh);
        }
        // flatten the active cells into a new coarse mesh
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut cells = Vec::with_capacity(self.active.len());
        for &c in &self.active {
            let verts = self.cells[c].vertices.map(|v| {
                if remap[v] == usize::MAX {
                    vertices.push(self.vertices[v]);
                    remap[v] = vertices.len() - 1;
                }
                remap[v]
            });
            cells.push(verts);
        }
        let mut tags: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
        let mut h_min = vec![f64::INFINITY; vertices.len()];
        for &c in &self.active {
            for &e in &self.cells[c].faces {
                let [a, b] = self.edges[e].vertices.map(|v| remap[v]);
                let (pa, pb) = (vertices[a], vertices[b]);
                let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                h_min[a] = h_min[a].min(len);
                h_min[b] = h_min[b].min(len);
                if let Some(t) = self.edges[e].boundary {
                    tags.insert((a.min(b), a.max(b)), t);
                }
            }
        }
        let boundary = self.boundary_vertices();
        let seam: Vec<(usize, usize)> = self.slit_seam.iter().map(|&(a, b)| (remap[a], remap[b])).collect();
        let mut fixed = vec![false; vertices.len()];
        for (old, &new) in remap.iter().enumerate() {
            if new != usize::MAX && boundary[old] {
                fixed[new] = true;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in 0..vertices.len() {
            if fixed[v] || factor == 0.0 {
                continue;
            }
            let amp = factor * h_min[v];
            let dx: f64 = rng.gen_range(-1.0..=1.0);
            let dy: f64 = rng.gen_range(-1.0..=1.0);
            vertices[v][0] += amp * dx;
            vertices[v][1] += amp * dy;
        }
        let mut mesh = Mesh::from_coarse(vertices, cells, |_, _| BoundaryTag::Dirichlet, seam);
        for edge in &mut mesh.edges {
            if edge.boundary.is_some() {
                let [a, b] = edge.vertices;
                edge.boundary = Some(tags.get(&(a.min(b), a.max(b))).copied().unwrap_or(BoundaryTag::Dirichlet));
            }
        }
        for &c in &mesh.active {
            let det = mesh.corner_jacobians(c);
            if let Some(&d) = det.iter().find(|&&d| !(d > 0.0)) {
                return Err(Error::DistortionInvertsCell { cell: c, det: d });
            }
        }
        Ok(mesh)
    }
}

/// Bilinear shape functions at reference point `xi`, lexicographic order.
pub fn bilinear_shape(xi: [f64; 2]) -> [f64; 4] {
    let (s, t) = (xi[0], xi[1]);
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

fn structured(
    nx: usize,
    ny: usize,
    xr: [f64; 2],
    yr: [f64; 2],
    keep: impl Fn(usize, usize) -> bool,
    tag: impl Fn(Point, Point) -> BoundaryTag,
) -> Mesh {
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    let hx = (xr[1] - xr[0]) / nx as f64;
    let hy = (yr[1] - yr[0]) / ny as f64;
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
        let k = j * (nx + 1) + i;
        if index[k] == usize::MAX {
            vertices.push([xr[0] + i as f64 * hx, yr[0] + j as f64 * hy]);
            index[k] = vertices.len() - 1;
        }
        index[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            if keep(i, j) {
                let c = [
                    vid(i, j, &mut vertices),
                    vid(i + 1, j, &mut vertices),
                    vid(i, j + 1, &mut vertices),
                    vid(i + 1, j + 1, &mut vertices),
                ];
                cells.push(c);
            }
        }
    }
    Mesh::from_coarse(vertices, cells, tag, Vec::new())
}
