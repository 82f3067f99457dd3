//! Conforming tetrahedral meshes of axis-aligned boxes.
//!
//! A [`TetMesh`] owns its vertex coordinates and element connectivity and
//! derives the edge and face tables once at construction. Elements are always
//! stored positively oriented. Edges are numbered in order of first
//! appearance during a sweep over the elements, which keeps every derived
//! numbering deterministic.
//!
//! Local numbering conventions used throughout the crate:
//!
//! ```text
//! local edges:  0:(0,1) 1:(0,2) 2:(0,3) 3:(1,2) 4:(1,3) 5:(2,3)
//! local faces:  face i is opposite local vertex i
//! ```

use crate::error::{FemError, Result};
use crate::geometry::{signed_volume6, Point3};
use std::collections::HashMap;

/// Local vertex pairs of the six tetrahedron edges.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local vertices of the face opposite each local vertex.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Relative volume below which an element is reported as degenerate.
const DEGENERATE_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub min: Point3,
    pub max: Point3,
}

impl BoxDomain {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn unit_cube() -> Self {
        Self::new(Point3::ZERO, Point3::new(1.0, 1.0, 1.0))
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tet {
    pub v: [usize; 4],
}

/// A triangular face with its one or two adjacent elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    /// Vertex ids in ascending order.
    pub v: [usize; 3],
    /// First adjacent element (always the lower id).
    pub tet_a: usize,
    /// Second adjacent element for interior faces.
    pub tet_b: Option<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.tet_b.is_none()
    }
}

/// Per-element geometric quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    pub diameter: f64,
    /// Gradients of the four barycentric coordinates (constant on the element).
    pub grad_lambda: [Point3; 4],
}

impl ElementGeometry {
    /// Gram matrix `G[i][k] = ∇λ_i · ∇λ_k`.
    pub fn gram(&self) -> [[f64; 4]; 4] {
        let mut g = [[0.0; 4]; 4];
        for i in 0..4 {
            for k in 0..4 {
                g[i][k] = self.grad_lambda[i].dot(self.grad_lambda[k]);
            }
        }
        g
    }
}

/// An interior face seen from its two neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    pub face: usize,
    pub vertices: [usize; 3],
    /// Lower-indexed neighbour.
    pub tet_minus: usize,
    /// Higher-indexed neighbour.
    pub tet_plus: usize,
    /// Unit normal pointing from `tet_minus` into `tet_plus`.
    pub normal: Point3,
    /// Longest edge of the face.
    pub diameter: f64,
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Point3>,
    tets: Vec<Tet>,
    edges: Vec<[usize; 2]>,
    tet_edges: Vec<[usize; 6]>,
    faces: Vec<Face>,
    tet_faces: Vec<[usize; 4]>,
    vertex_on_boundary: Vec<bool>,
    edge_on_boundary: Vec<bool>,
}

impl TetMesh {
    /// Builds a mesh from raw connectivity, reorienting negatively oriented
    /// elements and deriving edges, faces and boundary flags.
    pub fn from_parts(vertices: Vec<Point3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(FemError::InvalidInput(format!("vertex {i} has non-finite coordinates")));
        }
        let scale = bounding_extent(&vertices);
        let mut oriented = Vec::with_capacity(tets.len());
        for (t, v) in tets.into_iter().enumerate() {
            if v.iter().any(|&i| i >= vertices.len()) {
                return Err(FemError::InvalidInput(format!("tet {t} references a missing vertex")));
            }
            let mut v = v;
            for a in 0..4 {
                for b in a + 1..4 {
                    if v[a] == v[b] {
                        return Err(FemError::InvalidInput(format!("tet {t} repeats vertex {}", v[a])));
                    }
                }
            }
            let vol6 = signed_volume6(vertices[v[0]], vertices[v[1]], vertices[v[2]], vertices[v[3]]);
            if vol6.abs() <= DEGENERATE_RTOL * scale.powi(3) {
                return Err(FemError::DegenerateTet { tet: t, volume: vol6 / 6.0 });
            }
            if vol6 < 0.0 {
                v.swap(2, 3);
            }
            oriented.push(Tet { v });
        }

        let mut edge_ids: HashMap<[usize; 2], usize> = HashMap::with_capacity(oriented.len() * 2);
        let mut edges = Vec::new();
        let mut tet_edges = Vec::with_capacity(oriented.len());
        for tet in &oriented {
            let mut local = [0usize; 6];
            for (slot, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let key = sorted2(tet.v[*a], tet.v[*b]);
                let next = edges.len();
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(key);
                    next
                });
                local[slot] = id;
            }
            tet_edges.push(local);
        }

        let mut face_ids: HashMap<[usize; 3], usize> = HashMap::with_capacity(oriented.len() * 3);
        let mut faces: Vec<Face> = Vec::new();
        let mut tet_faces = Vec::with_capacity(oriented.len());
        for (t, tet) in oriented.iter().enumerate() {
            let mut local = [0usize; 4];
            for (slot, lf) in LOCAL_FACES.iter().enumerate() {
                let key = sorted3(tet.v[lf[0]], tet.v[lf[1]], tet.v[lf[2]]);
                match face_ids.get(&key) {
                    Some(&id) => {
                        let face = &mut faces[id];
                        if face.tet_b.is_some() {
                            return Err(FemError::InvalidInput(format!(
                                "face {key:?} is shared by more than two tets"
                            )));
                        }
                        face.tet_b = Some(t);
                        local[slot] = id;
                    }
                    None => {
                        let id = faces.len();
                        faces.push(Face { v: key, tet_a: t, tet_b: None });
                        face_ids.insert(key, id);
                        local[slot] = id;
                    }
                }
            }
            tet_faces.push(local);
        }

        let mut vertex_on_boundary = vec![false; vertices.len()];
        let mut edge_on_boundary = vec![false; edges.len()];
        for (t, tet) in oriented.iter().enumerate() {
            for (slot, lf) in LOCAL_FACES.iter().enumerate() {
                if !faces[tet_faces[t][slot]].is_boundary() {
                    continue;
                }
                for &lv in lf {
                    vertex_on_boundary[tet.v[lv]] = true;
                }
                for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                    if lf.contains(a) && lf.contains(b) {
                        edge_on_boundary[tet_edges[t][e]] = true;
                    }
                }
            }
        }

        Ok(Self { vertices, tets: oriented, edges, tet_edges, faces, tet_faces, vertex_on_boundary, edge_on_boundary })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[Tet] {
        &self.tets
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Global edge ids of element `t` in local edge order.
    pub fn tet_edges(&self, t: usize) -> &[usize; 6] {
        &self.tet_edges[t]
    }

    /// Global face ids of element `t`; slot `i` is opposite local vertex `i`.
    pub fn tet_faces(&self, t: usize) -> &[usize; 4] {
        &self.tet_faces[t]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_on_boundary(&self, v: usize) -> bool {
        self.vertex_on_boundary[v]
    }

    pub fn edge_on_boundary(&self, e: usize) -> bool {
        self.edge_on_boundary[e]
    }

    pub fn edge_midpoint(&self, e: usize) -> Point3 {
        let [a, b] = self.edges[e];
        self.vertices[a].midpoint(self.vertices[b])
    }

    pub fn tet_points(&self, t: usize) -> [Point3; 4] {
        let v = self.tets[t].v;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]], self.vertices[v[3]]]
    }

    /// Physical point with barycentric coordinates `bary` in element `t`.
    pub fn map_point(&self, t: usize, bary: &[f64; 4]) -> Point3 {
        let p = self.tet_points(t);
        let mut x = Point3::ZERO;
        for i in 0..4 {
            x += bary[i] * p[i];
        }
        x
    }

    pub fn element_geometry(&self, t: usize) -> Result<ElementGeometry> {
        if t >= self.tets.len() {
            return Err(FemError::InvalidInput(format!("tet id {t} out of range")));
        }
        let [p0, p1, p2, p3] = self.tet_points(t);
        let (e1, e2, e3) = (p1 - p0, p2 - p0, p3 - p0);
        let det = e1.dot(e2.cross(e3));
        let diameter = max_pairwise_distance(&[p0, p1, p2, p3]);
        if det <= DEGENERATE_RTOL * diameter.powi(3) {
            return Err(FemError::DegenerateTet { tet: t, volume: det / 6.0 });
        }
        let g1 = (1.0 / det) * e2.cross(e3);
        let g2 = (1.0 / det) * e3.cross(e1);
        let g3 = (1.0 / det) * e1.cross(e2);
        let g0 = -(g1 + g2 + g3);
        Ok(ElementGeometry { volume: det / 6.0, diameter, grad_lambda: [g0, g1, g2, g3] })
    }

    /// Geometry of every element, in element order.
    pub fn all_geometry(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.num_tets()).map(|t| self.element_geometry(t)).collect()
    }

    /// Mesh size `h = max_T h_T`.
    pub fn diameter(&self) -> f64 {
        (0..self.num_tets()).map(|t| max_pairwise_distance(&self.tet_points(t))).fold(0.0, f64::max)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_tets())
            .map(|t| {
                let [a, b, c, d] = self.tet_points(t);
                signed_volume6(a, b, c, d) / 6.0
            })
            .sum()
    }

    /// Local index (0..4) of global vertex `v` in element `t`.
    pub fn local_vertex(&self, t: usize, v: usize) -> Option<usize> {
        self.tets[t].v.iter().position(|&w| w == v)
    }

    /// Every face with two neighbours, in face-id order, with the normal
    /// oriented from the lower-indexed element to the higher one.
    pub fn interior_faces(&self) -> Vec<InteriorFace> {
        let mut out = Vec::new();
        for (id, face) in self.faces.iter().enumerate() {
            let Some(b) = face.tet_b else { continue };
            let (minus, plus) = if face.tet_a < b { (face.tet_a, b) } else { (b, face.tet_a) };
            let [a, bb, c] = face.v.map(|i| self.vertices[i]);
            let cross = (bb - a).cross(c - a);
            let area = 0.5 * cross.norm();
            let mut normal = (1.0 / cross.norm()) * cross;
            let opposite = self.tets[minus]
                .v
                .iter()
                .copied()
                .find(|v| !face.v.contains(v))
                .expect("element has a vertex off the face");
            let centroid = (1.0 / 3.0) * (a + bb + c);
            if normal.dot(centroid - self.vertices[opposite]) < 0.0 {
                normal = -normal;
            }
            out.push(InteriorFace {
                face: id,
                vertices: face.v,
                tet_minus: minus,
                tet_plus: plus,
                normal,
                diameter: max_pairwise_distance(&[a, bb, c]),
                area,
            });
        }
        out
    }
}

/// Kuhn subdivision of an axis-aligned box into `6 n³` tetrahedra.
pub fn build_box_mesh(domain: BoxDomain, n: usize) -> Result<TetMesh> {
    if n == 0 {
        return Err(FemError::InvalidInput("subdivisions per axis must be at least 1".into()));
    }
    let ext = domain.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !ext.is_finite() {
        return Err(FemError::InvalidInput(format!("degenerate box with extent {ext:?}")));
    }
    let np = n + 1;
    let idx = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                let s = |c: usize| c as f64 / n as f64;
                vertices.push(Point3::new(
                    domain.min.x + ext.x * s(i),
                    domain.min.y + ext.y * s(j),
                    domain.min.z + ext.z * s(k),
                ));
            }
        }
    }
    // Each tet follows a monotone lattice path from the cube's low corner to
    // its high corner; the six axis permutations tile the cube.
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut v = [idx(c[0], c[1], c[2]), 0, 0, 0];
                    for (step, axis) in perm.iter().enumerate() {
                        c[*axis] += 1;
                        v[step + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(v);
                }
            }
        }
    }
    TetMesh::from_parts(vertices, tets)
}

/// Red refinement: every element is split into eight children using its
/// edge midpoints. The inner octahedron is cut along its shortest diagonal;
/// equal lengths are resolved by the smallest pair of midpoint vertex ids.
pub fn uniform_refine(mesh: &TetMesh) -> Result<TetMesh> {
    let nv = mesh.num_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.extend((0..mesh.num_edges()).map(|e| mesh.edge_midpoint(e)));

    // Octahedron diagonals as pairs of local edges that share no vertex.
    const OPPOSITE: [[usize; 2]; 3] = [[0, 5], [1, 4], [2, 3]];

    let mut tets = Vec::with_capacity(8 * mesh.num_tets());
    for t in 0..mesh.num_tets() {
        let v = mesh.tets[t].v;
        let m: [usize; 6] = mesh.tet_edges[t].map(|e| nv + e);
        // midpoint id by unordered local vertex pair
        let mid = |a: usize, b: usize| -> usize {
            let key = if a < b { [a, b] } else { [b, a] };
            m[LOCAL_EDGES.iter().position(|e| *e == key).expect("local edge")]
        };
        tets.push([v[0], mid(0, 1), mid(0, 2), mid(0, 3)]);
        tets.push([mid(0, 1), v[1], mid(1, 2), mid(1, 3)]);
        tets.push([mid(0, 2), mid(1, 2), v[2], mid(2, 3)]);
        tets.push([mid(0, 3), mid(1, 3), mid(2, 3), v[3]]);

        let mut best = 0;
        let mut best_key = (f64::INFINITY, [usize::MAX; 2]);
        for (d, [ea, eb]) in OPPOSITE.iter().enumerate() {
            let (pa, pb) = (m[*ea], m[*eb]);
            let len = vertices[pa].dist(vertices[pb]);
            let ids = sorted2(pa, pb);
            let tol = 1e-12 * best_key.0.min(len).max(f64::MIN_POSITIVE);
            let better = if (len - best_key.0).abs() <= tol { ids < best_key.1 } else { len < best_key.0 };
            if better {
                best = d;
                best_key = (len, ids);
            }
        }
        let [p, q] = OPPOSITE[best].map(|e| m[e]);
        let others: Vec<[usize; 2]> =
            OPPOSITE.iter().enumerate().filter(|(d, _)| *d != best).map(|(_, pair)| pair.map(|e| m[e])).collect();
        // Non-opposite midpoints are adjacent on the octahedron, so this
        // visits the equatorial ring in cyclic order.
        let ring = [others[0][0], others[1][0], others[0][1], others[1][1]];
        for i in 0..4 {
            tets.push([p, q, ring[i], ring[(i + 1) % 4]]);
        }
    }
    TetMesh::from_parts(vertices, tets)
}

fn sorted2(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn sorted3(a: usize, b: usize, c: usize) -> [usize; 3] {
    let mut k = [a, b, c];
    k.sort_unstable();
    k
}

fn max_pairwise_distance(p: &[Point3]) -> f64 {
    let mut h: f64 = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            h = h.max(p[i].dist(p[j]));
        }
    }
    h
}

fn bounding_extent(p: &[Point3]) -> f64 {
    if p.is_empty() {
        return 1.0;
    }
    let mut lo = p[0];
    let mut hi = p[0];
    for q in p {
        lo = Point3::new(lo.x.min(q.x), lo.y.min(q.y), lo.z.min(q.z));
        hi = Point3::new(hi.x.max(q.x), hi.y.max(q.y), hi.z.max(q.z));
    }
    (hi - lo).norm().max(f64::MIN_POSITIVE)
}
