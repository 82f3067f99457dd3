//! The enriched quadratic space: continuous P2 plus one interior bubble per
//! element.
//!
//! Local basis ordering on an element is fixed:
//!
//! | local | function            | node                 |
//! |-------|---------------------|----------------------|
//! | 0..4  | `λ_i (2λ_i − 1)`    | vertex `i`           |
//! | 4..10 | `4 λ_i λ_j`         | midpoint of edge ij  |
//! | 10    | `256 λ_1λ_2λ_3λ_4`  | barycentre           |
//!
//! with edges in the order of [`LOCAL_EDGES`].
//!
//! Global DOFs are laid out as `[vertices | edge midpoints | bubbles]`.

use crate::error::Result;
use crate::geometry::Point3;
use crate::mesh::{ElementGeometry, TetMesh, LOCAL_EDGES};
use crate::quadrature::tet_rule;

pub const LOCAL_DOFS: usize = 11;
pub const P2_DOFS: usize = 10;
pub const BUBBLE: usize = 10;

/// Element mean of a vertex function.
pub const MEAN_VERTEX: f64 = -1.0 / 20.0;
/// Element mean of an edge function.
pub const MEAN_EDGE: f64 = 1.0 / 5.0;
/// Element mean of the bubble.
pub const MEAN_BUBBLE: f64 = 32.0 / 105.0;

/// Values and physical gradients of the 11 local basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValue {
    pub values: [f64; LOCAL_DOFS],
    pub grads: [Point3; LOCAL_DOFS],
}

/// Values of the local basis functions at a barycentric point.
pub fn basis_values(l: &[f64; 4]) -> [f64; LOCAL_DOFS] {
    let mut v = [0.0; LOCAL_DOFS];
    for i in 0..4 {
        v[i] = l[i] * (2.0 * l[i] - 1.0);
    }
    for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
        v[4 + e] = 4.0 * l[*i] * l[*j];
    }
    v[BUBBLE] = 256.0 * l[0] * l[1] * l[2] * l[3];
    v
}

/// Partial derivatives `∂φ_a/∂λ_i`, treating the four barycentric
/// coordinates as independent variables.
pub fn basis_dlambda(l: &[f64; 4]) -> [[f64; 4]; LOCAL_DOFS] {
    let mut d = [[0.0; 4]; LOCAL_DOFS];
    for i in 0..4 {
        d[i][i] = 4.0 * l[i] - 1.0;
    }
    for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
        d[4 + e][*i] = 4.0 * l[*j];
        d[4 + e][*j] = 4.0 * l[*i];
    }
    for i in 0..4 {
        d[BUBBLE][i] = 256.0 * (0..4).filter(|&j| j != i).map(|j| l[j]).product::<f64>();
    }
    d
}

/// Second partials `∂²φ_a/∂λ_i∂λ_k`.
pub fn basis_hessian_lambda(l: &[f64; 4]) -> [[[f64; 4]; 4]; LOCAL_DOFS] {
    let mut h = [[[0.0; 4]; 4]; LOCAL_DOFS];
    for i in 0..4 {
        h[i][i][i] = 4.0;
    }
    for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
        h[4 + e][*i][*j] = 4.0;
        h[4 + e][*j][*i] = 4.0;
    }
    for i in 0..4 {
        for k in 0..4 {
            if i != k {
                h[BUBBLE][i][k] = 256.0 * (0..4).filter(|&j| j != i && j != k).map(|j| l[j]).product::<f64>();
            }
        }
    }
    h
}

pub fn eval_basis(geom: &ElementGeometry, l: &[f64; 4]) -> BasisValue {
    let values = basis_values(l);
    let d = basis_dlambda(l);
    let mut grads = [Point3::ZERO; LOCAL_DOFS];
    for a in 0..LOCAL_DOFS {
        for i in 0..4 {
            grads[a] += d[a][i] * geom.grad_lambda[i];
        }
    }
    BasisValue { values, grads }
}

/// Laplacians of the local basis functions at a barycentric point.
pub fn basis_laplacians(gram: &[[f64; 4]; 4], l: &[f64; 4]) -> [f64; LOCAL_DOFS] {
    let h = basis_hessian_lambda(l);
    let mut lap = [0.0; LOCAL_DOFS];
    for a in 0..LOCAL_DOFS {
        for i in 0..4 {
            for k in 0..4 {
                lap[a] += h[a][i][k] * gram[i][k];
            }
        }
    }
    lap
}

/// `A_T(φ_a)` for the local basis; independent of the element.
pub fn element_means(_geom: &ElementGeometry) -> [f64; LOCAL_DOFS] {
    reference_means()
}

pub fn reference_means() -> [f64; LOCAL_DOFS] {
    let mut m = [MEAN_EDGE; LOCAL_DOFS];
    m[..4].fill(MEAN_VERTEX);
    m[BUBBLE] = MEAN_BUBBLE;
    m
}

/// Barycentric coordinates of the ten P2 nodes.
pub fn p2_nodes() -> [[f64; 4]; P2_DOFS] {
    let mut n = [[0.0; 4]; P2_DOFS];
    for i in 0..4 {
        n[i][i] = 1.0;
    }
    for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
        n[4 + e][*i] = 0.5;
        n[4 + e][*j] = 0.5;
    }
    n
}

/// Global numbering of vertex, midpoint and bubble DOFs.
#[derive(Debug, Clone)]
pub struct DofMap {
    num_vertices: usize,
    num_edges: usize,
    num_tets: usize,
    local: Vec<[usize; LOCAL_DOFS]>,
    dirichlet: Vec<bool>,
}

impl DofMap {
    pub fn new(mesh: &TetMesh) -> Self {
        let nv = mesh.num_vertices();
        let ne = mesh.num_edges();
        let nt = mesh.num_tets();
        let local = (0..nt)
            .map(|t| {
                let mut d = [0usize; LOCAL_DOFS];
                d[..4].copy_from_slice(&mesh.tets()[t].v);
                for (slot, &e) in mesh.tet_edges(t).iter().enumerate() {
                    d[4 + slot] = nv + e;
                }
                d[BUBBLE] = nv + ne + t;
                d
            })
            .collect();
        let mut dirichlet = vec![false; nv + ne + nt];
        for (v, flag) in dirichlet.iter_mut().enumerate().take(nv) {
            *flag = mesh.vertex_on_boundary(v);
        }
        for e in 0..ne {
            dirichlet[nv + e] = mesh.edge_on_boundary(e);
        }
        Self { num_vertices: nv, num_edges: ne, num_tets: nt, local, dirichlet }
    }

    pub fn len(&self) -> usize {
        self.num_vertices + self.num_edges + self.num_tets
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of vertex plus midpoint DOFs; bubbles start at this index.
    pub fn num_p2(&self) -> usize {
        self.num_vertices + self.num_edges
    }

    pub fn num_elements(&self) -> usize {
        self.num_tets
    }

    pub fn bubble_dof(&self, t: usize) -> usize {
        self.num_p2() + t
    }

    pub fn local_dofs(&self, t: usize) -> &[usize; LOCAL_DOFS] {
        &self.local[t]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.dirichlet[i]
    }

    /// Nodal location of a vertex or midpoint DOF.
    pub fn p2_node(&self, mesh: &TetMesh, i: usize) -> Point3 {
        if i < self.num_vertices {
            mesh.vertices()[i]
        } else {
            mesh.edge_midpoint(i - self.num_vertices)
        }
    }
}

/// Coefficient vector of a function in the enriched space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self { coeffs: vec![0.0; dofs.len()] }
    }

    pub fn local(&self, dofs: &DofMap, t: usize) -> [f64; LOCAL_DOFS] {
        dofs.local_dofs(t).map(|i| self.coeffs[i])
    }

    /// Value and gradient on element `t` at barycentric point `l`.
    pub fn eval(&self, mesh: &TetMesh, dofs: &DofMap, t: usize, l: &[f64; 4]) -> Result<(f64, Point3)> {
        let geom = mesh.element_geometry(t)?;
        Ok(eval_local(&self.local(dofs, t), &geom, l))
    }

    /// `A_T(u_h)` for every element.
    pub fn element_means(&self, dofs: &DofMap) -> Vec<f64> {
        let m = reference_means();
        (0..dofs.num_elements()).map(|t| self.local(dofs, t).iter().zip(m).map(|(c, w)| c * w).sum()).collect()
    }
}

pub fn eval_local(coeffs: &[f64; LOCAL_DOFS], geom: &ElementGeometry, l: &[f64; 4]) -> (f64, Point3) {
    let b = eval_basis(geom, l);
    let mut value = 0.0;
    let mut grad = Point3::ZERO;
    for a in 0..LOCAL_DOFS {
        value += coeffs[a] * b.values[a];
        grad += coeffs[a] * b.grads[a];
    }
    (value, grad)
}

pub fn eval_function(
    mesh: &TetMesh,
    dofs: &DofMap,
    alpha: &FeFunction,
    t: usize,
    l: &[f64; 4],
) -> Result<(f64, Point3)> {
    alpha.eval(mesh, dofs, t, l)
}

/// Element means of `v` by the degree-`degree` rule.
pub fn element_means_of<F>(mesh: &TetMesh, v: &F, degree: usize) -> Result<Vec<f64>>
where
    F: Fn(Point3) -> f64,
{
    let rule = tet_rule(degree)?;
    Ok((0..mesh.num_tets()).map(|t| rule.iter().map(|(l, w)| w * v(mesh.map_point(t, l))).sum()).collect())
}

/// Nodal interpolation at vertices and midpoints; bubble coefficients chosen
/// so that every element mean of the interpolant equals `means[t]`.
pub fn interpolate_with_means<F>(mesh: &TetMesh, dofs: &DofMap, v: &F, means: &[f64]) -> FeFunction
where
    F: Fn(Point3) -> f64,
{
    let mut coeffs = vec![0.0; dofs.len()];
    for (i, c) in coeffs.iter_mut().enumerate().take(dofs.num_p2()) {
        *c = v(dofs.p2_node(mesh, i));
    }
    let m = reference_means();
    for t in 0..mesh.num_tets() {
        let local = dofs.local_dofs(t);
        let p2_mean: f64 = (0..P2_DOFS).map(|a| coeffs[local[a]] * m[a]).sum();
        coeffs[local[BUBBLE]] = (means[t] - p2_mean) / MEAN_BUBBLE;
    }
    FeFunction { coeffs }
}

/// The mean-preserving interpolant, with element means of `v` taken by the
/// degree-8 rule.
pub fn interpolate<F>(mesh: &TetMesh, dofs: &DofMap, v: &F) -> Result<FeFunction>
where
    F: Fn(Point3) -> f64,
{
    let means = element_means_of(mesh, v, 8)?;
    Ok(interpolate_with_means(mesh, dofs, v, &means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, uniform_refine, BoxDomain};
    use crate::quadrature::tet_rule;
    use proptest::prelude::*;

    fn small_mesh() -> TetMesh {
        uniform_refine(&build_box_mesh(BoxDomain::new(Point3::ZERO, Point3::new(1.0, 2.0, 0.5)), 1).unwrap()).unwrap()
    }

    #[test]
    fn basis_nodal_values() {
        let b = basis_values(&[0.25; 4]);
        assert!((b[BUBBLE] - 1.0).abs() < 1e-15);
        let b = basis_values(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b[0], 1.0);
        assert!(b[1..].iter().all(|&x| x == 0.0));
        let b = basis_values(&[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(b[4], 1.0);
        assert_eq!(b[BUBBLE], 0.0);
        for (k, node) in p2_nodes().iter().enumerate() {
            let b = basis_values(node);
            for a in 0..P2_DOFS {
                assert_eq!(b[a], if a == k { 1.0 } else { 0.0 });
            }
            assert_eq!(b[BUBBLE], 0.0);
        }
    }

    #[test]
    fn bubble_vanishes_on_faces() {
        for f in 0..4 {
            let mut l = [0.3, 0.3, 0.4, 0.2];
            l[f] = 0.0;
            assert_eq!(basis_values(&l)[BUBBLE], 0.0);
        }
    }

    #[test]
    fn means_by_quadrature() {
        let rule = tet_rule(4).unwrap();
        let mut q = [0.0; LOCAL_DOFS];
        for (l, w) in rule.iter() {
            for (qa, va) in q.iter_mut().zip(basis_values(l)) {
                *qa += w * va;
            }
        }
        let m = reference_means();
        for a in 0..LOCAL_DOFS {
            assert!((q[a] - m[a]).abs() < 1e-14, "{a}");
        }
        assert!((4.0 * MEAN_VERTEX + 6.0 * MEAN_EDGE - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = small_mesh();
        let dofs = DofMap::new(&mesh);
        let u = FeFunction { coeffs: (0..dofs.len()).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect() };
        for t in [0, 5, 17, 40] {
            let geom = mesh.element_geometry(t).unwrap();
            let l = [0.1, 0.2, 0.3, 0.4];
            let (_, g) = u.eval(&mesh, &dofs, t, &l).unwrap();
            // perturb physical coordinates by converting dx into barycentric increments
            let step = 1e-6 * geom.diameter;
            for k in 0..3 {
                let mut dx = [0.0; 3];
                dx[k] = step;
                let dir = Point3::new(dx[0], dx[1], dx[2]);
                let dl: [f64; 4] = std::array::from_fn(|i| geom.grad_lambda[i].dot(dir));
                let plus: [f64; 4] = std::array::from_fn(|i| l[i] + dl[i]);
                let minus: [f64; 4] = std::array::from_fn(|i| l[i] - dl[i]);
                let fd = (u.eval(&mesh, &dofs, t, &plus).unwrap().0 - u.eval(&mesh, &dofs, t, &minus).unwrap().0)
                    / (2.0 * step);
                assert!((fd - g[k]).abs() <= 1e-5 * g.norm().max(1.0), "t={t} k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn dofmap_layout_and_masks() {
        let mesh = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        let dofs = DofMap::new(&mesh);
        assert_eq!(dofs.len(), mesh.num_vertices() + mesh.num_edges() + mesh.num_tets());
        for t in 0..mesh.num_tets() {
            assert!(!dofs.is_dirichlet(dofs.bubble_dof(t)));
            assert_eq!(dofs.local_dofs(t)[BUBBLE], dofs.bubble_dof(t));
        }
        for i in 0..dofs.num_p2() {
            let p = dofs.p2_node(&mesh, i);
            let on = (0..3).any(|k| p[k].abs() < 1e-14 || (p[k] - 1.0).abs() < 1e-14);
            assert_eq!(dofs.is_dirichlet(i), on);
        }
    }

    #[test]
    fn quadratics_are_reproduced() {
        let mesh = small_mesh();
        let dofs = DofMap::new(&mesh);
        let v = |p: Point3| 1.0 + p.x - 2.0 * p.y * p.z + 0.5 * p.x * p.x + p.z * p.z;
        let u = interpolate(&mesh, &dofs, &v).unwrap();
        for t in 0..mesh.num_tets() {
            assert!(u.coeffs[dofs.bubble_dof(t)].abs() < 1e-12);
            let l = [0.15, 0.25, 0.35, 0.25];
            let x = mesh.map_point(t, &l);
            assert!((u.eval(&mesh, &dofs, t, &l).unwrap().0 - v(x)).abs() < 1e-12);
        }
        let one = interpolate(&mesh, &dofs, &|_| 1.0).unwrap();
        for i in 0..dofs.len() {
            let expect = if i < dofs.num_p2() { 1.0 } else { 0.0 };
            assert!((one.coeffs[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolant_preserves_means() {
        let mesh = small_mesh();
        let dofs = DofMap::new(&mesh);
        let v = |p: Point3| (3.0 * p.x).sin() * (p.y + p.z).exp();
        let u = interpolate(&mesh, &dofs, &v).unwrap();
        let exact = element_means_of(&mesh, &v, 8).unwrap();
        for (a, b) in u.element_means(&dofs).iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
        // zero nodal values and zero mean give a zero bubble
        let z = interpolate_with_means(&mesh, &dofs, &|_| 0.0, &vec![0.0; mesh.num_tets()]);
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn laplacian_of_p2_is_constant() {
        let mesh = small_mesh();
        let g = mesh.element_geometry(3).unwrap();
        let a = basis_laplacians(&g.gram(), &[0.1, 0.2, 0.3, 0.4]);
        let b = basis_laplacians(&g.gram(), &[0.4, 0.3, 0.2, 0.1]);
        for k in 0..P2_DOFS {
            assert!((a[k] - b[k]).abs() < 1e-12 * a[k].abs().max(1.0));
        }
        // P2 partition of unity: Laplacians of the P2 functions sum to zero
        let s: f64 = a[..P2_DOFS].iter().sum();
        assert!(s.abs() < 1e-10 * a[0].abs());
    }

    proptest! {
        #[test]
        fn mean_reproduction(coeffs in proptest::collection::vec(-5.0f64..5.0, LOCAL_DOFS), t in 0usize..48) {
            let mesh = small_mesh();
            let geom = mesh.element_geometry(t).unwrap();
            let c: [f64; LOCAL_DOFS] = coeffs.try_into().unwrap();
            let rule = tet_rule(8).unwrap();
            let quad: f64 = rule.iter().map(|(l, w)| w * eval_local(&c, &geom, l).0).sum();
            let closed: f64 = c.iter().zip(element_means(&geom)).map(|(a, b)| a * b).sum();
            prop_assert!((quad - closed).abs() < 1e-12 * (1.0 + closed.abs()));
        }

        #[test]
        fn p2_partition_of_unity(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, d in 0.0f64..1.0) {
            let s = a + b + c + d + 1e-12;
            let l = [a / s, b / s, c / s, 1.0 - (a + b + c) / s];
            let v = basis_values(&l);
            prop_assert!((v[..P2_DOFS].iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let mesh = small_mesh();
            let geom = mesh.element_geometry(7).unwrap();
            let gr = eval_basis(&geom, &l).grads;
            let sum = gr[..P2_DOFS].iter().fold(Point3::ZERO, |acc, &g| acc + g);
            prop_assert!(sum.norm() < 1e-11);
        }

        #[test]
        fn interpolation_is_idempotent(seed in 0u64..1000) {
            let mesh = small_mesh();
            let dofs = DofMap::new(&mesh);
            let coeffs: Vec<f64> = (0..dofs.len()).map(|i| (((i as u64 + 1) * (seed + 7) * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect();
            let u = FeFunction { coeffs };
            // u is continuous, so its value at a node does not depend on the element used
            let mut nodal = std::collections::HashMap::new();
            for t in 0..mesh.num_tets() {
                for node in p2_nodes() {
                    let x = mesh.map_point(t, &node);
                    let key = [x.x, x.y, x.z].map(|c| (c * 1e9).round() as i64);
                    nodal.insert(key, u.eval(&mesh, &dofs, t, &node).unwrap().0);
                }
            }
            let lookup = |x: Point3| nodal[&[x.x, x.y, x.z].map(|c| (c * 1e9).round() as i64)];
            let back = interpolate_with_means(&mesh, &dofs, &lookup, &u.element_means(&dofs));
            for (x, y) in back.coeffs.iter().zip(&u.coeffs) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn means_preserve_obstacle_order(shift in 0.0f64..2.0, amp in 0.0f64..1.0) {
            let mesh = small_mesh();
            let dofs = DofMap::new(&mesh);
            let chi = |p: Point3| (4.0 * p.x).sin() - p.y;
            let v = move |p: Point3| chi(p) + shift + amp * (p.x * p.y + p.z).cos().powi(2);
            let iv = interpolate(&mesh, &dofs, &v).unwrap();
            let chi_means = element_means_of(&mesh, &chi, 8).unwrap();
            for (a, b) in iv.element_means(&dofs).iter().zip(chi_means) {
                prop_assert!(*a >= b - 1e-12);
            }
        }
    }
}
