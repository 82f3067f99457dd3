//! Assembly of the constrained discrete system.
//!
//! The system consists of
//!
//! * `A_ij = (∇φ_j, ∇φ_i)` over the full enriched space,
//! * the element-mean operator `B_ij = A_{T_j}(φ_i)`, stored as its
//!   transpose so that row `j` of `Bᵀ` lists the DOFs of element `j`,
//! * the load `b_i = (f, φ_i)` and the obstacle means `γ_j = A_{T_j}(χ)`,
//! * Dirichlet data `g` sampled at boundary vertices and midpoints.
//!
//! `A`, `b` are kept without boundary conditions applied;
//! [`ConstrainedSystem::apply_dirichlet`] produces the symmetric
//! identity-row form.

use crate::error::{FemError, Result};
use crate::geometry::Point3;
use crate::mesh::{ElementGeometry, TetMesh};
use crate::quadrature::tet_rule;
use crate::space::{basis_dlambda, basis_values, reference_means, DofMap, LOCAL_DOFS};
use crate::sparse::{dot, SparseMat};
use std::sync::OnceLock;

/// Polynomial degrees of the element rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureDegrees {
    /// Gradient products of the enriched space (degree 6 is exact).
    pub stiffness: usize,
    /// Load, obstacle means, error norms and estimators.
    pub high: usize,
}

impl Default for QuadratureDegrees {
    fn default() -> Self {
        Self { stiffness: 6, high: 8 }
    }
}

/// `R[a][b][i][k] = A_T(∂_iφ_a ∂_kφ_b)` on the reference element.
type GradTensor = [[[[f64; 4]; 4]; LOCAL_DOFS]; LOCAL_DOFS];

fn grad_tensor(degree: usize) -> Result<GradTensor> {
    let rule = tet_rule(degree)?;
    let mut r = [[[[0.0; 4]; 4]; LOCAL_DOFS]; LOCAL_DOFS];
    for (l, w) in rule.iter() {
        let d = basis_dlambda(l);
        for a in 0..LOCAL_DOFS {
            for b in 0..LOCAL_DOFS {
                for i in 0..4 {
                    for k in 0..4 {
                        r[a][b][i][k] += w * d[a][i] * d[b][k];
                    }
                }
            }
        }
    }
    Ok(r)
}

fn default_grad_tensor() -> &'static GradTensor {
    static T: OnceLock<GradTensor> = OnceLock::new();
    T.get_or_init(|| grad_tensor(6).expect("degree 6 is supported"))
}

/// Local stiffness `K_ab = ∫_T ∇φ_a · ∇φ_b`.
pub fn element_stiffness(geom: &ElementGeometry) -> [[f64; LOCAL_DOFS]; LOCAL_DOFS] {
    element_stiffness_with(geom, default_grad_tensor())
}

fn element_stiffness_with(geom: &ElementGeometry, r: &GradTensor) -> [[f64; LOCAL_DOFS]; LOCAL_DOFS] {
    let g = geom.gram();
    let mut k = [[0.0; LOCAL_DOFS]; LOCAL_DOFS];
    for a in 0..LOCAL_DOFS {
        for b in a..LOCAL_DOFS {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    s += g[i][j] * r[a][b][i][j];
                }
            }
            k[a][b] = geom.volume * s;
            k[b][a] = k[a][b];
        }
    }
    k
}

/// The assembled discrete obstacle problem.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    /// Stiffness over all DOFs, before boundary conditions.
    pub a: SparseMat,
    /// `Bᵀ` (elements × DOFs).
    pub bt: SparseMat,
    /// Load over all DOFs, before boundary conditions.
    pub load: Vec<f64>,
    pub gamma: Vec<f64>,
    pub dirichlet: Vec<bool>,
    /// Prescribed values on Dirichlet DOFs, zero elsewhere.
    pub dirichlet_values: Vec<f64>,
    /// Free DOF ids in ascending order.
    pub free: Vec<usize>,
    /// Number of vertex and midpoint DOFs; the bubble of element `j` is
    /// DOF `num_p2 + j`.
    pub num_p2: usize,
    /// Element volumes.
    pub volumes: Vec<f64>,
}

impl ConstrainedSystem {
    pub fn num_dofs(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_elements(&self) -> usize {
        self.bt.nrows()
    }

    pub fn bubble_dof(&self, j: usize) -> usize {
        self.num_p2 + j
    }

    /// `Bᵀα`: the element means of the function with coefficients `α`.
    pub fn means(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.bt.matvec(alpha)
    }

    /// `Bβ`.
    pub fn b_times(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.bt.transpose_matvec(beta)
    }

    /// Identity-row form: Dirichlet rows and columns replaced by the
    /// identity, their contributions moved to the right-hand side.
    pub fn apply_dirichlet(&self) -> (SparseMat, Vec<f64>) {
        let n = self.num_dofs();
        let ag = self.a.matvec(&self.dirichlet_values).expect("dimension");
        // dirichlet_values vanish off the boundary, so ag only sees Dirichlet columns
        let rhs: Vec<f64> =
            (0..n).map(|i| if self.dirichlet[i] { self.dirichlet_values[i] } else { self.load[i] - ag[i] }).collect();
        let mut rows = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(self.a.nnz());
        for i in 0..n {
            if self.dirichlet[i] {
                rows.push(vec![i]);
                vals.push(1.0);
                continue;
            }
            let (cols, v) = self.a.row(i);
            let mut r = Vec::with_capacity(cols.len());
            for (&j, &x) in cols.iter().zip(v) {
                if !self.dirichlet[j] {
                    r.push(j);
                    vals.push(x);
                }
            }
            rows.push(r);
        }
        let mut m = SparseMat::from_pattern(n, rows);
        m.values_mut().copy_from_slice(&vals);
        (m, rhs)
    }

    /// Largest magnitude of the load, used to scale tolerances.
    pub fn load_norm(&self) -> f64 {
        self.free.iter().map(|&i| self.load[i] * self.load[i]).sum::<f64>().sqrt()
    }
}

/// `Aα`.
pub fn stiffness_action(a: &SparseMat, alpha: &[f64]) -> Result<Vec<f64>> {
    a.matvec(alpha)
}

/// `αᵀAα`.
pub fn energy(a: &SparseMat, alpha: &[f64]) -> Result<f64> {
    Ok(dot(alpha, &a.matvec(alpha)?))
}

/// Row pattern of the enriched-space stiffness.
fn stiffness_pattern(dofs: &DofMap) -> SparseMat {
    let n = dofs.len();
    let m = dofs.num_elements();
    // DOF -> incident elements
    let mut count = vec![0usize; n + 1];
    for t in 0..m {
        for &i in dofs.local_dofs(t) {
            count[i + 1] += 1;
        }
    }
    for i in 0..n {
        count[i + 1] += count[i];
    }
    let mut fill = count.clone();
    let mut incident = vec![0usize; count[n]];
    for t in 0..m {
        for &i in dofs.local_dofs(t) {
            incident[fill[i]] = t;
            fill[i] += 1;
        }
    }
    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<usize> =
                incident[count[i]..count[i + 1]].iter().flat_map(|&t| dofs.local_dofs(t).iter().copied()).collect();
            r.sort_unstable();
            r.dedup();
            r
        })
        .collect();
    SparseMat::from_pattern(n, rows)
}

/// Assembles `A`, `Bᵀ`, `b`, `γ` and the Dirichlet data.
pub fn assemble<F, C, G>(mesh: &TetMesh, dofs: &DofMap, f: F, chi: C, g: G) -> Result<ConstrainedSystem>
where
    F: Fn(Point3) -> f64,
    C: Fn(Point3) -> f64,
    G: Fn(Point3) -> f64,
{
    assemble_with(mesh, dofs, f, chi, g, QuadratureDegrees::default())
}

pub fn assemble_with<F, C, G>(
    mesh: &TetMesh,
    dofs: &DofMap,
    f: F,
    chi: C,
    g: G,
    degrees: QuadratureDegrees,
) -> Result<ConstrainedSystem>
where
    F: Fn(Point3) -> f64,
    C: Fn(Point3) -> f64,
    G: Fn(Point3) -> f64,
{
    let n = dofs.len();
    let m = mesh.num_tets();
    let custom;
    let tensor = if degrees.stiffness == 6 {
        default_grad_tensor()
    } else {
        custom = grad_tensor(degrees.stiffness)?;
        &custom
    };
    let rule = tet_rule(degrees.high)?;
    let phi_at: Vec<[f64; LOCAL_DOFS]> = rule.points.iter().map(basis_values).collect();
    let means = reference_means();

    let mut a = stiffness_pattern(dofs);
    let mut load = vec![0.0; n];
    let mut gamma = vec![0.0; m];
    let mut volumes = vec![0.0; m];
    let mut bt_rows = Vec::with_capacity(m);
    let mut bt_vals = Vec::with_capacity(m * LOCAL_DOFS);
    let mut dirichlet_values = vec![0.0; n];
    let mut seen = vec![false; n];

    for t in 0..m {
        let geom = mesh.element_geometry(t)?;
        volumes[t] = geom.volume;
        let local = dofs.local_dofs(t);

        let k = element_stiffness_with(&geom, tensor);
        for (aa, &i) in local.iter().enumerate() {
            let start = a.row_ptr()[i];
            let end = a.row_ptr()[i + 1];
            for (bb, &j) in local.iter().enumerate() {
                let pos = start + a.col_idx()[start..end].binary_search(&j).expect("pattern");
                a.values_mut()[pos] += k[aa][bb];
            }
        }

        let mut chi_mean = 0.0;
        for (q, (l, w)) in rule.iter().enumerate() {
            let x = mesh.map_point(t, l);
            let fx = f(x);
            if !fx.is_finite() {
                return Err(FemError::NonFinite { what: "load", element: t });
            }
            let cx = chi(x);
            if !cx.is_finite() {
                return Err(FemError::NonFinite { what: "obstacle", element: t });
            }
            chi_mean += w * cx;
            for (aa, &i) in local.iter().enumerate() {
                load[i] += geom.volume * w * fx * phi_at[q][aa];
            }
        }
        gamma[t] = chi_mean;

        let mut row: Vec<(usize, f64)> = local.iter().copied().zip(means).collect();
        row.sort_by_key(|&(i, _)| i);
        bt_rows.push(row.iter().map(|&(i, _)| i).collect::<Vec<_>>());
        bt_vals.extend(row.iter().map(|&(_, v)| v));

        for &i in local.iter().take(crate::space::P2_DOFS) {
            if dofs.is_dirichlet(i) && !seen[i] {
                seen[i] = true;
                let gv = g(dofs.p2_node(mesh, i));
                if !gv.is_finite() {
                    return Err(FemError::NonFinite { what: "boundary data", element: t });
                }
                dirichlet_values[i] = gv;
            }
        }
    }

    let mut bt = SparseMat::from_pattern(n, bt_rows);
    bt.values_mut().copy_from_slice(&bt_vals);
    let free = (0..n).filter(|&i| !dofs.is_dirichlet(i)).collect();

    Ok(ConstrainedSystem {
        a,
        bt,
        load,
        gamma,
        dirichlet: dofs.dirichlet_mask().to_vec(),
        dirichlet_values,
        free,
        num_p2: dofs.num_p2(),
        volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, uniform_refine, BoxDomain};
    use crate::space::{element_means_of, interpolate, MEAN_BUBBLE, P2_DOFS};

    fn mesh2() -> TetMesh {
        build_box_mesh(BoxDomain::new(Point3::ZERO, Point3::new(1.0, 1.5, 0.8)), 2).unwrap()
    }

    #[test]
    fn stiffness_matches_pointwise_quadrature() {
        let mesh = mesh2();
        let geom = mesh.element_geometry(11).unwrap();
        let k = element_stiffness(&geom);
        let rule = tet_rule(8).unwrap();
        for a in 0..LOCAL_DOFS {
            for b in 0..LOCAL_DOFS {
                let q: f64 = rule
                    .iter()
                    .map(|(l, w)| {
                        let bv = crate::space::eval_basis(&geom, l);
                        w * bv.grads[a].dot(bv.grads[b])
                    })
                    .sum::<f64>()
                    * geom.volume;
                assert!((q - k[a][b]).abs() < 1e-12 * (1.0 + q.abs()), "{a} {b}");
            }
        }
    }

    #[test]
    fn constants_in_kernel_and_symmetry() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 1.0, |_| 0.0, |_| 0.0).unwrap();
        let scale = sys.a.max_abs();
        let ones: Vec<f64> = (0..dofs.len()).map(|i| if i < dofs.num_p2() { 1.0 } else { 0.0 }).collect();
        let r = sys.a.matvec(&ones).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-10 * scale));
        for i in 0..sys.a.nrows() {
            let (cols, vals) = sys.a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                assert!((v - sys.a.get(j, i)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn constraint_columns_hold_reference_means() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 0.0, |_| 0.0, |_| 0.0).unwrap();
        let means = reference_means();
        for t in 0..mesh.num_tets() {
            let (cols, vals) = sys.bt.row(t);
            assert_eq!(cols.len(), LOCAL_DOFS);
            for (a, &i) in dofs.local_dofs(t).iter().enumerate() {
                assert_eq!(sys.bt.get(t, i), means[a]);
            }
            let p2: f64 = (0..P2_DOFS).map(|a| sys.bt.get(t, dofs.local_dofs(t)[a])).sum();
            assert!((p2 - 1.0).abs() < 1e-14);
            assert_eq!(*cols.last().unwrap(), sys.bubble_dof(t));
            assert_eq!(*vals.last().unwrap(), MEAN_BUBBLE);
        }
    }

    #[test]
    fn bt_of_interpolant_gives_element_means() {
        let mesh = uniform_refine(&mesh2()).unwrap();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 0.0, |_| 0.0, |_| 0.0).unwrap();
        let v = |p: Point3| (p.x * p.y).exp() - p.z.powi(3);
        let iv = interpolate(&mesh, &dofs, &v).unwrap();
        let got = sys.means(&iv.coeffs).unwrap();
        let oracle = element_means_of(&mesh, &v, 8).unwrap();
        for (a, b) in got.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_of_linear_function() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 0.0, |_| 0.0, |_| 0.0).unwrap();
        let grad = Point3::new(0.3, -1.2, 2.0);
        let v = move |p: Point3| 0.7 + grad.dot(p);
        let iv = interpolate(&mesh, &dofs, &v).unwrap();
        let e = energy(&sys.a, &iv.coeffs).unwrap();
        let vol = 1.0 * 1.5 * 0.8;
        assert!((e - vol * grad.dot(grad)).abs() < 1e-10);
        assert_eq!(energy(&sys.a, &vec![0.0; dofs.len()]).unwrap(), 0.0);
        assert!(energy(&sys.a, &[1.0]).is_err());
    }

    #[test]
    fn random_symmetry() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 0.0, |_| 0.0, |_| 0.0).unwrap();
        let x: Vec<f64> = (0..dofs.len()).map(|i| ((i * 7919) % 113) as f64 / 56.0 - 1.0).collect();
        let y: Vec<f64> = (0..dofs.len()).map(|i| ((i * 104729) % 97) as f64 / 48.0 - 1.0).collect();
        let xay = dot(&x, &stiffness_action(&sys.a, &y).unwrap());
        let yax = dot(&y, &stiffness_action(&sys.a, &x).unwrap());
        assert!((xay - yax).abs() <= 1e-12 * xay.abs().max(1.0));
    }

    #[test]
    fn assembly_is_deterministic() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let f = |p: Point3| p.x.sin() + p.y * p.z;
        let s1 = assemble(&mesh, &dofs, f, |p| p.x - 0.5, |p| p.y).unwrap();
        let s2 = assemble(&mesh, &dofs, f, |p| p.x - 0.5, |p| p.y).unwrap();
        assert_eq!(s1.a, s2.a);
        assert_eq!(s1.bt, s2.bt);
        assert_eq!(
            s1.load.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s2.load.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(s1.gamma, s2.gamma);
    }

    #[test]
    fn non_finite_data_reports_element() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let err = assemble(&mesh, &dofs, |p| if p.x > 0.9 { f64::NAN } else { 0.0 }, |_| 0.0, |_| 0.0).unwrap_err();
        assert!(matches!(err, FemError::NonFinite { what: "load", .. }));
        let err = assemble(&mesh, &dofs, |_| 0.0, |_| f64::INFINITY, |_| 0.0).unwrap_err();
        assert!(matches!(err, FemError::NonFinite { what: "obstacle", element: 0 }));
        let err = assemble(&mesh, &dofs, |_| 0.0, |_| 0.0, |_| f64::NAN).unwrap_err();
        assert!(matches!(err, FemError::NonFinite { what: "boundary data", element: 0 }));
    }

    #[test]
    fn identity_rows_form() {
        let mesh = mesh2();
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, |_| 1.0, |_| 0.0, |p| p.x).unwrap();
        let (ar, rhs) = sys.apply_dirichlet();
        for i in 0..dofs.len() {
            if dofs.is_dirichlet(i) {
                assert_eq!(ar.row(i).0, &[i]);
                assert_eq!(rhs[i], sys.dirichlet_values[i]);
            } else {
                assert!(ar.row(i).0.iter().all(|&j| !dofs.is_dirichlet(j)));
            }
        }
    }
}
