//! Discrete multiplier recovery, residual estimators and error norms.
//!
//! The multiplier is piecewise constant:
//!
//! ```text
//! σ_h|_T = (∫_T f b_T − ∫_T ∇u_h·∇b_T) / ∫_T b_T,    ∫_T b_T = 32|T|/105.
//! ```
//!
//! The estimator combines
//!
//! ```text
//! η1² = Σ_T h_T² ‖Δu_h + f − σ_h‖²_{L²(T)}
//! η2² = Σ_e h_e ‖[[∇u_h]]‖²_{L²(e)}           (interior faces)
//! ‖∇(χ − u_h)⁺‖²  and  −Σ_{T∈C_h} ∫_T σ_h (χ − u_h)⁻
//! ```
//!
//! with `C_h` the elements where `A_T(u_h) = A_T(χ)`. Positive and negative
//! parts are sampled at quadrature nodes without resolving the zero level
//! set inside an element.

use crate::assembly::{element_stiffness, QuadratureDegrees};
use crate::error::Result;
use crate::geometry::Point3;
use crate::mesh::TetMesh;
use crate::quadrature::{tet_rule, tri_rule};
use crate::space::{basis_laplacians, basis_values, eval_local, DofMap, FeFunction, BUBBLE, LOCAL_DOFS, MEAN_BUBBLE};
use serde::Serialize;

/// Element-wise constant multiplier `σ_h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierField {
    pub values: Vec<f64>,
}

impl MultiplierField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn compute_sigma_h<F>(mesh: &TetMesh, dofs: &DofMap, alpha: &FeFunction, f: F) -> Result<MultiplierField>
where
    F: Fn(Point3) -> f64,
{
    compute_sigma_h_with(mesh, dofs, alpha, f, QuadratureDegrees::default())
}

pub fn compute_sigma_h_with<F>(
    mesh: &TetMesh,
    dofs: &DofMap,
    alpha: &FeFunction,
    f: F,
    degrees: QuadratureDegrees,
) -> Result<MultiplierField>
where
    F: Fn(Point3) -> f64,
{
    let rule = tet_rule(degrees.high)?;
    let bubble_at: Vec<f64> = rule.points.iter().map(|l| basis_values(l)[BUBBLE]).collect();
    let mut values = Vec::with_capacity(mesh.num_tets());
    for t in 0..mesh.num_tets() {
        let geom = mesh.element_geometry(t)?;
        let fb: f64 =
            rule.iter().zip(&bubble_at).map(|((l, w), b)| w * f(mesh.map_point(t, l)) * b).sum::<f64>() * geom.volume;
        let k = element_stiffness(&geom);
        let c = alpha.local(dofs, t);
        let grad_term: f64 = (0..LOCAL_DOFS).map(|a| c[a] * k[a][BUBBLE]).sum();
        values.push((fb - grad_term) / (MEAN_BUBBLE * geom.volume));
    }
    Ok(MultiplierField { values })
}

/// Per-entity squared contributions and their sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contributions {
    pub parts: Vec<f64>,
    pub total_sq: f64,
}

impl Contributions {
    fn new(parts: Vec<f64>) -> Self {
        let total_sq = parts.iter().sum();
        Self { parts, total_sq }
    }

    pub fn total(&self) -> f64 {
        self.total_sq.sqrt()
    }
}

/// `h_T² ‖Δu_h + f − σ_h‖²_{L²(T)}` per element.
pub fn estimator_eta1<F>(
    mesh: &TetMesh,
    dofs: &DofMap,
    alpha: &FeFunction,
    f: F,
    sigma: &MultiplierField,
    degree: usize,
) -> Result<Contributions>
where
    F: Fn(Point3) -> f64,
{
    let rule = tet_rule(degree)?;
    let mut parts = Vec::with_capacity(mesh.num_tets());
    for t in 0..mesh.num_tets() {
        let geom = mesh.element_geometry(t)?;
        let gram = geom.gram();
        let c = alpha.local(dofs, t);
        let mut s = 0.0;
        for (l, w) in rule.iter() {
            let lap = basis_laplacians(&gram, l);
            let lap_u: f64 = (0..LOCAL_DOFS).map(|a| c[a] * lap[a]).sum();
            let r = lap_u + f(mesh.map_point(t, l)) - sigma.values[t];
            s += w * r * r;
        }
        parts.push(geom.diameter * geom.diameter * geom.volume * s);
    }
    Ok(Contributions::new(parts))
}

/// `h_e ‖[[∇u_h]]‖²_{L²(e)}` per interior face, in [`TetMesh::interior_faces`] order.
pub fn estimator_eta2(mesh: &TetMesh, dofs: &DofMap, alpha: &FeFunction, degree: usize) -> Result<Contributions> {
    let rule = tri_rule(degree)?;
    let faces = mesh.interior_faces();
    let mut parts = Vec::with_capacity(faces.len());
    for face in &faces {
        let side = |t: usize| -> Result<_> {
            let geom = mesh.element_geometry(t)?;
            let local: [usize; 3] = face.vertices.map(|v| mesh.local_vertex(t, v).expect("face vertex in element"));
            Ok((geom, local, alpha.local(dofs, t)))
        };
        let (gm, lm, cm) = side(face.tet_minus)?;
        let (gp, lp, cp) = side(face.tet_plus)?;
        let mut s = 0.0;
        for (mu, w) in rule.iter() {
            let mut bm = [0.0; 4];
            let mut bp = [0.0; 4];
            for k in 0..3 {
                bm[lm[k]] = mu[k];
                bp[lp[k]] = mu[k];
            }
            let (_, grad_m) = eval_local(&cm, &gm, &bm);
            let (_, grad_p) = eval_local(&cp, &gp, &bp);
            let jump = (grad_m - grad_p).dot(face.normal);
            s += w * jump * jump;
        }
        parts.push(face.diameter * face.area * s);
    }
    Ok(Contributions::new(parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObstacleTerms {
    /// `‖∇(χ − u_h)⁺‖²`.
    pub gradient_sq: f64,
    /// `−Σ_{T∈C_h} ∫_T σ_h (χ − u_h)⁻`.
    pub violation: f64,
    /// `|C_h|`.
    pub contact_elements: usize,
}

/// Elements where the discrete constraint is attained: `|A_T(u_h) − A_T(χ)| ≤ tol`.
pub fn contact_elements(alpha: &FeFunction, dofs: &DofMap, chi_means: &[f64], tol: f64) -> Vec<bool> {
    alpha.element_means(dofs).iter().zip(chi_means).map(|(u, c)| (u - c).abs() <= tol).collect()
}

/// Absolute tolerance used to decide membership in `C_h`.
pub fn contact_tolerance(chi_means: &[f64], u_means: &[f64]) -> f64 {
    let scale = chi_means.iter().chain(u_means).fold(0.0f64, |m, v| m.max(v.abs()));
    1e-9 * (1.0 + scale)
}

pub fn obstacle_terms<C, DC>(
    mesh: &TetMesh,
    dofs: &DofMap,
    alpha: &FeFunction,
    chi: C,
    grad_chi: DC,
    sigma: &MultiplierField,
    degree: usize,
) -> Result<ObstacleTerms>
where
    C: Fn(Point3) -> f64,
    DC: Fn(Point3) -> Point3,
{
    let rule = tet_rule(degree)?;
    let chi_means: Vec<f64> =
        (0..mesh.num_tets()).map(|t| rule.iter().map(|(l, w)| w * chi(mesh.map_point(t, l))).sum()).collect();
    let u_means = alpha.element_means(dofs);
    let contact = contact_elements(alpha, dofs, &chi_means, contact_tolerance(&chi_means, &u_means));
    let mut gradient_sq = 0.0;
    let mut violation = 0.0;
    for t in 0..mesh.num_tets() {
        let geom = mesh.element_geometry(t)?;
        let c = alpha.local(dofs, t);
        let mut g = 0.0;
        let mut v = 0.0;
        for (l, w) in rule.iter() {
            let x = mesh.map_point(t, l);
            let (u, du) = eval_local(&c, &geom, l);
            let diff = chi(x) - u;
            if diff > 0.0 {
                let d = grad_chi(x) - du;
                g += w * d.dot(d);
            } else if contact[t] {
                v += w * (-diff);
            }
        }
        gradient_sq += geom.volume * g;
        if contact[t] {
            violation -= sigma.values[t] * geom.volume * v;
        }
    }
    Ok(ObstacleTerms { gradient_sq, violation, contact_elements: contact.iter().filter(|&&c| c).count() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1_semi: f64,
}

/// `‖u − u_h‖_{L²}` and `‖∇(u − u_h)‖_{L²}`.
pub fn error_norms<U, DU>(
    mesh: &TetMesh,
    dofs: &DofMap,
    alpha: &FeFunction,
    u: U,
    grad_u: DU,
    degree: usize,
) -> Result<ErrorNorms>
where
    U: Fn(Point3) -> f64,
    DU: Fn(Point3) -> Point3,
{
    let rule = tet_rule(degree)?;
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for t in 0..mesh.num_tets() {
        let geom = mesh.element_geometry(t)?;
        let c = alpha.local(dofs, t);
        let mut el = 0.0;
        let mut eh = 0.0;
        for (l, w) in rule.iter() {
            let x = mesh.map_point(t, l);
            let (uh, duh) = eval_local(&c, &geom, l);
            let e = u(x) - uh;
            let de = grad_u(x) - duh;
            el += w * e * e;
            eh += w * de.dot(de);
        }
        l2 += geom.volume * el;
        h1 += geom.volume * eh;
    }
    Ok(ErrorNorms { l2: l2.sqrt(), h1_semi: h1.sqrt() })
}

/// `‖σ − σ_h‖_{L²}` against a pointwise multiplier.
pub fn sigma_error_l2<S>(mesh: &TetMesh, sigma_h: &MultiplierField, sigma: S, degree: usize) -> Result<f64>
where
    S: Fn(Point3) -> f64,
{
    let rule = tet_rule(degree)?;
    let mut s = 0.0;
    for t in 0..mesh.num_tets() {
        let vol = mesh.element_geometry(t)?.volume;
        let e: f64 = rule
            .iter()
            .map(|(l, w)| {
                let d = sigma(mesh.map_point(t, l)) - sigma_h.values[t];
                w * d * d
            })
            .sum();
        s += vol * e;
    }
    Ok(s.sqrt())
}

/// Totals of all estimator parts, with optional per-entity arrays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub eta1: f64,
    pub eta2: f64,
    pub obstacle_gradient_sq: f64,
    pub obstacle_violation: f64,
    pub contact_elements: usize,
    /// `η1² + η2² + ‖∇(χ − u_h)⁺‖² + violation`.
    pub total_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_h1: Option<f64>,
    /// `‖∇(u − u_h)‖² / total_sq`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effectivity_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta1_elements: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta2_faces: Option<Vec<f64>>,
}

impl EstimatorReport {
    pub fn new(eta1: &Contributions, eta2: &Contributions, obstacle: &ObstacleTerms, per_entity: bool) -> Self {
        let total_sq = eta1.total_sq + eta2.total_sq + obstacle.gradient_sq + obstacle.violation;
        Self {
            eta1: eta1.total(),
            eta2: eta2.total(),
            obstacle_gradient_sq: obstacle.gradient_sq,
            obstacle_violation: obstacle.violation,
            contact_elements: obstacle.contact_elements,
            total_sq,
            error_h1: None,
            effectivity_ratio: None,
            eta1_elements: per_entity.then(|| eta1.parts.clone()),
            eta2_faces: per_entity.then(|| eta2.parts.clone()),
        }
    }

    pub fn with_error(mut self, error_h1: f64) -> Self {
        self.error_h1 = Some(error_h1);
        self.effectivity_ratio = Some(error_h1 * error_h1 / self.total_sq);
        self
    }
}
