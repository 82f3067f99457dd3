//! Primal-dual active set iteration for the discrete obstacle problem
//!
//! ```text
//! Aα + Bβ = b,   Bᵀα ≥ γ,   β ≤ 0,   βᵀ(Bᵀα − γ) = 0.
//! ```
//!
//! Each constraint (element mean) involves exactly one bubble DOF, and that
//! bubble appears in no other constraint. The Step-2 saddle point system is
//! therefore solved by eliminating every bubble: on active elements the
//! bubble is fixed by `Bᵀα = γ`, on inactive elements it is condensed out
//! statically. What remains is an SPD system on the vertex and midpoint DOFs,
//! solved by Jacobi-preconditioned conjugate gradients. The multiplier of an
//! active element is recovered from its bubble row.

use crate::assembly::ConstrainedSystem;
use crate::error::{FemError, Result};
use crate::space::{FeFunction, MEAN_BUBBLE, P2_DOFS};
use crate::sparse::{dot, norm2, norm_inf};
use serde::Serialize;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

/// How α⁰, β⁰ are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum InitMode {
    /// α⁰ solves the unconstrained problem, β⁰ = 0.
    #[default]
    Unconstrained,
    /// α⁰ = Dirichlet lift, β⁰ = 0.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub c: f64,
    pub max_iterations: usize,
    /// Relative residual target of the inner linear solves.
    pub linear_tol: f64,
    pub init: InitMode,
    /// Emit `key=value` progress lines on stderr.
    pub log: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { c: 1.0, max_iterations: 100, linear_tol: 1e-11, init: InitMode::Unconstrained, log: false }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(FemError::InvalidInput(format!("c must be positive, got {}", self.c)));
        }
        if self.max_iterations == 0 {
            return Err(FemError::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return Err(FemError::InvalidInput(format!("linear tolerance {} out of (0, 1)", self.linear_tol)));
        }
        Ok(())
    }
}

/// An iterate of the active-set method.
#[derive(Debug, Clone)]
pub struct ActiveSetState {
    pub alpha: FeFunction,
    pub beta: Vec<f64>,
    /// `active[j]` iff element `j` is in the active set.
    pub active: Vec<bool>,
}

impl ActiveSetState {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// `A_k = A_{k−1}`.
    SetConverged,
    MaxIterations,
    /// An earlier active set reappeared.
    Cycling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerStats {
    pub active: usize,
    pub cg_iterations: usize,
    /// `‖(b − Aα − Bβ)_free‖ / ‖b_free‖`.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub termination: Termination,
    /// `‖C(α, β)‖∞` of the returned state.
    pub complementarity_residual: f64,
    pub active_count: usize,
    pub inner: Vec<InnerStats>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::SetConverged
    }
}

/// `C(α, β) = β − min(0, β + c(Bᵀα − γ))`.
pub fn complementarity_residual(sys: &ConstrainedSystem, alpha: &[f64], beta: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(FemError::InvalidInput(format!("c must be positive, got {c}")));
    }
    if beta.len() != sys.num_elements() {
        return Err(FemError::DimensionMismatch { expected: sys.num_elements(), got: beta.len() });
    }
    let gap = constraint_gap(sys, alpha)?;
    Ok(beta.iter().zip(&gap).map(|(&b, &g)| b - (b + c * g).min(0.0)).collect())
}

/// `Bᵀα − γ`.
pub fn constraint_gap(sys: &ConstrainedSystem, alpha: &[f64]) -> Result<Vec<f64>> {
    let m = sys.means(alpha)?;
    Ok(m.iter().zip(&sys.gamma).map(|(a, g)| a - g).collect())
}

/// Per-element data extracted from the assembled system.
struct ElementBlocks {
    /// Vertex/midpoint DOFs of each element (ascending).
    dofs: Vec<[usize; P2_DOFS]>,
    /// Element-mean weights of those DOFs.
    means: Vec<[f64; P2_DOFS]>,
    /// Bubble–P2 stiffness coupling.
    coupling: Vec<[f64; P2_DOFS]>,
    /// Bubble diagonal stiffness.
    bubble_diag: Vec<f64>,
}

impl ElementBlocks {
    fn new(sys: &ConstrainedSystem) -> Result<Self> {
        let m = sys.num_elements();
        let mut dofs = Vec::with_capacity(m);
        let mut means = Vec::with_capacity(m);
        let mut coupling = Vec::with_capacity(m);
        let mut bubble_diag = Vec::with_capacity(m);
        for j in 0..m {
            let (cols, vals) = sys.bt.row(j);
            let bubble = sys.bubble_dof(j);
            if cols.len() != P2_DOFS + 1 || cols[P2_DOFS] != bubble {
                return Err(FemError::InvalidInput(format!("constraint row {j} is not an element mean")));
            }
            let d: [usize; P2_DOFS] = std::array::from_fn(|a| cols[a]);
            let mw: [f64; P2_DOFS] = std::array::from_fn(|a| vals[a]);
            let cp: [f64; P2_DOFS] = std::array::from_fn(|a| sys.a.get(bubble, d[a]));
            dofs.push(d);
            means.push(mw);
            coupling.push(cp);
            bubble_diag.push(sys.a.get(bubble, bubble));
        }
        Ok(Self { dofs, means, coupling, bubble_diag })
    }
}

/// The bubble-eliminated operator for one active set.
struct ReducedOperator<'a> {
    sys: &'a ConstrainedSystem,
    blocks: &'a ElementBlocks,
    active: &'a [bool],
}

impl ReducedOperator<'_> {
    /// Bubble as an affine function of the P2 coefficients: `c = d − e·w`.
    #[inline]
    fn bubble_map(&self, j: usize) -> (f64, [f64; P2_DOFS]) {
        if self.active[j] {
            let e = self.blocks.means[j].map(|m| m / MEAN_BUBBLE);
            (self.sys.gamma[j] / MEAN_BUBBLE, e)
        } else {
            let acc = self.blocks.bubble_diag[j];
            let e = self.blocks.coupling[j].map(|a| a / acc);
            (self.sys.load[self.sys.bubble_dof(j)] / acc, e)
        }
    }

    /// `y = S w` over the P2 DOFs.
    fn apply(&self, w: &[f64], y: &mut [f64]) {
        // vertex/midpoint block of A; bubble columns close every sorted row
        let a = &self.sys.a;
        let (ptr, cols, vals) = (a.row_ptr(), a.col_idx(), a.values());
        let np = self.sys.num_p2;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in ptr[i]..ptr[i + 1] {
                let j = cols[p];
                if j >= np {
                    break;
                }
                s += vals[p] * w[j];
            }
            *yi = s;
        }
        for j in 0..self.blocks.dofs.len() {
            let (_, e) = self.bubble_map(j);
            let a = &self.blocks.coupling[j];
            let acc = self.blocks.bubble_diag[j];
            let d = &self.blocks.dofs[j];
            let mut ew = 0.0;
            let mut aw = 0.0;
            for k in 0..P2_DOFS {
                ew += e[k] * w[d[k]];
                aw += a[k] * w[d[k]];
            }
            for k in 0..P2_DOFS {
                y[d[k]] += -a[k] * ew - e[k] * aw + acc * e[k] * ew;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag: Vec<f64> = (0..self.sys.num_p2).map(|i| self.sys.a.get(i, i)).collect();
        for j in 0..self.blocks.dofs.len() {
            let (_, e) = self.bubble_map(j);
            let a = &self.blocks.coupling[j];
            let acc = self.blocks.bubble_diag[j];
            for k in 0..P2_DOFS {
                diag[self.blocks.dofs[j][k]] += -2.0 * a[k] * e[k] + acc * e[k] * e[k];
            }
        }
        diag
    }

    /// Constant part of the reduced gradient: `b_w − Σ_T (d a − acc d e + b_c e)`.
    fn rhs(&self) -> Vec<f64> {
        let mut r = self.sys.load[..self.sys.num_p2].to_vec();
        for j in 0..self.blocks.dofs.len() {
            let (d, e) = self.bubble_map(j);
            let a = &self.blocks.coupling[j];
            let acc = self.blocks.bubble_diag[j];
            let bc = self.sys.load[self.sys.bubble_dof(j)];
            for k in 0..P2_DOFS {
                r[self.blocks.dofs[j][k]] -= d * a[k] - acc * d * e[k] + bc * e[k];
            }
        }
        r
    }
}

/// Reusable solver state for a fixed system.
pub struct Step2Solver<'a> {
    sys: &'a ConstrainedSystem,
    blocks: ElementBlocks,
    free_p2: Vec<bool>,
}

impl<'a> Step2Solver<'a> {
    pub fn new(sys: &'a ConstrainedSystem) -> Result<Self> {
        let blocks = ElementBlocks::new(sys)?;
        let free_p2 = (0..sys.num_p2).map(|i| !sys.dirichlet[i]).collect();
        Ok(Self { sys, blocks, free_p2 })
    }

    /// Solves `Aα + Bβ = b` with `Bᵀα = γ` on active elements and `β = 0`
    /// elsewhere. `warm` optionally seeds the P2 coefficients.
    pub fn solve(&self, active: &[bool], tol: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>, InnerStats)> {
        let sys = self.sys;
        if active.len() != sys.num_elements() {
            return Err(FemError::DimensionMismatch { expected: sys.num_elements(), got: active.len() });
        }
        let n_active = active.iter().filter(|&&a| a).count();
        let op = ReducedOperator { sys, blocks: &self.blocks, active };
        let np = sys.num_p2;

        // lift: Dirichlet values, zero on free DOFs
        let lift: Vec<f64> = sys.dirichlet_values[..np].to_vec();
        let mut s_lift = vec![0.0; np];
        op.apply(&lift, &mut s_lift);
        let mut rhs = op.rhs();
        for i in 0..np {
            rhs[i] = if self.free_p2[i] { rhs[i] - s_lift[i] } else { 0.0 };
        }
        let diag = op.diagonal();
        let mut z = vec![0.0; np];
        if let Some(w) = warm {
            for i in 0..np {
                if self.free_p2[i] {
                    z[i] = w[i];
                }
            }
        }
        let cg_iterations = pcg(&op, &self.free_p2, &diag, &rhs, &mut z, tol, n_active)?;

        let mut alpha = vec![0.0; sys.num_dofs()];
        for i in 0..np {
            alpha[i] = if self.free_p2[i] { z[i] } else { lift[i] };
        }
        let mut beta = vec![0.0; sys.num_elements()];
        for j in 0..sys.num_elements() {
            let (d, e) = op.bubble_map(j);
            let dofs = &self.blocks.dofs[j];
            let w_t: f64 = (0..P2_DOFS).map(|k| e[k] * alpha[dofs[k]]).sum();
            let c = d - w_t;
            let bubble = sys.bubble_dof(j);
            alpha[bubble] = c;
            if active[j] {
                let aw: f64 = (0..P2_DOFS).map(|k| self.blocks.coupling[j][k] * alpha[dofs[k]]).sum();
                beta[j] = (sys.load[bubble] - aw - self.blocks.bubble_diag[j] * c) / MEAN_BUBBLE;
            }
        }
        let kkt_residual = kkt_residual(sys, &alpha, &beta)?;
        Ok((alpha, beta, InnerStats { active: n_active, cg_iterations, kkt_residual }))
    }
}

/// `‖(b − Aα − Bβ)_free‖ / max(‖b_free‖, ‖(Aα)_free‖)`.
pub fn kkt_residual(sys: &ConstrainedSystem, alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let aa = sys.a.matvec(alpha)?;
    let bb = sys.b_times(beta)?;
    let mut r2 = 0.0;
    let mut b2 = 0.0;
    let mut a2 = 0.0;
    for &i in &sys.free {
        let r = sys.load[i] - aa[i] - bb[i];
        r2 += r * r;
        b2 += sys.load[i] * sys.load[i];
        a2 += aa[i] * aa[i];
    }
    Ok(r2.sqrt() / b2.sqrt().max(a2.sqrt()).max(f64::MIN_POSITIVE))
}

/// Jacobi-preconditioned CG on the free DOFs; returns the iteration count.
fn pcg(
    op: &ReducedOperator,
    free: &[bool],
    diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    n_active: usize,
) -> Result<usize> {
    let n = rhs.len();
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut inv_diag = vec![0.0; n];
    for i in 0..n {
        if free[i] {
            if !(diag[i] > 0.0) {
                return Err(FemError::SingularSystem { active: n_active });
            }
            inv_diag[i] = 1.0 / diag[i];
        }
    }
    let mask = |v: &mut [f64]| {
        for (vi, &f) in v.iter_mut().zip(free) {
            if !f {
                *vi = 0.0;
            }
        }
    };
    let mut ax = vec![0.0; n];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    mask(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let max_iter = 20 * n.max(100);
    let target = tol * rhs_norm;
    for it in 0..max_iter {
        let rn = norm2(&r);
        if rn <= target {
            return Ok(it);
        }
        op.apply(&p, &mut q);
        mask(&mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(FemError::SingularSystem { active: n_active });
        }
        let step = rz / pq;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let ratio = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + ratio * p[i];
        }
    }
    Err(FemError::LinearSolver { iterations: max_iter, residual: norm2(&r) / rhs_norm })
}

/// One Step-2 solve for the given active set.
pub fn step2_solve(sys: &ConstrainedSystem, active: &[bool], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let solver = Step2Solver::new(sys)?;
    let (alpha, beta, _) = solver.solve(active, tol, None)?;
    Ok((alpha, beta))
}

fn set_hash(active: &[bool]) -> u64 {
    let mut h = DefaultHasher::new();
    active.hash(&mut h);
    h.finish()
}

/// Runs the primal-dual active set method until the active set repeats.
///
/// Non-convergence (iteration cap or cycling) is not an error: the last
/// state is returned and the report says why the iteration stopped.
pub fn pdas_solve(sys: &ConstrainedSystem, config: &SolverConfig) -> Result<(ActiveSetState, SolveReport)> {
    config.validate()?;
    let m = sys.num_elements();
    let solver = Step2Solver::new(sys)?;
    let mut inner = Vec::new();

    let none_active = vec![false; m];
    let (mut alpha, mut beta, mut prev) = match config.init {
        InitMode::Unconstrained => {
            let (a, b, stats) = solver.solve(&none_active, config.linear_tol, None)?;
            inner.push(stats);
            (a, b, Some(none_active.clone()))
        }
        InitMode::Zero => (sys.dirichlet_values.clone(), vec![0.0; m], None),
    };

    let mut history: Vec<(u64, Vec<bool>)> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = config.max_iterations;
    for k in 1..=config.max_iterations {
        let gap = constraint_gap(sys, &alpha)?;
        let active: Vec<bool> = beta.iter().zip(&gap).map(|(&b, &g)| b + config.c * g < 0.0).collect();
        if config.log {
            let comp = complementarity_residual(sys, &alpha, &beta, config.c)?;
            eprintln!(
                "pdas iteration={k} active={} complementarity={:.6e}",
                active.iter().filter(|&&a| a).count(),
                norm_inf(&comp)
            );
        }
        if prev.as_ref() == Some(&active) {
            termination = Termination::SetConverged;
            iterations = k;
            break;
        }
        let hash = set_hash(&active);
        if history.iter().any(|(h, s)| *h == hash && *s == active) {
            termination = Termination::Cycling;
            iterations = k;
            break;
        }
        history.push((hash, active.clone()));
        if history.len() > 10 {
            history.remove(0);
        }
        let (a, b, stats) = solver.solve(&active, config.linear_tol, Some(&alpha[..sys.num_p2]))?;
        if config.log {
            eprintln!(
                "pdas iteration={k} cg_iterations={} kkt_residual={:.6e}",
                stats.cg_iterations, stats.kkt_residual
            );
        }
        inner.push(stats);
        alpha = a;
        beta = b;
        prev = Some(active);
    }

    let comp = complementarity_residual(sys, &alpha, &beta, config.c)?;
    let active = prev.unwrap_or_else(|| vec![false; m]);
    let report = SolveReport {
        iterations,
        termination,
        complementarity_residual: norm_inf(&comp),
        active_count: active.iter().filter(|&&a| a).count(),
        inner,
    };
    if config.log {
        eprintln!(
            "pdas done termination={:?} iterations={} active={} complementarity={:.6e}",
            report.termination, report.iterations, report.active_count, report.complementarity_residual
        );
    }
    Ok((ActiveSetState { alpha: FeFunction { coeffs: alpha }, beta, active }, report))
}
