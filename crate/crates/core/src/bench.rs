//! Manufactured benchmarks and the convergence-study driver.

use crate::assembly::{assemble_with, ConstrainedSystem, QuadratureDegrees};
use crate::error::{FemError, Result};
use crate::estimators::{
    compute_sigma_h_with, contact_tolerance, error_norms, estimator_eta1, estimator_eta2, obstacle_terms,
    sigma_error_l2, ErrorNorms, EstimatorReport, MultiplierField,
};
use crate::geometry::Point3;
use crate::mesh::{build_box_mesh, uniform_refine, BoxDomain, TetMesh};
use crate::solver::{constraint_gap, kkt_residual, pdas_solve, ActiveSetState, SolveReport, SolverConfig};
use crate::space::{DofMap, MEAN_BUBBLE};
use crate::sparse::{norm2, norm_inf};
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

/// A problem with known solution `u`, multiplier `σ = f + Δu` and obstacle `χ`.
pub trait Problem {
    fn f(&self, p: Point3) -> f64;
    fn chi(&self, p: Point3) -> f64;
    fn grad_chi(&self, _p: Point3) -> Point3 {
        Point3::ZERO
    }
    fn u(&self, p: Point3) -> f64;
    fn grad_u(&self, p: Point3) -> Point3;
    fn sigma(&self, p: Point3) -> f64;
    /// Dirichlet data; the exact solution by default.
    fn g(&self, p: Point3) -> f64 {
        self.u(p)
    }
}

/// Radially symmetric contact problem on the unit cube with `χ ≡ 0` and
/// exact solution `u = (max(r² − r0², 0))²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkProblem {
    pub r0: f64,
}

impl BenchmarkProblem {
    pub fn new(r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(FemError::InvalidInput(format!("r0 must be positive, got {r0}")));
        }
        Ok(Self { r0 })
    }
}

pub fn benchmark_f(p: Point3, r0: f64) -> f64 {
    let r2 = p.dot(p);
    let r02 = r0 * r0;
    if r2 > r02 {
        -4.0 * (2.0 * r2 + 3.0 * (r2 - r02))
    } else {
        -8.0 * r02 * (1.0 - r2 + r02)
    }
}

impl Problem for BenchmarkProblem {
    fn f(&self, p: Point3) -> f64 {
        benchmark_f(p, self.r0)
    }

    fn chi(&self, _p: Point3) -> f64 {
        0.0
    }

    fn u(&self, p: Point3) -> f64 {
        let s = (p.dot(p) - self.r0 * self.r0).max(0.0);
        s * s
    }

    fn grad_u(&self, p: Point3) -> Point3 {
        let s = (p.dot(p) - self.r0 * self.r0).max(0.0);
        (4.0 * s) * p
    }

    fn sigma(&self, p: Point3) -> f64 {
        if p.dot(p) <= self.r0 * self.r0 {
            self.f(p)
        } else {
            0.0
        }
    }
}

/// Obstacle far below a smooth cubic solution; the constraint never binds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmoothProblem;

impl Problem for SmoothProblem {
    fn f(&self, p: Point3) -> f64 {
        -(6.0 * p.x + 2.0 * p.z - 6.0 * p.y)
    }
    fn chi(&self, _p: Point3) -> f64 {
        -1e9
    }
    fn u(&self, p: Point3) -> f64 {
        p.x.powi(3) + p.y * p.y * p.z - p.y.powi(3) + 2.0 * p.x * p.z + 1.0
    }
    fn grad_u(&self, p: Point3) -> Point3 {
        Point3::new(3.0 * p.x * p.x + 2.0 * p.z, 2.0 * p.y * p.z - 3.0 * p.y * p.y, p.y * p.y + 2.0 * p.x)
    }
    fn sigma(&self, _p: Point3) -> f64 {
        0.0
    }
}

/// Quadratic solution with an inactive obstacle; reproduced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticProblem;

impl Problem for QuadraticProblem {
    fn f(&self, _p: Point3) -> f64 {
        -(2.0 - 1.0 + 4.0)
    }
    fn chi(&self, _p: Point3) -> f64 {
        -1e9
    }
    fn u(&self, p: Point3) -> f64 {
        p.x * p.x - 0.5 * p.y * p.y + 2.0 * p.z * p.z + p.x * p.y - 3.0 * p.y * p.z + p.x - 2.0
    }
    fn grad_u(&self, p: Point3) -> Point3 {
        Point3::new(2.0 * p.x + p.y + 1.0, -p.y + p.x - 3.0 * p.z, 4.0 * p.z - 3.0 * p.y)
    }
    fn sigma(&self, _p: Point3) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub degrees: QuadratureDegrees,
    pub per_element: bool,
}

/// Discrete optimality measures of a solved level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktDiagnostics {
    pub max_beta: f64,
    pub max_abs_beta: f64,
    /// `min_j (Bᵀα − γ)_j`.
    pub min_gap: f64,
    pub gamma_norm_inf: f64,
    /// `‖Bᵀα‖∞`.
    pub means_norm_inf: f64,
    /// `|βᵀ(Bᵀα − γ)|`.
    pub complementarity_product: f64,
    pub load_norm: f64,
    pub alpha_norm: f64,
    pub kkt_residual: f64,
    /// Magnitude of the terms entering `σ_h`: the larger of `max |σ_h|` and
    /// `max_j |∫ f b_j| / (A_T(b_j) |T_j|)`.
    pub sigma_scale: f64,
    /// `max_j |σ_h − β_j/|T_j|| / sigma_scale`.
    pub multiplier_mismatch: f64,
    pub max_sigma_h: f64,
    pub max_abs_sigma_h: f64,
    /// Largest `|σ_h|` on elements with `A_T(u_h) > A_T(χ) + tol`.
    pub max_sigma_off_contact: f64,
}

impl KktDiagnostics {
    fn compute(sys: &ConstrainedSystem, state: &ActiveSetState, sigma: &MultiplierField) -> Result<Self> {
        let alpha = &state.alpha.coeffs;
        let gap = constraint_gap(sys, alpha)?;
        let product: f64 = state.beta.iter().zip(&gap).map(|(b, g)| b * g).sum();
        let load_scale = (0..sys.num_elements())
            .map(|j| sys.load[sys.bubble_dof(j)].abs() / (MEAN_BUBBLE * sys.volumes[j]))
            .fold(0.0, f64::max);
        let scale = sigma.max_abs().max(load_scale).max(f64::MIN_POSITIVE);
        let mismatch = sigma
            .values
            .iter()
            .zip(&state.beta)
            .zip(&sys.volumes)
            .map(|((s, b), v)| (s - b / v).abs())
            .fold(0.0, f64::max)
            / scale;
        let u_means = sys.means(alpha)?;
        let tol = contact_tolerance(&sys.gamma, &u_means);
        let off = u_means
            .iter()
            .zip(&sys.gamma)
            .zip(&sigma.values)
            .filter(|((u, g), _)| **u > **g + tol)
            .map(|(_, s)| s.abs())
            .fold(0.0, f64::max);
        Ok(Self {
            max_beta: state.beta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            max_abs_beta: norm_inf(&state.beta),
            min_gap: gap.iter().copied().fold(f64::INFINITY, f64::min),
            gamma_norm_inf: norm_inf(&sys.gamma),
            means_norm_inf: norm_inf(&u_means),
            complementarity_product: product.abs(),
            load_norm: sys.load_norm(),
            alpha_norm: norm2(alpha),
            kkt_residual: kkt_residual(sys, alpha, &state.beta)?,
            sigma_scale: scale,
            multiplier_mismatch: mismatch,
            max_sigma_h: sigma.max(),
            max_abs_sigma_h: sigma.max_abs(),
            max_sigma_off_contact: off,
        })
    }
}

/// Everything computed for one mesh.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub h: f64,
    pub dofs: usize,
    pub elements: usize,
    pub state: ActiveSetState,
    pub report: SolveReport,
    pub sigma_h: MultiplierField,
    pub errors: ErrorNorms,
    pub estimators: EstimatorReport,
    pub sigma_error_l2: f64,
    pub kkt: KktDiagnostics,
    pub seconds: f64,
}

/// Assembles, solves and post-processes `problem` on `mesh`.
pub fn solve_level<P: Problem + ?Sized>(problem: &P, mesh: &TetMesh, cfg: &RunConfig) -> Result<LevelResult> {
    let start = Instant::now();
    let dofs = DofMap::new(mesh);
    let sys = assemble_with(mesh, &dofs, |p| problem.f(p), |p| problem.chi(p), |p| problem.g(p), cfg.degrees)?;
    let (state, report) = pdas_solve(&sys, &cfg.solver)?;
    let seconds = start.elapsed().as_secs_f64();
    let high = cfg.degrees.high;
    let sigma_h = compute_sigma_h_with(mesh, &dofs, &state.alpha, |p| problem.f(p), cfg.degrees)?;
    let kkt = KktDiagnostics::compute(&sys, &state, &sigma_h)?;
    drop(sys);
    let errors = error_norms(mesh, &dofs, &state.alpha, |p| problem.u(p), |p| problem.grad_u(p), high)?;
    let eta1 = estimator_eta1(mesh, &dofs, &state.alpha, |p| problem.f(p), &sigma_h, high)?;
    let eta2 = estimator_eta2(mesh, &dofs, &state.alpha, cfg.degrees.stiffness)?;
    let obstacle =
        obstacle_terms(mesh, &dofs, &state.alpha, |p| problem.chi(p), |p| problem.grad_chi(p), &sigma_h, high)?;
    let estimators = EstimatorReport::new(&eta1, &eta2, &obstacle, cfg.per_element).with_error(errors.h1_semi);
    let sigma_error_l2 = sigma_error_l2(mesh, &sigma_h, |p| problem.sigma(p), high)?;
    Ok(LevelResult {
        h: mesh.diameter(),
        dofs: dofs.len(),
        elements: mesh.num_tets(),
        state,
        report,
        sigma_h,
        errors,
        estimators,
        sigma_error_l2,
        kkt,
        seconds,
    })
}

/// One row of the convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error_h1: f64,
    /// `log2(e_{k−1}/e_k)`; absent on the first level.
    pub order: Option<f64>,
    pub dofs: usize,
    pub iters: usize,
    pub seconds: f64,
}

/// Per-level record of a study.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub row: ConvergenceRow,
    pub elements: usize,
    pub error_l2: f64,
    pub sigma_error_l2: f64,
    pub active_elements: usize,
    pub termination: crate::solver::Termination,
    pub estimators: EstimatorReport,
    pub kkt: KktDiagnostics,
    /// Largest distance from the origin of an element centroid with `σ_h < −tol`.
    pub max_contact_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyOutcome {
    pub levels: Vec<LevelSummary>,
    /// Set when a level failed to converge; earlier levels are kept.
    pub failure: Option<String>,
}

impl StudyOutcome {
    pub fn rows(&self) -> Vec<ConvergenceRow> {
        self.levels.iter().map(|l| l.row).collect()
    }

    pub fn orders(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.row.order).collect()
    }
}

/// Solves `problem` on `levels` meshes, starting from the Kuhn mesh with
/// `n` cells per axis and refining uniformly.
pub fn run_convergence_study<P: Problem + ?Sized>(
    problem: &P,
    n: usize,
    levels: usize,
    cfg: &RunConfig,
) -> Result<StudyOutcome> {
    if levels < 2 {
        return Err(FemError::InvalidInput(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    let mut mesh = build_box_mesh(BoxDomain::unit_cube(), n)?;
    let mut out = StudyOutcome { levels: Vec::new(), failure: None };
    for level in 0..levels {
        if level > 0 {
            mesh = uniform_refine(&mesh)?;
        }
        let res = solve_level(problem, &mesh, cfg)?;
        let order = out.levels.last().map(|prev| (prev.row.error_h1 / res.errors.h1_semi).log2());
        let sigma_tol = 1e-9 * res.sigma_h.max_abs().max(1.0);
        let max_contact_radius = (0..mesh.num_tets())
            .filter(|&t| res.sigma_h.values[t] < -sigma_tol)
            .map(|t| mesh.map_point(t, &[0.25; 4]).norm())
            .fold(0.0, f64::max);
        if cfg.solver.log {
            eprintln!(
                "level index={level} h={:.6e} dofs={} error_h1={:.6e} iterations={} seconds={:.3}",
                res.h, res.dofs, res.errors.h1_semi, res.report.iterations, res.seconds
            );
        }
        out.levels.push(LevelSummary {
            level,
            row: ConvergenceRow {
                h: res.h,
                error_h1: res.errors.h1_semi,
                order,
                dofs: res.dofs,
                iters: res.report.iterations,
                seconds: res.seconds,
            },
            elements: res.elements,
            error_l2: res.errors.l2,
            sigma_error_l2: res.sigma_error_l2,
            active_elements: res.report.active_count,
            termination: res.report.termination,
            estimators: res.estimators,
            kkt: res.kkt,
            max_contact_radius,
        });
        if !res.report.converged() {
            out.failure = Some(format!(
                "level {level}: active-set iteration stopped with {:?} after {} iterations",
                res.report.termination, res.report.iterations
            ));
            break;
        }
    }
    Ok(out)
}

/// Scientific notation with six significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

/// Writes the convergence table.
pub fn write_csv<W: Write>(mut w: W, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    writeln!(w, "h,error_h1,order,dofs,iters,seconds")?;
    for r in rows {
        let order = r.order.map(sci).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{}", sci(r.h), sci(r.error_h1), order, r.dofs, r.iters, sci(r.seconds))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_examples() {
        let r0 = 0.7;
        assert!((benchmark_f(Point3::ZERO, r0) + 5.8408).abs() < 1e-12);
        assert!((benchmark_f(Point3::new(1.0, 0.0, 0.0), r0) + 14.12).abs() < 1e-12);
        // both branches agree on the free boundary
        let s = 1.0 / 3f64.sqrt();
        let on = Point3::new(r0 * s, r0 * s, r0 * s);
        let inner = -8.0 * r0 * r0 * (1.0 - on.dot(on) + r0 * r0);
        assert!((inner + 8.0 * r0 * r0).abs() < 1e-12);
        assert!((benchmark_f(on, r0) + 8.0 * r0 * r0).abs() < 1e-9);
    }

    fn fd_laplacian<P: Problem>(p: &P, x: Point3, h: f64) -> f64 {
        let mut lap = 0.0;
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = h;
            let d = Point3::new(e[0], e[1], e[2]);
            lap += (p.u(x + d) - 2.0 * p.u(x) + p.u(x - d)) / (h * h);
        }
        lap
    }

    #[test]
    fn exact_solutions_satisfy_the_pde() {
        let bench = BenchmarkProblem::new(0.7).unwrap();
        for x in [Point3::new(0.9, 0.3, 0.2), Point3::new(0.5, 0.6, 0.7), Point3::new(1.0, 1.0, 1.0)] {
            let lap = fd_laplacian(&bench, x, 1e-4);
            assert!((lap + bench.f(x)).abs() <= 1e-5 * bench.f(x).abs(), "{x:?}");
        }
        // inside the contact ball u vanishes and σ = f ≤ 0
        let x = Point3::new(0.2, 0.3, 0.1);
        assert_eq!(bench.u(x), 0.0);
        assert!(bench.sigma(x) < 0.0);
        for prob in [&SmoothProblem as &dyn ProblemCheck, &QuadraticProblem] {
            prob.check();
        }
        assert!(BenchmarkProblem::new(-1.0).is_err());
        assert!(BenchmarkProblem::new(0.0).is_err());
    }

    trait ProblemCheck {
        fn check(&self);
    }

    impl<P: Problem> ProblemCheck for P {
        fn check(&self) {
            for x in [Point3::new(0.1, 0.7, 0.4), Point3::new(0.9, 0.2, 0.6)] {
                let lap = fd_laplacian(self, x, 1e-4);
                assert!((lap + self.f(x)).abs() < 1e-5 * (1.0 + self.f(x).abs()));
                let h = 1e-6;
                let g = self.grad_u(x);
                for k in 0..3 {
                    let mut e = [0.0; 3];
                    e[k] = h;
                    let d = Point3::new(e[0], e[1], e[2]);
                    let fd = (self.u(x + d) - self.u(x - d)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
                }
            }
        }
    }

    #[test]
    fn benchmark_gradient_matches_fd() {
        BenchmarkProblem::new(0.7).unwrap().check();
    }

    #[test]
    fn csv_layout() {
        let rows = [
            ConvergenceRow { h: 0.5, error_h1: 0.1, order: None, dofs: 10, iters: 3, seconds: 0.0 },
            ConvergenceRow { h: 0.25, error_h1: 0.04, order: Some(1.3219), dofs: 70, iters: 4, seconds: 2.0 },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "h,error_h1,order,dofs,iters,seconds\n\
             5.00000e-1,1.00000e-1,,10,3,0.00000e0\n\
             2.50000e-1,4.00000e-2,1.32190e0,70,4,2.00000e0\n"
        );
    }

    #[test]
    fn study_needs_two_levels() {
        assert!(run_convergence_study(&SmoothProblem, 1, 1, &RunConfig::default()).is_err());
    }

    #[test]
    fn quadratic_patch_on_coarse_mesh() {
        let mesh = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        let res = solve_level(&QuadraticProblem, &mesh, &RunConfig::default()).unwrap();
        assert!(res.errors.h1_semi < 1e-9, "{}", res.errors.h1_semi);
        assert!(res.report.converged());
    }
}
