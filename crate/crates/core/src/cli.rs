//! Command-line front end.

use crate::assembly::QuadratureDegrees;
use crate::bench::{run_convergence_study, solve_level, write_csv, BenchmarkProblem, Problem, RunConfig};
use crate::error::{FemError, Result};
use crate::estimators::{
    compute_sigma_h_with, error_norms, estimator_eta1, estimator_eta2, obstacle_terms, EstimatorReport,
};
use crate::io::{write_json, write_vtk, SolutionFile, SCHEMA_VERSION};
use crate::mesh::{build_box_mesh, uniform_refine, BoxDomain, TetMesh};
use crate::solver::SolverConfig;
use crate::space::{DofMap, FeFunction};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "obstacle3d", version, about = "3D obstacle problem with bubble-enriched quadratic elements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the benchmark on one mesh and write VTK and JSON output.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Uniform refinements applied to the initial mesh.
        #[arg(long, default_value_t = 0)]
        refine: usize,
    },
    /// Run a convergence study and write convergence.csv.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Recompute estimators for a stored solution.json.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        per_element: bool,
        #[arg(long)]
        quad_degree_override: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Cells per axis of the initial mesh.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0.7)]
    pub r0: f64,
    /// Active-set parameter.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Relative tolerance of the inner linear solves.
    #[arg(long, default_value_t = 1e-11)]
    pub tol: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Include per-element and per-face estimator contributions.
    #[arg(long)]
    pub per_element: bool,
    /// Degree of the quadrature used for loads, errors and estimators.
    #[arg(long)]
    pub quad_degree_override: Option<usize>,
    /// Write zero in the seconds column.
    #[arg(long)]
    pub no_timings: bool,
    /// Progress lines on stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

fn degrees(over: Option<usize>) -> QuadratureDegrees {
    let mut d = QuadratureDegrees::default();
    if let Some(k) = over {
        d.high = k;
    }
    d
}

impl CommonArgs {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            solver: SolverConfig {
                c: self.c,
                max_iterations: self.max_iter,
                linear_tol: self.tol,
                log: self.verbose,
                ..SolverConfig::default()
            },
            degrees: degrees(self.quad_degree_override),
            per_element: self.per_element,
        }
    }
}

fn mesh_for(n: usize, refine: usize) -> Result<TetMesh> {
    let mut mesh = build_box_mesh(BoxDomain::unit_cube(), n)?;
    for _ in 0..refine {
        mesh = uniform_refine(&mesh)?;
    }
    Ok(mesh)
}

fn out_dir(p: &Path) -> Result<&Path> {
    std::fs::create_dir_all(p)?;
    Ok(p)
}

#[derive(Serialize)]
struct MultiplierFile<'a> {
    schema_version: u32,
    sigma_h: &'a [f64],
    beta: &'a [f64],
    active: Vec<usize>,
    max_sigma_h: f64,
}

#[derive(Serialize)]
struct EstimatorFile<'a> {
    schema_version: u32,
    h: f64,
    dofs: usize,
    #[serde(flatten)]
    report: &'a EstimatorReport,
}

#[derive(Serialize)]
struct StudyFile<'a> {
    schema_version: u32,
    n: usize,
    r0: f64,
    c: f64,
    #[serde(flatten)]
    outcome: &'a crate::bench::StudyOutcome,
}

fn solve(common: &CommonArgs, refine: usize) -> Result<i32> {
    let problem = BenchmarkProblem::new(common.r0)?;
    let cfg = common.run_config();
    let mesh = mesh_for(common.n, refine)?;
    let res = solve_level(&problem, &mesh, &cfg)?;
    let dir = out_dir(&common.out_dir)?;
    let vtk = std::io::BufWriter::new(std::fs::File::create(dir.join("solution.vtk"))?);
    write_vtk(vtk, &mesh, &res.state.alpha, &res.sigma_h)?;
    let sol = SolutionFile {
        schema_version: SCHEMA_VERSION,
        n: common.n,
        refine,
        r0: common.r0,
        c: common.c,
        alpha: res.state.alpha.coeffs.clone(),
        beta: res.state.beta.clone(),
    };
    write_json(&dir.join("solution.json"), &sol)?;
    let active = (0..res.state.active.len()).filter(|&j| res.state.active[j]).collect();
    write_json(
        &dir.join("multiplier.json"),
        &MultiplierFile {
            schema_version: SCHEMA_VERSION,
            sigma_h: &res.sigma_h.values,
            beta: &res.state.beta,
            active,
            max_sigma_h: res.sigma_h.max(),
        },
    )?;
    write_json(
        &dir.join("estimator.json"),
        &EstimatorFile { schema_version: SCHEMA_VERSION, h: res.h, dofs: res.dofs, report: &res.estimators },
    )?;
    println!(
        "h={:.6e} dofs={} iterations={} termination={:?} error_h1={:.6e} eta_total={:.6e}",
        res.h,
        res.dofs,
        res.report.iterations,
        res.report.termination,
        res.errors.h1_semi,
        res.estimators.total_sq.sqrt()
    );
    Ok(if res.report.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn convergence(common: &CommonArgs, levels: usize) -> Result<i32> {
    let problem = BenchmarkProblem::new(common.r0)?;
    let cfg = common.run_config();
    let mut outcome = run_convergence_study(&problem, common.n, levels, &cfg)?;
    if common.no_timings {
        for l in &mut outcome.levels {
            l.row.seconds = 0.0;
        }
    }
    let dir = out_dir(&common.out_dir)?;
    let csv = std::io::BufWriter::new(std::fs::File::create(dir.join("convergence.csv"))?);
    write_csv(csv, &outcome.rows())?;
    let file = StudyFile { schema_version: SCHEMA_VERSION, n: common.n, r0: common.r0, c: common.c, outcome: &outcome };
    write_json(&dir.join("convergence.json"), &file)?;
    write_csv(std::io::stdout().lock(), &outcome.rows())?;
    if let Some(msg) = &outcome.failure {
        eprintln!("error: {msg}");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn estimate(input: &Path, dir: &Path, per_element: bool, over: Option<usize>) -> Result<i32> {
    let sol = SolutionFile::read(input)?;
    let problem = BenchmarkProblem::new(sol.r0)?;
    let mesh = mesh_for(sol.n, sol.refine)?;
    let dofs = DofMap::new(&mesh);
    if sol.alpha.len() != dofs.len() {
        return Err(FemError::DimensionMismatch { expected: dofs.len(), got: sol.alpha.len() });
    }
    if sol.beta.len() != mesh.num_tets() {
        return Err(FemError::DimensionMismatch { expected: mesh.num_tets(), got: sol.beta.len() });
    }
    if let Some(i) = sol.alpha.iter().chain(&sol.beta).position(|v| !v.is_finite()) {
        return Err(FemError::InvalidInput(format!("non-finite coefficient at position {i}")));
    }
    let deg = degrees(over);
    let alpha = FeFunction { coeffs: sol.alpha };
    let f = |p| problem.f(p);
    let sigma = compute_sigma_h_with(&mesh, &dofs, &alpha, f, deg)?;
    let eta1 = estimator_eta1(&mesh, &dofs, &alpha, f, &sigma, deg.high)?;
    let eta2 = estimator_eta2(&mesh, &dofs, &alpha, deg.stiffness)?;
    let ob = obstacle_terms(&mesh, &dofs, &alpha, |p| problem.chi(p), |p| problem.grad_chi(p), &sigma, deg.high)?;
    let err = error_norms(&mesh, &dofs, &alpha, |p| problem.u(p), |p| problem.grad_u(p), deg.high)?;
    let report = EstimatorReport::new(&eta1, &eta2, &ob, per_element).with_error(err.h1_semi);
    let dir = out_dir(dir)?;
    write_json(
        &dir.join("estimator.json"),
        &EstimatorFile { schema_version: SCHEMA_VERSION, h: mesh.diameter(), dofs: dofs.len(), report: &report },
    )?;
    println!(
        "eta1={:.6e} eta2={:.6e} total={:.6e} error_h1={:.6e}",
        report.eta1,
        report.eta2,
        report.total_sq.sqrt(),
        err.h1_semi
    );
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve { common, refine } => solve(common, *refine),
        Command::Convergence { common, levels } => convergence(common, *levels),
        Command::Estimate { input, out_dir, per_element, quad_degree_override } => {
            estimate(input, out_dir, *per_element, *quad_degree_override)
        }
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
