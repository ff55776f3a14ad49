//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numerical failure or failed verification,
//! 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::equilibrium::{verify_local_equilibrium, verify_traction_balance, VerificationReport};
use crate::error::Result;
use crate::harness::{convergence_sweep, emit_csv, errors, Case, PolyField};
use crate::mesh::{Mesh, Point};
use crate::operators::Material;
use crate::system::{solve, Discretization};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest degree accepted without `--allow-high-degree`.
pub const MAX_DEGREE: usize = 4;

/// Normalized residual above which `verify` fails.
pub const VERIFY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Solve once and report errors.
    Solve,
    /// Run a convergence sweep over several meshes.
    Converge,
    /// Solve and check local equilibrium and traction balance.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseKind {
    Manufactured,
    /// Random global polynomial of degree k + 1 (reproduced exactly).
    Polynomial,
    Zero,
}

#[derive(Debug, Parser)]
#[command(
    name = "hho",
    version,
    about = "HHO solver for 2D linear elasticity with equilibrated tractions"
)]
struct Args {
    /// Subcommand; may also be given as --command.
    #[arg(value_enum)]
    command: Option<Command>,
    #[arg(long = "command", value_enum, conflicts_with = "command")]
    command_flag: Option<Command>,
    /// Polynomial degree.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Accept k above 4.
    #[arg(long)]
    allow_high_degree: bool,
    /// Subdivisions per side of the structured triangular mesh.
    #[arg(long, default_value_t = 8, conflicts_with = "mesh")]
    n: usize,
    /// Mesh file instead of the structured mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Subdivision counts for `converge`, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
    meshes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = CaseKind::Manufactured)]
    case: CaseKind,
    /// Seed of the polynomial case.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solve the full cell and face system.
    #[arg(long)]
    no_condense: bool,
    /// Worker threads; defaults to the rayon default.
    #[arg(long)]
    threads: Option<usize>,
}

/// Validated run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub k: usize,
    pub n: usize,
    pub mesh: Option<PathBuf>,
    pub meshes: Vec<usize>,
    pub material: Material<f64>,
    pub case: CaseKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub condense: bool,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Parses and validates arguments; the error carries the usage message
    /// and, on success, any warnings to print.
    pub fn parse_from<I, S>(args: I) -> std::result::Result<(Self, Vec<String>), String>
    where
        I: IntoIterator<Item = S>,
        S: Into<OsString> + Clone,
    {
        let a = Args::try_parse_from(args).map_err(|e| e.to_string())?;
        let command = a
            .command
            .or(a.command_flag)
            .ok_or_else(|| "missing command: expected solve, converge or verify".to_string())?;
        let mut warnings = Vec::new();
        if a.k < 1 {
            return Err("--k must be at least 1".into());
        }
        if a.k > MAX_DEGREE {
            if !a.allow_high_degree {
                return Err(format!(
                    "--k {} exceeds {MAX_DEGREE}; pass --allow-high-degree to override",
                    a.k
                ));
            }
            warnings.push(format!(
                "warning: k = {} is above {MAX_DEGREE}; local matrices may be poorly conditioned",
                a.k
            ));
        }
        if a.mesh.is_none() && a.n == 0 {
            return Err("--n must be at least 1".into());
        }
        if a.meshes.is_empty() || a.meshes.contains(&0) {
            return Err("--meshes must list positive subdivision counts".into());
        }
        if command == Command::Converge && a.mesh.is_some() {
            return Err("converge uses structured meshes; --mesh is not accepted".into());
        }
        if a.threads == Some(0) {
            return Err("--threads must be positive".into());
        }
        let material = Material::new(a.mu, a.lambda).map_err(|e| e.to_string())?;
        Ok((
            RunConfig {
                command,
                k: a.k,
                n: a.n,
                mesh: a.mesh,
                meshes: a.meshes,
                material,
                case: a.case,
                seed: a.seed,
                out: a.out,
                condense: !a.no_condense,
                threads: a.threads,
            },
            warnings,
        ))
    }

    fn case(&self) -> Case<f64> {
        match self.case {
            CaseKind::Manufactured => Case::Manufactured,
            CaseKind::Polynomial => Case::Polynomial(PolyField::random(self.k + 1, self.seed)),
            CaseKind::Zero => Case::Zero,
        }
    }

    fn mesh(&self) -> Result<Mesh<f64>> {
        match &self.mesh {
            Some(p) => Mesh::load(File::open(p)?),
            None => Ok(Mesh::structured_triangular(self.n)?),
        }
    }
}

fn with_output<F>(out: &Option<PathBuf>, stdout: &mut dyn Write, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => body(stdout),
    }
}

/// Runs a validated configuration. CSV goes to `--out` or `stdout`; the
/// summary goes to `stdout` when a file is written and to `stderr`
/// otherwise, so that piped CSV stays clean.
pub fn run(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let body = |stdout: &mut dyn Write, stderr: &mut dyn Write| match execute(cfg, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_NUMERICAL
        }
    };
    match cfg.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => {
                // the pool needs Send sinks, so buffer and copy afterwards
                let (mut o, mut e) = (Vec::new(), Vec::new());
                let code = pool.install(|| body(&mut o, &mut e));
                if stdout.write_all(&o).is_err() || stderr.write_all(&e).is_err() {
                    return EXIT_NUMERICAL;
                }
                code
            }
            Err(e) => {
                let _ = writeln!(stderr, "error: cannot start thread pool: {e}");
                EXIT_NUMERICAL
            }
        },
        None => body(stdout, stderr),
    }
}

fn execute(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let case = cfg.case();
    let mat = cfg.material;
    let mut summary: Vec<String> = Vec::new();
    let mut code = EXIT_OK;
    match cfg.command {
        Command::Converge => {
            let sweep = convergence_sweep(&[cfg.k], &cfg.meshes, mat, &case);
            with_output(&cfg.out, stdout, |w| emit_csv(&sweep, w))?;
            for s in &sweep.slopes {
                summary.push(format!(
                    "k={} slopes: energy {:.4} energy(post) {:.4} L2 {:.4} L2(post) {:.4} pL2 {:.4}",
                    s.k, s.en_uh, s.en_tuh, s.l2_uh, s.l2_tuh, s.pl2
                ));
            }
            if let Some((k, n, e)) = sweep.failure {
                summary.push(format!("sweep aborted at k={k}, n={n}: {e}"));
                code = EXIT_NUMERICAL;
            }
        }
        Command::Solve | Command::Verify => {
            let disc = Discretization::new(cfg.mesh()?, cfg.k, mat)?;
            let f = |p: &Point<f64>| case.f(p, &mat);
            let g = |p: &Point<f64>| case.g(p);
            let sol = solve(&disc, &f, &g, cfg.condense)?;
            summary.push(format!(
                "k={} elements={} h={:.6e} unknowns={} nnz={} residual={:.3e} condensed={}",
                cfg.k,
                disc.mesh.elements.len(),
                disc.mesh.h,
                sol.stats.n_unknowns,
                sol.stats.nnz,
                sol.stats.relative_residual,
                sol.stats.condensed
            ));
            if cfg.command == Command::Solve {
                with_output(&cfg.out, stdout, |w| sol.write_csv(w))?;
                let e = errors(&disc, &sol, &|p: &Point<f64>| case.u(p))?;
                summary.push(format!(
                    "err_en_uh={:.6e} err_en_tuh={:.6e} err_L2_uh={:.6e} err_L2_tuh={:.6e} err_pL2={:.6e}",
                    e.en_uh, e.en_tuh, e.l2_uh, e.l2_tuh, e.pl2
                ));
            } else {
                let locals = sol.locals(&disc);
                let report = VerificationReport {
                    elements: verify_local_equilibrium(&disc.mesh, &disc.ops, &disc.post, &locals, &f)?,
                    faces: verify_traction_balance(&disc.mesh, &disc.ops, &disc.post, &locals)?,
                };
                with_output(&cfg.out, stdout, |w| report.write_csv(w))?;
                let (re, rf) = (report.max_element_residual(), report.max_face_defect());
                summary.push(format!(
                    "max normalized element residual={re:.3e} max normalized face defect={rf:.3e}"
                ));
                if !(re <= VERIFY_TOLERANCE && rf <= VERIFY_TOLERANCE) {
                    summary.push(format!("verification failed: tolerance {VERIFY_TOLERANCE:e}"));
                    code = EXIT_NUMERICAL;
                }
            }
        }
    }
    let sink: &mut dyn Write = if cfg.out.is_some() { stdout } else { stderr };
    for line in summary {
        writeln!(sink, "{line}")?;
    }
    Ok(code)
}

/// Parses `args` (including the program name) and runs.
pub fn main_with_args<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match RunConfig::parse_from(args.clone()) {
        Ok((cfg, warnings)) => {
            for w in warnings {
                let _ = writeln!(stderr, "{w}");
            }
            run(&cfg, stdout, stderr)
        }
        Err(msg) => {
            // help and version requests are not usage errors
            if let Err(e) = Args::try_parse_from(args) {
                if matches!(
                    e.kind(),
                    clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
                ) {
                    let _ = write!(stdout, "{e}");
                    return EXIT_OK;
                }
            }
            let _ = writeln!(stderr, "{}", msg.trim_end());
            EXIT_USAGE
        }
    }
}
