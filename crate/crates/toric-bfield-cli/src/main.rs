//! Command-line entry point for the toric B-field toolkit.
//!
//! Exit codes: 0 success, 1 mathematical finding (instability, step collapse,
//! non-positive profile), 2 software/parameter error, 64 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

mod report;
mod runs;

use report::Outcome;

#[derive(Parser)]
#[command(name = "toric-bfield", version, about = "Numerical toolkit for the cscK equation with B-field on toric manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Polytope definition JSON: {"n": int, "facets": [{"normal": [...], "offset": f}]}.
    #[arg(long)]
    pub polytope: Option<PathBuf>,
    /// Kähler class JSON {"offsets": [...]}; defaults to the polytope's own class.
    #[arg(long)]
    pub omega: Option<PathBuf>,
    /// B-field / η₀ class JSON {"offsets": [...]}.
    #[arg(long = "b", alias = "B")]
    pub b_class: Option<PathBuf>,
    /// Coupling constant |γ|.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub gamma: f64,
    /// Ansatz scale ε in B = ε(ω + δη).
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    /// Ansatz perturbation δ.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Grid resolution (cells across the bounding box).
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Output directory (report.json, fields/*.csv, trajectory.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Topological constants of the complexified class (i[ω] + [B], |γ|).
    Angle(CommonArgs),
    /// Uniform K-stability estimate λ over PL convex test functions.
    Stability {
        #[command(flatten)]
        common: CommonArgs,
        /// Crease-mesh refinement level.
        #[arg(long, default_value_t = 3)]
        mesh_level: usize,
    },
    /// Abreu operator field of the Guillemin potential.
    Abreu(CommonArgs),
    /// Perturbative dHYM solve for B ∈ ε([ω] + δ[η₀]) at the Guillemin metric.
    Dhym(CommonArgs),
    /// Newton continuation for the coupled scalar/dHYM system.
    Continuity {
        #[command(flatten)]
        common: CommonArgs,
        /// Full problem configuration JSON (overrides the flags).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Momentum-profile solver for P(O ⊕ O(1,−1)) → P¹×P¹.
    Calabi {
        #[arg(long, allow_negative_numbers = true)]
        x1: f64,
        #[arg(long, allow_negative_numbers = true)]
        x2: f64,
        /// Solve the coupled (Kähler–Yang–Mills) target instead of cscK.
        #[arg(long)]
        coupled: bool,
        /// Class parameters of γ_{a,b} = a ω + b α.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        b: f64,
        /// Perturbation scale for the ε-family (0 = skip).
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Admissible coupling bounds α_max, γ_max and λ′.
    Bounds {
        #[arg(long, allow_negative_numbers = true)]
        a0: f64,
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        /// Radius bound R.
        #[arg(long, allow_negative_numbers = true)]
        r: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        inf_tilde_a: f64,
        #[arg(long, allow_negative_numbers = true)]
        s_hat: f64,
        #[arg(long, allow_negative_numbers = true)]
        eps: f64,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Futaki invariant with B-field (after a dHYM solve).
    Futaki(CommonArgs),
    /// Fan out a parameter sweep across worker threads.
    Sweep {
        /// Sweep description JSON: {"command": "calabi", "points": [{...}]}.
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with its own successful exit.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(64);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Finding(msg)) => {
            eprintln!("finding: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn dispatch(command: Command) -> Result<Outcome, Box<dyn std::error::Error>> {
    match command {
        Command::Angle(args) => runs::run_angle(&args),
        Command::Stability { common, mesh_level } => runs::run_stability(&common, mesh_level),
        Command::Abreu(args) => runs::run_abreu(&args),
        Command::Dhym(args) => runs::run_dhym(&args),
        Command::Continuity { common, config } => runs::run_continuity(&common, config.as_deref()),
        Command::Calabi { x1, x2, coupled, a, b, eps, steps, out } => {
            runs::run_calabi(x1, x2, coupled, a, b, eps, steps, out.as_deref())
        }
        Command::Bounds { a0, lambda, r, inf_tilde_a, s_hat, eps, alpha, out } => {
            runs::run_bounds(a0, lambda, r, inf_tilde_a, s_hat, eps, alpha, out.as_deref())
        }
        Command::Futaki(args) => runs::run_futaki(&args),
        Command::Sweep { sweep, out } => runs::run_sweep(&sweep, &out),
    }
}

pub fn load_polytope(
    path: Option<&Path>,
) -> Result<Arc<toric_bfield::DelzantPolytope>, Box<dyn std::error::Error>> {
    let path = path.ok_or("--polytope is required for this command")?;
    let text = std::fs::read_to_string(path)?;
    Ok(Arc::new(toric_bfield::DelzantPolytope::from_json(&text)?))
}

pub fn load_class(
    path: &Path,
    nfacets: usize,
) -> Result<toric_bfield::ToricClass, Box<dyn std::error::Error>> {
    #[derive(serde::Deserialize)]
    struct Spec {
        offsets: Vec<f64>,
    }
    let spec: Spec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if spec.offsets.len() != nfacets {
        return Err(format!(
            "class has {} offsets but the fan has {} facets",
            spec.offsets.len(),
            nfacets
        )
        .into());
    }
    Ok(toric_bfield::ToricClass::new(spec.offsets))
}

pub fn config_json(args: &CommonArgs, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "polytope": args.polytope.as_ref().map(|p| p.display().to_string()),
        "omega": args.omega.as_ref().map(|p| p.display().to_string()),
        "b": args.b_class.as_ref().map(|p| p.display().to_string()),
        "gamma": args.gamma,
        "eps": args.eps,
        "delta": args.delta,
        "grid": args.grid,
        "tol": args.tol,
        "extra": extra,
    })
}
