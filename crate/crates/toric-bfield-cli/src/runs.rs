//! Subcommand implementations.

use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use toric_bfield::calabi::{gamma_and_constant, perturbed_profile, solve_profile, ProfileMode};
use toric_bfield::classes::{invariants_bundle, ToricClass};
use toric_bfield::continuity::{run_path, ContinuityError, PathProblem};
use toric_bfield::dhym::{
    bounds_check, perturbative_dhym_solve, radius, radius_closure, EigenProfile,
};
use toric_bfield::kstability::{
    a_function, coupling_bounds, futaki_bfield, futaki_decomposition, lambda_estimate,
};
use toric_bfield::potentials::{
    abreu_field, endomorphism_field, InvariantForm, SymplecticPotential,
};

use crate::report::{manifest, OutDir, Outcome};
use crate::{config_json, load_class, load_polytope, CommonArgs};

type RunResult = Result<Outcome, Box<dyn std::error::Error>>;

fn omega_of(
    args: &CommonArgs,
    p: &toric_bfield::DelzantPolytope,
) -> Result<ToricClass, Box<dyn std::error::Error>> {
    match &args.omega {
        Some(path) => load_class(path, p.nfacets()),
        None => Ok(ToricClass::of_polytope(p)),
    }
}

pub fn run_angle(args: &CommonArgs) -> RunResult {
    let p = load_polytope(args.polytope.as_deref())?;
    let omega = omega_of(args, &p)?;
    let b_path = args.b_class.as_ref().ok_or("--b is required for `angle`")?;
    let b = load_class(b_path, p.nfacets())?;
    let ad = invariants_bundle(&p, &omega, &b, args.gamma)?;
    let out = OutDir::new(args.out.as_deref())?;
    out.report(&json!({
        "manifest": manifest("angle", &config_json(args, json!({})), args.tol),
        "angle": ad,
    }))?;
    Ok(Outcome::Success)
}

pub fn run_stability(args: &CommonArgs, mesh_level: usize) -> RunResult {
    let p = load_polytope(args.polytope.as_deref())?;
    let scheme = p.quadrature(8);
    let a0 = scheme.vol_sigma() / scheme.vol_mu();
    let out = OutDir::new(args.out.as_deref())?;
    let config = config_json(args, json!({ "mesh_level": mesh_level }));

    let report = if args.gamma == 0.0 {
        lambda_estimate(&p, &scheme, &|_y| a0, mesh_level)?
    } else {
        // Solve dHYM at the Guillemin metric and build A(ω).
        let b_path = args.b_class.as_ref().ok_or("--b is required when γ ≠ 0")?;
        let eta0 = load_class(b_path, p.nfacets())?;
        let u = SymplecticPotential::<2>::guillemin(p.clone(), args.grid)?;
        let metric = u.metric()?;
        let eta_ref = InvariantForm::from_toric_class(&u.grid, &eta0);
        let sol = perturbative_dhym_solve(&u, &metric, &eta_ref, args.eps, args.delta, args.tol)?;
        let endo = endomorphism_field(&u, &metric, &sol.form);
        let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
        let r = radius_closure(&u.grid, &profile);
        let af = a_function(&p, &scheme, &r, args.gamma, a0)?;
        let a_at = move |y: &[f64]| af.eval(y, r(y));
        lambda_estimate(&p, &scheme, &a_at, mesh_level)?
    };
    let lambda = report.lambda_estimate;
    out.report(&json!({
        "manifest": manifest("stability", &config, args.tol),
        "lambda": lambda,
        "feasible": report.feasible,
        "futaki": report.futaki_affine,
        "certification_defect": report.certification_defect,
        "destabilizer": report.minimizer.as_ref().map(|m| json!({
            "vertices": m.vertices,
            "triangles": m.triangles,
            "values": m.values,
        })),
    }))?;
    match lambda {
        Some(l) if l > 0.0 => Ok(Outcome::Success),
        Some(l) => Ok(Outcome::Finding(format!("destabilized: λ_est = {l}"))),
        None => Ok(Outcome::Finding("classical Futaki obstruction nonzero".into())),
    }
}

pub fn run_abreu(args: &CommonArgs) -> RunResult {
    let p = load_polytope(args.polytope.as_deref())?;
    let out = OutDir::new(args.out.as_deref())?;
    let (rows, stats) = match p.dim {
        1 => abreu_rows::<1>(&p, args.grid)?,
        2 => abreu_rows::<2>(&p, args.grid)?,
        3 => abreu_rows::<3>(&p, args.grid)?,
        _ => unreachable!(),
    };
    let header = match p.dim {
        1 => "y1,abreu",
        2 => "y1,y2,abreu",
        _ => "y1,y2,y3,abreu",
    };
    out.csv("abreu.csv", header, &rows)?;
    out.report(&json!({
        "manifest": manifest("abreu", &config_json(args, json!({})), args.tol),
        "abreu": stats,
    }))?;
    Ok(Outcome::Success)
}

fn abreu_rows<const N: usize>(
    p: &Arc<toric_bfield::DelzantPolytope>,
    grid: usize,
) -> Result<(Vec<Vec<f64>>, serde_json::Value), Box<dyn std::error::Error>> {
    let u = SymplecticPotential::<N>::guillemin(p.clone(), grid)?;
    let metric = u.metric()?;
    let field = abreu_field(&u, &metric);
    let mut rows = Vec::new();
    let mut mean = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &i in &u.grid.residual_nodes {
        let mut row: Vec<f64> = u.grid.coord(i).to_vec();
        row.push(field[i]);
        mean += field[i];
        min = min.min(field[i]);
        max = max.max(field[i]);
        rows.push(row);
    }
    let n = u.grid.residual_nodes.len() as f64;
    mean /= n;
    let var = u
        .grid
        .residual_nodes
        .iter()
        .map(|&i| (field[i] - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok((
        rows,
        json!({ "mean": mean, "stddev": var.sqrt(), "min": min, "max": max, "nodes": n as usize }),
    ))
}

pub fn run_dhym(args: &CommonArgs) -> RunResult {
    let p = load_polytope(args.polytope.as_deref())?;
    if p.dim != 2 {
        return Err("the perturbative dHYM solver runs on surfaces (n = 2)".into());
    }
    let b_path = args.b_class.as_ref().ok_or("--b is required for `dhym`")?;
    let eta0 = load_class(b_path, p.nfacets())?;
    let u = SymplecticPotential::<2>::guillemin(p.clone(), args.grid)?;
    let metric = u.metric()?;
    let eta_ref = InvariantForm::from_toric_class(&u.grid, &eta0);
    let sol = perturbative_dhym_solve(&u, &metric, &eta_ref, args.eps, args.delta, args.tol)?;
    let endo = endomorphism_field(&u, &metric, &sol.form);
    let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
    let r = radius(&profile);
    let rep = bounds_check(&profile, sol.theta_cohomological, true)?;
    let out = OutDir::new(args.out.as_deref())?;
    let mut rows = Vec::new();
    for (k, &i) in u.grid.residual_nodes.iter().enumerate() {
        let y = u.grid.coord(i);
        rows.push(vec![
            y[0],
            y[1],
            profile.lambda[k][0],
            profile.lambda[k][1],
            r[k],
        ]);
    }
    out.csv("dhym_profile.csv", "y1,y2,lambda1,lambda2,radius", &rows)?;
    out.report(&json!({
        "manifest": manifest("dhym", &config_json(args, json!({})), args.tol),
        "theta_discrete": sol.theta_discrete,
        "theta_cohomological": sol.theta_cohomological,
        "residual_sup": sol.residual_sup,
        "newton_iters": sol.newton_iters,
        "distance_to_seed": sol.distance_to_seed,
        "trace_bound": { "holds": rep.holds, "margin": rep.margin },
    }))?;
    Ok(Outcome::Success)
}

#[derive(serde::Deserialize)]
struct ContinuityConfig {
    polytope: String,
    eta0: Vec<f64>,
    gamma: f64,
    eps: f64,
    delta: f64,
    grid: usize,
    tol: f64,
}

pub fn run_continuity(args: &CommonArgs, config: Option<&Path>) -> RunResult {
    let (p, eta0, gamma, eps, delta, grid, tol) = match config {
        Some(path) => {
            let cfg: ContinuityConfig =
                serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let text = std::fs::read_to_string(&cfg.polytope)?;
            let p = Arc::new(toric_bfield::DelzantPolytope::from_json(&text)?);
            let eta0 = ToricClass::new(cfg.eta0.clone());
            (p, eta0, cfg.gamma, cfg.eps, cfg.delta, cfg.grid, cfg.tol)
        }
        None => {
            let p = load_polytope(args.polytope.as_deref())?;
            let b_path = args.b_class.as_ref().ok_or("--b (η₀ class) is required")?;
            let eta0 = load_class(b_path, p.nfacets())?;
            (p, eta0, args.gamma, args.eps, args.delta, args.grid, args.tol)
        }
    };
    if p.dim != 2 {
        return Err("the continuity solver acceptance path runs on surfaces".into());
    }
    let out = OutDir::new(args.out.as_deref())?;
    let problem: PathProblem<2> =
        PathProblem::new(p.clone(), grid, eta0, gamma, eps, delta, tol)?;
    if let Err(e) = problem.verify_preconditions(2) {
        return Ok(Outcome::Finding(e.to_string()));
    }
    let config_value = config_json(
        args,
        json!({ "theta_hat": problem.angle.theta_hat, "a0": problem.a0 }),
    );
    match run_path(&problem) {
        Ok(traj) => {
            out.jsonl("trajectory.jsonl", &traj.summaries)?;
            let last = traj.summaries.last().unwrap();
            // Final-state fields.
            let grid_ref = problem.grid();
            let state = &traj.final_state;
            let mut rows = Vec::new();
            for &i in &grid_ref.residual_nodes {
                let y = grid_ref.coord(i);
                rows.push(vec![y[0], y[1], state.c[i], state.psi[i]]);
            }
            out.csv("final_state.csv", "y1,y2,correction,b_potential", &rows)?;
            out.report(&json!({
                "manifest": manifest("continuity", &config_value, tol),
                "reached_t": traj.reached_t,
                "final": last,
                "distance_to_harmonic_ansatz": traj.distance_to_harmonic_ansatz,
            }))?;
            Ok(Outcome::Success)
        }
        Err(ContinuityError::StepCollapse { t, dt, diagnostic }) => {
            out.report(&json!({
                "manifest": manifest("continuity", &config_value, tol),
                "reached_t": t,
                "step_collapse": { "dt": dt, "diagnostic": diagnostic },
            }))?;
            Ok(Outcome::Finding(format!("step collapse at t = {t}: {diagnostic}")))
        }
        Err(e) => Err(e.into()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_calabi(
    x1: f64,
    x2: f64,
    coupled: bool,
    a: f64,
    b: f64,
    eps: f64,
    steps: usize,
    out_dir: Option<&Path>,
) -> RunResult {
    let mode = if coupled { ProfileMode::Coupled } else { ProfileMode::CscK };
    let profile = solve_profile(x1, x2, mode, steps)?;
    let out = OutDir::new(out_dir)?;
    let mut rows = Vec::new();
    for (j, &t) in profile.tau.iter().enumerate() {
        rows.push(vec![t, profile.phi[j], profile.f[j]]);
    }
    out.csv("profile.csv", "tau,phi,f", &rows)?;
    let (gamma_hat, c_tilde) = gamma_and_constant(&profile, a, b);
    let perturbed = if eps > 0.0 && coupled {
        Some(perturbed_profile(&profile, a, b, eps, steps)?)
    } else {
        None
    };
    if let Some(pp) = &perturbed {
        let mut rows = Vec::new();
        for (j, &t) in pp.tau.iter().enumerate() {
            rows.push(vec![t, pp.phi_eps[j], pp.psi_eps[j], pp.g[j]]);
        }
        out.csv("profile_eps.csv", "tau,phi_eps,psi_eps,g", &rows)?;
    }
    let config = json!({
        "x1": x1, "x2": x2, "coupled": coupled, "a": a, "b": b,
        "eps": eps, "steps": steps,
    });
    out.report(&json!({
        "manifest": manifest("calabi", &config, 1e-10),
        "kappa1": profile.kappa1,
        "kappa2": profile.kappa2,
        "gamma_hat": if coupled { Some(gamma_hat) } else { None },
        "c_tilde": if coupled { Some(c_tilde) } else { None },
        "positive": profile.positive,
        "slope_defect": profile.slope_defect,
        "ke_residual": if coupled { None } else { Some(profile.ke_residual) },
        "x2_of_eps": perturbed.as_ref().map(|p| p.x2_of_eps),
        "phi_eps_positive": perturbed.as_ref().map(|p| p.positive),
    }))?;
    let csck_fails = !coupled && (profile.slope_defect > 1e-6 || !profile.positive);
    if csck_fails {
        return Ok(Outcome::Finding(format!(
            "no cscK profile: slope defect {:.3e}, positive = {}",
            profile.slope_defect, profile.positive
        )));
    }
    if !profile.positive {
        return Ok(Outcome::Finding("profile not positive".into()));
    }
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn run_bounds(
    a0: f64,
    lambda: f64,
    r: f64,
    inf_tilde_a: f64,
    s_hat: f64,
    eps: f64,
    alpha: Option<f64>,
    out_dir: Option<&Path>,
) -> RunResult {
    let cb = coupling_bounds(a0, lambda, r, inf_tilde_a, s_hat, eps, alpha)?;
    let out = OutDir::new(out_dir)?;
    let config = json!({
        "a0": a0, "lambda": lambda, "r": r, "inf_tilde_a": inf_tilde_a,
        "s_hat": s_hat, "eps": eps, "alpha": alpha,
    });
    out.report(&json!({
        "manifest": manifest("bounds", &config, 0.0),
        "alpha_max": cb.alpha_max,
        "gamma_max": cb.gamma_max,
        "lambda_prime": cb.lambda_prime,
    }))?;
    match cb.lambda_prime {
        Some(lp) if lp <= 0.0 => {
            Ok(Outcome::Finding(format!("λ′ = {lp} ≤ 0: coupling outside the admissible range")))
        }
        _ => Ok(Outcome::Success),
    }
}

pub fn run_futaki(args: &CommonArgs) -> RunResult {
    let p = load_polytope(args.polytope.as_deref())?;
    if p.dim != 2 {
        return Err("futaki with B-field runs on surfaces".into());
    }
    let b_path = args.b_class.as_ref().ok_or("--b is required for `futaki`")?;
    let eta0 = load_class(b_path, p.nfacets())?;
    let u = SymplecticPotential::<2>::guillemin(p.clone(), args.grid)?;
    let metric = u.metric()?;
    let eta_ref = InvariantForm::from_toric_class(&u.grid, &eta0);
    let sol = perturbative_dhym_solve(&u, &metric, &eta_ref, args.eps, args.delta, args.tol)?;
    let endo = endomorphism_field(&u, &metric, &sol.form);
    let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
    let r = radius_closure(&u.grid, &profile);
    let scheme = p.quadrature(8);
    let fut = futaki_bfield(&p, &scheme, &r, args.gamma);
    let (classical, fprime) = futaki_decomposition(&p, &scheme, &r);
    let out = OutDir::new(args.out.as_deref())?;
    out.report(&json!({
        "manifest": manifest("futaki", &config_json(args, json!({})), args.tol),
        "futaki": fut,
        "classical_part": classical,
        "gamma_linear_part": fprime,
    }))?;
    Ok(Outcome::Success)
}

#[derive(serde::Deserialize)]
struct SweepSpec {
    command: String,
    points: Vec<serde_json::Value>,
}

/// Fan out independent parameter points across worker threads; worker count
/// capped by TORIC_BFIELD_THREADS.
pub fn run_sweep(spec_path: &Path, out_root: &Path) -> RunResult {
    let spec: SweepSpec = serde_json::from_str(&std::fs::read_to_string(spec_path)?)?;
    if spec.command != "calabi" {
        return Err("sweeps are implemented for the `calabi` command".into());
    }
    std::fs::create_dir_all(out_root)?;
    let workers: usize = std::env::var("TORIC_BFIELD_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    let points: Vec<(usize, serde_json::Value)> =
        spec.points.into_iter().enumerate().collect();
    let results = std::sync::Mutex::new(Vec::new());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(points.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= points.len() {
                    break;
                }
                let (idx, pt) = &points[i];
                let row = sweep_point(*idx, pt, out_root);
                results.lock().unwrap().push(row);
            });
        }
    });
    let mut rows = results.into_inner().unwrap();
    rows.sort_by_key(|r| r.0);
    let mut csv = String::from("index,x1,x2,coupled,kappa1,kappa2,positive,x2_of_eps\n");
    for (_, line) in &rows {
        csv.push_str(line);
        csv.push('\n');
    }
    std::fs::write(out_root.join("sweep.csv"), csv)?;
    Ok(Outcome::Success)
}

fn sweep_point(idx: usize, pt: &serde_json::Value, out_root: &Path) -> (usize, String) {
    let x1 = pt["x1"].as_f64().unwrap_or(0.5);
    let x2 = pt["x2"].as_f64().unwrap_or(-0.75);
    let coupled = pt["coupled"].as_bool().unwrap_or(true);
    let a = pt["a"].as_f64().unwrap_or(1.0);
    let b = pt["b"].as_f64().unwrap_or(1.0);
    let eps = pt["eps"].as_f64().unwrap_or(0.0);
    let steps = pt["steps"].as_u64().unwrap_or(2000) as usize;
    let dir = out_root.join(format!("point_{idx:04}"));
    let _ = run_calabi(x1, x2, coupled, a, b, eps, steps, Some(&dir));
    let mode = if coupled { ProfileMode::Coupled } else { ProfileMode::CscK };
    match solve_profile(x1, x2, mode, steps) {
        Ok(profile) => {
            let x2e = if eps > 0.0 && coupled {
                perturbed_profile(&profile, a, b, eps, steps)
                    .map(|p| p.x2_of_eps.to_string())
                    .unwrap_or_else(|_| "nan".into())
            } else {
                String::from("")
            };
            (
                idx,
                format!(
                    "{idx},{x1},{x2},{coupled},{},{},{},{}",
                    profile.kappa1, profile.kappa2, profile.positive, x2e
                ),
            )
        }
        Err(e) => (idx, format!("{idx},{x1},{x2},{coupled},nan,nan,error:{e},")),
    }
}
