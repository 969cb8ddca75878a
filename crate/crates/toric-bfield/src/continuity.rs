//! Newton continuation for the coupled scalar-curvature/dHYM system with the
//! ansatz `B_t = ε(ω_t + δ η_t)`.
//!
//! At each path time t the grid system couples the fourth-order Abreu
//! linearization in the potential correction with the second-order dHYM
//! linearization in the B-potential. The affine datum ζ (equivalently the
//! extremal potential ξ_t) and the discrete topological angle are carried as
//! bordered unknowns whose defining rows are exactly the weighted row sums
//! that the grid equations satisfy identically, so the discrete system is
//! square and consistently solvable to solver tolerance.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::classes::{invariants_bundle, AngleData, ClassError, ToricClass};
use crate::dhym::{bounds_check, BoundsReport, DhymError, EigenProfile};
use crate::grid::{colored_jacobian, extension_plans, BorderedSystem, ExtensionPlan, GridError};
use crate::polytope::DelzantPolytope;
use crate::potentials::{
    abreu_field, band_from_triplets, endomorphism_field, harmonic_representative,
    InvariantForm, PotentialError, SymplecticPotential,
};

#[derive(Debug, Error)]
pub enum ContinuityError {
    #[error("stability precondition failed: {0}")]
    StabilityPrecondition(String),
    #[error("t-step collapsed at t = {t:.4} (dt = {dt:.2e}); {diagnostic}")]
    StepCollapse { t: f64, dt: f64, diagnostic: String },
    #[error("Newton failed at t = {t}: residual {residual:.3e} after {iters} iterations")]
    NewtonFailure { t: f64, residual: f64, iters: usize },
    #[error("linearization singular: pivot {pivot:.3e} at column {column}")]
    SingularLinearization { pivot: f64, column: usize },
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Dhym(#[from] DhymError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Problem data for a continuity path run.
pub struct PathProblem<const N: usize> {
    pub polytope: Arc<DelzantPolytope>,
    pub base: SymplecticPotential<N>,
    pub eta0: ToricClass,
    pub gamma_abs: f64,
    pub eps: f64,
    pub delta: f64,
    pub tol: f64,
    /// Cohomological invariants of (ω, ε([ω] + δ[η₀])).
    pub angle: AngleData,
    pub a0: f64,
    plans: Vec<ExtensionPlan>,
    /// Affine basis (1, y¹, …) at residual nodes.
    basis: Vec<Vec<f64>>,
    gauge_nodes: Vec<usize>,
    psi_gauge_node: usize,
}

impl<const N: usize> PathProblem<N> {
    pub fn new(
        polytope: Arc<DelzantPolytope>,
        grid_m: usize,
        eta0: ToricClass,
        gamma_abs: f64,
        eps: f64,
        delta: f64,
        tol: f64,
    ) -> Result<Self, ContinuityError> {
        let base = SymplecticPotential::guillemin(polytope.clone(), grid_m)
            .map_err(PotentialError::Grid)?;
        let omega = ToricClass::of_polytope(&polytope);
        let b_class = ToricClass::new(
            omega
                .offsets
                .iter()
                .zip(&eta0.offsets)
                .map(|(w, e)| eps * (w + delta * e))
                .collect(),
        );
        let angle = invariants_bundle(&polytope, &omega, &b_class, gamma_abs)?;
        let a0 = 4.0 * angle.s_hat;
        let grid = &base.grid;
        let plans = extension_plans(grid, &polytope)?;
        let basis: Vec<Vec<f64>> = (0..=N)
            .map(|k| {
                grid.residual_nodes
                    .iter()
                    .map(|&p| if k == 0 { 1.0 } else { grid.coord(p)[k - 1] })
                    .collect()
            })
            .collect();
        // Gauge nodes: pin the affine part of the correction at three
        // non-collinear residual nodes near the barycenter.
        let p0 = grid.nearest_residual(&polytope.barycenter());
        let mut gauge_nodes = vec![p0];
        if N >= 2 {
            let span = 3i64;
            for a in 0..N.min(2) {
                let mut step = [0i64; N];
                step[a] = span;
                let q = grid
                    .neighbor(p0, step)
                    .filter(|&q| grid.is_residual[q])
                    .unwrap_or_else(|| {
                        let mut s2 = [0i64; N];
                        s2[a] = -span;
                        grid.neighbor(p0, s2).expect("gauge node")
                    });
                gauge_nodes.push(q);
            }
        }
        Ok(PathProblem {
            polytope,
            base,
            eta0,
            gamma_abs,
            eps,
            delta,
            tol,
            angle,
            a0,
            plans,
            basis,
            gauge_nodes,
            psi_gauge_node: p0,
        })
    }

    pub fn grid(&self) -> &crate::grid::Grid<N> {
        &self.base.grid
    }

    /// Check the path preconditions: vanishing classical Futaki, uniform
    /// K-stability of the polytope at the given crease-mesh level, and the
    /// coupling inside the admissible range ŝλ/(2(1−λ)) ε⁻¹.
    pub fn verify_preconditions(&self, mesh_level: usize) -> Result<f64, ContinuityError> {
        if N != 2 {
            // The LP family is implemented on surfaces; higher-dimensional
            // paths are structural only.
            return Ok(f64::NAN);
        }
        let scheme = self.polytope.quadrature(8);
        let a0 = self.a0;
        let report = crate::kstability::lambda_estimate(
            &self.polytope,
            &scheme,
            &|_y| a0,
            mesh_level,
        )
        .map_err(|e| ContinuityError::StabilityPrecondition(e.to_string()))?;
        if !report.feasible {
            return Err(ContinuityError::StabilityPrecondition(format!(
                "classical Futaki obstruction nonzero: {:?}",
                report.futaki_affine
            )));
        }
        let lambda = report.lambda_estimate.unwrap_or(f64::NEG_INFINITY);
        if lambda <= 0.0 {
            return Err(ContinuityError::StabilityPrecondition(format!(
                "polytope not uniformly K-stable on the test family: λ_est = {lambda}"
            )));
        }
        let gamma_max = self.angle.s_hat * lambda / (2.0 * (1.0 - lambda)) / self.eps;
        if self.gamma_abs >= gamma_max {
            return Err(ContinuityError::StabilityPrecondition(format!(
                "|γ| = {} outside the admissible range {gamma_max}",
                self.gamma_abs
            )));
        }
        Ok(lambda)
    }

    fn nfield(&self) -> usize {
        self.base.grid.len()
    }

    /// Coupling coefficient α t / sin θ̂ with α = 4|γ|. Identically zero at
    /// t = 0: the decoupled solve never references the coupling constant.
    fn coupling(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        4.0 * self.gamma_abs * t / self.angle.theta_hat.sin()
    }
}

/// Solver state at a path time.
#[derive(Clone)]
pub struct ContinuityState<const N: usize> {
    pub t: f64,
    /// Potential correction on the field set.
    pub c: Vec<f64>,
    /// Exact-part potential of B on the field set.
    pub psi: Vec<f64>,
    /// Discrete angle.
    pub theta: f64,
    /// Floated affine datum ζ (constant then linear coefficients).
    pub zeta: Vec<f64>,
    pub newton_iters: usize,
    pub dhym_residual_sup: f64,
    pub scalar_residual_sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateSummary {
    pub t: f64,
    pub newton_iters: usize,
    pub dhym_residual_sup: f64,
    pub scalar_residual_sup: f64,
    pub theta_discrete: f64,
    pub xi: Vec<f64>,
    pub min_eigenvalue: f64,
    pub trace_margin: f64,
    /// max over nodes of t Λ_ω B / sin θ̂ (must stay below 1/cos θ̂ < 2).
    pub path_bound_value: f64,
    pub path_bound_limit: f64,
    pub entropy_f_a0: f64,
    pub boundary_sigma_integral: f64,
    pub interior_mu_integral: f64,
    pub d1_to_base: f64,
}

pub struct Trajectory<const N: usize> {
    pub summaries: Vec<StateSummary>,
    pub final_state: ContinuityState<N>,
    pub reached_t: f64,
    /// sup‖B₁ − ε(ω₁ + δ η_harmonic)‖ over residual nodes.
    pub distance_to_harmonic_ansatz: f64,
}

struct EvalOut {
    /// 𝒜 − (αt/sinθ̂)·Im-part, per residual node (before subtracting ζ).
    scal_pre: Vec<f64>,
    /// Im and Re of Π(1+iλ) per residual node.
    im: Vec<f64>,
    re: Vec<f64>,
}

fn b_form<const N: usize>(problem: &PathProblem<N>, psi: &[f64]) -> InvariantForm<N> {
    InvariantForm {
        omega_coeff: problem.eps,
        ref_coeff: -problem.eps * problem.delta,
        ref_offsets: problem.eta0.offsets.clone(),
        psi: psi.to_vec(),
    }
}

fn eval_fields<const N: usize>(
    problem: &PathProblem<N>,
    t: f64,
    c: &[f64],
    psi: &[f64],
) -> Result<EvalOut, PotentialError> {
    let u = problem.base.with_correction(c.to_vec());
    let metric = u.metric()?;
    let abreu = abreu_field(&u, &metric);
    let form = b_form(problem, psi);
    let endo = endomorphism_field(&u, &metric, &form);
    let grid = &problem.base.grid;
    let coup = problem.coupling(t);
    let nr = grid.residual_nodes.len();
    let mut scal_pre = Vec::with_capacity(nr);
    let mut im_f = Vec::with_capacity(nr);
    let mut re_f = Vec::with_capacity(nr);
    for &p in &grid.residual_nodes {
        let e = &endo[p];
        let e1 = e.trace();
        let (re, im) = match N {
            2 => (1.0 - crate::smallmat::det(e), e1),
            3 => {
                let tr2 = (e * e).trace();
                let e2 = 0.5 * (e1 * e1 - tr2);
                let e3 = crate::smallmat::det(e);
                (1.0 - e2, e1 - e3)
            }
            _ => (1.0, e1),
        };
        scal_pre.push(abreu[p] - coup * im);
        im_f.push(im);
        re_f.push(re);
    }
    Ok(EvalOut { scal_pre, im: im_f, re: re_f })
}

fn stack_eval(out: &EvalOut) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * out.scal_pre.len());
    v.extend_from_slice(&out.scal_pre);
    v.extend_from_slice(&out.im);
    v.extend_from_slice(&out.re);
    v
}

/// Full residual of the bordered system at a state.
struct ResidualParts {
    scal: Vec<f64>,
    dhym: Vec<f64>,
    ext_c: Vec<f64>,
    ext_psi: Vec<f64>,
    border: Vec<f64>,
    sup: f64,
}

fn residual_parts<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
    out: &EvalOut,
) -> ResidualParts {
    let grid = &problem.base.grid;
    let nr = grid.residual_nodes.len();
    let (cth, sth) = (state.theta.cos(), state.theta.sin());
    let w = grid.cell_weight();
    let mut scal = vec![0.0; nr];
    let mut dhym = vec![0.0; nr];
    let mut border = vec![0.0; N + 2];
    for i in 0..nr {
        let mut zeta_val = state.zeta[0];
        for a in 0..N {
            zeta_val += state.zeta[1 + a] * problem.basis[1 + a][i];
        }
        scal[i] = out.scal_pre[i] - zeta_val;
        dhym[i] = out.im[i] * cth - out.re[i] * sth;
        for k in 0..=N {
            border[k] += w * problem.basis[k][i] * scal[i];
        }
        border[N + 1] += w * dhym[i];
    }
    let ext = |f: &[f64]| -> Vec<f64> {
        problem.plans.iter().map(|pl| pl.residual(f)).collect()
    };
    let ext_c = ext(&state.c);
    let ext_psi = ext(&state.psi);
    let sup = scal
        .iter()
        .chain(&dhym)
        .chain(&ext_c)
        .chain(&ext_psi)
        .chain(&border)
        .fold(0.0f64, |a, &b| if b.is_finite() { a.max(b.abs()) } else { f64::INFINITY });
    ResidualParts { scal, dhym, ext_c, ext_psi, border, sup }
}

/// One damped Newton update of the coupled system at fixed t.
pub fn newton_step<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
) -> Result<ContinuityState<N>, ContinuityError> {
    let grid = &problem.base.grid;
    let nf = problem.nfield();
    let nr = grid.residual_nodes.len();
    let t = state.t;
    let out = eval_fields(problem, t, &state.c, &state.psi)?;
    let parts = residual_parts(problem, state, &out);

    // Colored FD of (scal_pre, im, re), one pass per grid field: sharing a
    // color between the two fields of a node would attribute the combined
    // response to both columns.
    let f0 = stack_eval(&out);
    let out_nodes: Vec<usize> = grid
        .residual_nodes
        .iter()
        .chain(grid.residual_nodes.iter())
        .chain(grid.residual_nodes.iter())
        .copied()
        .collect();
    let node_ids: Vec<usize> = (0..nf).collect();
    let eval_c = |x: &[f64]| -> Vec<f64> {
        match eval_fields(problem, t, x, &state.psi) {
            Ok(o) => stack_eval(&o),
            // A trial Hessian can leave the convex cone during FD probing;
            // poison the outputs so the step is rejected by backtracking.
            Err(_) => vec![f64::NAN; 3 * nr],
        }
    };
    let jac_c = colored_jacobian(grid, &node_ids, &out_nodes, 2, &state.c, &f0, eval_c);
    let eval_psi = |x: &[f64]| -> Vec<f64> {
        match eval_fields(problem, t, &state.c, x) {
            Ok(o) => stack_eval(&o),
            Err(_) => vec![f64::NAN; 3 * nr],
        }
    };
    let jac_psi = colored_jacobian(grid, &node_ids, &out_nodes, 2, &state.psi, &f0, eval_psi);
    // Merge into the interleaved column layout.
    let entries = jac_c
        .entries
        .iter()
        .map(|&(r, c, v)| (r, 2 * c, v))
        .chain(jac_psi.entries.iter().map(|&(r, c, v)| (r, 2 * c + 1, v)));

    // Assemble rows. Row ids: 2·node for the c-equation (scalar/extension),
    // 2·node + 1 for the ψ-equation (dHYM/extension).
    let (cth, sth) = (state.theta.cos(), state.theta.sin());
    let w = grid.cell_weight();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let nb = N + 2;
    let mut border_rows = vec![vec![0.0; 2 * nf]; nb];
    let mut border_cols = vec![vec![0.0; 2 * nf]; nb];
    let mut corner = vec![vec![0.0; nb]; nb];

    // Residual-node row bookkeeping.
    let mut res_index_of_node = vec![usize::MAX; nf];
    for (i, &p) in grid.residual_nodes.iter().enumerate() {
        res_index_of_node[p] = i;
    }
    let gauge_scal: Vec<usize> = problem.gauge_nodes.clone();
    let is_gauge_scal = |node: usize| gauge_scal.contains(&node);
    let psi_gauge = problem.psi_gauge_node;

    for (r, cidx, v) in entries {
        let r = r as usize;
        let slot = r / nr; // 0: scal_pre, 1: im, 2: re
        let i = r % nr;
        let node = grid.residual_nodes[i];
        match slot {
            0 => {
                // Scalar equation rows + ζ border rows.
                if !is_gauge_scal(node) {
                    triplets.push((2 * node, cidx as usize, v));
                }
                for k in 0..=N {
                    border_rows[k][cidx as usize] += w * problem.basis[k][i] * v;
                }
            }
            1 => {
                let coef = cth;
                if node != psi_gauge {
                    triplets.push((2 * node + 1, cidx as usize, coef * v));
                }
                border_rows[N + 1][cidx as usize] += w * coef * v;
            }
            _ => {
                let coef = -sth;
                if node != psi_gauge {
                    triplets.push((2 * node + 1, cidx as usize, coef * v));
                }
                border_rows[N + 1][cidx as usize] += w * coef * v;
            }
        }
    }
    // Gauge rows.
    for &g in &gauge_scal {
        triplets.push((2 * g, 2 * g, 1.0));
    }
    triplets.push((2 * psi_gauge + 1, 2 * psi_gauge + 1, 1.0));
    // Extension rows for both fields.
    for pl in &problem.plans {
        for f in 0..2 {
            triplets.push((2 * pl.node + f, 2 * pl.node + f, 1.0));
            for &(q, c) in &pl.terms {
                triplets.push((2 * pl.node + f, 2 * q + f, c));
            }
        }
    }
    // ζ columns (∂scal/∂ζ_k = −basis_k) and θ column (∂dhym/∂θ).
    for (i, &node) in grid.residual_nodes.iter().enumerate() {
        for k in 0..=N {
            let d = -problem.basis[k][i];
            if !is_gauge_scal(node) {
                border_cols[k][2 * node] = d;
            }
            // ζ-border rows pick up the ζ-dependence of every scalar row.
            for l in 0..=N {
                corner[l][k] += w * problem.basis[l][i] * d;
            }
        }
        let dtheta = -out.im[i] * sth - out.re[i] * cth;
        if node != psi_gauge {
            border_cols[N + 1][2 * node + 1] = dtheta;
        }
        corner[N + 1][N + 1] += w * dtheta;
    }

    let band = band_from_triplets(2 * nf, &triplets);
    // Right-hand side: −residuals.
    let mut rhs = vec![0.0; 2 * nf];
    for (i, &node) in grid.residual_nodes.iter().enumerate() {
        if !is_gauge_scal(node) {
            rhs[2 * node] = -parts.scal[i];
        }
        if node != psi_gauge {
            rhs[2 * node + 1] = -parts.dhym[i];
        }
    }
    for &g in &gauge_scal {
        rhs[2 * g] = -state.c[g];
    }
    rhs[2 * psi_gauge + 1] = -state.psi[psi_gauge];
    for (pl, (ec, ep)) in problem.plans.iter().zip(parts.ext_c.iter().zip(&parts.ext_psi)) {
        rhs[2 * pl.node] = -ec;
        rhs[2 * pl.node + 1] = -ep;
    }
    let rhs_border: Vec<f64> = parts.border.iter().map(|b| -b).collect();

    let system = BorderedSystem { band, cols: border_cols, rows: border_rows, corner };
    let (dx, dz) = system.solve(&rhs, &rhs_border).map_err(|e| match e {
        GridError::SingularBand(col) => {
            ContinuityError::SingularLinearization { pivot: 0.0, column: col }
        }
        other => ContinuityError::Grid(other),
    })?;

    // Damped update with backtracking on the stacked residual sup norm.
    let mut step = 1.0;
    for _ in 0..9 {
        let mut trial = state.clone();
        for i in 0..nf {
            trial.c[i] += step * dx[2 * i];
            trial.psi[i] += step * dx[2 * i + 1];
        }
        for k in 0..=N {
            trial.zeta[k] += step * dz[k];
        }
        trial.theta += step * dz[N + 1];
        match eval_fields(problem, t, &trial.c, &trial.psi) {
            Ok(tout) => {
                let tparts = residual_parts(problem, &trial, &tout);
                if tparts.sup.is_finite() && (tparts.sup < parts.sup || parts.sup < problem.tol) {
                    trial.dhym_residual_sup =
                        tparts.dhym.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                    trial.scalar_residual_sup =
                        tparts.scal.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                    trial.newton_iters = state.newton_iters + 1;
                    return Ok(trial);
                }
            }
            Err(_) => {}
        }
        step *= 0.5;
    }
    Err(ContinuityError::NewtonFailure {
        t,
        residual: parts.sup,
        iters: state.newton_iters,
    })
}

/// Solve the coupled system at fixed t to tolerance.
pub fn solve_at_t<const N: usize>(
    problem: &PathProblem<N>,
    mut state: ContinuityState<N>,
    t: f64,
    max_iters: usize,
) -> Result<ContinuityState<N>, ContinuityError> {
    state.t = t;
    state.newton_iters = 0;
    for _ in 0..max_iters {
        let out = eval_fields(problem, t, &state.c, &state.psi)?;
        let parts = residual_parts(problem, &state, &out);
        if parts.sup < problem.tol {
            state.dhym_residual_sup = parts.dhym.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            state.scalar_residual_sup = parts.scal.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            return Ok(state);
        }
        state = newton_step(problem, &state)?;
    }
    let out = eval_fields(problem, t, &state.c, &state.psi)?;
    let parts = residual_parts(problem, &state, &out);
    if parts.sup < problem.tol {
        return Ok(state);
    }
    Err(ContinuityError::NewtonFailure { t, residual: parts.sup, iters: state.newton_iters })
}

/// The extremal affine ξ_t and the residual fields of a state.
pub fn residuals_and_xi<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ContinuityError> {
    let out = eval_fields(problem, state.t, &state.c, &state.psi)?;
    let parts = residual_parts(problem, state, &out);
    Ok((parts.dhym, parts.scal, xi_of(problem, state, &out)))
}

/// ξ_t from ζ: ζ = A₀ − (αt/sinθ̂) ξ_t; at αt = 0 the limit value is the
/// affine projection of Λ_ω B (the coupling target).
fn xi_of<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
    out: &EvalOut,
) -> Vec<f64> {
    let coup = problem.coupling(state.t);
    if coup.abs() > 1e-12 {
        let mut xi = vec![0.0; N + 1];
        xi[0] = (problem.a0 - state.zeta[0]) / coup;
        for a in 0..N {
            xi[1 + a] = -state.zeta[1 + a] / coup;
        }
        xi
    } else {
        // Projection of Λ_ω B onto affine functions.
        project_affine(problem, &out.im)
    }
}

/// L²(dμ)-projection of a residual-node field onto affine functions; the
/// Gram matrix is t-independent by construction.
pub fn project_affine<const N: usize>(problem: &PathProblem<N>, values: &[f64]) -> Vec<f64> {
    let grid = &problem.base.grid;
    let w = grid.cell_weight();
    let nb = N + 1;
    let mut gram = vec![vec![0.0; nb]; nb];
    let mut rhs = vec![0.0; nb];
    for i in 0..grid.residual_nodes.len() {
        for k in 0..nb {
            rhs[k] += w * problem.basis[k][i] * values[i];
            for l in 0..nb {
                gram[k][l] += w * problem.basis[k][i] * problem.basis[l][i];
            }
        }
    }
    crate::kstability::solve_small(gram, rhs).expect("Gram nonsingular")
}

/// The trace field Λ_ω B (n = 2; on threefolds Λ_ω B − B³/ω³) at a state.
pub fn coupling_term_field<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
) -> Result<Vec<f64>, ContinuityError> {
    Ok(eval_fields(problem, state.t, &state.c, &state.psi)?.im)
}

/// Diagnostics of an accepted state for the trajectory log.
pub fn summarize<const N: usize>(
    problem: &PathProblem<N>,
    state: &ContinuityState<N>,
) -> Result<(StateSummary, BoundsReport), ContinuityError> {
    let u = problem.base.with_correction(state.c.clone());
    let metric = u.metric()?;
    let form = b_form(problem, &state.psi);
    let endo = endomorphism_field(&u, &metric, &form);
    let grid = &problem.base.grid;
    let profile = EigenProfile::from_endo(grid, &metric, &endo);
    let bounds = bounds_check(&profile, problem.angle.theta_hat, true)?;
    let min_eig = profile
        .lambda
        .iter()
        .flat_map(|l| l.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let out = eval_fields(problem, state.t, &state.c, &state.psi)?;
    let xi = xi_of(problem, state, &out);
    let sth = problem.angle.theta_hat.sin();
    let cth = problem.angle.theta_hat.cos();
    let path_bound_value = out
        .im
        .iter()
        .fold(0.0f64, |a, &b| a.max(state.t * b / sth));
    // Entropy and estimate monitors on the normalized potentials.
    let mut u_n = u.clone();
    u_n.normalize_at_barycenter();
    let mut u0_n = problem.base.clone();
    u0_n.normalize_at_barycenter();
    let a0 = problem.a0;
    let energy = crate::potentials::energy_functionals(
        &problem.polytope,
        &|_y| a0,
        &u_n,
        &u0_n,
    )?;
    let scheme = problem.polytope.quadrature(8);
    let boundary_sigma_integral = scheme.integrate_boundary(|y| u_n.value(y));
    let interior_mu_integral = scheme.integrate_interior(|y| u_n.value(y));
    Ok((
        StateSummary {
            t: state.t,
            newton_iters: state.newton_iters,
            dhym_residual_sup: state.dhym_residual_sup,
            scalar_residual_sup: state.scalar_residual_sup,
            theta_discrete: state.theta,
            xi,
            min_eigenvalue: min_eig,
            trace_margin: bounds.margin,
            path_bound_value,
            path_bound_limit: 1.0 / cth,
            entropy_f_a0: energy.f_a,
            boundary_sigma_integral,
            interior_mu_integral,
            d1_to_base: energy.d1,
        },
        bounds,
    ))
}

/// Run the continuity path from the decoupled t = 0 system to t = 1.
pub fn run_path<const N: usize>(problem: &PathProblem<N>) -> Result<Trajectory<N>, ContinuityError> {
    let grid = &problem.base.grid;
    let metric0 = problem.base.metric()?;
    // Harmonic seed for the η-part at the base metric.
    let psi_seed = if problem.delta != 0.0 {
        let eta_ref = InvariantForm::from_toric_class(grid, &problem.eta0);
        let harm = harmonic_representative(&problem.base, &metric0, &eta_ref)?;
        harm.form
            .psi
            .iter()
            .map(|v| problem.eps * problem.delta * v)
            .collect()
    } else {
        vec![0.0; grid.len()]
    };
    let harmonic_endo = {
        let form = b_form(problem, &psi_seed);
        endomorphism_field(&problem.base, &metric0, &form)
    };

    let mut state = ContinuityState {
        t: 0.0,
        c: vec![0.0; grid.len()],
        psi: psi_seed,
        theta: problem.angle.theta_hat,
        zeta: {
            let mut z = vec![0.0; N + 1];
            z[0] = problem.a0;
            z
        },
        newton_iters: 0,
        dhym_residual_sup: 0.0,
        scalar_residual_sup: 0.0,
    };
    state = solve_at_t(problem, state, 0.0, 20)?;
    let mut summaries = Vec::new();
    let (s0, b0) = summarize(problem, &state)?;
    if !b0.holds {
        return Err(ContinuityError::StepCollapse {
            t: 0.0,
            dt: 0.0,
            diagnostic: format!("a priori bound fails at t = 0 (margin {:.3e})", b0.margin),
        });
    }
    summaries.push(s0);

    let mut t = 0.0;
    let mut dt = 0.1;
    let mut successes = 0usize;
    while t < 1.0 - 1e-12 {
        if dt < 1e-6 {
            let margin = summaries.last().map(|s| s.trace_margin).unwrap_or(f64::NAN);
            return Err(ContinuityError::StepCollapse {
                t,
                dt,
                diagnostic: format!("last trace margin {margin:.3e}"),
            });
        }
        let t_next = (t + dt).min(1.0);
        match solve_at_t(problem, state.clone(), t_next, 12) {
            Ok(next) => match summarize(problem, &next) {
                Ok((summary, bounds)) if bounds.holds => {
                    summaries.push(summary);
                    state = next;
                    t = t_next;
                    successes += 1;
                    if successes >= 2 {
                        dt *= 2.0;
                        successes = 0;
                    }
                }
                Ok(_) | Err(ContinuityError::Dhym(DhymError::HypothesisViolated(_))) => {
                    // A priori bound violated: shrink the step.
                    dt *= 0.5;
                    successes = 0;
                }
                Err(e) => return Err(e),
            },
            Err(ContinuityError::NewtonFailure { .. })
            | Err(ContinuityError::Potential(PotentialError::SingularHessian { .. })) => {
                dt *= 0.5;
                successes = 0;
            }
            Err(e) => return Err(e),
        }
    }

    // Distance of the final B to the harmonic ansatz.
    let u1 = problem.base.with_correction(state.c.clone());
    let metric1 = u1.metric()?;
    let form1 = b_form(problem, &state.psi);
    let endo1 = endomorphism_field(&u1, &metric1, &form1);
    let mut dist = 0.0f64;
    for &p in &grid.residual_nodes {
        dist = dist.max((endo1[p] - harmonic_endo[p]).abs().max());
    }
    Ok(Trajectory {
        summaries,
        reached_t: t,
        final_state: state,
        distance_to_harmonic_ansatz: dist,
    })
}

