//! Pointwise deformed Hermitian Yang–Mills algebra on eigenvalue profiles,
//! a priori bounds, the χ change of variables on surfaces, large-volume
//! expansions, the perturbative dHYM solver, and the Calabi–Volume
//! functional.
//!
//! With λ_i the eigenvalues of the endomorphism ω⁻¹B at a point,
//! `(ω + iB)ⁿ/ωⁿ = Π(1 + iλ_i)`, so everything here is elementary symmetric
//! function algebra: for n = 2 the form is `(1−e₂) + i e₁`, for n = 3 it is
//! `(1−e₂) + i(e₁−e₃)`.

use nalgebra::SMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::classes::{invariants_bundle, ClassError, ToricClass};
use crate::grid::{colored_jacobian, extension_plans, BorderedSystem, Grid, GridError};
use crate::polytope::DelzantPolytope;
use crate::potentials::{
    band_from_triplets, endo_eigenvalues, endomorphism_field, harmonic_representative,
    InvariantForm, MetricData, PotentialError, SymplecticPotential,
};
use crate::smallmat;

#[derive(Debug, Error)]
pub enum DhymError {
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("normalized threefold residual requested near cos θ̂ = 0")]
    TanPole,
    #[error("sin θ̂ = 0: χ transform undefined")]
    SinZero,
    #[error("Newton diverged: residual {residual:.3e} after {iters} iterations")]
    NewtonDivergence { residual: f64, iters: usize },
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Eigenvalues of ω⁻¹B at a set of points, with their elementary symmetric
/// functions.
#[derive(Debug, Clone)]
pub struct EigenProfile<const N: usize> {
    pub lambda: Vec<[f64; N]>,
    pub elementary: Vec<[f64; N]>,
}

impl<const N: usize> EigenProfile<N> {
    pub fn from_lambdas(lambda: Vec<[f64; N]>) -> Self {
        let elementary = lambda.iter().map(smallmat::elementary_symmetric).collect();
        EigenProfile { lambda, elementary }
    }

    /// Eigenvalues of the endomorphism field over the residual nodes.
    pub fn from_endo(
        grid: &Grid<N>,
        metric: &MetricData<N>,
        endo: &[SMatrix<f64, N, N>],
    ) -> Self {
        let lambda = grid
            .residual_nodes
            .iter()
            .map(|&p| endo_eigenvalues(&metric.h_mat[p], &endo[p]))
            .collect();
        Self::from_lambdas(lambda)
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

/// Radius function r = Π √(1 + λ_i²).
pub fn radius<const N: usize>(profile: &EigenProfile<N>) -> Vec<f64> {
    profile
        .lambda
        .iter()
        .map(|l| l.iter().map(|x| (1.0 + x * x).sqrt()).product())
        .collect()
}

/// Radius as a function on the polytope, interpolated from the residual-node
/// profile (clamped outside the residual hull).
pub fn radius_closure<'g, const N: usize>(
    grid: &'g Grid<N>,
    profile: &EigenProfile<N>,
) -> impl Fn(&[f64]) -> f64 + 'g {
    let r = radius(profile);
    let mut field = vec![0.0; grid.len()];
    for (i, &p) in grid.residual_nodes.iter().enumerate() {
        field[p] = r[i];
    }
    move |y: &[f64]| {
        crate::potentials::interp_scalar(grid, &field, |i| grid.is_residual[i], y)
    }
}

/// Complex form value Π(1 + iλ) from elementary symmetric functions,
/// optionally with every eigenvalue scaled by μ.
pub fn form_value<const N: usize>(e: &[f64; N], mu: f64) -> (f64, f64) {
    match N {
        2 => (1.0 - mu * mu * e[1], mu * e[0]),
        3 => (
            1.0 - mu * mu * e[1],
            mu * e[0] - mu * mu * mu * e[2],
        ),
        1 => (1.0, mu * e[0]),
        _ => unreachable!(),
    }
}

/// Normalized dHYM residual for the given topological angle.
///
/// n = 2: `e₁ cos θ̂ + (e₂ − 1) sin θ̂` (= Im e^{−iθ̂}(1+iλ₁)(1+iλ₂));
/// n = 3: `(e₁ − e₃) − (1 − e₂) tan θ̂` or the raw Im form near the pole.
pub fn dhym_residual<const N: usize>(
    profile: &EigenProfile<N>,
    theta_hat: f64,
) -> Result<Vec<f64>, DhymError> {
    let (c, s) = (theta_hat.cos(), theta_hat.sin());
    match N {
        2 => Ok(profile
            .elementary
            .iter()
            .map(|e| e[0] * c + (e[1] - 1.0) * s)
            .collect()),
        3 => {
            if c.abs() < 1e-8 {
                return Err(DhymError::TanPole);
            }
            let t = s / c;
            Ok(profile
                .elementary
                .iter()
                .map(|e| (e[0] - e[2]) - (1.0 - e[1]) * t)
                .collect())
        }
        _ => Err(DhymError::HypothesisViolated(format!(
            "dHYM residual implemented for n = 2, 3, got {N}"
        ))),
    }
}

/// Raw Im e^{−iθ̂} Π(1+iλ): valid at any angle.
pub fn dhym_residual_raw<const N: usize>(profile: &EigenProfile<N>, theta_hat: f64) -> Vec<f64> {
    let (c, s) = (theta_hat.cos(), theta_hat.sin());
    profile
        .elementary
        .iter()
        .map(|e| {
            let (re, im) = form_value(e, 1.0);
            im * c - re * s
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub holds: bool,
    pub margin: f64,
    pub min_quantity: f64,
    /// Nodes at the excluded boundary configuration e₂ = 1, e₁ = e₃.
    pub boundary_case: bool,
}

/// A priori trace bound: `0 ≤ Λ_ω B < tan θ̂` on surfaces,
/// `0 ≤ Λ_ω B − B³/ω³ < tan θ̂` on threefolds, under the hypotheses
/// sin θ̂, cos θ̂ > 0 and λ_i ≥ 0 (and e₂ < 1 initially for threefolds).
pub fn bounds_check<const N: usize>(
    profile: &EigenProfile<N>,
    theta_hat: f64,
    initial_e2_ok: bool,
) -> Result<BoundsReport, DhymError> {
    if theta_hat.sin() <= 0.0 {
        return Err(DhymError::HypothesisViolated("sin θ̂ ≤ 0".into()));
    }
    if theta_hat.cos() <= 0.0 {
        return Err(DhymError::HypothesisViolated("cos θ̂ ≤ 0".into()));
    }
    if N == 3 && !initial_e2_ok {
        return Err(DhymError::HypothesisViolated(
            "initial bound e₂ < 1 not supplied".into(),
        ));
    }
    let lam_min = profile
        .lambda
        .iter()
        .flat_map(|l| l.iter().copied())
        .fold(f64::INFINITY, f64::min);
    if lam_min < -1e-10 {
        return Err(DhymError::HypothesisViolated(format!(
            "λ_min = {lam_min:.3e} < 0"
        )));
    }
    let tan = theta_hat.tan();
    let mut margin = f64::INFINITY;
    let mut min_q = f64::INFINITY;
    let mut boundary_case = false;
    for e in &profile.elementary {
        let q = if N == 3 { e[0] - e[2] } else { e[0] };
        margin = margin.min(tan - q);
        min_q = min_q.min(q);
        if N == 3 && (e[1] - 1.0).abs() < 1e-9 && (e[0] - e[2]).abs() < 1e-9 {
            boundary_case = true;
        }
    }
    Ok(BoundsReport {
        holds: margin > 0.0 && min_q >= -1e-10,
        margin,
        min_quantity: min_q,
        boundary_case,
    })
}

#[derive(Debug, Clone)]
pub struct ChiReport<const N: usize> {
    pub chi_endo: Vec<SMatrix<f64, N, N>>,
    /// Nodewise defect of Im e^{−iθ̂}(ω+iB)² = (χ² − ω²)/sin θ̂.
    pub identity_defect: f64,
    pub positive: bool,
}

/// χ = sin θ̂ B + cos θ̂ ω on surfaces.
pub fn chi_transform(
    grid: &Grid<2>,
    endo_b: &[SMatrix<f64, 2, 2>],
    theta_hat: f64,
) -> Result<ChiReport<2>, DhymError> {
    let (c, s) = (theta_hat.cos(), theta_hat.sin());
    if s.abs() < 1e-12 {
        return Err(DhymError::SinZero);
    }
    let mut chi = vec![SMatrix::<f64, 2, 2>::zeros(); endo_b.len()];
    let mut defect = 0.0f64;
    let mut positive = true;
    for &p in &grid.residual_nodes {
        let e_chi = endo_b[p] * s + SMatrix::<f64, 2, 2>::identity() * c;
        let e1 = endo_b[p].trace();
        let e2 = smallmat::det(&endo_b[p]);
        let im = e1 * c + (e2 - 1.0) * s;
        let d = (smallmat::det(&e_chi) - 1.0) / s;
        defect = defect.max((im - d).abs());
        if e_chi.trace() <= 0.0 || smallmat::det(&e_chi) <= 0.0 {
            positive = false;
        }
        chi[p] = e_chi;
    }
    Ok(ChiReport { chi_endo: chi, identity_defect: defect, positive })
}

// ---------------------------------------------------------------------------
// Large volume expansions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LargeVolumeRow {
    pub k: f64,
    pub sup_im_remainder: f64,
    pub sup_re_remainder: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LargeVolumeTable {
    pub rows: Vec<LargeVolumeRow>,
    pub im_slope: f64,
    pub re_slope: f64,
}

/// Compare Im/Re of e^{−iθ̂_k}(ω + i k⁻¹B)ⁿ/ωⁿ with the leading terms
/// k⁻¹(Λ_ω B − z) and 1 − k⁻²(Λ²(B∧B) − zΛ_ω B + z²/2); the remainders
/// must decay at orders k⁻³ and k⁻⁴.
pub fn large_volume_check<const N: usize>(
    p: &DelzantPolytope,
    omega_class: &ToricClass,
    b_class: &ToricClass,
    profile: &EigenProfile<N>,
    k_list: &[f64],
) -> Result<LargeVolumeTable, DhymError> {
    let base = invariants_bundle(p, omega_class, b_class, 0.0)?;
    let z = base.z;
    let mut rows = Vec::new();
    for &k in k_list {
        let scaled = b_class.scaled(1.0 / k);
        let ad = invariants_bundle(p, omega_class, &scaled, 0.0)?;
        let (c, s) = (ad.theta_hat.cos(), ad.theta_hat.sin());
        let mut sup_im = 0.0f64;
        let mut sup_re = 0.0f64;
        for e in &profile.elementary {
            let (re, im) = form_value(e, 1.0 / k);
            let tw_im = im * c - re * s;
            let tw_re = re * c + im * s;
            let lead_im = (e[0] - z) / k;
            let lead_re = 1.0 - (e[1] - z * e[0] + 0.5 * z * z) / (k * k);
            sup_im = sup_im.max((tw_im - lead_im).abs());
            sup_re = sup_re.max((tw_re - lead_re).abs());
        }
        rows.push(LargeVolumeRow { k, sup_im_remainder: sup_im, sup_re_remainder: sup_re });
    }
    let slope = |sel: &dyn Fn(&LargeVolumeRow) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> =
            rows.iter().map(|r| (r.k.ln(), sel(r).max(1e-300).ln())).collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let im_slope = slope(&|r| r.sup_im_remainder);
    let re_slope = slope(&|r| r.sup_re_remainder);
    Ok(LargeVolumeTable { rows, im_slope, re_slope })
}

// ---------------------------------------------------------------------------
// Perturbative dHYM solve
// ---------------------------------------------------------------------------

pub struct DhymSolution<const N: usize> {
    pub form: InvariantForm<N>,
    /// Discrete angle solving the grid system exactly.
    pub theta_discrete: f64,
    /// Cohomological angle of the classes (θ_discrete − θ̂ = O(h²)).
    pub theta_cohomological: f64,
    pub residual_sup: f64,
    pub newton_iters: usize,
    /// sup‖B − seed‖ over residual nodes (endomorphism entries).
    pub distance_to_seed: f64,
}

/// dHYM fields (e₁, e₂[, e₃]) per residual node, stacked for the solver.
fn symmetric_functions_fields<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    form: &InvariantForm<N>,
) -> Vec<[f64; N]> {
    let endo = endomorphism_field(u, metric, form);
    u.grid
        .residual_nodes
        .iter()
        .map(|&p| {
            let e = &endo[p];
            let mut out = [0.0; N];
            out[0] = e.trace();
            if N >= 2 {
                if N == 2 {
                    out[1] = smallmat::det(e);
                } else {
                    let tr2 = (e * e).trace();
                    out[1] = 0.5 * (e.trace() * e.trace() - tr2);
                    out[2] = smallmat::det(e);
                }
            }
            out
        })
        .collect()
}

fn residual_from_sym<const N: usize>(e: &[f64; N], theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    let (re, im) = form_value(e, 1.0);
    im * c - re * s
}

/// Solve the dHYM equation for B in the class ε([ω] + δ[η₀]) at the fixed
/// metric u, by damped Newton on the potential of B and the discrete angle,
/// starting from the harmonic seed. The reference form only fixes the class
/// [η₀]: the harmonic canonicalization makes the result independent of the
/// representative handed in.
pub fn perturbative_dhym_solve<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    eta_ref: &InvariantForm<N>,
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<DhymSolution<N>, DhymError> {
    let grid = &u.grid;
    let p = &u.polytope;
    // Harmonic seed for the η-part.
    let eta_harm = if delta != 0.0 {
        harmonic_representative(u, metric, eta_ref)?.form
    } else {
        eta_ref.clone()
    };
    let mut form = InvariantForm {
        omega_coeff: eps,
        ref_coeff: eps * delta * eta_harm.ref_coeff,
        ref_offsets: eta_harm.ref_offsets.clone(),
        psi: eta_harm.psi.iter().map(|v| eps * delta * v).collect(),
    };
    let seed_endo = endomorphism_field(u, metric, &form);

    // Cohomological angle of (ω, ε([ω]+δ[η₀])).
    let omega_class = ToricClass::of_polytope(p);
    let b_class = ToricClass::new(form.class_offsets(p));
    let theta_hat = invariants_bundle(p, &omega_class, &b_class, 0.0)?.theta_hat;

    let plans = extension_plans(grid, p)?;
    let nr = grid.residual_nodes.len();
    let w_cell = grid.cell_weight();
    let p0 = grid.nearest_residual(&p.barycenter());

    let residual_and_fields = |form: &InvariantForm<N>, theta: f64| -> (Vec<f64>, Vec<[f64; N]>) {
        let sym = symmetric_functions_fields(u, metric, form);
        let res = sym.iter().map(|e| residual_from_sym(e, theta)).collect();
        (res, sym)
    };
    let sup = |v: &[f64]| {
        v.iter()
            .fold(0.0f64, |a, &b| if b.is_finite() { a.max(b.abs()) } else { f64::INFINITY })
    };

    // Discrete angle: θ = arg Σ ŵ Π(1+iλ), which makes the weighted sum of
    // residual rows vanish identically.
    let eliminate_theta = |sym: &[[f64; N]]| -> f64 {
        let (mut re_z, mut im_z) = (0.0, 0.0);
        for e in sym {
            let (re, im) = form_value(e, 1.0);
            re_z += w_cell * re;
            im_z += w_cell * im;
        }
        im_z.atan2(re_z)
    };
    let mut sym = symmetric_functions_fields(u, metric, &form);
    let mut theta = eliminate_theta(&sym);
    let mut res: Vec<f64> = sym.iter().map(|e| residual_from_sym(e, theta)).collect();
    let mut iters = 0;
    let max_iters = 30;
    loop {
        if sup(&res) < tol {
            break;
        }
        if iters >= max_iters {
            return Err(DhymError::NewtonDivergence { residual: sup(&res), iters });
        }
        iters += 1;

        // Newton step on ψ at fixed θ (θ re-eliminated every iteration).
        // Outputs: residual rows over residual nodes.
        let unknowns: Vec<usize> = (0..grid.len()).collect();
        let x0 = form.psi.clone();
        let eval = |x: &[f64]| -> Vec<f64> {
            let mut f2 = form.clone();
            f2.psi = x.to_vec();
            let sym = symmetric_functions_fields(u, metric, &f2);
            sym.iter().map(|e| residual_from_sym(e, theta)).collect()
        };
        let f0: Vec<f64> = res.clone();
        let jac = colored_jacobian(grid, &unknowns, &grid.residual_nodes, 2, &x0, &f0, eval);

        // Assemble banded system over field nodes: residual rows at residual
        // nodes (p₀ slot is the gauge row), extension rows elsewhere; one
        // border for the angle-consistency (displaced p₀ row).
        let n = grid.len();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut displaced: Vec<(usize, f64)> = Vec::new();
        for &(r, c, v) in &jac.entries {
            let node = grid.residual_nodes[r as usize];
            if node == p0 {
                displaced.push((c as usize, v));
            } else {
                triplets.push((node, c as usize, v));
            }
        }
        triplets.push((p0, p0, 1.0));
        for plan in &plans {
            triplets.push((plan.node, plan.node, 1.0));
            for &(q, c) in &plan.terms {
                triplets.push((plan.node, q, c));
            }
        }
        let band = band_from_triplets(n, &triplets);
        let mut border_row = vec![0.0; n];
        for (c, v) in &displaced {
            border_row[*c] += v;
        }
        let mut rhs = vec![0.0; n];
        let mut rhs_border = 0.0;
        for (ri, &node) in grid.residual_nodes.iter().enumerate() {
            if node == p0 {
                rhs_border = -res[ri];
            } else {
                rhs[node] = -res[ri];
            }
        }
        // Extension rows: keep the closure relations at zero.
        for plan in &plans {
            rhs[plan.node] = -plan.residual(&form.psi);
        }
        // θ-column: ∂residual/∂θ; the border variable is δθ.
        let mut col = vec![0.0; n];
        let mut corner = 0.0;
        for (ri, &node) in grid.residual_nodes.iter().enumerate() {
            let e = &sym[ri];
            let (re, im) = form_value(e, 1.0);
            let dtheta = -im * theta.sin() - re * theta.cos();
            if node == p0 {
                corner = dtheta;
            } else {
                col[node] = dtheta;
            }
        }
        let system = BorderedSystem {
            band,
            cols: vec![col],
            rows: vec![border_row],
            corner: vec![vec![corner]],
        };
        let (dpsi, dtheta) = system
            .solve(&rhs, &[rhs_border])
            .map_err(|_| DhymError::NewtonDivergence { residual: sup(&res), iters })?;

        // Damped update: backtrack on the residual sup norm.
        let base_sup = sup(&res);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let mut trial = form.clone();
            for (t, d) in trial.psi.iter_mut().zip(&dpsi) {
                *t += step * d;
            }
            let trial_theta = theta + step * dtheta[0];
            let (tr, ts) = residual_and_fields(&trial, trial_theta);
            let _ = trial_theta;
            if sup(&tr) < base_sup || base_sup < tol {
                form = trial;
                sym = ts;
                theta = eliminate_theta(&sym);
                res = sym.iter().map(|e| residual_from_sym(e, theta)).collect();
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(DhymError::NewtonDivergence { residual: base_sup, iters });
        }
    }

    // Mean-zero gauge on ψ.
    let mean: f64 =
        grid.residual_nodes.iter().map(|&q| form.psi[q]).sum::<f64>() / nr as f64;
    for v in &mut form.psi {
        *v -= mean;
    }
    let endo = endomorphism_field(u, metric, &form);
    let mut dist = 0.0f64;
    for &q in &grid.residual_nodes {
        dist = dist.max((endo[q] - seed_endo[q]).abs().max());
    }
    Ok(DhymSolution {
        form,
        theta_discrete: theta,
        theta_cohomological: theta_hat,
        residual_sup: sup(&res),
        newton_iters: iters,
        distance_to_seed: dist,
    })
}

/// Largest ε (starting from 0.1, halving on divergence) at which the
/// perturbative solve converges; the achieved value is part of the report.
pub fn epsilon_threshold<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    eta_ref: &InvariantForm<N>,
    delta: f64,
    tol: f64,
) -> Option<(f64, DhymSolution<N>)> {
    let mut eps = 0.1;
    for _ in 0..12 {
        match perturbative_dhym_solve(u, metric, eta_ref, eps, delta, tol) {
            Ok(sol) => return Some((eps, sol)),
            Err(_) => eps *= 0.5,
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Calabi–Volume functional and Kähler–Yang–Mills residuals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CvolReport {
    pub cvol: f64,
    /// Measured topological constant c = mean(s − |γ| r).
    pub c_measured: f64,
    /// Measured average scalar curvature.
    pub s_hat_measured: f64,
    pub volume: f64,
    pub v_omega: f64,
    /// Right side of the decomposition
    /// ∫(s−|γ|r−c)² ωⁿ + (1−2c)|γ|V_ω(B) + c(2ŝ−c)[ω]ⁿ.
    pub decomposition_rhs: f64,
    pub kym_trace_residual_sup: f64,
    pub kym_scalar_residual_sup: f64,
}

/// CVol = ∫(s − |γ| r)² ωⁿ + |γ| V_ω(B), with s = (−u^{ij}_{,ij})/4, plus the
/// Kähler–Yang–Mills residuals Λ_ω B − z and s + γ̂(Λ²(B∧B) − zΛ_ω B) − ĉ.
#[allow(clippy::too_many_arguments)]
pub fn cvol_and_kym<const N: usize>(
    grid: &Grid<N>,
    abreu: &[f64],
    profile: &EigenProfile<N>,
    gamma_abs: f64,
    gamma_hat: f64,
    z: f64,
) -> CvolReport {
    let r = radius(profile);
    let w = grid.cell_weight();
    let nfact: f64 = (1..=N).map(|k| k as f64).product();
    let mut vol = 0.0;
    let mut int_s = 0.0;
    let mut int_r = 0.0;
    for (i, &p) in grid.residual_nodes.iter().enumerate() {
        vol += w;
        int_s += w * abreu[p] / 4.0;
        int_r += w * r[i];
    }
    let s_hat = int_s / vol;
    let c = (int_s - gamma_abs * int_r) / vol;
    let v_omega = nfact * int_r;
    let mut cvol = 0.0;
    let mut lhs_sq = 0.0;
    let mut kym_tr = 0.0f64;
    let mut kym_sc = 0.0f64;
    // ĉ for the KYM residual: mean of s + γ̂(e₂ − z e₁).
    let mut int_kym = 0.0;
    for (i, &p) in grid.residual_nodes.iter().enumerate() {
        let e = &profile.elementary[i];
        let s_val = abreu[p] / 4.0;
        int_kym += w * (s_val + gamma_hat * (sym_e2(e) - z * e[0]));
    }
    let c_kym = int_kym / vol;
    for (i, &p) in grid.residual_nodes.iter().enumerate() {
        let e = &profile.elementary[i];
        let s_val = abreu[p] / 4.0;
        cvol += nfact * w * (s_val - gamma_abs * r[i]).powi(2);
        lhs_sq += nfact * w * (s_val - gamma_abs * r[i] - c).powi(2);
        kym_tr = kym_tr.max((e[0] - z).abs());
        kym_sc = kym_sc.max((s_val + gamma_hat * (sym_e2(e) - z * e[0]) - c_kym).abs());
    }
    cvol += gamma_abs * v_omega;
    let vol_x = nfact * vol;
    let rhs = lhs_sq + (1.0 - 2.0 * c) * gamma_abs * v_omega + c * (2.0 * s_hat - c) * vol_x;
    CvolReport {
        cvol,
        c_measured: c,
        s_hat_measured: s_hat,
        volume: vol,
        v_omega,
        decomposition_rhs: rhs,
        kym_trace_residual_sup: kym_tr,
        kym_scalar_residual_sup: kym_sc,
    }
}

fn sym_e2<const N: usize>(e: &[f64; N]) -> f64 {
    if N >= 2 { e[1] } else { 0.0 }
}
