//! Symplectic potentials, metric grids, the Abreu operator, invariant
//! (1,1)-forms and their harmonic representatives, and the energy
//! functionals `L_A`, `F_A`, `d₁`.
//!
//! A potential is `u = u₀ + affine + c` with `c` a smooth correction sampled
//! on the grid's field set. A closed invariant (1,1)-form of class offsets b
//! is represented through its potential `f = ½ Σ b_k log ℓ_k + ψ` and carried
//! around as the endomorphism field `E = D_y(G ∇f)` relative to the current
//! metric; `Λ_ω B = tr E` and `(ω + iB)ⁿ/ωⁿ = Π(1 + iλ_i)` over eigen(E).

use std::sync::Arc;

use nalgebra::{Cholesky, SMatrix, SVector};
use thiserror::Error;

use crate::grid::{
    extension_plans, BandMatrix, BorderedSystem, Grid, GridError,
};
use crate::guillemin::Guillemin;
use crate::polytope::DelzantPolytope;
use crate::smallmat;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("Hessian not positive definite at node {node} (coords {coords:?})")]
    SingularHessian { node: usize, coords: Vec<f64> },
    #[error("potential not normalized at the base point (u = {value:.3e}, |∇u| = {grad:.3e})")]
    NotNormalized { value: f64, grad: f64 },
    #[error("harmonic solve did not converge: {0}")]
    NonConvergence(String),
    #[error("slope {given} inconsistent with class pairing {expected} (cohomological)")]
    SlopeMismatch { given: f64, expected: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Guillemin reference plus smooth grid correction and an affine gauge part.
#[derive(Clone)]
pub struct SymplecticPotential<const N: usize> {
    pub polytope: Arc<DelzantPolytope>,
    pub gu: Arc<Guillemin<N>>,
    pub grid: Arc<Grid<N>>,
    pub affine_const: f64,
    pub affine_lin: SVector<f64, N>,
    /// Correction values on the grid field set.
    pub correction: Vec<f64>,
}

impl<const N: usize> SymplecticPotential<N> {
    /// The canonical element of S(P): u₀ = ½ Σ ℓ_k log ℓ_k, zero correction.
    pub fn guillemin(p: Arc<DelzantPolytope>, m: usize) -> Result<Self, GridError> {
        let grid = Arc::new(Grid::new(&p, m)?);
        let gu = Arc::new(Guillemin::new(&p));
        let n = grid.len();
        Ok(SymplecticPotential {
            polytope: p,
            gu,
            grid,
            affine_const: 0.0,
            affine_lin: SVector::zeros(),
            correction: vec![0.0; n],
        })
    }

    pub fn with_correction(&self, correction: Vec<f64>) -> Self {
        assert_eq!(correction.len(), self.grid.len());
        let mut u = self.clone();
        u.correction = correction;
        u
    }

    /// u at a point: Guillemin + affine + interpolated correction.
    pub fn value(&self, y: &[f64]) -> f64 {
        let yv = SVector::<f64, N>::from_fn(|i, _| y[i]);
        self.gu.u0(&yv)
            + self.affine_const
            + self.affine_lin.dot(&yv)
            + interp_scalar(&self.grid, &self.correction, |_| true, y)
    }

    /// Gradient, with the correction gradient interpolated from node stencils.
    pub fn gradient(&self, y: &[f64]) -> SVector<f64, N> {
        let yv = SVector::<f64, N>::from_fn(|i, _| y[i]);
        let mut g = self.gu.grad_u0(&yv) + self.affine_lin;
        for a in 0..N {
            g[a] += interp_scalar(
                &self.grid,
                &self.grad_correction_field(a),
                |i| self.grid.is_derived[i],
                y,
            );
        }
        g
    }

    fn grad_correction_field(&self, axis: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.grid.len()];
        for &i in &self.grid.derived_nodes {
            f[i] = self.grid.d1(&self.correction, i, axis);
        }
        f
    }

    /// Shift the affine part so u(p₀) = 0 and ∇u(p₀) = 0 at the barycenter.
    pub fn normalize_at_barycenter(&mut self) {
        let p0 = self.polytope.barycenter();
        let g = self.gradient(&p0);
        self.affine_lin -= g;
        let v = self.value(&p0);
        self.affine_const -= v;
    }

    pub fn metric(&self) -> Result<MetricData<N>, PotentialError> {
        MetricData::assemble(self)
    }

    /// Boundary regularity of the correction: sup of |c|, |Dc| and |D²c|
    /// over the derived nodes nearest the collar. The singular behaviour of
    /// a symplectic potential lives entirely in the closed-form Guillemin
    /// part, so these must stay bounded as the grid refines.
    pub fn correction_regularity(&self) -> [f64; 3] {
        let grid = &self.grid;
        let cutoff = 3.5 * grid.h;
        let mut out = [0.0f64; 3];
        for &i in &grid.derived_nodes {
            if self.polytope.boundary_distance(&grid.coord(i)) > cutoff {
                continue;
            }
            out[0] = out[0].max(self.correction[i].abs());
            for a in 0..N {
                out[1] = out[1].max(grid.d1(&self.correction, i, a).abs());
                out[2] = out[2].max(grid.d2(&self.correction, i, a).abs());
            }
        }
        out
    }

    /// Grid + metadata serialization (the Guillemin part is implied by the
    /// polytope; only the smooth data is stored).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "polytope": self.polytope.to_json(),
            "grid": { "h": self.grid.h, "shape": self.grid.shape.to_vec() },
            "affine_const": self.affine_const,
            "affine_lin": self.affine_lin.iter().copied().collect::<Vec<f64>>(),
            "correction": self.correction,
        })
    }
}

/// Hessian / inverse-Hessian data on the grid's derived set.
pub struct MetricData<const N: usize> {
    pub h_mat: Vec<SMatrix<f64, N, N>>,
    pub g_mat: Vec<SMatrix<f64, N, N>>,
    /// G − G₀ (the correction-induced part; zero for Guillemin potentials).
    pub g_corr: Vec<SMatrix<f64, N, N>>,
}

impl<const N: usize> MetricData<N> {
    pub fn assemble(u: &SymplecticPotential<N>) -> Result<Self, PotentialError> {
        let grid = &u.grid;
        let n = grid.len();
        let mut h_mat = vec![SMatrix::zeros(); n];
        let mut g_mat = vec![SMatrix::zeros(); n];
        let mut g_corr = vec![SMatrix::zeros(); n];
        for &i in &grid.derived_nodes {
            let y = SVector::<f64, N>::from_column_slice(&grid.coord(i));
            let h0 = u.gu.hess_u0(&y);
            let hc = grid.hessian(&u.correction, i);
            let h = h0 + hc;
            let Some(chol) = Cholesky::new(h) else {
                return Err(PotentialError::SingularHessian {
                    node: i,
                    coords: grid.coord(i).to_vec(),
                });
            };
            let g = chol.inverse();
            h_mat[i] = h;
            g_mat[i] = g;
            // G − G₀ = −G (D²c) G₀ exactly; the subtractive form mixes two
            // inversion routes and its rounding noise gets amplified by the
            // h⁻² stencils downstream.
            g_corr[i] = -g * hc * u.gu.g0(&y);
        }
        Ok(MetricData { h_mat, g_mat, g_corr })
    }

    /// Verify H·G = I on the derived set (MetricGrid invariant).
    pub fn max_inverse_defect(&self, grid: &Grid<N>) -> f64 {
        let mut worst = 0.0f64;
        for &i in &grid.derived_nodes {
            let d = (self.h_mat[i] * self.g_mat[i] - SMatrix::<f64, N, N>::identity()).abs().max();
            worst = worst.max(d);
        }
        worst
    }
}

/// Abreu operator −u^{ij}_{,ij} on the residual set: closed form for the
/// Guillemin part plus centered differences of the correction part of the
/// inverse Hessian.
pub fn abreu_field<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
) -> Vec<f64> {
    let grid = &u.grid;
    let mut out = vec![0.0; grid.len()];
    // Component fields of G − G₀ for finite differencing.
    let mut comp = vec![vec![0.0; grid.len()]; N * N];
    for &q in &grid.derived_nodes {
        for a in 0..N {
            for b in 0..N {
                comp[a * N + b][q] = metric.g_corr[q][(a, b)];
            }
        }
    }
    for &p in &grid.residual_nodes {
        let y = SVector::<f64, N>::from_column_slice(&grid.coord(p));
        let mut a_val = u.gu.abreu_u0(&y);
        for a in 0..N {
            a_val -= grid.d2(&comp[a * N + a], p, a);
            for b in 0..N {
                if a != b {
                    a_val -= grid.d2_mixed(&comp[a * N + b], p, a, b);
                }
            }
        }
        out[p] = a_val;
    }
    out
}

/// Pure finite-difference Abreu field of the Guillemin potential on the full
/// closed lattice of a box polytope (used by the calibration tests: no
/// symbolic derivative shortcuts, one-sided stencils at the boundary).
pub fn abreu_guillemin_box_lattice<const N: usize>(
    p: &DelzantPolytope,
    m: usize,
) -> (Vec<[f64; N]>, Vec<f64>, [usize; N]) {
    assert_eq!(p.dim, N);
    let gu: Guillemin<N> = Guillemin::new(p);
    let mut lo = [f64::INFINITY; N];
    let mut hi = [f64::NEG_INFINITY; N];
    for v in &p.vertices {
        for i in 0..N {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    let mut shape = [0usize; N];
    for i in 0..N {
        shape[i] = m + 1;
    }
    let total: usize = shape.iter().product();
    let h = (hi[0] - lo[0]) / m as f64;
    let coord = |flat: usize| -> [f64; N] {
        let mut idx = [0usize; N];
        let mut f = flat;
        for a in (0..N).rev() {
            idx[a] = f % shape[a];
            f /= shape[a];
        }
        let mut y = [0.0; N];
        for a in 0..N {
            y[a] = lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / m as f64;
        }
        y
    };
    // G as matrix-entry lattices.
    let mut gfield = vec![vec![0.0; total]; N * N];
    for flat in 0..total {
        let y = SVector::<f64, N>::from_column_slice(&coord(flat));
        let g = gu.g0(&y);
        for a in 0..N {
            for b in 0..N {
                gfield[a * N + b][flat] = g[(a, b)];
            }
        }
    }
    let stride = |a: usize| -> usize { shape[a + 1..].iter().product() };
    let idx_of = |flat: usize, a: usize| -> usize { (flat / stride(a)) % shape[a] };
    // One-dimensional second derivative with one-sided fallback.
    let d2_axis = |f: &[f64], flat: usize, a: usize| -> f64 {
        let i = idx_of(flat, a);
        let s = stride(a) as i64;
        let v = |j: usize| f[(flat as i64 + (j as i64 - i as i64) * s) as usize];
        if i >= 1 && i + 1 < shape[a] {
            (v(i + 1) - 2.0 * v(i) + v(i - 1)) / (h * h)
        } else if i == 0 {
            (2.0 * v(0) - 5.0 * v(1) + 4.0 * v(2) - v(3)) / (h * h)
        } else {
            let n = shape[a] - 1;
            (2.0 * v(n) - 5.0 * v(n - 1) + 4.0 * v(n - 2) - v(n - 3)) / (h * h)
        }
    };
    let d1_axis = |f: &[f64], flat: usize, a: usize| -> f64 {
        let i = idx_of(flat, a);
        let s = stride(a) as i64;
        let v = |j: usize| f[(flat as i64 + (j as i64 - i as i64) * s) as usize];
        if i >= 1 && i + 1 < shape[a] {
            (v(i + 1) - v(i - 1)) / (2.0 * h)
        } else if i == 0 {
            (-1.5 * v(0) + 2.0 * v(1) - 0.5 * v(2)) / h
        } else {
            let n = shape[a] - 1;
            (1.5 * v(n) - 2.0 * v(n - 1) + 0.5 * v(n - 2)) / h
        }
    };
    let mut values = vec![0.0; total];
    // Mixed derivatives through staged first derivatives.
    let mut d1cache: Vec<Vec<f64>> = Vec::new();
    for a in 0..N {
        for b in 0..N {
            if a != b {
                let mut df = vec![0.0; total];
                for flat in 0..total {
                    df[flat] = d1_axis(&gfield[a * N + b], flat, b);
                }
                d1cache.push(df);
            }
        }
    }
    for flat in 0..total {
        let mut acc = 0.0;
        let mut mix = 0;
        for a in 0..N {
            for b in 0..N {
                if a == b {
                    acc -= d2_axis(&gfield[a * N + a], flat, a);
                } else {
                    acc -= d1_axis(&d1cache[mix], flat, a);
                    mix += 1;
                }
            }
        }
        values[flat] = acc;
    }
    let coords = (0..total).map(coord).collect();
    (coords, values, shape)
}

// ---------------------------------------------------------------------------
// Invariant (1,1)-forms and their endomorphism fields
// ---------------------------------------------------------------------------

/// Closed torus-invariant (1,1)-form relative to a metric u:
/// `B = ω·omega_coeff + ref_coeff·(log reference of ref_offsets) + i∂∂̄ψ`.
#[derive(Clone)]
pub struct InvariantForm<const N: usize> {
    pub omega_coeff: f64,
    pub ref_coeff: f64,
    pub ref_offsets: Vec<f64>,
    /// Grid potential on the field set (exact part of the form).
    pub psi: Vec<f64>,
}

impl<const N: usize> InvariantForm<N> {
    pub fn zero(grid: &Grid<N>, nfacets: usize) -> Self {
        InvariantForm {
            omega_coeff: 0.0,
            ref_coeff: 0.0,
            ref_offsets: vec![0.0; nfacets],
            psi: vec![0.0; grid.len()],
        }
    }

    pub fn omega_multiple(grid: &Grid<N>, nfacets: usize, s: f64) -> Self {
        let mut f = Self::zero(grid, nfacets);
        f.omega_coeff = s;
        f
    }

    /// Reference representative of a toric class (support convention: the
    /// anticanonical class is all ones). The log-potential weights are the
    /// negated support numbers: deforming the polytope offsets by w adds the
    /// class −w.
    pub fn from_toric_class(grid: &Grid<N>, class: &crate::classes::ToricClass) -> Self {
        InvariantForm {
            omega_coeff: 0.0,
            ref_coeff: 1.0,
            ref_offsets: class.offsets.iter().map(|b| -b).collect(),
            psi: vec![0.0; grid.len()],
        }
    }

    /// Class of the form, in the support convention of [`crate::classes`].
    pub fn class_offsets(&self, p: &DelzantPolytope) -> Vec<f64> {
        p.offsets()
            .iter()
            .zip(&self.ref_offsets)
            .map(|(c, w)| -self.omega_coeff * c - self.ref_coeff * w)
            .collect()
    }
}

/// Endomorphism field E = D_y(G ∇f) of an invariant form, on the residual
/// set, assembled in the expanded form `E = G·Hess f + (∂G)·∇f`. The compact
/// Hessian stencil keeps the principal part coupled across lattice parities
/// (a composed pair of centered first differences would decouple the four
/// parity classes and make every grid system singular). The Guillemin metric
/// part is differentiated symbolically, everything the correction or ψ
/// touches goes through centered differences.
pub fn endomorphism_field<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    form: &InvariantForm<N>,
) -> Vec<SMatrix<f64, N, N>> {
    let grid = &u.grid;
    let has_ref = form.ref_coeff != 0.0;
    // G − G₀ as scalar entry fields for finite differencing.
    let mut gc_fields = vec![vec![0.0; grid.len()]; N * N];
    for &q in &grid.derived_nodes {
        for r in 0..N {
            for c in 0..N {
                gc_fields[r * N + c][q] = metric.g_corr[q][(r, c)];
            }
        }
    }
    let mut out = vec![SMatrix::zeros(); grid.len()];
    for &p in &grid.residual_nodes {
        let y = SVector::<f64, N>::from_column_slice(&grid.coord(p));
        let mut e = SMatrix::<f64, N, N>::identity() * form.omega_coeff;
        // Total gradient and Hessian of the potential at p.
        let mut grad = grid.gradient(&form.psi, p);
        let mut hess = grid.hessian(&form.psi, p);
        if has_ref {
            grad += u.gu.grad_logref(&form.ref_offsets, &y) * form.ref_coeff;
            hess += u.gu.hess_logref(&form.ref_offsets, &y) * form.ref_coeff;
        }
        // Principal part G · Hess f.
        e += metric.g_mat[p] * hess;
        // First-order part Σ_d ∂_c(G_{rd}) ∂_d f.
        for c in 0..N {
            let dg0 = u.gu.dg0(&y, c);
            for r in 0..N {
                let mut acc = 0.0;
                for d in 0..N {
                    let dgc = grid.d1(&gc_fields[r * N + d], p, c);
                    acc += (dg0[(r, d)] + dgc) * grad[d];
                }
                e[(r, c)] += acc;
            }
        }
        out[p] = e;
    }
    out
}

/// Λ_ω B = tr E on the residual set.
pub fn trace_field<const N: usize>(
    grid: &Grid<N>,
    endo: &[SMatrix<f64, N, N>],
) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for &p in &grid.residual_nodes {
        out[p] = endo[p].trace();
    }
    out
}

/// Real eigenvalues of the endomorphism E = HΨ via the symmetrization
/// Lᵀ Ψ L with H = LLᵀ.
pub fn endo_eigenvalues<const N: usize>(
    h: &SMatrix<f64, N, N>,
    e: &SMatrix<f64, N, N>,
) -> [f64; N] {
    let g_e = h.try_inverse().expect("positive Hessian") * e;
    let psi = (g_e + g_e.transpose()) * 0.5;
    let l = Cholesky::new(*h).expect("positive Hessian").l();
    let s = l.transpose() * psi * l;
    smallmat::sym_eigenvalues(&s)
}

/// Result of the harmonic-representative solve.
pub struct HarmonicRep<const N: usize> {
    pub form: InvariantForm<N>,
    /// The constant value of Λ_ω B achieved by the solve.
    pub achieved_const: f64,
    /// Max deviation of Λ_ω B from the constant over residual nodes.
    pub trace_constancy: f64,
}

/// Solve Λ_ω(B_ref + i∂∂̄ψ) ≡ const for mean-zero ψ. The constant is floated:
/// harmonicity of a closed invariant form is exactly constancy of the trace,
/// and the achieved constant equals the cohomological slope up to O(h²).
pub fn harmonic_representative<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    form_ref: &InvariantForm<N>,
) -> Result<HarmonicRep<N>, PotentialError> {
    let grid = &u.grid;
    let plans = extension_plans(&*grid, &u.polytope)?;
    let nfield = grid.len();

    // Row index = node compact index; trace rows on residual nodes,
    // extension rows elsewhere. Columns = ψ values.
    let base_endo = endomorphism_field(u, metric, form_ref);
    let rhs_field = trace_field(grid, &base_endo);

    let p0 = grid.nearest_residual(&u.polytope.barycenter());

    // G − G₀ entry fields for the first-order coefficients.
    let mut gc_fields = vec![vec![0.0; nfield]; N * N];
    for &q in &grid.derived_nodes {
        for r in 0..N {
            for c in 0..N {
                gc_fields[r * N + c][q] = metric.g_corr[q][(r, c)];
            }
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut border_col = vec![0.0; nfield];
    let mut displaced_row: Vec<(usize, f64)> = Vec::new();
    let h = grid.h;
    for &p in &grid.residual_nodes {
        // tr E(ψ) = Σ_{rd} G_{rd} (D²ψ)_{dr} + Σ_d b_d ∂_d ψ with
        // b_d = Σ_r ∂_r G_{rd}, matching the compact form of
        // `endomorphism_field`.
        let y = nalgebra::SVector::<f64, N>::from_column_slice(&grid.coord(p));
        let g = &metric.g_mat[p];
        let mut local: Vec<(usize, f64)> = Vec::new();
        for d in 0..N {
            // Diagonal Hessian terms.
            let coef = g[(d, d)] / (h * h);
            let mut st = [0i64; N];
            st[d] = 1;
            local.push((grid.neighbor(p, st).expect("field"), coef));
            st[d] = -1;
            local.push((grid.neighbor(p, st).expect("field"), coef));
            local.push((p, -2.0 * coef));
            // Gradient terms.
            let mut b = 0.0;
            for r in 0..N {
                let dg0 = u.gu.dg0(&y, r);
                b += dg0[(r, d)] + grid.d1(&gc_fields[r * N + d], p, r);
            }
            st[d] = 1;
            local.push((grid.neighbor(p, st).expect("field"), b / (2.0 * h)));
            st[d] = -1;
            local.push((grid.neighbor(p, st).expect("field"), -b / (2.0 * h)));
            // Mixed Hessian terms (each unordered pair appears twice in the
            // trace sum).
            for r in (d + 1)..N {
                let coef = 2.0 * g[(d, r)] / (4.0 * h * h);
                for sd in [-1i64, 1] {
                    for sr in [-1i64, 1] {
                        let mut st2 = [0i64; N];
                        st2[d] = sd;
                        st2[r] = sr;
                        let col = grid.neighbor(p, st2).expect("field");
                        local.push((col, coef * (sd * sr) as f64));
                    }
                }
            }
        }
        if p == p0 {
            displaced_row = local;
            border_col[p] = -1.0;
            // Gauge row ψ(p₀) = 0 takes this slot.
            triplets.push((p, p, 1.0));
        } else {
            border_col[p] = -1.0;
            triplets.extend(local.into_iter().map(|(c, v)| (p, c, v)));
        }
    }
    for plan in &plans {
        triplets.push((plan.node, plan.node, 1.0));
        for &(q, c) in &plan.terms {
            triplets.push((plan.node, q, c));
        }
    }

    let band = band_from_triplets(nfield, &triplets);
    let mut rows_border = vec![vec![0.0; nfield]];
    for (c, v) in &displaced_row {
        rows_border[0][*c] += v;
    }
    // Main rhs: −ΛB_ref on trace rows (their equations are L ψ − q = −ΛB_ref
    // once the slope constant is moved to the unknown side). Extension rows
    // constrain the total exact part, so the output is independent of which
    // representative seeded the solve.
    let mut rhs = vec![0.0; nfield];
    for &p in &grid.residual_nodes {
        if p != p0 {
            rhs[p] = -rhs_field[p];
        }
    }
    for plan in &plans {
        rhs[plan.node] = -plan.residual(&form_ref.psi);
    }
    let rhs_border = vec![-rhs_field[p0]];
    // Border column: ∂row/∂const = −1 on trace rows. The p₀ slot is now a
    // gauge row, no q-dependence.
    border_col[p0] = 0.0;
    let corner = vec![vec![-1.0]];

    let system = BorderedSystem {
        band,
        cols: vec![border_col],
        rows: rows_border,
        corner,
    };
    let (psi, q) = system
        .solve(&rhs, &rhs_border)
        .map_err(|e| PotentialError::NonConvergence(format!("{e}")))?;

    let mut form = form_ref.clone();
    for (a, b) in form.psi.iter_mut().zip(&psi) {
        *a += b;
    }
    // Mean-zero gauge over residual nodes.
    let mean: f64 =
        grid.residual_nodes.iter().map(|&p| form.psi[p]).sum::<f64>() / grid.residual_nodes.len() as f64;
    for v in &mut form.psi {
        *v -= mean;
    }
    let endo = endomorphism_field(u, metric, &form);
    let tr = trace_field(grid, &endo);
    let achieved = q[0];
    let constancy = grid
        .residual_nodes
        .iter()
        .map(|&p| (tr[p] - achieved).abs())
        .fold(0.0f64, f64::max);
    Ok(HarmonicRep { form, achieved_const: achieved, trace_constancy: constancy })
}

pub fn band_from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> BandMatrix {
    let mut kl = 0usize;
    let mut ku = 0usize;
    for &(r, c, _) in triplets {
        if r > c {
            kl = kl.max(r - c);
        } else {
            ku = ku.max(c - r);
        }
    }
    let mut band = BandMatrix::new(n, kl, ku);
    for &(r, c, v) in triplets {
        band.add(r, c, v);
    }
    band
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

/// Multilinear interpolation of a node field, renormalizing over the valid
/// cell corners (and falling back to the nearest valid node).
pub fn interp_scalar<const N: usize>(
    grid: &Grid<N>,
    values: &[f64],
    valid: impl Fn(usize) -> bool,
    y: &[f64],
) -> f64 {
    let h = grid.h;
    let mut base = [0i64; N];
    let mut frac = [0.0; N];
    for a in 0..N {
        let t = (y[a] - grid.origin[a]) / h;
        let f = t.floor();
        base[a] = f as i64;
        frac[a] = t - f;
    }
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for corner in 0..(1usize << N) {
        let mut idx = [0usize; N];
        let mut w = 1.0;
        let mut ok = true;
        for a in 0..N {
            let bit = (corner >> a) & 1;
            let j = base[a] + bit as i64;
            if j < 0 || j >= grid.shape[a] as i64 {
                ok = false;
                break;
            }
            idx[a] = j as usize;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if !ok {
            continue;
        }
        let mut flat = 0usize;
        for a in 0..N {
            flat = flat * grid.shape[a] + idx[a];
        }
        if let Some(ci) = grid.lattice_lookup(flat) {
            if valid(ci) {
                acc += w * values[ci];
                wsum += w;
            }
        }
    }
    if wsum > 1e-12 {
        acc / wsum
    } else {
        // Nearest valid node.
        let mut best = f64::INFINITY;
        let mut val = 0.0;
        for i in 0..grid.len() {
            if valid(i) {
                let d: f64 = (0..N).map(|a| (grid.coord(i)[a] - y[a]).powi(2)).sum();
                if d < best {
                    best = d;
                    val = values[i];
                }
            }
        }
        val
    }
}

// ---------------------------------------------------------------------------
// Graded quadrature and energy functionals
// ---------------------------------------------------------------------------

/// Quadrature with dyadic grading toward the boundary, for integrands with
/// ℓ log ℓ singularities.
pub struct GradedQuadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub fn graded_quadrature(p: &DelzantPolytope, levels: usize, gauss: usize) -> GradedQuadrature {
    let (gx, gw) = gauss_legendre_01(gauss);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    match p.dim {
        1 => {
            let mut xs: Vec<f64> = p.vertices.iter().map(|v| v[0]).collect();
            xs.sort_by(f64::total_cmp);
            let (a, b) = (xs[0], xs[1]);
            let len = b - a;
            // Graded cells from each end toward the middle.
            let cells = dyadic_cells(levels);
            for &(c0, c1) in &cells {
                for &(t0, t1, from_right) in &[(c0, c1, false), (c0, c1, true)] {
                    // Each side covers half of the interval.
                    let (s0, s1) = (0.5 * t0, 0.5 * t1);
                    for (x, w) in gx.iter().zip(&gw) {
                        let s = s0 + (s1 - s0) * x;
                        let y = if from_right { b - len * s } else { a + len * s };
                        nodes.push(vec![y]);
                        weights.push(w * (s1 - s0) * len);
                    }
                }
            }
        }
        2 => {
            let bary = p.barycenter();
            for k in 0..p.nfacets() {
                let pts = p.facet_vertices(k);
                if pts.len() != 2 {
                    continue;
                }
                let (v0, v1) = (&pts[0], &pts[1]);
                let jac2 = ((v0[0] - bary[0]) * (v1[1] - bary[1])
                    - (v0[1] - bary[1]) * (v1[0] - bary[0]))
                    .abs();
                // ρ graded toward the facet (ρ=1), s graded toward both corners.
                let rho_cells: Vec<(f64, f64)> =
                    dyadic_cells(levels).iter().map(|&(a, b)| (1.0 - b, 1.0 - a)).collect();
                let mut s_cells = Vec::new();
                for &(a, b) in &dyadic_cells(levels) {
                    s_cells.push((0.5 * a, 0.5 * b));
                    s_cells.push((1.0 - 0.5 * b, 1.0 - 0.5 * a));
                }
                for &(r0, r1) in &rho_cells {
                    for &(s0, s1) in &s_cells {
                        for (xr, wr) in gx.iter().zip(&gw) {
                            let rho = r0 + (r1 - r0) * xr;
                            for (xs, ws) in gx.iter().zip(&gw) {
                                let s = s0 + (s1 - s0) * xs;
                                let ex = v0[0] + s * (v1[0] - v0[0]);
                                let ey = v0[1] + s * (v1[1] - v0[1]);
                                let y = vec![
                                    bary[0] + rho * (ex - bary[0]),
                                    bary[1] + rho * (ey - bary[1]),
                                ];
                                nodes.push(y);
                                weights.push(
                                    wr * ws * (r1 - r0) * (s1 - s0) * rho * jac2,
                                );
                            }
                        }
                    }
                }
            }
        }
        _ => {
            // 3D graded quadrature is not needed by any consumer; fall back
            // to the plain scheme.
            let q = p.quadrature(6);
            nodes = q.interior_nodes;
            weights = q.interior_weights;
        }
    }
    GradedQuadrature { nodes, weights }
}

/// Dyadic cells of [0,1] accumulating at 0: [2^{-L},2^{-L+1}], …, [1/2,1]
/// plus the final sliver [0, 2^{-L}].
fn dyadic_cells(levels: usize) -> Vec<(f64, f64)> {
    let mut cells = Vec::with_capacity(levels + 1);
    let mut hi = 1.0;
    for _ in 0..levels {
        let lo = hi * 0.5;
        cells.push((lo, hi));
        hi = lo;
    }
    cells.push((0.0, hi));
    cells
}

/// Gauss–Legendre nodes/weights on [0,1].
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Newton from the Chebyshev initial guess on [-1,1].
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, 0.0f64);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * t * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            let dp = n as f64 * (t * p0 - p1) / (t * t - 1.0);
            let dt = p0 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, 0.0f64);
        for j in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j as f64 + 1.0) * t * p1 - j as f64 * p2) / (j as f64 + 1.0);
        }
        let dp = n as f64 * (t * p0 - p1) / (t * t - 1.0);
        x[i] = 0.5 * (1.0 - t);
        w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// The functionals L_A(u) = ∫_∂P u dσ − ∫_P A u dμ,
/// F_A(u) = −∫ log det D²u dμ + L_A(u), and d₁ = (π/2)ⁿ ∫ |u₀ − u| dμ.
pub struct EnergyValues {
    pub l_a: f64,
    pub f_a: f64,
    pub d1: f64,
}

pub fn energy_functionals<const N: usize>(
    p: &DelzantPolytope,
    a_fn: &dyn Fn(&[f64]) -> f64,
    u: &SymplecticPotential<N>,
    u0: &SymplecticPotential<N>,
) -> Result<EnergyValues, PotentialError> {
    let p0 = p.barycenter();
    for cand in [u, u0] {
        let v = cand.value(&p0);
        let g = cand.gradient(&p0).norm();
        if v.abs() > 1e-7 || g > 1e-7 {
            return Err(PotentialError::NotNormalized { value: v, grad: g });
        }
    }
    let graded = graded_quadrature(p, 24, 8);
    let scheme = p.quadrature(8);

    // Hessian correction entries for interpolation.
    let metric_fields: Vec<Vec<f64>> = {
        let grid = &u.grid;
        let mut fields = vec![vec![0.0; grid.len()]; N * N];
        for &i in &grid.derived_nodes {
            let hc = grid.hessian(&u.correction, i);
            for a in 0..N {
                for b in 0..N {
                    fields[a * N + b][i] = hc[(a, b)];
                }
            }
        }
        fields
    };

    let boundary_int = scheme.integrate_boundary(|y| u.value(y));
    let mut interior_au = 0.0;
    let mut logdet = 0.0;
    let mut d1 = 0.0;
    for (y, w) in graded.nodes.iter().zip(&graded.weights) {
        let uy = u.value(y);
        interior_au += w * a_fn(y) * uy;
        d1 += w * (uy - u0.value(y)).abs();
        let yv = SVector::<f64, N>::from_column_slice(y);
        let mut h = u.gu.hess_u0(&yv);
        for a in 0..N {
            for b in 0..N {
                h[(a, b)] += interp_scalar(
                    &u.grid,
                    &metric_fields[a * N + b],
                    |i| u.grid.is_derived[i],
                    y,
                );
            }
        }
        let det = smallmat::det(&h);
        if det <= 0.0 {
            return Err(PotentialError::SingularHessian { node: 0, coords: y.clone() });
        }
        logdet += w * det.ln();
    }
    let l_a = boundary_int - interior_au;
    Ok(EnergyValues {
        l_a,
        f_a: -logdet + l_a,
        d1: (std::f64::consts::FRAC_PI_2).powi(N as i32) * d1,
    })
}

/// Legendre-duality spot check: finite-difference the Kähler potential
/// φ(x) = ⟨x,y(x)⟩ − u(y(x)) in complex coordinates x = ∇u(y) and compare
/// det Hess_x φ · det D²u with 1.
pub fn legendre_volume_defect<const N: usize>(
    u: &SymplecticPotential<N>,
    metric: &MetricData<N>,
    samples: &[usize],
) -> f64 {
    let grid = &u.grid;
    let eps = 3e-4;
    let mut worst = 0.0f64;
    for &i in samples {
        if !grid.is_residual[i] {
            continue;
        }
        let y0 = SVector::<f64, N>::from_column_slice(&grid.coord(i));
        // Local model: Guillemin part exact, correction replaced by its
        // second-order Taylor expansion at the node, so that value, gradient
        // and Hessian are mutually consistent for the duality check.
        let c0 = u.correction[i];
        let gc = grid.gradient(&u.correction, i);
        let hc = grid.hessian(&u.correction, i);
        let val = |y: &SVector<f64, N>| -> f64 {
            let d = y - y0;
            u.gu.u0(y) + c0 + gc.dot(&d) + 0.5 * (hc * d).dot(&d)
        };
        let grad = |y: &SVector<f64, N>| -> SVector<f64, N> {
            u.gu.grad_u0(y) + gc + hc * (y - y0)
        };
        let x0 = grad(&y0);
        let phi = |x: SVector<f64, N>| -> f64 {
            let mut y = y0;
            for _ in 0..80 {
                let r = grad(&y) - x;
                if r.norm() < 1e-14 {
                    break;
                }
                let h = u.gu.hess_u0(&y) + hc;
                y -= h.try_inverse().expect("convex") * r;
            }
            x.dot(&y) - val(&y)
        };
        let mut hess = SMatrix::<f64, N, N>::zeros();
        for a in 0..N {
            for b in 0..N {
                let mut xpp = x0;
                xpp[a] += eps;
                xpp[b] += eps;
                let mut xpm = x0;
                xpm[a] += eps;
                xpm[b] -= eps;
                let mut xmp = x0;
                xmp[a] -= eps;
                xmp[b] += eps;
                let mut xmm = x0;
                xmm[a] -= eps;
                xmm[b] -= eps;
                hess[(a, b)] = (phi(xpp) - phi(xpm) - phi(xmp) + phi(xmm)) / (4.0 * eps * eps);
            }
        }
        let defect = (smallmat::det(&hess) * smallmat::det(&metric.h_mat[i]) - 1.0).abs();
        worst = worst.max(defect);
    }
    worst
}
