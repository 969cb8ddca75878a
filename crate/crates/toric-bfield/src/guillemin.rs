//! Closed-form calculus for the singular parts of symplectic potentials.
//!
//! Every potential handled by the solvers is split as
//! `u = u₀ + affine + smooth grid correction`, with `u₀ = ½ Σ ℓ_k log ℓ_k`
//! the Guillemin potential, and every class reference form carries the
//! log potential `f_b = ½ Σ b_k log ℓ_k`. All derivatives of these parts
//! are evaluated symbolically here; finite differences only ever touch
//! smooth grid corrections. This keeps model cases (products of
//! projective lines) exact to rounding.

use nalgebra::{SMatrix, SVector};

use crate::polytope::DelzantPolytope;

#[derive(Debug, Clone)]
pub struct Guillemin<const N: usize> {
    pub normals: Vec<SVector<f64, N>>,
    pub offsets: Vec<f64>,
}

/// Floor for facet distances when evaluating at or beyond the boundary.
const ELL_FLOOR: f64 = 1e-13;

impl<const N: usize> Guillemin<N> {
    pub fn new(p: &DelzantPolytope) -> Self {
        assert_eq!(p.dim, N);
        let normals = p
            .facets
            .iter()
            .map(|f| SVector::<f64, N>::from_fn(|i, _| f.normal[i] as f64))
            .collect();
        let offsets = p.facets.iter().map(|f| f.offset).collect();
        Guillemin { normals, offsets }
    }

    pub fn nfacets(&self) -> usize {
        self.normals.len()
    }

    #[inline]
    pub fn ell(&self, k: usize, y: &SVector<f64, N>) -> f64 {
        (self.normals[k].dot(y) - self.offsets[k]).max(ELL_FLOOR)
    }

    /// u₀ = ½ Σ ℓ log ℓ.
    pub fn u0(&self, y: &SVector<f64, N>) -> f64 {
        (0..self.nfacets())
            .map(|k| {
                let l = self.ell(k, y);
                0.5 * l * l.ln()
            })
            .sum()
    }

    pub fn grad_u0(&self, y: &SVector<f64, N>) -> SVector<f64, N> {
        let mut g = SVector::zeros();
        for k in 0..self.nfacets() {
            let l = self.ell(k, y);
            g += self.normals[k] * (0.5 * (l.ln() + 1.0));
        }
        g
    }

    /// H₀ = ½ Σ ν νᵀ / ℓ.
    pub fn hess_u0(&self, y: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        let mut h = SMatrix::zeros();
        for k in 0..self.nfacets() {
            let l = self.ell(k, y);
            h += self.normals[k] * self.normals[k].transpose() * (0.5 / l);
        }
        h
    }

    /// ∂_i H₀ = −½ Σ ν νᵀ ν_i / ℓ².
    pub fn dhess_u0(&self, y: &SVector<f64, N>, i: usize) -> SMatrix<f64, N, N> {
        let mut h = SMatrix::zeros();
        for k in 0..self.nfacets() {
            let l = self.ell(k, y);
            h -= self.normals[k] * self.normals[k].transpose()
                * (0.5 * self.normals[k][i] / (l * l));
        }
        h
    }

    /// ∂²_{ij} H₀ = Σ ν νᵀ ν_i ν_j / ℓ³.
    pub fn d2hess_u0(&self, y: &SVector<f64, N>, i: usize, j: usize) -> SMatrix<f64, N, N> {
        let mut h = SMatrix::zeros();
        for k in 0..self.nfacets() {
            let l = self.ell(k, y);
            h += self.normals[k] * self.normals[k].transpose()
                * (self.normals[k][i] * self.normals[k][j] / (l * l * l));
        }
        h
    }

    pub fn g0(&self, y: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        self.hess_u0(y).try_inverse().expect("Guillemin Hessian invertible in the interior")
    }

    /// ∂_i G₀ = −G₀ (∂_i H₀) G₀.
    pub fn dg0(&self, y: &SVector<f64, N>, i: usize) -> SMatrix<f64, N, N> {
        let g = self.g0(y);
        -g * self.dhess_u0(y, i) * g
    }

    /// Abreu operator of the Guillemin potential, −Σ ∂²_{ij} (G₀)_{ij}.
    ///
    /// Uses the cancellation-free facet-pair form
    /// `𝒜₀ = Σ_k a_{kk}²/ℓ_k³ − ¼ Σ_{k,l} (a_{kk} a_{kl} a_{ll} + a_{kl}³)/(ℓ_k² ℓ_l²)`
    /// with a_{kl} = ν_kᵀ G₀ ν_l, whose intermediates stay O(1/ℓ): the naive
    /// matrix chain goes through O(1/ℓ³) terms and loses three digits near
    /// the boundary.
    pub fn abreu_u0(&self, y: &SVector<f64, N>) -> f64 {
        let g = self.g0(y);
        let m = self.nfacets();
        let w: Vec<SVector<f64, N>> = (0..m).map(|k| g * self.normals[k]).collect();
        let ell: Vec<f64> = (0..m).map(|k| self.ell(k, y)).collect();
        let mut a = 0.0;
        for k in 0..m {
            let akk = self.normals[k].dot(&w[k]);
            a += akk * akk / (ell[k] * ell[k] * ell[k]);
            for l in 0..m {
                let akl = self.normals[k].dot(&w[l]);
                let all = self.normals[l].dot(&w[l]);
                a -= 0.25 * (akk * akl * all + akl * akl * akl)
                    / (ell[k] * ell[k] * ell[l] * ell[l]);
            }
        }
        a
    }

    /// Log reference potential f_b = ½ Σ b_k log ℓ_k for a class with facet
    /// offsets b. Its metric 2-form `i∂∂̄(f_b ∘ y)` represents the class.
    pub fn logref(&self, b: &[f64], y: &SVector<f64, N>) -> f64 {
        (0..self.nfacets()).map(|k| 0.5 * b[k] * self.ell(k, y).ln()).sum()
    }

    pub fn grad_logref(&self, b: &[f64], y: &SVector<f64, N>) -> SVector<f64, N> {
        let mut g = SVector::zeros();
        for k in 0..self.nfacets() {
            g += self.normals[k] * (0.5 * b[k] / self.ell(k, y));
        }
        g
    }

    pub fn hess_logref(&self, b: &[f64], y: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        let mut h = SMatrix::zeros();
        for k in 0..self.nfacets() {
            let l = self.ell(k, y);
            h -= self.normals[k] * self.normals[k].transpose() * (0.5 * b[k] / (l * l));
        }
        h
    }

    /// Symbolic Jacobian D_y(G₀ ∇f_b): the Guillemin part of the endomorphism
    /// of the reference form of class b.
    pub fn endo_logref_g0(&self, b: &[f64], y: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        let g = self.g0(y);
        let grad = self.grad_logref(b, y);
        let hess = self.hess_logref(b, y);
        let mut e = g * hess;
        for c in 0..N {
            let dg = self.dg0(y, c);
            let col = dg * grad;
            for r in 0..N {
                e[(r, c)] += col[r];
            }
        }
        // E_{rc} = ∂_c (G ∇f)_r.
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{interval, standard_simplex, unit_cube, unit_square};
    use nalgebra::{SMatrix, SVector};

    #[test]
    fn interval_abreu_is_four() {
        let g: Guillemin<1> = Guillemin::new(&interval());
        for &x in &[0.1, 0.3, 0.5, 0.8, 0.95] {
            let y = SVector::<f64, 1>::new(x);
            assert!((g.abreu_u0(&y) - 4.0).abs() < 1e-9, "x={x}: {}", g.abreu_u0(&y));
            // u₀'' = 1/(2x(1−x)).
            let h = g.hess_u0(&y)[(0, 0)];
            assert!((h - 1.0 / (2.0 * x * (1.0 - x))).abs() < 1e-12);
        }
    }

    #[test]
    fn square_abreu_is_eight() {
        let g: Guillemin<2> = Guillemin::new(&unit_square());
        for &p in &[[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]] {
            let y = SVector::<f64, 2>::from_column_slice(&p);
            assert!((g.abreu_u0(&y) - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn simplex_abreu_is_twelve() {
        // Guillemin = Fubini–Study on P²; the constant must match
        // vol_σ / vol_μ = 6 / (1/2) = 12.
        let g: Guillemin<2> = Guillemin::new(&standard_simplex());
        for &p in &[[0.2, 0.3], [0.1, 0.6], [0.4, 0.4]] {
            let y = SVector::<f64, 2>::from_column_slice(&p);
            assert!((g.abreu_u0(&y) - 12.0).abs() < 1e-8, "{}", g.abreu_u0(&y));
        }
    }

    #[test]
    fn cube_abreu_is_twelve() {
        let g: Guillemin<3> = Guillemin::new(&unit_cube());
        let y = SVector::<f64, 3>::new(0.3, 0.5, 0.8);
        assert!((g.abreu_u0(&y) - 12.0).abs() < 1e-8);
    }

    #[test]
    fn derivative_formulas_match_finite_differences() {
        let g: Guillemin<2> = Guillemin::new(&unit_square());
        let y = SVector::<f64, 2>::new(0.37, 0.61);
        let eps = 1e-6;
        for i in 0..2 {
            let mut yp = y;
            yp[i] += eps;
            let mut ym = y;
            ym[i] -= eps;
            let fd: SMatrix<f64, 2, 2> = (g.hess_u0(&yp) - g.hess_u0(&ym)) / (2.0 * eps);
            let dm = g.dhess_u0(&y, i);
            assert!((fd - dm).norm() < 1e-5, "i={i} err={}", (fd - dm).norm());
            let fdg: SMatrix<f64, 2, 2> = (g.g0(&yp) - g.g0(&ym)) / (2.0 * eps);
            assert!((fdg - g.dg0(&y, i)).norm() < 1e-5);
        }
    }

    #[test]
    fn logref_of_omega_class_has_unit_trace_in_1d() {
        // On the interval, D(G₀ ∇f_c) for the polytope's own offsets gives
        // the identity endomorphism (the form is ω itself up to exact terms,
        // and in 1D exactly ω).
        let p = interval();
        let g: Guillemin<1> = Guillemin::new(&p);
        let b = p.offsets();
        for &x in &[0.2, 0.5, 0.7] {
            let y = SVector::<f64, 1>::new(x);
            let e = g.endo_logref_g0(&b, &y);
            assert!((e[(0, 0)] - 1.0).abs() < 1e-10, "x={x}: {}", e[(0, 0)]);
        }
    }
}
