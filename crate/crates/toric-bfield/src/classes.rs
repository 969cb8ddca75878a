//! Cohomology classes of the toric manifold as facet support vectors, the
//! intersection pairing through mixed volumes, and the topological constants
//! of a complexified class `i[ω] + [B]`: the angle θ̂, average scalar
//! curvature ŝ, slope z, radius mean r̂, and the constant c.
//!
//! Class convention: a class is a vector `b` over the facets with polytope
//! `{⟨ν_k, y⟩ ≥ −b_k}`, so the anticanonical class c₁ is `b ≡ 1` and the
//! Kähler class of the polytope itself is `b_k = −c_k` (minus the facet
//! offsets). Two vectors differing by `b_k ↦ b_k + ⟨v, ν_k⟩` represent the
//! same class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polytope::{DelzantPolytope, PolytopeError};

#[derive(Debug, Error)]
pub enum ClassError {
    #[error("class has {0} entries but the fan has {1} facets")]
    FanMismatch(usize, usize),
    #[error("intersection numbers need exactly n = {0} classes, got {1}")]
    WrongArity(usize, usize),
    #[error("angle undefined: the vector (v₁, v₂) vanishes")]
    ZeroAngleVector,
    #[error("the class is not Kähler on this fan")]
    NotKahler,
    #[error("angle formulas implemented for n ∈ {{2, 3}}, got {0}")]
    BadDimension(usize),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// A (1,1)-class as a facet support vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToricClass {
    pub offsets: Vec<f64>,
}

impl ToricClass {
    pub fn new(offsets: Vec<f64>) -> Self {
        ToricClass { offsets }
    }

    /// The Kähler class of the polytope itself.
    pub fn of_polytope(p: &DelzantPolytope) -> Self {
        ToricClass { offsets: p.offsets().iter().map(|c| -c).collect() }
    }

    /// Anticanonical class: all support numbers equal to one.
    pub fn anticanonical(p: &DelzantPolytope) -> Self {
        ToricClass { offsets: vec![1.0; p.nfacets()] }
    }

    pub fn scaled(&self, k: f64) -> Self {
        ToricClass { offsets: self.offsets.iter().map(|b| k * b).collect() }
    }

    pub fn plus(&self, other: &ToricClass, t: f64) -> Self {
        ToricClass {
            offsets: self
                .offsets
                .iter()
                .zip(&other.offsets)
                .map(|(a, b)| a + t * b)
                .collect(),
        }
    }

    /// Translate by a lattice vector: the same class, different vector.
    pub fn translated(&self, p: &DelzantPolytope, v: &[f64]) -> Self {
        ToricClass {
            offsets: self
                .offsets
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let nu = &p.facets[k].normal;
                    b + nu.iter().zip(v).map(|(&n, &x)| n as f64 * x).sum::<f64>()
                })
                .collect(),
        }
    }

    fn polytope_offsets(&self) -> Vec<f64> {
        self.offsets.iter().map(|b| -b).collect()
    }

    /// Whether the class is Kähler: its polytope is combinatorially the fan's.
    pub fn is_kahler(&self, p: &DelzantPolytope) -> Result<bool, ClassError> {
        if self.offsets.len() != p.nfacets() {
            return Err(ClassError::FanMismatch(self.offsets.len(), p.nfacets()));
        }
        Ok(p.is_ample(&self.polytope_offsets())?)
    }
}

/// Intersection number of n classes: n! times the multilinear mixed volume.
pub fn intersection_number(
    p: &DelzantPolytope,
    classes: &[&ToricClass],
) -> Result<f64, ClassError> {
    let n = p.dim;
    if classes.len() != n {
        return Err(ClassError::WrongArity(n, classes.len()));
    }
    for c in classes {
        if c.offsets.len() != p.nfacets() {
            return Err(ClassError::FanMismatch(c.offsets.len(), p.nfacets()));
        }
    }
    let vectors: Vec<Vec<f64>> = classes.iter().map(|c| c.polytope_offsets()).collect();
    let mut fact = 1.0;
    for k in 2..=n {
        fact *= k as f64;
    }
    Ok(fact * p.mixed_volume(&vectors)?)
}

/// Power shorthand: I(a^j · b^{n−j}).
pub fn intersection_power(
    p: &DelzantPolytope,
    a: &ToricClass,
    j: usize,
    b: &ToricClass,
) -> Result<f64, ClassError> {
    let mut refs: Vec<&ToricClass> = Vec::with_capacity(p.dim);
    for _ in 0..j {
        refs.push(a);
    }
    for _ in j..p.dim {
        refs.push(b);
    }
    intersection_number(p, &refs)
}

/// All topological constants of a complexified class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleData {
    pub v1: f64,
    pub v2: f64,
    /// Principal-value angle of ∫(ω + iB)ⁿ in (−π, π].
    pub theta_hat: f64,
    /// Average scalar curvature, normalized so the Abreu constant is 4ŝ.
    pub s_hat: f64,
    /// Slope z = n [ω]^{n−1}[B]/[ω]ⁿ.
    pub z: f64,
    /// Mean of the radius function: ‖v‖/∫ωⁿ.
    pub r_hat: f64,
    /// Topological constant of the full equation, c = ŝ − |γ| r̂.
    pub c: f64,
    pub gamma_abs: f64,
}

/// `invariants_bundle`: the constants of `(i[ω] + [B], |γ|)` on surfaces and
/// threefolds.
pub fn invariants_bundle(
    p: &DelzantPolytope,
    omega: &ToricClass,
    b: &ToricClass,
    gamma_abs: f64,
) -> Result<AngleData, ClassError> {
    let n = p.dim;
    if !(n == 2 || n == 3) {
        return Err(ClassError::BadDimension(n));
    }
    if !omega.is_kahler(p)? {
        return Err(ClassError::NotKahler);
    }
    let (v1, v2) = match n {
        2 => {
            let ww = intersection_power(p, omega, 2, omega)?;
            let bb = intersection_power(p, b, 2, omega)?;
            let wb = intersection_number(p, &[omega, b])?;
            (ww - bb, 2.0 * wb)
        }
        _ => {
            let www = intersection_power(p, omega, 3, omega)?;
            let bbw = intersection_number(p, &[b, b, omega])?;
            let bww = intersection_number(p, &[b, omega, omega])?;
            let bbb = intersection_power(p, b, 3, b)?;
            (www - 3.0 * bbw, 3.0 * bww - bbb)
        }
    };
    let norm = (v1 * v1 + v2 * v2).sqrt();
    if norm < 1e-14 {
        return Err(ClassError::ZeroAngleVector);
    }
    let theta_hat = v2.atan2(v1);
    let vol_n = intersection_power(p, omega, n, omega)?;
    let c1 = ToricClass::anticanonical(p);
    let c1w = intersection_power(p, omega, n - 1, &c1)?;
    let s_hat = 0.5 * n as f64 * c1w / vol_n;
    let zb = intersection_power(p, omega, n - 1, b)?;
    let z = n as f64 * zb / vol_n;
    let r_hat = norm / vol_n;
    let c = s_hat - gamma_abs * r_hat;
    Ok(AngleData { v1, v2, theta_hat, s_hat, z, r_hat, c, gamma_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{standard_simplex, unit_square};

    fn square_omega() -> (DelzantPolytope, ToricClass) {
        let p = unit_square();
        let w = ToricClass::of_polytope(&p);
        (p, w)
    }

    #[test]
    fn square_intersections() {
        let (p, w) = square_omega();
        let c1 = ToricClass::anticanonical(&p);
        assert!((intersection_number(&p, &[&w, &w]).unwrap() - 2.0).abs() < 1e-9);
        // Oracle: (H₁+H₂)·(2H₁+2H₂) = 4 in the Picard basis.
        assert!((intersection_number(&p, &[&c1, &w]).unwrap() - 4.0).abs() < 1e-9);
        // (2H₁+2H₂)² = 8.
        assert!((intersection_number(&p, &[&c1, &c1]).unwrap() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn angle_for_proportional_bfield() {
        let (p, w) = square_omega();
        for &s in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let b = w.scaled(s);
            let ad = invariants_bundle(&p, &w, &b, 0.0).unwrap();
            assert!(
                (ad.theta_hat - 2.0 * s.atan()).abs() < 1e-13,
                "s={s}: {} vs {}",
                ad.theta_hat,
                2.0 * s.atan()
            );
        }
        // B = ω: θ̂ = π/2, v₁ = 0.
        let ad = invariants_bundle(&p, &w, &w, 0.0).unwrap();
        assert!(ad.v1.abs() < 1e-12);
        assert!((ad.theta_hat - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
        // z = n for B = ω.
        assert!((ad.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn s_hat_matches_abreu_constant() {
        let (p, w) = square_omega();
        let ad = invariants_bundle(&p, &w, &w.scaled(0.5), 0.0).unwrap();
        // A₀ = 4ŝ must equal vol_σ/vol_μ = 8 for the square.
        assert!((4.0 * ad.s_hat - 8.0).abs() < 1e-10, "{}", ad.s_hat);
        let ps = standard_simplex();
        let ws = ToricClass::of_polytope(&ps);
        let ad = invariants_bundle(&ps, &ws, &ws.scaled(0.3), 0.0).unwrap();
        assert!((4.0 * ad.s_hat - 12.0).abs() < 1e-10, "{}", ad.s_hat);
    }

    #[test]
    fn affine_shift_invariance() {
        let (p, w) = square_omega();
        let b = ToricClass::new(vec![0.2, -0.1, 0.4, 0.3]);
        let ad = invariants_bundle(&p, &w, &b, 0.7).unwrap();
        let b2 = b.translated(&p, &[0.13, -0.29]);
        let w2 = w.translated(&p, &[-0.05, 0.11]);
        let ad2 = invariants_bundle(&p, &w2, &b2, 0.7).unwrap();
        for (x, y) in [
            (ad.theta_hat, ad2.theta_hat),
            (ad.s_hat, ad2.s_hat),
            (ad.z, ad2.z),
            (ad.r_hat, ad2.r_hat),
            (ad.c, ad2.c),
        ] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn scaling_law_large_volume() {
        let (p, w) = square_omega();
        let b = ToricClass::new(vec![0.1, 0.2, 0.6, 0.4]);
        let base = invariants_bundle(&p, &w, &b, 0.0).unwrap();
        for &k in &[10.0, 100.0] {
            let ad = invariants_bundle(&p, &w.scaled(k), &b, 0.0).unwrap();
            assert!(ad.theta_hat.abs() < 2.0 * base.theta_hat.abs() / k);
            assert!((ad.z - base.z / k).abs() < 1e-10 / k, "z(k)={} z/k={}", ad.z, base.z / k);
        }
    }

    #[test]
    fn trig_identity_cohomological() {
        // cosθ̂ Im[e^{−iθ̂}ζ] + sinθ̂ Re[e^{−iθ̂}ζ] = Im ζ for ζ = ∫(ω+iB)²,
        // with Im ζ = 2I(ω,B) = ∫Λ_ω B ω² at the cohomological level.
        // In particular Im[e^{−iθ̂}ζ] = 0 (the reality condition).
        let (p, w) = square_omega();
        let b = ToricClass::new(vec![0.3, 0.1, 0.5, 0.2]);
        let ad = invariants_bundle(&p, &w, &b, 0.0).unwrap();
        let (c, s) = (ad.theta_hat.cos(), ad.theta_hat.sin());
        let twisted_im = ad.v2 * c - ad.v1 * s;
        let twisted_re = ad.v1 * c + ad.v2 * s;
        assert!(twisted_im.abs() < 1e-10, "reality condition: {twisted_im}");
        let lhs = c * twisted_im + s * twisted_re;
        let im_zeta = 2.0 * intersection_number(&p, &[&w, &b]).unwrap();
        assert!((lhs - im_zeta).abs() < 1e-10, "{lhs} vs {im_zeta}");
    }

    #[test]
    fn threefold_angle_triple() {
        let p = crate::polytope::unit_cube();
        let w = ToricClass::of_polytope(&p);
        for &s in &[0.2, 0.5, 0.8] {
            let b = w.scaled(s);
            let ad = invariants_bundle(&p, &w, &b, 0.0).unwrap();
            // Oracle: expand (1+is)³; angle = 3 arctan s.
            assert!(
                (ad.theta_hat - 3.0 * s.atan()).abs() < 1e-12,
                "{} vs {}",
                ad.theta_hat,
                3.0 * s.atan()
            );
        }
    }

    #[test]
    fn not_kahler_detected() {
        let (p, w) = square_omega();
        // Negative area class.
        let bad = w.scaled(-1.0);
        assert!(matches!(
            invariants_bundle(&p, &bad, &w, 0.0),
            Err(ClassError::NotKahler)
        ));
    }
}
