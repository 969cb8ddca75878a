//! Futaki invariant with B-field: symmetry vanishing, coupling linearity and
//! representative independence after re-solving the dHYM equation.

use std::sync::Arc;

use toric_bfield::classes::ToricClass;
use toric_bfield::dhym::{perturbative_dhym_solve, radius_closure, EigenProfile};
use toric_bfield::kstability::{futaki_bfield, futaki_decomposition};
use toric_bfield::polytope::unit_square;
use toric_bfield::potentials::{endomorphism_field, InvariantForm, SymplecticPotential};

/// Solve the dHYM equation and return the radius values at residual nodes.
fn solve_radius(
    u: &SymplecticPotential<2>,
    eta0: &ToricClass,
    eps: f64,
    delta: f64,
) -> Vec<f64> {
    let metric = u.metric().unwrap();
    let eta_ref = InvariantForm::from_toric_class(&u.grid, eta0);
    let sol = perturbative_dhym_solve(u, &metric, &eta_ref, eps, delta, 1e-11).unwrap();
    let endo = endomorphism_field(u, &metric, &sol.form);
    let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
    toric_bfield::dhym::radius(&profile)
}

#[test]
fn futaki_vanishes_on_symmetric_square() {
    let p = Arc::new(unit_square());
    let u = SymplecticPotential::<2>::guillemin(p.clone(), 48).unwrap();
    let metric = u.metric().unwrap();
    // Symmetric B-class: anticanonical direction.
    let eta0 = ToricClass::anticanonical(&p);
    let eta_ref = InvariantForm::from_toric_class(&u.grid, &eta0);
    let sol = perturbative_dhym_solve(&u, &metric, &eta_ref, 0.05, 0.1, 1e-11).unwrap();
    let endo = endomorphism_field(&u, &metric, &sol.form);
    let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
    let r = radius_closure(&u.grid, &profile);
    let scheme = p.quadrature(8);
    let fut = futaki_bfield(&p, &scheme, &r, 0.7);
    assert!(fut[0].abs() < 1e-12, "𝓕(1) = {} (zero by construction)", fut[0]);
    assert!(fut[1].abs() < 1e-9, "𝓕(y¹) = {}", fut[1]);
    assert!(fut[2].abs() < 1e-9, "𝓕(y²) = {}", fut[2]);
}

#[test]
fn futaki_is_linear_in_gamma() {
    let p = Arc::new(unit_square());
    let u = SymplecticPotential::<2>::guillemin(p.clone(), 40).unwrap();
    let metric = u.metric().unwrap();
    let eta0 = ToricClass::new(vec![1.0, 0.4, 1.0, 0.4]);
    let eta_ref = InvariantForm::from_toric_class(&u.grid, &eta0);
    let sol = perturbative_dhym_solve(&u, &metric, &eta_ref, 0.06, 0.2, 1e-11).unwrap();
    let endo = endomorphism_field(&u, &metric, &sol.form);
    let profile = EigenProfile::from_endo(&u.grid, &metric, &endo);
    let r = radius_closure(&u.grid, &profile);
    let scheme = p.quadrature(8);
    let (f0, fprime) = futaki_decomposition(&p, &scheme, &r);
    for &g in &[0.3, 0.6] {
        let fg = futaki_bfield(&p, &scheme, &r, g);
        for k in 0..3 {
            let line = f0[k] + g * fprime[k];
            assert!(
                (fg[k] - line).abs() < 1e-9,
                "γ = {g}, k = {k}: {} vs {}",
                fg[k],
                line
            );
        }
    }
}

#[test]
fn futaki_representative_independence() {
    let p = Arc::new(unit_square());
    let base = SymplecticPotential::<2>::guillemin(p.clone(), 48).unwrap();
    let eta0 = ToricClass::new(vec![1.0, 0.4, 1.0, 0.4]);
    let scheme = p.quadrature(8);

    let r_a = solve_radius(&base, &eta0, 0.06, 0.2);
    let corr: Vec<f64> = base
        .grid
        .coords
        .iter()
        .map(|y| 0.02 * (2.0 * y[0]).sin() * (3.0 * y[1]).sin())
        .collect();
    let warped = base.with_correction(corr);
    let r_b = solve_radius(&warped, &eta0, 0.06, 0.2);

    let mk_closure = |u: &SymplecticPotential<2>, vals: &[f64]| {
        let grid = u.grid.clone();
        let mut field = vec![0.0; grid.len()];
        for (i, &q) in grid.residual_nodes.iter().enumerate() {
            field[q] = vals[i];
        }
        move |y: &[f64]| {
            toric_bfield::potentials::interp_scalar(&grid, &field, |i| grid.is_residual[i], y)
        }
    };
    let ca = mk_closure(&base, &r_a);
    let cb = mk_closure(&warped, &r_b);
    let gamma = 0.7;
    let fa = futaki_bfield(&p, &scheme, &ca, gamma);
    let fb = futaki_bfield(&p, &scheme, &cb, gamma);
    for k in 0..3 {
        assert!(
            (fa[k] - fb[k]).abs() < 1e-6,
            "k = {k}: {} vs {}",
            fa[k],
            fb[k]
        );
    }
}
