//! Closed-form determinant and symmetric eigenvalues for the 1–3 dimensional
//! matrices used throughout (nalgebra's generic-N impls need typenum bounds
//! that const generics cannot provide).

use nalgebra::SMatrix;

pub fn det<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    match N {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        _ => unreachable!("dimensions 1..=3 only"),
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> [f64; N] {
    let mut out = [0.0; N];
    match N {
        1 => out[0] = m[(0, 0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let dt = det(m);
            let disc = (tr * tr - 4.0 * dt).max(0.0).sqrt();
            out[0] = 0.5 * (tr - disc);
            out[1] = 0.5 * (tr + disc);
        }
        3 => {
            // Analytic symmetric 3×3 spectrum (trigonometric form).
            let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
            let q = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
            if p1 < 1e-300 {
                out[0] = m[(0, 0)];
                out[1] = m[(1, 1)];
                out[2] = m[(2, 2)];
                out.sort_by(f64::total_cmp);
                return out;
            }
            let p2 = (m[(0, 0)] - q).powi(2)
                + (m[(1, 1)] - q).powi(2)
                + (m[(2, 2)] - q).powi(2)
                + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let mut b = *m;
            for i in 0..3 {
                b[(i, i)] -= q;
            }
            b /= p;
            let r = (det(&b) / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let e2 = 3.0 * q - e1 - e3;
            out[0] = e3;
            out[1] = e2;
            out[2] = e1;
        }
        _ => unreachable!("dimensions 1..=3 only"),
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Elementary symmetric functions e₁..e_N of the eigenvalue list.
pub fn elementary_symmetric<const N: usize>(lambda: &[f64; N]) -> [f64; N] {
    let mut e = [0.0; N];
    match N {
        1 => e[0] = lambda[0],
        2 => {
            e[0] = lambda[0] + lambda[1];
            e[1] = lambda[0] * lambda[1];
        }
        3 => {
            e[0] = lambda[0] + lambda[1] + lambda[2];
            e[1] = lambda[0] * lambda[1] + lambda[0] * lambda[2] + lambda[1] * lambda[2];
            e[2] = lambda[0] * lambda[1] * lambda[2];
        }
        _ => unreachable!(),
    }
    e
}
