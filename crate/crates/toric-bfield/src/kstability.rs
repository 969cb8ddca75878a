//! Toric uniform K-stability machinery: the stability functional
//! `L_A(f) = ∫_∂P f dσ − ∫_P A f dμ`, LP estimation of the stability
//! constant λ over piecewise-linear convex test functions, the Futaki
//! invariant with B-field, and the admissible coupling bounds.

use serde::Serialize;
use thiserror::Error;

use crate::linprog::{LpError, StandardLp};
use crate::polytope::{DelzantPolytope, QuadratureScheme};

#[derive(Debug, Error)]
pub enum KstabError {
    #[error("Gram system singular (degenerate polytope?)")]
    SingularGram,
    #[error("classical Futaki obstruction nonzero: {0:?}")]
    FutakiNonzero(Vec<f64>),
    #[error("LP unbounded: instability direction")]
    LpUnbounded,
    #[error("λ = {0} outside (0, 1)")]
    InvalidLambda(f64),
    #[error("degenerate denominator: R − inf Ã = {0:.3e}")]
    DegenerateDenominator(f64),
    #[error("lp solve failed: {0}")]
    Lp(#[from] LpError),
}

/// The affine datum A(ω) = A₀ + α(r − Ã) with Ã solved so that L_A kills
/// affine functions.
#[derive(Debug, Clone, Serialize)]
pub struct AFunction {
    pub a0: f64,
    pub alpha: f64,
    /// Ã coefficients: constant then linear parts.
    pub tilde_a: Vec<f64>,
}

impl AFunction {
    pub fn eval(&self, y: &[f64], r: f64) -> f64 {
        let mut tilde = self.tilde_a[0];
        for (i, yi) in y.iter().enumerate() {
            tilde += self.tilde_a[1 + i] * yi;
        }
        self.a0 + self.alpha * (r - tilde)
    }

    pub fn inf_tilde_a(&self, p: &DelzantPolytope) -> f64 {
        p.vertices
            .iter()
            .map(|v| {
                let mut t = self.tilde_a[0];
                for (i, vi) in v.iter().enumerate() {
                    t += self.tilde_a[1 + i] * vi;
                }
                t
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Affine moments of dμ against {1, y¹, …, yⁿ}: the Gram matrix of the
/// projection. Constant across the continuity path.
pub fn affine_gram(p: &DelzantPolytope, scheme: &QuadratureScheme) -> Vec<Vec<f64>> {
    let n = p.dim;
    let basis = |k: usize, y: &[f64]| if k == 0 { 1.0 } else { y[k - 1] };
    let mut gram = vec![vec![0.0; n + 1]; n + 1];
    for (j, row) in gram.iter_mut().enumerate() {
        for (k, entry) in row.iter_mut().enumerate() {
            *entry = scheme.integrate_interior(|y| basis(j, y) * basis(k, y));
        }
    }
    gram
}

pub(crate) fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in 0..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Build A(ω) from the radius field: Ã is the affine function making
/// `L_A(f) = 0` for every affine f.
pub fn a_function(
    p: &DelzantPolytope,
    scheme: &QuadratureScheme,
    radius_at: &dyn Fn(&[f64]) -> f64,
    gamma_abs: f64,
    a0: f64,
) -> Result<AFunction, KstabError> {
    let n = p.dim;
    let alpha = 4.0 * gamma_abs;
    if alpha == 0.0 {
        return Ok(AFunction { a0, alpha, tilde_a: vec![0.0; n + 1] });
    }
    let basis = |k: usize, y: &[f64]| if k == 0 { 1.0 } else { y[k - 1] };
    let gram = affine_gram(p, scheme);
    let mut rhs = vec![0.0; n + 1];
    for (k, r) in rhs.iter_mut().enumerate() {
        let boundary = scheme.integrate_boundary(|y| basis(k, y));
        let interior =
            scheme.integrate_interior(|y| basis(k, y) * (a0 + alpha * radius_at(y)));
        *r = (interior - boundary) / alpha;
    }
    let tilde_a = solve_small(gram, rhs).ok_or(KstabError::SingularGram)?;
    Ok(AFunction { a0, alpha, tilde_a })
}

/// Piecewise-linear test function on a simplicial crease mesh.
#[derive(Debug, Clone, Serialize)]
pub struct PlFunction {
    pub vertices: Vec<Vec<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub lambda_estimate: Option<f64>,
    pub feasible: bool,
    pub futaki_affine: Vec<f64>,
    pub mesh_level: usize,
    pub minimizer: Option<PlFunction>,
    /// |LP objective − L_A(minimizer)|, the certification defect.
    pub certification_defect: f64,
}

/// Dyadic simplicial mesh of P: the barycenter fan refined `level` times by
/// edge-midpoint subdivision.
pub fn crease_mesh(p: &DelzantPolytope, level: usize) -> (Vec<Vec<f64>>, Vec<[usize; 3]>) {
    assert_eq!(p.dim, 2, "crease meshes implemented for surfaces");
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let add_vertex = |vs: &mut Vec<Vec<f64>>, y: Vec<f64>| -> usize {
        for (i, v) in vs.iter().enumerate() {
            if (v[0] - y[0]).abs() + (v[1] - y[1]).abs() < 1e-12 {
                return i;
            }
        }
        vs.push(y);
        vs.len() - 1
    };
    for tri in p.triangulate() {
        let a = add_vertex(&mut vertices, tri[0].clone());
        let b = add_vertex(&mut vertices, tri[1].clone());
        let c = add_vertex(&mut vertices, tri[2].clone());
        triangles.push([a, b, c]);
    }
    for _ in 0..level {
        let mut new_tris = Vec::with_capacity(4 * triangles.len());
        for t in &triangles {
            let mid = |i: usize, j: usize, vs: &mut Vec<Vec<f64>>| -> usize {
                let y = vec![
                    0.5 * (vs[i][0] + vs[j][0]),
                    0.5 * (vs[i][1] + vs[j][1]),
                ];
                add_vertex(vs, y)
            };
            let ab = mid(t[0], t[1], &mut vertices);
            let bc = mid(t[1], t[2], &mut vertices);
            let ca = mid(t[2], t[0], &mut vertices);
            new_tris.push([t[0], ab, ca]);
            new_tris.push([ab, t[1], bc]);
            new_tris.push([ca, bc, t[2]]);
            new_tris.push([ab, bc, ca]);
        }
        triangles = new_tris;
    }
    (vertices, triangles)
}

struct MeshOperators {
    /// Load vector: ∫ A f dμ = Σ load_a[v] f_v.
    load_a: Vec<f64>,
    /// Boundary vector: ∫_∂P f dσ = Σ load_sigma[v] f_v.
    load_sigma: Vec<f64>,
    /// Hinge rows: convexity across interior edges as Σ coef·f_v ≥ 0.
    hinges: Vec<Vec<(usize, f64)>>,
    base_vertex: usize,
}

fn mesh_operators(
    p: &DelzantPolytope,
    vertices: &[Vec<f64>],
    triangles: &[[usize; 3]],
    a_at: &dyn Fn(&[f64]) -> f64,
) -> MeshOperators {
    use std::collections::HashMap;
    let nv = vertices.len();
    let mut load_a = vec![0.0; nv];
    // Degree-4 triangle rule by subdividing with the degree-2 midpoint rule.
    for t in triangles {
        let (a, b, c) = (&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
        let area = 0.5
            * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        // Midpoint rule (degree 2): nodes at edge midpoints, weight area/3,
        // barycentric hat values 1/2 on the adjacent corners.
        let mids = [
            ([0.5, 0.5, 0.0], [t[0], t[1]]),
            ([0.0, 0.5, 0.5], [t[1], t[2]]),
            ([0.5, 0.0, 0.5], [t[0], t[2]]),
        ];
        for (bary, corners) in mids {
            let y = [
                bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
                bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
            ];
            let aval = a_at(&y);
            for v in corners {
                load_a[v] += area / 3.0 * aval * 0.5;
            }
        }
    }
    // Boundary load: PL functions integrate exactly by the trapezoid rule on
    // boundary edges of the mesh.
    let mut load_sigma = vec![0.0; nv];
    let mut edge_count: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        for (i, j) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (i.min(j), i.max(j));
            edge_count.entry(key).or_default().push(ti);
        }
    }
    let mut boundary_edges: Vec<(usize, usize)> = edge_count
        .iter()
        .filter(|(_, tris)| tris.len() == 1)
        .map(|(&e, _)| e)
        .collect();
    boundary_edges.sort();
    for &(i, j) in &boundary_edges {
        // Density of the facet this edge lies in.
        let mid = [
            0.5 * (vertices[i][0] + vertices[j][0]),
            0.5 * (vertices[i][1] + vertices[j][1]),
        ];
        let mut density = 0.0;
        for k in 0..p.nfacets() {
            if p.ell(k, &mid).abs() < 1e-9 {
                density = p.facet_sigma_density[k];
                break;
            }
        }
        let len = ((vertices[i][0] - vertices[j][0]).powi(2)
            + (vertices[i][1] - vertices[j][1]).powi(2))
        .sqrt();
        load_sigma[i] += 0.5 * density * len;
        load_sigma[j] += 0.5 * density * len;
    }
    // Hinges: for each interior edge, the opposite vertex of one triangle
    // expressed affinely in the other triangle's vertices.
    let mut hinges = Vec::new();
    let mut sorted_edges: Vec<(&(usize, usize), &Vec<usize>)> = edge_count
        .iter()
        .filter(|(_, tris)| tris.len() == 2)
        .collect();
    sorted_edges.sort_by_key(|(e, _)| **e);
    for (&(i, j), tris) in sorted_edges {
        let opp = |ti: usize| -> usize {
            *triangles[ti].iter().find(|&&v| v != i && v != j).unwrap()
        };
        let (c, d) = (opp(tris[0]), opp(tris[1]));
        // d = μ_i i + μ_j j + μ_c c (affine): convexity ⟺ f_d ≥ μ·f.
        let (vi, vj, vc, vd) = (&vertices[i], &vertices[j], &vertices[c], &vertices[d]);
        let m = vec![
            vec![vi[0], vj[0], vc[0]],
            vec![vi[1], vj[1], vc[1]],
            vec![1.0, 1.0, 1.0],
        ];
        let rhs = vec![vd[0], vd[1], 1.0];
        if let Some(mu) = solve_small(m, rhs) {
            hinges.push(vec![
                (d, 1.0),
                (i, -mu[0]),
                (j, -mu[1]),
                (c, -mu[2]),
            ]);
        }
    }
    // Base vertex: nearest to the barycenter.
    let bary = p.barycenter();
    let base_vertex = (0..nv)
        .min_by(|&a, &b| {
            let da = (vertices[a][0] - bary[0]).powi(2) + (vertices[a][1] - bary[1]).powi(2);
            let db = (vertices[b][0] - bary[0]).powi(2) + (vertices[b][1] - bary[1]).powi(2);
            da.total_cmp(&db)
        })
        .unwrap();
    MeshOperators { load_a, load_sigma, hinges, base_vertex }
}

/// Futaki vector of the datum A: [L_A(1), L_A(y¹), …] with the exact
/// integration-by-parts form for the scalar part.
pub fn futaki_vector(
    p: &DelzantPolytope,
    scheme: &QuadratureScheme,
    a_at: &dyn Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let n = p.dim;
    let basis = |k: usize, y: &[f64]| if k == 0 { 1.0 } else { y[k - 1] };
    (0..=n)
        .map(|k| {
            scheme.integrate_boundary(|y| basis(k, y))
                - scheme.integrate_interior(|y| basis(k, y) * a_at(y))
        })
        .collect()
}

/// Futaki invariant with B-field on the affine basis:
/// `𝓕(f) = ∫_P f (s − |γ| r − c) dμ` with c fixed by 𝓕(1) = 0 and the scalar
/// part reduced by the exact identity ∫ f s dμ = ¼ ∫_∂P f dσ (valid for every
/// potential, which is what makes the invariant representative-independent).
pub fn futaki_bfield(
    p: &DelzantPolytope,
    scheme: &QuadratureScheme,
    radius_at: &dyn Fn(&[f64]) -> f64,
    gamma_abs: f64,
) -> Vec<f64> {
    let n = p.dim;
    let basis = |k: usize, y: &[f64]| if k == 0 { 1.0 } else { y[k - 1] };
    let vol = scheme.vol_mu();
    let int_r = scheme.integrate_interior(|y| radius_at(y));
    let c = (0.25 * scheme.vol_sigma() - gamma_abs * int_r) / vol;
    (0..=n)
        .map(|k| {
            0.25 * scheme.integrate_boundary(|y| basis(k, y))
                - gamma_abs * scheme.integrate_interior(|y| basis(k, y) * radius_at(y))
                - c * scheme.integrate_interior(|y| basis(k, y))
        })
        .collect()
}

/// Split 𝓕 = 𝓕_{[ω]} + |γ| 𝓕′ by evaluating at |γ| ∈ {0, 1}; 𝓕′ does not
/// depend on |γ| because the dHYM radius is coupling-independent.
pub fn futaki_decomposition(
    p: &DelzantPolytope,
    scheme: &QuadratureScheme,
    radius_at: &dyn Fn(&[f64]) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let f0 = futaki_bfield(p, scheme, radius_at, 0.0);
    let f1 = futaki_bfield(p, scheme, radius_at, 1.0);
    let fprime = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
    (f0, fprime)
}

/// `lambda_estimate`: minimize L_A over normalized PL convex functions with
/// ∫_∂P f dσ = 1 on the level-`mesh_level` crease mesh. The optimum is an
/// upper bound for the stability constant λ and is monotone nonincreasing in
/// the level (the meshes are nested).
pub fn lambda_estimate(
    p: &DelzantPolytope,
    scheme: &QuadratureScheme,
    a_at: &dyn Fn(&[f64]) -> f64,
    mesh_level: usize,
) -> Result<StabilityReport, KstabError> {
    let futaki = futaki_vector(p, scheme, a_at);
    let fnorm = futaki.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
    if fnorm > 1e-8 {
        return Ok(StabilityReport {
            lambda_estimate: None,
            feasible: false,
            futaki_affine: futaki,
            mesh_level,
            minimizer: None,
            certification_defect: 0.0,
        });
    }
    let (vertices, triangles) = crease_mesh(p, mesh_level);
    let ops = mesh_operators(p, &vertices, &triangles, a_at);
    let nv = vertices.len();

    // Standard form: variables f ≥ 0 plus hinge surplus variables. The
    // surplus columns make f = 0 a feasible slack basis for the hinge rows,
    // so phase 1 only has to handle the two normalization rows.
    let nh = ops.hinges.len();
    let ncols = nv + nh;
    let mut rows = Vec::with_capacity(nh + 2);
    let mut rhs = Vec::with_capacity(nh + 2);
    let mut hints: Vec<Option<usize>> = Vec::with_capacity(nh + 2);
    for (h, hinge) in ops.hinges.iter().enumerate() {
        let mut row = vec![0.0; ncols];
        for &(v, coef) in hinge {
            row[v] -= coef;
        }
        row[nv + h] = 1.0;
        rows.push(row);
        rhs.push(0.0);
        hints.push(Some(nv + h));
    }
    // Normalization rows: ∫∂P f dσ = 1 and f(p₀) = 0.
    let mut row = vec![0.0; ncols];
    row[..nv].copy_from_slice(&ops.load_sigma);
    rows.push(row);
    rhs.push(1.0);
    hints.push(None);
    let mut row = vec![0.0; ncols];
    row[ops.base_vertex] = 1.0;
    rows.push(row);
    rhs.push(0.0);
    hints.push(None);

    let mut cost = vec![0.0; ncols];
    for v in 0..nv {
        cost[v] = ops.load_sigma[v] - ops.load_a[v];
    }
    let mut lp = StandardLp::new(ncols, rows, rhs, cost);
    lp.basis_hint = hints;
    let sol = match lp.solve() {
        Ok(s) => s,
        Err(LpError::Unbounded) => return Err(KstabError::LpUnbounded),
        Err(e) => return Err(KstabError::Lp(e)),
    };
    let values: Vec<f64> = sol.x[..nv].to_vec();
    // Certification: recompute L_A on the minimizer.
    let l_direct: f64 = (0..nv)
        .map(|v| (ops.load_sigma[v] - ops.load_a[v]) * values[v])
        .sum();
    let defect = (l_direct - sol.objective).abs();
    Ok(StabilityReport {
        lambda_estimate: Some(sol.objective),
        feasible: true,
        futaki_affine: futaki,
        mesh_level,
        minimizer: Some(PlFunction { vertices, triangles, values }),
        certification_defect: defect,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingBounds {
    pub alpha_max: f64,
    pub gamma_max: f64,
    /// λ′ = λ + 4α(R − inf Ã)(λ − 1)/A₀ for the supplied α.
    pub lambda_prime: Option<f64>,
}

/// Admissible coupling ranges: α < A₀ λ / (4(1−λ)(R − inf Ã)) and
/// |γ| < ŝ λ / (2(1−λ)) · ε⁻¹.
pub fn coupling_bounds(
    a0: f64,
    lambda: f64,
    r_bound: f64,
    inf_tilde_a: f64,
    s_hat: f64,
    eps: f64,
    alpha: Option<f64>,
) -> Result<CouplingBounds, KstabError> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(KstabError::InvalidLambda(lambda));
    }
    let denom = r_bound - inf_tilde_a;
    if denom <= 1e-14 {
        return Err(KstabError::DegenerateDenominator(denom));
    }
    let alpha_max = a0 * lambda / (4.0 * (1.0 - lambda) * denom);
    let gamma_max = s_hat * lambda / (2.0 * (1.0 - lambda)) / eps;
    let lambda_prime = alpha.map(|a| lambda + 4.0 * a * denom * (lambda - 1.0) / a0);
    Ok(CouplingBounds { alpha_max, gamma_max, lambda_prime })
}
