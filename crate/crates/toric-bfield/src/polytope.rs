//! Delzant polytopes in momentum coordinates: facet data `ℓ_k(y) = ⟨y,ν_k⟩ − c_k ≥ 0`,
//! vertex enumeration, the measures dμ (Lebesgue) and dσ (boundary), quadrature
//! schemes, and mixed volumes of offset vectors over a common normal fan.
//!
//! The dσ convention: on the facet with primitive inward normal ν_k the measure
//! is `2/|ν_k|₂` times Euclidean (n−1)-measure, i.e. twice the lattice measure.
//! This is the unique constant for which the Guillemin potential satisfies the
//! integration-by-parts identity `∫_∂P f dσ = ∫_P (−u^{ij}_{,ij}) f dμ` for
//! affine f; the identity is pinned by an acceptance test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linprog::{solve_free_min, LpError};

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("facet {0} has a non-primitive normal {1:?}")]
    NotPrimitive(usize, Vec<i64>),
    #[error("not Delzant: vertex {vertex:?} has facet normals with |det| = {det}")]
    NotDelzant { vertex: Vec<f64>, det: f64 },
    #[error("not Delzant: vertex {vertex:?} lies on {count} facets (expected {dim})")]
    NotSimple { vertex: Vec<f64>, count: usize, dim: usize },
    #[error("offsets do not bound a polytope")]
    Unbounded,
    #[error("polytope has empty interior")]
    EmptyInterior,
    #[error("dimension {0} not supported (expected 1, 2 or 3)")]
    BadDimension(usize),
    #[error("normals and offsets disagree in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("offset vector has {0} entries but the fan has {1} facets")]
    FanMismatch(usize, usize),
    #[error("offset vector admits no nef decomposition over this fan")]
    NoNefDecomposition,
    #[error("lp failure while validating polytope: {0}")]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<i64>,
    pub offset: f64,
}

/// Compact convex Delzant polytope `P = {y : ℓ_k(y) ≥ 0}`.
#[derive(Debug, Clone)]
pub struct DelzantPolytope {
    pub dim: usize,
    pub facets: Vec<Facet>,
    pub vertices: Vec<Vec<f64>>,
    /// For each vertex, the indices of its `dim` active facets.
    pub vertex_facets: Vec<Vec<usize>>,
    /// dσ density per facet, relative to Euclidean (n−1)-measure.
    pub facet_sigma_density: Vec<f64>,
    interior_point: Vec<f64>,
}

/// Density of dσ relative to the lattice measure on each facet.
pub const SIGMA_LATTICE_FACTOR: f64 = 2.0;

const FEAS_TOL: f64 = 1e-9;

impl DelzantPolytope {
    /// `build_polytope`: validate facet data and enumerate vertices.
    pub fn build(normals: Vec<Vec<i64>>, offsets: Vec<f64>) -> Result<Self, PolytopeError> {
        if normals.len() != offsets.len() {
            return Err(PolytopeError::LengthMismatch(normals.len(), offsets.len()));
        }
        if normals.is_empty() {
            return Err(PolytopeError::Unbounded);
        }
        let dim = normals[0].len();
        if !(1..=3).contains(&dim) {
            return Err(PolytopeError::BadDimension(dim));
        }
        for (k, nu) in normals.iter().enumerate() {
            if nu.len() != dim {
                return Err(PolytopeError::BadDimension(nu.len()));
            }
            let g = nu.iter().fold(0i64, |acc, &v| gcd(acc, v.abs()));
            if g != 1 {
                return Err(PolytopeError::NotPrimitive(k, nu.clone()));
            }
        }

        let facets: Vec<Facet> = normals
            .into_iter()
            .zip(offsets)
            .map(|(normal, offset)| Facet { normal, offset })
            .collect();

        // Normals must positively span ℝⁿ, otherwise P contains a line or ray.
        check_bounded(dim, &facets)?;
        let interior_point = chebyshev_center(dim, &facets)?;

        let (vertices, vertex_facets) = enumerate_vertices(dim, &facets)?;
        for (v, act) in vertices.iter().zip(&vertex_facets) {
            if act.len() != dim {
                return Err(PolytopeError::NotSimple {
                    vertex: v.clone(),
                    count: act.len(),
                    dim,
                });
            }
            let det = lattice_det(dim, &facets, act);
            if (det.abs() - 1.0).abs() > 1e-9 {
                return Err(PolytopeError::NotDelzant { vertex: v.clone(), det });
            }
        }

        let facet_sigma_density = facets
            .iter()
            .map(|f| SIGMA_LATTICE_FACTOR / norm2_int(&f.normal))
            .collect();

        Ok(DelzantPolytope {
            dim,
            facets,
            vertices,
            vertex_facets,
            facet_sigma_density,
            interior_point,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PolytopeError> {
        #[derive(Deserialize)]
        struct Spec {
            n: usize,
            facets: Vec<Facet>,
        }
        let spec: Spec = serde_json::from_str(text).map_err(|_| PolytopeError::Unbounded)?;
        let normals = spec.facets.iter().map(|f| f.normal.clone()).collect::<Vec<_>>();
        let offsets = spec.facets.iter().map(|f| f.offset).collect::<Vec<_>>();
        if normals.iter().any(|nu| nu.len() != spec.n) {
            return Err(PolytopeError::BadDimension(spec.n));
        }
        Self::build(normals, offsets)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.dim,
            "facets": self.facets,
            "vertices": self.vertices,
            "vol_mu": self.volume(),
            "vol_sigma": self.vol_sigma(),
            "facet_sigma_density": self.facet_sigma_density,
        })
    }

    pub fn nfacets(&self) -> usize {
        self.facets.len()
    }

    /// ℓ_k(y) = ⟨y, ν_k⟩ − c_k.
    pub fn ell(&self, k: usize, y: &[f64]) -> f64 {
        dot_in(&self.facets[k].normal, y) - self.facets[k].offset
    }

    /// Same with a caller-supplied offset vector over this fan.
    pub fn ell_with_offsets(&self, k: usize, offsets: &[f64], y: &[f64]) -> f64 {
        dot_in(&self.facets[k].normal, y) - offsets[k]
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        (0..self.nfacets()).all(|k| self.ell(k, y) >= -tol)
    }

    /// Euclidean distance to the nearest facet hyperplane (positive inside).
    pub fn boundary_distance(&self, y: &[f64]) -> f64 {
        (0..self.nfacets())
            .map(|k| self.ell(k, y) / norm2_int(&self.facets[k].normal))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior_point
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.facets.iter().map(|f| f.offset).collect()
    }

    /// Lebesgue volume, computed from the divergence theorem: the facet
    /// contribution is `−c_k/|ν_k|` times its Euclidean (n−1)-volume.
    pub fn volume(&self) -> f64 {
        volume_of(self.dim, &self.facets, &self.vertices, &self.vertex_facets)
    }

    /// Euclidean (n−1)-volume of facet k.
    pub fn facet_euclidean_volume(&self, k: usize) -> f64 {
        let pts = self.facet_vertices(k);
        facet_volume(self.dim, &pts)
    }

    /// vol(∂P, dσ) = Σ_k density_k × Euclidean volume of facet k.
    pub fn vol_sigma(&self) -> f64 {
        (0..self.nfacets())
            .map(|k| self.facet_sigma_density[k] * self.facet_euclidean_volume(k))
            .sum()
    }

    pub fn facet_vertices(&self, k: usize) -> Vec<Vec<f64>> {
        self.vertices
            .iter()
            .zip(&self.vertex_facets)
            .filter(|(_, act)| act.contains(&k))
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let scheme = self.quadrature(4);
        let vol: f64 = scheme.interior_weights.iter().sum();
        let mut b = vec![0.0; self.dim];
        for (y, w) in scheme.interior_nodes.iter().zip(&scheme.interior_weights) {
            for i in 0..self.dim {
                b[i] += w * y[i];
            }
        }
        for bi in &mut b {
            *bi /= vol;
        }
        b
    }

    /// Interior + boundary quadrature exact on polynomials of the given order.
    pub fn quadrature(&self, order: usize) -> QuadratureScheme {
        let s = order / 2; // Grundmann–Möller degree 2s+1 ≥ order
        let mut interior_nodes = Vec::new();
        let mut interior_weights = Vec::new();
        for simplex in self.triangulate() {
            gm_rule(&simplex, s, &mut interior_nodes, &mut interior_weights);
        }
        let mut facet_nodes = Vec::new();
        let mut facet_weights = Vec::new();
        for k in 0..self.nfacets() {
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            let density = self.facet_sigma_density[k];
            for sub in self.triangulate_facet(k) {
                let start = weights.len();
                gm_rule_embedded(&sub, s, &mut nodes, &mut weights);
                for w in &mut weights[start..] {
                    *w *= density;
                }
            }
            facet_nodes.push(nodes);
            facet_weights.push(weights);
        }
        let h = self
            .vertices
            .iter()
            .flat_map(|v| v.iter().map(|x| x.abs()))
            .fold(0.0f64, f64::max);
        QuadratureScheme {
            interior_nodes,
            interior_weights,
            facet_nodes,
            facet_weights,
            mesh_scale: h,
        }
    }

    /// Full-dimensional simplices covering P (fan from an interior point).
    pub fn triangulate(&self) -> Vec<Vec<Vec<f64>>> {
        let c = self.interior_point.clone();
        match self.dim {
            1 => {
                let mut xs: Vec<f64> = self.vertices.iter().map(|v| v[0]).collect();
                xs.sort_by(f64::total_cmp);
                vec![vec![vec![xs[0]], vec![xs[xs.len() - 1]]]]
            }
            2 => {
                let mut out = Vec::new();
                for k in 0..self.nfacets() {
                    let pts = self.facet_vertices(k);
                    if pts.len() == 2 {
                        out.push(vec![c.clone(), pts[0].clone(), pts[1].clone()]);
                    }
                }
                out
            }
            3 => {
                let mut out = Vec::new();
                for k in 0..self.nfacets() {
                    let poly = order_polygon(&self.facet_vertices(k));
                    for i in 1..poly.len().saturating_sub(1) {
                        out.push(vec![
                            c.clone(),
                            poly[0].clone(),
                            poly[i].clone(),
                            poly[i + 1].clone(),
                        ]);
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// (n−1)-simplices covering facet k.
    fn triangulate_facet(&self, k: usize) -> Vec<Vec<Vec<f64>>> {
        let pts = self.facet_vertices(k);
        match self.dim {
            1 => vec![vec![pts[0].clone()]],
            2 => {
                if pts.len() == 2 {
                    vec![vec![pts[0].clone(), pts[1].clone()]]
                } else {
                    Vec::new()
                }
            }
            3 => {
                let poly = order_polygon(&pts);
                (1..poly.len().saturating_sub(1))
                    .map(|i| vec![poly[0].clone(), poly[i].clone(), poly[i + 1].clone()])
                    .collect()
            }
            _ => unreachable!(),
        }
    }

    /// Whether an offset vector is ample over this fan: its polytope has the
    /// same simple vertex structure (strict feasibility off the active set).
    pub fn is_ample(&self, offsets: &[f64]) -> Result<bool, PolytopeError> {
        if offsets.len() != self.nfacets() {
            return Err(PolytopeError::FanMismatch(offsets.len(), self.nfacets()));
        }
        let scale = 1.0 + offsets.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for act in &self.vertex_facets {
            let Some(y) = solve_vertex(self.dim, &self.facets, act, Some(offsets)) else {
                return Ok(false);
            };
            for k in 0..self.nfacets() {
                let l = self.ell_with_offsets(k, offsets, &y);
                if act.contains(&k) {
                    if l.abs() > 1e-9 * scale {
                        return Ok(false);
                    }
                } else if l < 1e-9 * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Whether an offset vector is nef over this fan: every vertex basis of P
    /// yields a feasible intersection point for the shifted hyperplanes.
    pub fn is_nef(&self, offsets: &[f64]) -> Result<bool, PolytopeError> {
        if offsets.len() != self.nfacets() {
            return Err(PolytopeError::FanMismatch(offsets.len(), self.nfacets()));
        }
        let scale = 1.0 + offsets.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for act in &self.vertex_facets {
            let y = solve_vertex(self.dim, &self.facets, act, Some(offsets));
            let Some(y) = y else { return Ok(false) };
            for k in 0..self.nfacets() {
                if self.ell_with_offsets(k, offsets, &y) < -1e-9 * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Volume of the (nef) polytope with the given offsets over this fan.
    pub fn volume_of_offsets(&self, offsets: &[f64]) -> Result<f64, PolytopeError> {
        if offsets.len() != self.nfacets() {
            return Err(PolytopeError::FanMismatch(offsets.len(), self.nfacets()));
        }
        let mut verts: Vec<Vec<f64>> = Vec::new();
        let mut vfacets: Vec<Vec<usize>> = Vec::new();
        let scale = 1.0 + offsets.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for act in &self.vertex_facets {
            let Some(y) = solve_vertex(self.dim, &self.facets, act, Some(offsets)) else {
                continue;
            };
            if (0..self.nfacets())
                .all(|k| self.ell_with_offsets(k, offsets, &y) >= -1e-9 * scale)
                && !verts.iter().any(|v| dist(v, &y) < 1e-9 * scale)
            {
                // Active set recomputed: facets may merge for nef offsets.
                let active: Vec<usize> = (0..self.nfacets())
                    .filter(|&k| self.ell_with_offsets(k, offsets, &y).abs() <= 1e-8 * scale)
                    .collect();
                verts.push(y);
                vfacets.push(active);
            }
        }
        if verts.is_empty() {
            return Ok(0.0);
        }
        let shifted: Vec<Facet> = self
            .facets
            .iter()
            .zip(offsets)
            .map(|(f, &o)| Facet { normal: f.normal.clone(), offset: o })
            .collect();
        Ok(volume_of(self.dim, &shifted, &verts, &vfacets))
    }

    /// Symmetric multilinear mixed volume of `dim` offset vectors, normalized
    /// so MV(P,…,P) = vol(P). Non-nef inputs are handled by writing each as a
    /// difference of nef vectors over the same fan and expanding.
    pub fn mixed_volume(&self, offset_vectors: &[Vec<f64>]) -> Result<f64, PolytopeError> {
        let n = self.dim;
        if offset_vectors.len() != n {
            return Err(PolytopeError::FanMismatch(offset_vectors.len(), n));
        }
        for v in offset_vectors {
            if v.len() != self.nfacets() {
                return Err(PolytopeError::FanMismatch(v.len(), self.nfacets()));
            }
        }
        // Nef decomposition b = (b + M c_P) − (M c_P) with c_P ample.
        let base = self.offsets();
        let mut parts: Vec<[(Vec<f64>, f64); 2]> = Vec::new();
        for b in offset_vectors {
            if self.is_nef(b)? {
                parts.push([(b.clone(), 1.0), (vec![0.0; self.nfacets()], 0.0)]);
            } else {
                let mut m = 1.0;
                let mut found = None;
                for _ in 0..60 {
                    let shifted: Vec<f64> =
                        b.iter().zip(&base).map(|(bi, ci)| bi + m * ci).collect();
                    if self.is_nef(&shifted)? {
                        found = Some((shifted, m));
                        break;
                    }
                    m *= 2.0;
                }
                let Some((shifted, m)) = found else {
                    return Err(PolytopeError::NoNefDecomposition);
                };
                let neg: Vec<f64> = base.iter().map(|ci| m * ci).collect();
                parts.push([(shifted, 1.0), (neg, -1.0)]);
            }
        }
        // Multilinear expansion over the signed nef parts.
        let mut total = 0.0;
        for mask in 0..(1usize << n) {
            let mut sign = 1.0;
            let mut tuple: Vec<&Vec<f64>> = Vec::with_capacity(n);
            let mut skip = false;
            for (i, part) in parts.iter().enumerate() {
                let pick = (mask >> i) & 1;
                let (v, s) = &part[pick];
                if *s == 0.0 {
                    skip = true;
                    break;
                }
                sign *= s;
                tuple.push(v);
            }
            if skip {
                continue;
            }
            total += sign * self.mixed_volume_nef(&tuple)?;
        }
        Ok(total)
    }

    fn mixed_volume_nef(&self, tuple: &[&Vec<f64>]) -> Result<f64, PolytopeError> {
        let n = self.dim;
        let nf = self.nfacets();
        let mut total = 0.0;
        for mask in 1..(1usize << n) {
            let mut sum = vec![0.0; nf];
            let mut count = 0;
            for i in 0..n {
                if (mask >> i) & 1 == 1 {
                    count += 1;
                    for k in 0..nf {
                        sum[k] += tuple[i][k];
                    }
                }
            }
            let sign = if (n - count) % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * self.volume_of_offsets(&sum)?;
        }
        Ok(total / factorial(n))
    }
}

/// Quadrature nodes and weights for dμ on P and dσ on each facet.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    pub interior_nodes: Vec<Vec<f64>>,
    pub interior_weights: Vec<f64>,
    pub facet_nodes: Vec<Vec<Vec<f64>>>,
    pub facet_weights: Vec<Vec<f64>>,
    pub mesh_scale: f64,
}

impl QuadratureScheme {
    pub fn integrate_interior(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.interior_nodes
            .iter()
            .zip(&self.interior_weights)
            .map(|(y, w)| w * f(y))
            .sum()
    }

    pub fn integrate_boundary(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut total = 0.0;
        for (nodes, weights) in self.facet_nodes.iter().zip(&self.facet_weights) {
            for (y, w) in nodes.iter().zip(weights) {
                total += w * f(y);
            }
        }
        total
    }

    pub fn vol_mu(&self) -> f64 {
        self.interior_weights.iter().sum()
    }

    pub fn vol_sigma(&self) -> f64 {
        self.facet_weights.iter().flatten().sum()
    }
}

/// `measures`: volumes plus a quadrature scheme of the requested order.
pub fn measures(p: &DelzantPolytope, order: usize) -> (f64, f64, QuadratureScheme) {
    let scheme = p.quadrature(order);
    (p.volume(), p.vol_sigma(), scheme)
}

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn dot_in(nu: &[i64], y: &[f64]) -> f64 {
    nu.iter().zip(y).map(|(&a, &b)| a as f64 * b).sum()
}

fn norm2_int(nu: &[i64]) -> f64 {
    (nu.iter().map(|&a| (a * a) as f64).sum::<f64>()).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_bounded(dim: usize, facets: &[Facet]) -> Result<(), PolytopeError> {
    // Rank of the normal span.
    let mut rows: Vec<Vec<f64>> =
        facets.iter().map(|f| f.normal.iter().map(|&v| v as f64).collect()).collect();
    let mut rank = 0;
    for col in 0..dim {
        if let Some(p) = (rank..rows.len()).max_by(|&a, &b| {
            rows[a][col].abs().partial_cmp(&rows[b][col].abs()).unwrap()
        }) {
            if rows[p][col].abs() < 1e-12 {
                continue;
            }
            rows.swap(rank, p);
            for r in 0..rows.len() {
                if r != rank {
                    let f = rows[r][col] / rows[rank][col];
                    for c in 0..dim {
                        rows[r][c] -= f * rows[rank][c];
                    }
                }
            }
            rank += 1;
        }
    }
    if rank < dim {
        return Err(PolytopeError::Unbounded);
    }
    // Recession direction test: max Σ ⟨ν_k, d⟩ with ⟨ν_k, d⟩ ≥ 0, |d_i| ≤ 1.
    let mut cost = vec![0.0; dim];
    for f in facets {
        for i in 0..dim {
            cost[i] -= f.normal[i] as f64;
        }
    }
    let mut ineq: Vec<(Vec<f64>, f64)> = facets
        .iter()
        .map(|f| (f.normal.iter().map(|&v| v as f64).collect(), 0.0))
        .collect();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        ineq.push((e.clone(), -1.0));
        for x in &mut e {
            *x = -*x;
        }
        ineq.push((e, -1.0));
    }
    match solve_free_min(&cost, &ineq, &[]) {
        Ok(sol) if -sol.objective > 1e-7 => Err(PolytopeError::Unbounded),
        Ok(_) => Ok(()),
        Err(LpError::Unbounded) => Err(PolytopeError::Unbounded),
        Err(e) => Err(PolytopeError::Lp(e)),
    }
}

fn chebyshev_center(dim: usize, facets: &[Facet]) -> Result<Vec<f64>, PolytopeError> {
    // max r s.t. ⟨ν_k, y⟩ − c_k ≥ r |ν_k|; variables (y, r), minimize −r.
    let mut cost = vec![0.0; dim + 1];
    cost[dim] = -1.0;
    let mut ineq = Vec::new();
    for f in facets {
        let mut row: Vec<f64> = f.normal.iter().map(|&v| v as f64).collect();
        row.push(-norm2_int(&f.normal));
        ineq.push((row, f.offset));
    }
    let sol = solve_free_min(&cost, &ineq, &[])?;
    let r = sol.x[dim];
    if r < 1e-9 {
        return Err(PolytopeError::EmptyInterior);
    }
    Ok(sol.x[..dim].to_vec())
}

fn solve_vertex(
    dim: usize,
    facets: &[Facet],
    active: &[usize],
    offsets: Option<&[f64]>,
) -> Option<Vec<f64>> {
    let mut a = vec![vec![0.0; dim + 1]; dim];
    for (r, &k) in active.iter().enumerate() {
        for c in 0..dim {
            a[r][c] = facets[k].normal[c] as f64;
        }
        a[r][dim] = offsets.map_or(facets[k].offset, |o| o[k]);
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..dim {
        let p = (col..dim).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[p][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, p);
        for r in 0..dim {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=dim {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..dim).map(|i| a[i][dim] / a[i][i]).collect())
}

fn enumerate_vertices(
    dim: usize,
    facets: &[Facet],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<usize>>), PolytopeError> {
    let m = facets.len();
    let scale = 1.0 + facets.iter().fold(0.0f64, |a, f| a.max(f.offset.abs()));
    let mut verts: Vec<Vec<f64>> = Vec::new();
    let mut vfacets: Vec<Vec<usize>> = Vec::new();
    let push = |y: Vec<f64>, verts: &mut Vec<Vec<f64>>, vf: &mut Vec<Vec<usize>>| {
        let feasible = (0..m).all(|k| dot_in(&facets[k].normal, &y) - facets[k].offset >= -FEAS_TOL * scale);
        if feasible && !verts.iter().any(|v| dist(v, &y) < 1e-8 * scale) {
            let active: Vec<usize> = (0..m)
                .filter(|&k| (dot_in(&facets[k].normal, &y) - facets[k].offset).abs() <= 1e-7 * scale)
                .collect();
            verts.push(y);
            vf.push(active);
        }
    };
    match dim {
        1 => {
            for k in 0..m {
                if let Some(y) = solve_vertex(dim, facets, &[k], None) {
                    push(y, &mut verts, &mut vfacets);
                }
            }
        }
        2 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    if let Some(y) = solve_vertex(dim, facets, &[i, j], None) {
                        push(y, &mut verts, &mut vfacets);
                    }
                }
            }
        }
        3 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    for k in (j + 1)..m {
                        if let Some(y) = solve_vertex(dim, facets, &[i, j, k], None) {
                            push(y, &mut verts, &mut vfacets);
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    if verts.len() < dim + 1 {
        return Err(PolytopeError::EmptyInterior);
    }
    Ok((verts, vfacets))
}

fn lattice_det(dim: usize, facets: &[Facet], active: &[usize]) -> f64 {
    let g = |r: usize, c: usize| facets[active[r]].normal[c] as f64;
    match dim {
        1 => g(0, 0),
        2 => g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0),
        3 => {
            g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
                - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
                + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
        }
        _ => unreachable!(),
    }
}

fn volume_of(
    dim: usize,
    facets: &[Facet],
    vertices: &[Vec<f64>],
    vertex_facets: &[Vec<usize>],
) -> f64 {
    match dim {
        1 => {
            let xs: Vec<f64> = vertices.iter().map(|v| v[0]).collect();
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().cloned().fold(f64::INFINITY, f64::min)
        }
        _ => {
            let mut vol = 0.0;
            for k in 0..facets.len() {
                let pts: Vec<Vec<f64>> = vertices
                    .iter()
                    .zip(vertex_facets)
                    .filter(|(_, act)| act.contains(&k))
                    .map(|(v, _)| v.clone())
                    .collect();
                let area = facet_volume(dim, &pts);
                vol += -facets[k].offset / norm2_int(&facets[k].normal) * area;
            }
            vol / dim as f64
        }
    }
}

/// Euclidean (n−1)-volume of a facet given its vertices.
fn facet_volume(dim: usize, pts: &[Vec<f64>]) -> f64 {
    match dim {
        1 => 1.0,
        2 => {
            if pts.len() < 2 {
                0.0
            } else {
                // Extremal pair (facet vertices are collinear).
                let mut best = 0.0f64;
                for i in 0..pts.len() {
                    for j in (i + 1)..pts.len() {
                        best = best.max(dist(&pts[i], &pts[j]));
                    }
                }
                best
            }
        }
        3 => {
            if pts.len() < 3 {
                return 0.0;
            }
            let poly = order_polygon(pts);
            let mut area = 0.0;
            for i in 1..poly.len() - 1 {
                area += triangle_area(&poly[0], &poly[i], &poly[i + 1]);
            }
            area
        }
        _ => unreachable!(),
    }
}

fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u: Vec<f64> = (0..3).map(|i| b[i] - a[i]).collect();
    let v: Vec<f64> = (0..3).map(|i| c[i] - a[i]).collect();
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Order coplanar 3D points around their centroid.
fn order_polygon(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if pts.len() <= 3 {
        return pts.to_vec();
    }
    let n = pts.len() as f64;
    let c: Vec<f64> = (0..3).map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / n).collect();
    // Plane basis from the two farthest points.
    let u: Vec<f64> = (0..3).map(|i| pts[0][i] - c[i]).collect();
    let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: Vec<f64> = u.iter().map(|x| x / un).collect();
    // Normal from cross products with any independent spoke.
    let mut w = vec![0.0; 3];
    for p in pts.iter().skip(1) {
        let v: Vec<f64> = (0..3).map(|i| p[i] - c[i]).collect();
        w = vec![
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        if w.iter().map(|x| x * x).sum::<f64>() > 1e-18 {
            break;
        }
    }
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w: Vec<f64> = w.iter().map(|x| x / wn).collect();
    let v = vec![
        w[1] * u[2] - w[2] * u[1],
        w[2] * u[0] - w[0] * u[2],
        w[0] * u[1] - w[1] * u[0],
    ];
    let mut tagged: Vec<(f64, Vec<f64>)> = pts
        .iter()
        .map(|p| {
            let d: Vec<f64> = (0..3).map(|i| p[i] - c[i]).collect();
            let x: f64 = d.iter().zip(&u).map(|(a, b)| a * b).sum();
            let y: f64 = d.iter().zip(&v).map(|(a, b)| a * b).sum();
            (y.atan2(x), p.clone())
        })
        .collect();
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));
    tagged.into_iter().map(|(_, p)| p).collect()
}

// ---------------------------------------------------------------------------
// Grundmann–Möller simplex quadrature (degree 2s+1 in any dimension)
// ---------------------------------------------------------------------------

fn simplex_volume(simplex: &[Vec<f64>]) -> f64 {
    let n = simplex.len() - 1;
    match n {
        0 => 1.0,
        1 => (simplex[1][0] - simplex[0][0]).abs(),
        2 => {
            let a = &simplex[0];
            let b = &simplex[1];
            let c = &simplex[2];
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
        }
        3 => {
            let a = &simplex[0];
            let m: Vec<Vec<f64>> = (1..4)
                .map(|i| (0..3).map(|j| simplex[i][j] - a[j]).collect())
                .collect();
            (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                .abs()
                / 6.0
        }
        _ => unreachable!(),
    }
}

fn gm_compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in gm_compositions(total - first, parts - 1) {
            let mut v = vec![first];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

/// Append a Grundmann–Möller rule (degree 2s+1) for a full-dimensional simplex.
fn gm_rule(simplex: &[Vec<f64>], s: usize, nodes: &mut Vec<Vec<f64>>, weights: &mut Vec<f64>) {
    let n = simplex.len() - 1;
    let vol = simplex_volume(simplex);
    append_gm(simplex, n, vol, s, nodes, weights);
}

/// Same for a simplex embedded in higher dimension (facet pieces); the weight
/// carries its Euclidean measure.
fn gm_rule_embedded(
    simplex: &[Vec<f64>],
    s: usize,
    nodes: &mut Vec<Vec<f64>>,
    weights: &mut Vec<f64>,
) {
    let n = simplex.len() - 1;
    let vol = match n {
        0 => 1.0,
        1 => dist(&simplex[0], &simplex[1]),
        2 => triangle_area(&simplex[0], &simplex[1], &simplex[2]),
        _ => unreachable!(),
    };
    append_gm(simplex, n, vol, s, nodes, weights);
}

fn append_gm(
    simplex: &[Vec<f64>],
    n: usize,
    vol: f64,
    s: usize,
    nodes: &mut Vec<Vec<f64>>,
    weights: &mut Vec<f64>,
) {
    if vol <= 0.0 {
        return;
    }
    if n == 0 {
        nodes.push(simplex[0].clone());
        weights.push(vol);
        return;
    }
    let d = 2 * s + 1;
    let dim_amb = simplex[0].len();
    let mut raw_nodes = Vec::new();
    let mut raw_w = Vec::new();
    for i in 0..=s {
        let denom = (d + n - 2 * i) as f64;
        let mut coef = (-1.0f64).powi(i as i32) * 2f64.powi(-2 * (s as i32)) * denom.powi(d as i32);
        coef /= factorial(i) * factorial(d + n - i);
        for beta in gm_compositions(s - i, n + 1) {
            let mut x = vec![0.0; dim_amb];
            for (j, &bj) in beta.iter().enumerate() {
                let lam = (2 * bj + 1) as f64 / denom;
                for c in 0..dim_amb {
                    x[c] += lam * simplex[j][c];
                }
            }
            raw_nodes.push(x);
            raw_w.push(coef);
        }
    }
    // Normalize so the rule integrates 1 exactly to the simplex volume.
    let total: f64 = raw_w.iter().sum();
    let scale = vol / total;
    for (x, w) in raw_nodes.into_iter().zip(raw_w) {
        nodes.push(x);
        weights.push(w * scale);
    }
}

// ---------------------------------------------------------------------------
// Standard examples
// ---------------------------------------------------------------------------

/// [0,1] ⊂ ℝ, the moment interval of P¹.
pub fn interval() -> DelzantPolytope {
    DelzantPolytope::build(vec![vec![1], vec![-1]], vec![0.0, -1.0]).unwrap()
}

/// Unit square, the moment polytope of P¹×P¹.
pub fn unit_square() -> DelzantPolytope {
    DelzantPolytope::build(
        vec![vec![1, 0], vec![0, 1], vec![-1, 0], vec![0, -1]],
        vec![0.0, 0.0, -1.0, -1.0],
    )
    .unwrap()
}

/// Standard simplex, the moment polytope of P².
pub fn standard_simplex() -> DelzantPolytope {
    DelzantPolytope::build(
        vec![vec![1, 0], vec![0, 1], vec![-1, -1]],
        vec![0.0, 0.0, -1.0],
    )
    .unwrap()
}

/// Unit cube, the moment polytope of P¹×P¹×P¹.
pub fn unit_cube() -> DelzantPolytope {
    DelzantPolytope::build(
        vec![
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
            vec![-1, 0, 0],
            vec![0, -1, 0],
            vec![0, 0, -1],
        ],
        vec![0.0, 0.0, 0.0, -1.0, -1.0, -1.0],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_is_valid() {
        let p = unit_square();
        assert_eq!(p.vertices.len(), 4);
        assert!((p.volume() - 1.0).abs() < 1e-12);
        for k in 0..4 {
            assert!((p.facet_euclidean_volume(k) - 1.0).abs() < 1e-12);
        }
        assert!((p.vol_sigma() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_is_valid() {
        let p = standard_simplex();
        assert_eq!(p.vertices.len(), 3);
        assert!((p.volume() - 0.5).abs() < 1e-12);
        // dσ: legs carry density 2, hypotenuse √2 length with density 2/√2.
        assert!((p.vol_sigma() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_delzant_vertex_rejected() {
        // (0,1) and (-2,-1) meet with determinant 2.
        let r = DelzantPolytope::build(
            vec![vec![1, 0], vec![0, 1], vec![-2, -1]],
            vec![0.0, 0.0, -1.0],
        );
        assert!(matches!(r, Err(PolytopeError::NotDelzant { .. })), "{r:?}");
    }

    #[test]
    fn non_unimodular_triangle_rejected_both_ways() {
        // (0,1) vs (-1,-2) has determinant -1, but the vertex where (1,0)
        // meets (-1,-2) has determinant -2: still not Delzant.
        let r = DelzantPolytope::build(
            vec![vec![1, 0], vec![0, 1], vec![-1, -2]],
            vec![0.0, 0.0, -1.0],
        );
        assert!(matches!(r, Err(PolytopeError::NotDelzant { .. })), "{r:?}");
        let r = DelzantPolytope::build(
            vec![vec![1, 0], vec![0, 1], vec![-2, -1]],
            vec![0.0, 0.0, -1.0],
        );
        assert!(matches!(r, Err(PolytopeError::NotDelzant { .. })), "{r:?}");
    }

    #[test]
    fn hirzebruch_surface_is_delzant() {
        let r = DelzantPolytope::build(
            vec![vec![1, 0], vec![0, 1], vec![-1, -1], vec![0, -1]],
            vec![0.0, 0.0, -2.0, -1.0],
        );
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(r.unwrap().vertices.len(), 4);
    }

    #[test]
    fn unbounded_rejected() {
        let r = DelzantPolytope::build(vec![vec![1, 0], vec![0, 1]], vec![0.0, 0.0]);
        assert!(matches!(r, Err(PolytopeError::Unbounded)));
    }

    #[test]
    fn empty_interior_rejected() {
        let r = DelzantPolytope::build(vec![vec![1], vec![-1]], vec![0.0, -0.0]);
        assert!(matches!(r, Err(PolytopeError::EmptyInterior)));
    }

    #[test]
    fn interval_measures() {
        let p = interval();
        assert!((p.volume() - 1.0).abs() < 1e-14);
        // Two endpoint atoms of mass 2 each.
        assert!((p.vol_sigma() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_exact_on_polynomials() {
        let p = unit_square();
        let q = p.quadrature(6);
        assert!((q.vol_mu() - 1.0).abs() < 1e-10);
        // ∫ x³y² over [0,1]² = 1/12.
        let v = q.integrate_interior(|y| y[0].powi(3) * y[1].powi(2));
        assert!((v - 1.0 / 12.0).abs() < 1e-10, "{v}");
        let s = standard_simplex();
        let qs = s.quadrature(6);
        // ∫_simplex x y = 1/24.
        let v = qs.integrate_interior(|y| y[0] * y[1]);
        assert!((v - 1.0 / 24.0).abs() < 1e-10, "{v}");
        // ∫_simplex x²y³ = 2!3!/(7)! × ... exact: ∫ x^a y^b = a! b! / (a+b+2)!
        let v = qs.integrate_interior(|y| y[0].powi(2) * y[1].powi(3));
        let exact = 2.0 * 6.0 / factorial(7);
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn quadrature_affine_exact_vs_simplex_decomposition() {
        // ∫_P ℓ dμ matches the closed-form simplex decomposition.
        let p = standard_simplex();
        let q = p.quadrature(6);
        // ℓ for facet (−1,−1), offset −1: 1 − x − y; ∫ = 1/6.
        let v = q.integrate_interior(|y| 1.0 - y[0] - y[1]);
        assert!((v - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_quadrature() {
        let p = unit_square();
        let q = p.quadrature(6);
        assert!((q.vol_sigma() - 8.0).abs() < 1e-12);
        // ∫_∂P y₁ dσ: edges y₁=0 (0), y₁=1 (2), two edges ∫0..1 2 y dy = 1 each.
        let v = q.integrate_boundary(|y| y[0]);
        assert!((v - 4.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn cube_volume() {
        let p = unit_cube();
        assert!((p.volume() - 1.0).abs() < 1e-12);
        assert_eq!(p.vertices.len(), 8);
        let q = p.quadrature(4);
        assert!((q.vol_mu() - 1.0).abs() < 1e-10);
        let v = q.integrate_interior(|y| y[0] * y[1] * y[2]);
        assert!((v - 0.125).abs() < 1e-10);
    }

    #[test]
    fn mixed_volume_squares() {
        let p = unit_square();
        // MV(P,P) = vol(P) = 1.
        let mv = p.mixed_volume(&[p.offsets(), p.offsets()]).unwrap();
        assert!((mv - 1.0).abs() < 1e-9, "{mv}");
        // Side-2 square centered: offsets (−0.5,−0.5,−1.5,−1.5) gives [−0.5,1.5]².
        let big = vec![-0.5, -0.5, -1.5, -1.5];
        // Oracle: (vol(P+Q) − vol P − vol Q)/2 = (9−1−4)/2 = 2.
        let mv = p.mixed_volume(&[p.offsets(), big.clone()]).unwrap();
        assert!((mv - 2.0).abs() < 1e-9, "{mv}");
        let volq = p.volume_of_offsets(&big).unwrap();
        assert!((volq - 4.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_volume_cube() {
        let p = unit_cube();
        let mv = p.mixed_volume(&[p.offsets(), p.offsets(), p.offsets()]).unwrap();
        assert!((mv - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_volume_multilinear_extension() {
        // Non-nef input: difference handled by multilinear extension.
        let p = unit_square();
        // b = c_P − twice the class of the first ruling: can go non-nef.
        let b: Vec<f64> = vec![0.0, 0.5, -1.0, -0.5];
        let c = p.offsets();
        // Multilinearity oracle: MV(b, c) = MV(b + c, c) − MV(c, c).
        let sum: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + y).collect();
        let left = p.mixed_volume(&[b.clone(), c.clone()]).unwrap();
        let right = p.mixed_volume(&[sum, c.clone()]).unwrap() - p.mixed_volume(&[c.clone(), c]).unwrap();
        assert!((left - right).abs() < 1e-9, "{left} vs {right}");
    }

    #[test]
    fn minkowski_expansion_property() {
        let p = unit_square();
        let cp = p.offsets();
        let q = vec![0.0, 0.0, -2.0, -0.5]; // rectangle [0,2]×[0,0.5]
        for &t in &[0.5, 1.0, 2.0] {
            let sum: Vec<f64> = cp.iter().zip(&q).map(|(a, b)| a + t * b).collect();
            let vol_sum = p.volume_of_offsets(&sum).unwrap();
            let tq: Vec<f64> = q.iter().map(|x| t * x).collect();
            let mv = p.mixed_volume(&[cp.clone(), tq]).unwrap();
            let vol_q = p.volume_of_offsets(&q).unwrap();
            let expect = p.volume() + 2.0 * mv + t * t * vol_q;
            assert!((vol_sum - expect).abs() < 1e-9, "t={t}: {vol_sum} vs {expect}");
        }
    }

    #[test]
    fn json_roundtrip() {
        let p = unit_square();
        let j = p.to_json().to_string();
        let p2 = DelzantPolytope::from_json(&j).unwrap();
        assert_eq!(p2.vertices.len(), 4);
    }
}
