//! Masked finite-difference grids over a Delzant polytope, banded linear
//! algebra, and a colored finite-difference Jacobian helper.
//!
//! Node sets are nested: residual nodes (where equations are imposed) sit a
//! Chebyshev distance 1 inside the derived set (where metric data is
//! assembled), which sits a distance 1 inside the field set (where unknown
//! grid values live). All stencils on residual and derived nodes are then
//! centered; the singular Guillemin parts of every potential are handled
//! symbolically, so no one-sided stencil is needed in the solver path.

use thiserror::Error;

use crate::polytope::DelzantPolytope;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension {0} does not match polytope dimension {1}")]
    DimensionMismatch(usize, usize),
    #[error("grid too coarse: no residual nodes survive the collar")]
    TooCoarse,
    #[error("banded matrix is singular at column {0}")]
    SingularBand(usize),
}

/// Uniform lattice of spacing `h` intersected with the polytope interior.
#[derive(Debug, Clone)]
pub struct Grid<const N: usize> {
    pub h: f64,
    pub origin: [f64; N],
    pub shape: [usize; N],
    /// Lattice cell -> compact field-node index (usize::MAX when absent).
    lattice: Vec<usize>,
    /// Compact index -> lattice multi-index.
    pub nodes: Vec<[usize; N]>,
    pub coords: Vec<[f64; N]>,
    pub is_derived: Vec<bool>,
    pub is_residual: Vec<bool>,
    pub residual_nodes: Vec<usize>,
    pub derived_nodes: Vec<usize>,
}

impl<const N: usize> Grid<N> {
    /// Build the masked grid with `m` cells across the polytope's bounding box.
    pub fn new(p: &DelzantPolytope, m: usize) -> Result<Self, GridError> {
        if p.dim != N {
            return Err(GridError::DimensionMismatch(N, p.dim));
        }
        let mut lo = [f64::INFINITY; N];
        let mut hi = [f64::NEG_INFINITY; N];
        for v in &p.vertices {
            for i in 0..N {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        let extent = (0..N).map(|i| hi[i] - lo[i]).fold(0.0f64, f64::max);
        let h = extent / m as f64;

        let mut shape = [0usize; N];
        let mut origin = [0.0; N];
        for i in 0..N {
            origin[i] = lo[i];
            shape[i] = ((hi[i] - lo[i]) / h).round() as usize + 1;
        }
        let total: usize = shape.iter().product();

        // Collar margin: residual nodes keep all Chebyshev-2 lattice
        // neighbours strictly inside P.
        let margin = (2.0 * (N as f64).sqrt() + 1.05) * h;

        let coord_of = |idx: &[usize; N]| {
            let mut y = [0.0; N];
            for i in 0..N {
                y[i] = origin[i] + h * idx[i] as f64;
            }
            y
        };

        // First pass: residual nodes.
        let mut residual_lattice = vec![false; total];
        let mut any = false;
        for flat in 0..total {
            let idx = unflatten::<N>(flat, &shape);
            let y = coord_of(&idx);
            if p.boundary_distance(&y) >= margin {
                residual_lattice[flat] = true;
                any = true;
            }
        }
        if !any {
            return Err(GridError::TooCoarse);
        }
        let derived_lattice = dilate::<N>(&residual_lattice, &shape, 1);
        let field_lattice = dilate::<N>(&derived_lattice, &shape, 1);

        let mut lattice = vec![usize::MAX; total];
        let mut nodes = Vec::new();
        let mut coords = Vec::new();
        let mut is_derived = Vec::new();
        let mut is_residual = Vec::new();
        for flat in 0..total {
            if field_lattice[flat] {
                let idx = unflatten::<N>(flat, &shape);
                lattice[flat] = nodes.len();
                nodes.push(idx);
                coords.push(coord_of(&idx));
                is_derived.push(derived_lattice[flat]);
                is_residual.push(residual_lattice[flat]);
            }
        }
        let residual_nodes: Vec<usize> =
            (0..nodes.len()).filter(|&i| is_residual[i]).collect();
        let derived_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| is_derived[i]).collect();
        Ok(Grid {
            h,
            origin,
            shape,
            lattice,
            nodes,
            coords,
            is_derived,
            is_residual,
            residual_nodes,
            derived_nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn coord(&self, i: usize) -> [f64; N] {
        self.coords[i]
    }

    /// Compact index for a flattened lattice cell, if it is a field node.
    pub fn lattice_lookup(&self, flat: usize) -> Option<usize> {
        let c = self.lattice[flat];
        if c == usize::MAX { None } else { Some(c) }
    }

    /// Compact index of the lattice neighbour at `idx + step` (None outside).
    pub fn neighbor(&self, i: usize, step: [i64; N]) -> Option<usize> {
        let mut idx = [0i64; N];
        for a in 0..N {
            idx[a] = self.nodes[i][a] as i64 + step[a];
            if idx[a] < 0 || idx[a] >= self.shape[a] as i64 {
                return None;
            }
        }
        let mut flat = 0usize;
        for a in 0..N {
            flat = flat * self.shape[a] + idx[a] as usize;
        }
        let c = self.lattice[flat];
        if c == usize::MAX { None } else { Some(c) }
    }

    fn nb(&self, i: usize, axis: usize, off: i64) -> usize {
        let mut step = [0i64; N];
        step[axis] = off;
        self.neighbor(i, step)
            .unwrap_or_else(|| panic!("missing stencil neighbour at node {i} axis {axis} off {off}"))
    }

    /// Centered first derivative of a node field along `axis` (valid on the
    /// derived set and anything deeper).
    pub fn d1(&self, f: &[f64], i: usize, axis: usize) -> f64 {
        (f[self.nb(i, axis, 1)] - f[self.nb(i, axis, -1)]) / (2.0 * self.h)
    }

    pub fn d2(&self, f: &[f64], i: usize, axis: usize) -> f64 {
        (f[self.nb(i, axis, 1)] - 2.0 * f[i] + f[self.nb(i, axis, -1)]) / (self.h * self.h)
    }

    pub fn d2_mixed(&self, f: &[f64], i: usize, a: usize, b: usize) -> f64 {
        let mut pp = [0i64; N];
        pp[a] += 1;
        pp[b] += 1;
        let mut pm = [0i64; N];
        pm[a] += 1;
        pm[b] -= 1;
        let mut mp = [0i64; N];
        mp[a] -= 1;
        mp[b] += 1;
        let mut mm = [0i64; N];
        mm[a] -= 1;
        mm[b] -= 1;
        let get = |s: [i64; N]| f[self.neighbor(i, s).expect("mixed stencil neighbour")];
        (get(pp) - get(pm) - get(mp) + get(mm)) / (4.0 * self.h * self.h)
    }

    /// Hessian of a node field (derived set).
    pub fn hessian(&self, f: &[f64], i: usize) -> nalgebra::SMatrix<f64, N, N> {
        let mut m = nalgebra::SMatrix::<f64, N, N>::zeros();
        for a in 0..N {
            m[(a, a)] = self.d2(f, i, a);
            for b in (a + 1)..N {
                let v = self.d2_mixed(f, i, a, b);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    pub fn gradient(&self, f: &[f64], i: usize) -> nalgebra::SVector<f64, N> {
        nalgebra::SVector::<f64, N>::from_fn(|a, _| self.d1(f, i, a))
    }

    /// Quadrature weight for residual-node sums (plain cell volume).
    pub fn cell_weight(&self) -> f64 {
        self.h.powi(N as i32)
    }

    /// Residual node nearest to a point.
    pub fn nearest_residual(&self, y: &[f64]) -> usize {
        *self
            .residual_nodes
            .iter()
            .min_by(|&&a, &&b| {
                let da: f64 = (0..N).map(|i| (self.coords[a][i] - y[i]).powi(2)).sum();
                let db: f64 = (0..N).map(|i| (self.coords[b][i] - y[i]).powi(2)).sum();
                da.total_cmp(&db)
            })
            .expect("nonempty residual set")
    }
}

fn unflatten<const N: usize>(mut flat: usize, shape: &[usize; N]) -> [usize; N] {
    let mut idx = [0usize; N];
    for a in (0..N).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

/// Chebyshev dilation of a lattice mask by `r` cells.
fn dilate<const N: usize>(mask: &[bool], shape: &[usize; N], r: i64) -> Vec<bool> {
    let total = mask.len();
    let mut out = vec![false; total];
    let mut steps: Vec<[i64; N]> = Vec::new();
    let mut cursor = [0i64; N];
    build_steps::<N>(0, r, &mut cursor, &mut steps);
    for flat in 0..total {
        if !mask[flat] {
            continue;
        }
        let idx = unflatten::<N>(flat, shape);
        'step: for s in &steps {
            let mut j = [0i64; N];
            for a in 0..N {
                j[a] = idx[a] as i64 + s[a];
                if j[a] < 0 || j[a] >= shape[a] as i64 {
                    continue 'step;
                }
            }
            let mut f = 0usize;
            for a in 0..N {
                f = f * shape[a] + j[a] as usize;
            }
            out[f] = true;
        }
    }
    out
}

fn build_steps<const N: usize>(
    axis: usize,
    r: i64,
    cursor: &mut [i64; N],
    out: &mut Vec<[i64; N]>,
) {
    if axis == N {
        out.push(*cursor);
        return;
    }
    for v in -r..=r {
        cursor[axis] = v;
        build_steps::<N>(axis + 1, r, cursor, out);
    }
}

// ---------------------------------------------------------------------------
// Banded LU (LAPACK-style storage, partial pivoting)
// ---------------------------------------------------------------------------

pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// Column-major band storage with kl extra super-diagonals for fill-in:
    /// A(i,j) lives at data[j * ld + (kl + ku + i - j)].
    data: Vec<f64>,
    ld: usize,
}

/// Unfactored copy of a band matrix, for residual evaluation.
pub struct RawBand {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    ld: usize,
}

impl RawBand {
    /// b ← b − A x.
    pub fn mul_sub(&self, x: &[f64], b: &mut [f64]) {
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let imin = j.saturating_sub(self.ku);
            let imax = (j + self.kl).min(self.n - 1);
            for i in imin..=imax {
                b[i] -= self.data[j * self.ld + (self.kl + self.ku + i - j)] * xj;
            }
        }
    }
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, data: vec![0.0; ld * n], ld }
    }

    pub fn clone_data(&self) -> RawBand {
        RawBand { n: self.n, kl: self.kl, ku: self.ku, data: self.data.clone(), ld: self.ld }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            j as i64 - i as i64 <= self.ku as i64 && i as i64 - j as i64 <= self.kl as i64,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        self.data[j * self.ld + (self.kl + self.ku + i - j)] += v;
    }

    pub fn clear_row(&mut self, i: usize) {
        let jmin = i.saturating_sub(self.kl);
        let jmax = (i + self.ku).min(self.n - 1);
        for j in jmin..=jmax {
            self.data[j * self.ld + (self.kl + self.ku + i - j)] = 0.0;
        }
    }

    /// In-place LU with partial pivoting. Returns the pivot sequence.
    pub fn lu_factor(&mut self) -> Result<Vec<usize>, GridError> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let ld = self.ld;
        let kv = kl + ku; // row of the diagonal inside a column
        let mut piv = vec![0usize; n];
        for j in 0..n {
            // Pivot among rows j..j+kl.
            let reach = kl.min(n - 1 - j);
            let mut p = 0usize;
            let mut best = 0.0f64;
            for r in 0..=reach {
                let v = self.data[j * ld + kv + r].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-300 {
                return Err(GridError::SingularBand(j));
            }
            piv[j] = j + p;
            // Swap rows j and j+p across the active columns.
            if p > 0 {
                let jmax = (j + kv).min(n - 1);
                for c in j..=jmax {
                    let a = c * ld + kv + j - c;
                    let b = c * ld + kv + j + p - c;
                    self.data.swap(a, b);
                }
            }
            // Eliminate.
            let diag = self.data[j * ld + kv];
            for r in 1..=reach {
                let m = self.data[j * ld + kv + r] / diag;
                self.data[j * ld + kv + r] = m;
                if m != 0.0 {
                    let cmax = (j + kv).min(n - 1);
                    for c in (j + 1)..=cmax {
                        let src = c * ld + kv + j - c;
                        let dst = src + r;
                        let v = self.data[src];
                        if v != 0.0 {
                            self.data[dst] -= m * v;
                        }
                    }
                }
            }
        }
        Ok(piv)
    }

    /// Solve A x = b after `lu_factor`; b is overwritten with x.
    pub fn solve(&self, piv: &[usize], b: &mut [f64]) {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let ld = self.ld;
        // Forward: apply L and pivots.
        for j in 0..n {
            let p = piv[j];
            if p != j {
                b.swap(j, p);
            }
            let reach = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=reach {
                    b[j + r] -= self.data[j * ld + kv + r] * bj;
                }
            }
        }
        // Back substitution with U.
        for j in (0..n).rev() {
            let mut sum = b[j];
            let cmax = (j + kv).min(n - 1);
            for c in (j + 1)..=cmax {
                sum -= self.data[c * ld + kv + j - c] * b[c];
            }
            b[j] = sum / self.data[j * ld + kv];
        }
    }
}

// ---------------------------------------------------------------------------
// Bordered banded systems
// ---------------------------------------------------------------------------

/// Banded block plus a few dense border rows/columns, solved by block
/// elimination: the band must be nonsingular after gauge-row surgery.
pub struct BorderedSystem {
    pub band: BandMatrix,
    /// Dense border columns (extra unknowns), each of length band.n.
    pub cols: Vec<Vec<f64>>,
    /// Dense border rows over the banded unknowns.
    pub rows: Vec<Vec<f64>>,
    /// Border rows × border columns corner block.
    pub corner: Vec<Vec<f64>>,
}

impl BorderedSystem {
    /// Solve for (x, z): band·x + cols·z = b, rows·x + corner·z = c, with one
    /// round of iterative refinement against the unfactored data.
    pub fn solve(mut self, b: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GridError> {
        let n = self.band.n;
        let nb = self.cols.len();
        assert_eq!(self.rows.len(), nb);
        let raw = self.band.clone_data();
        let piv = self.band.lu_factor()?;
        let solve_once = |rb: &[f64], rc: &[f64]| -> Result<(Vec<f64>, Vec<f64>), GridError> {
            let mut w = rb.to_vec();
            self.band.solve(&piv, &mut w);
            let mut xcols: Vec<Vec<f64>> = Vec::with_capacity(nb);
            for col in &self.cols {
                let mut x = col.clone();
                self.band.solve(&piv, &mut x);
                xcols.push(x);
            }
            // Schur complement S = corner − rows · band⁻¹ cols.
            let mut s = vec![vec![0.0; nb]; nb];
            let mut rhs = vec![0.0; nb];
            for i in 0..nb {
                for j in 0..nb {
                    let dot: f64 = (0..n).map(|k| self.rows[i][k] * xcols[j][k]).sum();
                    s[i][j] = self.corner[i][j] - dot;
                }
                let dot: f64 = (0..n).map(|k| self.rows[i][k] * w[k]).sum();
                rhs[i] = rc[i] - dot;
            }
            let z = solve_dense(&mut s, &mut rhs).ok_or(GridError::SingularBand(n))?;
            let mut x = w;
            for j in 0..nb {
                for k in 0..n {
                    x[k] -= xcols[j][k] * z[j];
                }
            }
            Ok((x, z))
        };
        let (mut x, mut z) = solve_once(b, c)?;
        for _ in 0..2 {
            // Residual against the original data.
            let mut rb = b.to_vec();
            raw.mul_sub(&x, &mut rb);
            for j in 0..nb {
                for k in 0..n {
                    rb[k] -= self.cols[j][k] * z[j];
                }
            }
            let mut rc = c.to_vec();
            for i in 0..nb {
                let dot: f64 = (0..n).map(|k| self.rows[i][k] * x[k]).sum();
                rc[i] -= dot;
                for j in 0..nb {
                    rc[i] -= self.corner[i][j] * z[j];
                }
            }
            let norm = rb.iter().chain(&rc).fold(0.0f64, |a, &v| a.max(v.abs()));
            if norm < 1e-14 {
                break;
            }
            let (dx, dz) = solve_once(&rb, &rc)?;
            for k in 0..n {
                x[k] += dx[k];
            }
            for j in 0..nb {
                z[j] += dz[j];
            }
        }
        Ok((x, z))
    }
}

fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[p][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Inward extension row for a non-residual field node: the unknown there is
/// tied to strictly deeper nodes, preferably by a vanishing third difference
/// along a lattice ray (exact on quadratics). The row reads
/// `ψ(node) + Σ terms = 0`.
#[derive(Debug, Clone)]
pub struct ExtensionPlan {
    pub node: usize,
    pub terms: Vec<(usize, f64)>,
}

impl ExtensionPlan {
    pub fn residual(&self, f: &[f64]) -> f64 {
        f[self.node] + self.terms.iter().map(|&(q, c)| c * f[q]).sum::<f64>()
    }
}

/// Build extension rows for every non-residual field node. Each chain node
/// must be strictly deeper than its predecessor so the closure relations form
/// a directed acyclic graph grounded in the residual set; near sharp corners
/// the order of the extension degrades gracefully (cubic, quadratic, linear,
/// and finally a pin to the nearest residual node).
pub fn extension_plans<const N: usize>(
    grid: &Grid<N>,
    p: &DelzantPolytope,
) -> Result<Vec<ExtensionPlan>, GridError> {
    let mut steps: Vec<[i64; N]> = Vec::new();
    let mut cursor = [0i64; N];
    build_steps::<N>(0, 1, &mut cursor, &mut steps);
    steps.retain(|s| s.iter().any(|&v| v != 0));

    let mut plans = Vec::new();
    for i in 0..grid.len() {
        if grid.is_residual[i] {
            continue;
        }
        let d0 = p.boundary_distance(&grid.coord(i));
        let mut cands: Vec<([i64; N], f64)> = Vec::new();
        for &step in &steps {
            if let Some(j) = grid.neighbor(i, step) {
                cands.push((step, p.boundary_distance(&grid.coord(j)) - d0));
            }
        }
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));

        // Longest deepening chain along the best-gaining rays.
        let mut found: Option<ExtensionPlan> = None;
        'order: for order in (1..=3usize).rev() {
            for (step, gain) in &cands {
                if *gain < 0.45 * grid.h {
                    break;
                }
                let mut chain = Vec::with_capacity(order);
                let mut ok = true;
                for k in 1..=order as i64 {
                    let mut sk = [0i64; N];
                    for a in 0..N {
                        sk[a] = step[a] * k;
                    }
                    match grid.neighbor(i, sk) {
                        Some(j)
                            if p.boundary_distance(&grid.coord(j))
                                >= d0 + 0.45 * grid.h * k as f64 =>
                        {
                            chain.push(j)
                        }
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let coeffs: &[f64] = match order {
                        3 => &[-3.0, 3.0, -1.0],
                        2 => &[-2.0, 1.0],
                        _ => &[-1.0],
                    };
                    found = Some(ExtensionPlan {
                        node: i,
                        terms: chain.into_iter().zip(coeffs.iter().copied()).collect(),
                    });
                    break 'order;
                }
            }
        }
        let plan = match found {
            Some(plan) => plan,
            None => {
                // Sharp-corner fallback: pin to the nearest residual node.
                let r = grid.nearest_residual(&grid.coord(i));
                ExtensionPlan { node: i, terms: vec![(r, -1.0)] }
            }
        };
        plans.push(plan);
    }
    Ok(plans)
}

// ---------------------------------------------------------------------------
// Colored finite-difference Jacobian
// ---------------------------------------------------------------------------

/// Sparse Jacobian entries (row = output slot, col = unknown index).
pub struct SparseJacobian {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

/// Forward-difference Jacobian of `eval` using a lattice coloring.
///
/// `unknown_nodes[k]` is the grid node carrying unknown k; `out_nodes[e]` the
/// node of output slot e. Dependence must be local: output e may depend on
/// unknown k only when their Chebyshev lattice distance is ≤ `reach`.
pub fn colored_jacobian<const N: usize>(
    grid: &Grid<N>,
    unknown_nodes: &[usize],
    out_nodes: &[usize],
    reach: i64,
    x0: &[f64],
    f0: &[f64],
    mut eval: impl FnMut(&[f64]) -> Vec<f64>,
) -> SparseJacobian {
    let nu = unknown_nodes.len();
    let stride = (2 * reach + 1) as usize;
    let ncolors = stride.pow(N as u32);
    let color_of = |node: usize| -> usize {
        let idx = grid.nodes[node];
        let mut c = 0usize;
        for a in 0..N {
            c = c * stride + idx[a] % stride;
        }
        c
    };
    // Output slots within reach of each unknown.
    let mut slots_near: Vec<Vec<u32>> = vec![Vec::new(); nu];
    {
        // Map lattice node -> output slots at that node.
        let mut at_node: Vec<Vec<u32>> = vec![Vec::new(); grid.len()];
        for (e, &p) in out_nodes.iter().enumerate() {
            at_node[p].push(e as u32);
        }
        let mut steps: Vec<[i64; N]> = Vec::new();
        let mut cursor = [0i64; N];
        build_steps::<N>(0, reach, &mut cursor, &mut steps);
        for (k, &q) in unknown_nodes.iter().enumerate() {
            for s in &steps {
                if let Some(p) = grid.neighbor(q, *s) {
                    slots_near[k].extend_from_slice(&at_node[p]);
                }
            }
        }
    }
    let mut entries = Vec::new();
    let mut x = x0.to_vec();
    for color in 0..ncolors {
        let members: Vec<usize> =
            (0..nu).filter(|&k| color_of(unknown_nodes[k]) == color).collect();
        if members.is_empty() {
            continue;
        }
        // Central differences: the truncation of one-sided differences is
        // large enough to throttle Newton on the fourth-order rows.
        let mut deltas = Vec::with_capacity(members.len());
        for &k in &members {
            let d = 3e-7 * (1.0 + x0[k].abs());
            x[k] = x0[k] + d;
            deltas.push(d);
        }
        let f_plus = eval(&x);
        for (&k, &d) in members.iter().zip(&deltas) {
            x[k] = x0[k] - d;
        }
        let f_minus = eval(&x);
        for &k in &members {
            x[k] = x0[k];
        }
        for (&k, &d) in members.iter().zip(&deltas) {
            for &e in &slots_near[k] {
                let v = (f_plus[e as usize] - f_minus[e as usize]) / (2.0 * d);
                if v != 0.0 {
                    entries.push((e, k as u32, v));
                }
            }
        }
    }
    SparseJacobian { nrows: f0.len(), ncols: nu, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::unit_square;

    #[test]
    fn masks_are_nested() {
        let p = unit_square();
        let g: Grid<2> = Grid::new(&p, 32).unwrap();
        assert!(!g.residual_nodes.is_empty());
        for &i in &g.residual_nodes {
            assert!(g.is_derived[i]);
            // All Chebyshev-1 neighbours of a residual node are derived.
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    let j = g.neighbor(i, [dx, dy]).expect("neighbour exists");
                    assert!(g.is_derived[j]);
                }
            }
        }
        for &i in &g.derived_nodes {
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    assert!(g.neighbor(i, [dx, dy]).is_some());
                }
            }
        }
    }

    #[test]
    fn stencils_exact_on_quadratics() {
        let p = unit_square();
        let g: Grid<2> = Grid::new(&p, 24).unwrap();
        let f: Vec<f64> = g
            .coords
            .iter()
            .map(|y| 2.0 * y[0] * y[0] + 3.0 * y[0] * y[1] - y[1] * y[1] + y[0] - 4.0)
            .collect();
        for &i in &g.residual_nodes {
            let y = g.coord(i);
            assert!((g.d1(&f, i, 0) - (4.0 * y[0] + 3.0 * y[1] + 1.0)).abs() < 1e-9);
            assert!((g.d2(&f, i, 0) - 4.0).abs() < 1e-8);
            assert!((g.d2(&f, i, 1) + 2.0).abs() < 1e-8);
            assert!((g.d2_mixed(&f, i, 0, 1) - 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        // Small well-conditioned banded system vs hand-check.
        let n = 12;
        let (kl, ku) = (2, 2);
        let mut a = BandMatrix::new(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        let mut seed = 1u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (1u64 << 31) as f64 - 0.5
        };
        for i in 0..n {
            for j in 0..n {
                if (i as i64 - j as i64).abs() <= 2 {
                    let v = if i == j { 4.0 + rnd() } else { rnd() };
                    a.add(i, j, v);
                    dense[i][j] = v;
                }
            }
        }
        let xtrue: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[i] = (0..n).map(|j| dense[i][j] * xtrue[j]).sum();
        }
        let piv = a.lu_factor().unwrap();
        a.solve(&piv, &mut b);
        for i in 0..n {
            assert!((b[i] - xtrue[i]).abs() < 1e-10, "{} vs {}", b[i], xtrue[i]);
        }
    }

    #[test]
    fn colored_jacobian_matches_dense_fd() {
        let p = unit_square();
        let g: Grid<2> = Grid::new(&p, 16).unwrap();
        let unknowns: Vec<usize> = (0..g.len()).collect();
        let outs: Vec<usize> = g.residual_nodes.clone();
        let x0 = vec![0.0; unknowns.len()];
        let eval = |x: &[f64]| -> Vec<f64> {
            outs.iter()
                .map(|&i| {
                    let lap = g.d2(x, i, 0) + g.d2(x, i, 1);
                    lap + x[i] * x[i]
                })
                .collect()
        };
        let f0 = eval(&x0);
        let jac = colored_jacobian(&g, &unknowns, &outs, 2, &x0, &f0, eval);
        // The Laplacian row of output e must contain the 5-point stencil.
        let h2 = g.h * g.h;
        for (e, &i) in outs.iter().enumerate() {
            let mut diag = 0.0;
            for &(r, c, v) in &jac.entries {
                if r as usize == e && c as usize == i {
                    diag += v;
                }
            }
            assert!((diag + 4.0 / h2).abs() < 1e-3 * (1.0 / h2), "diag {diag}");
        }
    }
}
