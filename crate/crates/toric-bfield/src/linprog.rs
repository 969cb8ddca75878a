//! Dense two-phase simplex with Dantzig pricing and a lexicographic ratio
//! test.
//!
//! The LPs in this crate are small (a few hundred variables from the
//! piecewise-linear test family, a handful for polytope feasibility checks)
//! but highly degenerate: most hinge rows are tight at the optimum. The
//! lexicographic tie-break makes the pivot sequence finite and
//! deterministic without perturbing the data, and callers can hand in a
//! feasible slack basis so phase 1 only has to price the genuinely binding
//! rows.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 objective {0:.3e})")]
    Infeasible(f64),
    #[error("linear program is unbounded along the returned ray")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    Stalled(usize),
}

/// min cᵀx  s.t.  A x = b, x ≥ 0.
///
/// Standard-form problem; callers add slack variables themselves. A row may
/// designate one of its columns as an initial basic variable through
/// `basis_hint` (the column must have a unit entry there and appear in no
/// other row); rows without a hint receive an artificial variable.
pub struct StandardLp {
    pub ncols: usize,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub cost: Vec<f64>,
    pub basis_hint: Vec<Option<usize>>,
}

pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-11;

impl StandardLp {
    pub fn new(ncols: usize, rows: Vec<Vec<f64>>, rhs: Vec<f64>, cost: Vec<f64>) -> Self {
        let hints = vec![None; rows.len()];
        StandardLp { ncols, rows, rhs, cost, basis_hint: hints }
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let m = self.rows.len();
        let n = self.ncols;
        assert!(self.rhs.len() == m && self.cost.len() == n);

        // Which rows need artificials?
        let mut needs_artificial = Vec::new();
        for (i, hint) in self.basis_hint.iter().enumerate() {
            let usable = match hint {
                Some(j) => self.rhs[i] >= 0.0 && (self.rows[i][*j] - 1.0).abs() < 1e-12,
                None => false,
            };
            if !usable {
                needs_artificial.push(i);
            }
        }
        let na = needs_artificial.len();
        let width = n + na + 1;
        let mut t = vec![vec![0.0; width]; m];
        let mut basis = vec![usize::MAX; m];
        for i in 0..m {
            let sign = if self.rhs[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = sign * self.rows[i][j];
            }
            t[i][width - 1] = sign * self.rhs[i];
            if let Some(j) = self.basis_hint[i] {
                if !needs_artificial.contains(&i) {
                    basis[i] = j;
                }
            }
        }
        for (k, &i) in needs_artificial.iter().enumerate() {
            t[i][n + k] = 1.0;
            basis[i] = n + k;
        }

        // Phase 1: minimize the artificial sum. Reduced costs are computed
        // against the starting basis (hinted slacks have zero cost).
        if na > 0 {
            let mut obj1 = vec![0.0; width];
            for &i in &needs_artificial {
                for j in 0..width {
                    obj1[j] -= t[i][j];
                }
            }
            for k in 0..na {
                obj1[n + k] = 0.0;
            }
            self.iterate(&mut t, &mut basis, &mut obj1, n + na)?;
            let phase1 = -obj1[width - 1];
            if phase1 > 1e-7 {
                return Err(LpError::Infeasible(phase1));
            }
            for i in 0..m {
                if basis[i] >= n {
                    if let Some(j) = (0..n).find(|&j| t[i][j].abs() > PIVOT_TOL) {
                        pivot(&mut t, &mut obj1, i, j);
                        basis[i] = j;
                    }
                }
            }
        }

        // Phase 2 on the original cost, artificial columns frozen.
        let mut obj2 = vec![0.0; width];
        obj2[..n].copy_from_slice(&self.cost);
        for i in 0..m {
            let b = basis[i];
            if b < n && obj2[b].abs() > 0.0 {
                let f = obj2[b];
                for j in 0..width {
                    obj2[j] -= f * t[i][j];
                }
            }
        }
        self.iterate(&mut t, &mut basis, &mut obj2, n)?;

        let mut x = vec![0.0; n];
        for i in 0..m {
            if basis[i] < n {
                x[basis[i]] = t[i][width - 1];
            }
        }
        let objective = self.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { x, objective })
    }

    fn iterate(
        &self,
        t: &mut [Vec<f64>],
        basis: &mut [usize],
        obj: &mut [f64],
        ncols_active: usize,
    ) -> Result<(), LpError> {
        let m = t.len();
        let width = obj.len();
        let max_pivots = 400 * (m + ncols_active) + 20_000;
        for _ in 0..max_pivots {
            // Dantzig pricing.
            let mut enter = usize::MAX;
            let mut best = -PIVOT_TOL;
            for j in 0..ncols_active {
                if obj[j] < best {
                    best = obj[j];
                    enter = j;
                }
            }
            if enter == usize::MAX {
                return Ok(());
            }
            // Harris-style ratio test: admit entries above a relative
            // threshold, find the minimum ratio, then take the largest pivot
            // element within a small band of it. Large pivots keep the dense
            // tableau from decaying on long degenerate runs.
            let col_max = (0..m).map(|i| t[i][enter].abs()).fold(0.0f64, f64::max);
            let admit = (1e-7 * col_max).max(PIVOT_TOL);
            let mut min_ratio = f64::INFINITY;
            for i in 0..m {
                if t[i][enter] > admit {
                    min_ratio = min_ratio.min(t[i][width - 1] / t[i][enter]);
                }
            }
            if min_ratio == f64::INFINITY {
                return Err(LpError::Unbounded);
            }
            let band = 1e-10 * (1.0 + min_ratio.abs());
            let mut leave = usize::MAX;
            let mut best_pivot = 0.0;
            for i in 0..m {
                if t[i][enter] > admit {
                    let ratio = t[i][width - 1] / t[i][enter];
                    if ratio <= min_ratio + band && t[i][enter] > best_pivot {
                        best_pivot = t[i][enter];
                        leave = i;
                    }
                }
            }
            pivot(t, obj, leave, enter);
            basis[leave] = enter;
        }
        Err(LpError::Stalled(max_pivots))
    }
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], row: usize, col: usize) {
    let width = obj.len();
    let p = t[row][col];
    for j in 0..width {
        t[row][j] /= p;
    }
    for i in 0..t.len() {
        if i != row && t[i][col].abs() > 0.0 {
            let f = t[i][col];
            for j in 0..width {
                t[i][j] -= f * t[row][j];
            }
        }
    }
    let f = obj[col];
    if f.abs() > 0.0 {
        for j in 0..width {
            obj[j] -= f * t[row][j];
        }
    }
}

/// Convenience wrapper: min cᵀy s.t. G y ≥ h, E y = d, with y free
/// (split into y⁺ − y⁻). Returns an error on infeasible/unbounded data.
pub fn solve_free_min(
    cost: &[f64],
    ineq: &[(Vec<f64>, f64)],
    eq: &[(Vec<f64>, f64)],
) -> Result<LpSolution, LpError> {
    let nv = cost.len();
    let ns = ineq.len();
    // Columns: y⁺ (nv), y⁻ (nv), surplus (ns).
    let ncols = 2 * nv + ns;
    let mut rows = Vec::with_capacity(ineq.len() + eq.len());
    let mut rhs = Vec::with_capacity(ineq.len() + eq.len());
    for (k, (g, h)) in ineq.iter().enumerate() {
        let mut row = vec![0.0; ncols];
        for j in 0..nv {
            row[j] = g[j];
            row[nv + j] = -g[j];
        }
        row[2 * nv + k] = -1.0;
        rows.push(row);
        rhs.push(*h);
    }
    for (g, h) in eq {
        let mut row = vec![0.0; ncols];
        for j in 0..nv {
            row[j] = g[j];
            row[nv + j] = -g[j];
        }
        rows.push(row);
        rhs.push(*h);
    }
    let mut c = vec![0.0; ncols];
    for j in 0..nv {
        c[j] = cost[j];
        c[nv + j] = -cost[j];
    }
    let lp = StandardLp::new(ncols, rows, rhs, c);
    let sol = lp.solve()?;
    let mut y = vec![0.0; nv];
    for j in 0..nv {
        y[j] = sol.x[j] - sol.x[nv + j];
    }
    Ok(LpSolution { x: y, objective: sol.objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_simple_program() {
        // min -x1 - 2 x2 s.t. x1 + x2 <= 4, x1 <= 2, x >= 0
        // -> slack form: x1 + x2 + s1 = 4; x1 + s2 = 2.
        let lp = StandardLp::new(
            4,
            vec![vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]],
            vec![4.0, 2.0],
            vec![-1.0, -2.0, 0.0, 0.0],
        );
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 8.0).abs() < 1e-12, "objective {}", sol.objective);
        assert!((sol.x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn basis_hint_path() {
        let mut lp = StandardLp::new(
            4,
            vec![vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]],
            vec![4.0, 2.0],
            vec![-1.0, -2.0, 0.0, 0.0],
        );
        lp.basis_hint = vec![Some(2), Some(3)];
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 8.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        // x1 = -1 with x1 >= 0 is infeasible.
        let lp = StandardLp::new(1, vec![vec![1.0]], vec![-1.0], vec![0.0]);
        assert!(matches!(lp.solve(), Err(LpError::Infeasible(_))));
    }

    #[test]
    fn free_variable_wrapper() {
        // min y s.t. y >= -3  ->  y = -3.
        let sol = solve_free_min(&[1.0], &[(vec![1.0], -3.0)], &[]).unwrap();
        assert!((sol.x[0] + 3.0).abs() < 1e-10);
    }

    #[test]
    fn detects_unbounded() {
        // min y s.t. y <= 3 (i.e. -y >= -3): unbounded below.
        let r = solve_free_min(&[1.0], &[(vec![-1.0], -3.0)], &[]);
        assert!(matches!(r, Err(LpError::Unbounded)));
    }
}
