//! Compressed sparse row storage for symmetric positive definite systems and
//! a Jacobi-preconditioned conjugate gradient solver.

use crate::error::{Error, Result};

/// Sparsity pattern of a symmetric matrix built from undirected edges, with
/// position tables for O(1) in-place value updates.
///
/// Every row contains its diagonal. For edge e = (i, j) with i < j,
/// `edge_pos[e]` holds the value-array positions of entries (i, j) and
/// (j, i), so an assembler can rewrite coefficients each step without
/// rebuilding the pattern.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    diag_pos: Vec<usize>,
    edge_pos: Vec<(usize, usize)>,
}

impl SymmetricPattern {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("pattern needs at least one row"));
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= j || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) must satisfy i < j < n = {n}"
                )));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n + 2 * edges.len());
        let mut diag_pos = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, row) in adjacency.iter_mut().enumerate() {
            row.push(i);
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("duplicate edge at row {i}")));
            }
            let base = col_idx.len();
            diag_pos.push(base + row.iter().position(|&c| c == i).expect("diagonal present"));
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let locate = |i: usize, j: usize| -> usize {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            row_ptr[i] + row.binary_search(&j).expect("edge entry present")
        };
        let edge_pos = edges
            .iter()
            .map(|&(i, j)| (locate(i, j), locate(j, i)))
            .collect();
        Ok(SymmetricPattern {
            n,
            row_ptr,
            col_idx,
            diag_pos,
            edge_pos,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_pos.len()
    }
}

/// A symmetric positive definite system `A x = b` in CSR form.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pattern: SymmetricPattern,
    values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(pattern: SymmetricPattern) -> Self {
        let nnz = pattern.nnz();
        let n = pattern.n();
        SparseSystem {
            pattern,
            values: vec![0.0; nnz],
            rhs: vec![0.0; n],
        }
    }

    /// Builds a system from (row, col, value) triplets. Intended for tests
    /// and small hand-built systems; duplicate positions accumulate.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], rhs: Vec<f64>) -> Result<Self> {
        if rhs.len() != n {
            return Err(Error::invalid(format!(
                "rhs has {} entries for a {n}-row system",
                rhs.len()
            )));
        }
        let mut edges: Vec<(usize, usize)> = triplets
            .iter()
            .filter(|&&(i, j, _)| i != j)
            .map(|&(i, j, _)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        for &(i, j) in &edges {
            if j >= n {
                return Err(Error::invalid(format!("entry ({i}, {j}) outside {n}-row system")));
            }
        }
        let pattern = SymmetricPattern::from_edges(n, &edges)?;
        let mut sys = SparseSystem::new(pattern);
        sys.rhs = rhs;
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("entry ({i}, {j}) outside {n}-row system")));
            }
            if i == j {
                sys.add_diag(i, v);
            } else {
                let (lo, hi) = (i.min(j), i.max(j));
                let e = edges.binary_search(&(lo, hi)).expect("edge was collected");
                let (pos_ij, pos_ji) = sys.pattern.edge_pos[e];
                if i < j {
                    sys.values[pos_ij] += v;
                } else {
                    sys.values[pos_ji] += v;
                }
            }
        }
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &SymmetricPattern {
        &self.pattern
    }

    /// Zeroes all values and the right-hand side.
    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.rhs.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_diag(&mut self, i: usize, v: f64) {
        let p = self.pattern.diag_pos[i];
        self.values[p] += v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.pattern.diag_pos[i]]
    }

    /// Adds `v` to both off-diagonal entries of edge `e` (in the order the
    /// edges were given to [`SymmetricPattern::from_edges`]).
    pub fn add_edge(&mut self, e: usize, v: f64) {
        let (pos_ij, pos_ji) = self.pattern.edge_pos[e];
        self.values[pos_ij] += v;
        self.values[pos_ji] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n());
        debug_assert_eq!(y.len(), self.n());
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                acc += self.values[p] * x[self.pattern.col_idx[p]];
            }
            *yi = acc;
        }
    }

    /// True when every row is weakly diagonally dominant with a positive
    /// diagonal. Assemblers check this in debug builds: the discretizations
    /// in this crate always produce such matrices, which PCG requires.
    pub fn is_diagonally_dominant(&self, slack: f64) -> bool {
        (0..self.n()).all(|i| {
            let mut diag = 0.0;
            let mut off = 0.0;
            for p in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let v = self.values[p];
                if self.pattern.col_idx[p] == i {
                    diag = v;
                } else {
                    off += v.abs();
                }
            }
            diag > 0.0 && diag + slack * diag.abs() >= off
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` by conjugate gradients with Jacobi preconditioning,
/// starting from the zero vector.
pub fn solve_spd(sys: &SparseSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    solve_spd_warm(sys, None, tol, max_iter)
}

/// Solves `A x = b` by conjugate gradients with Jacobi preconditioning.
///
/// Convergence criterion: `||b - A x|| <= tol * ||b||`. A zero right-hand
/// side returns the zero vector. If `x0` already satisfies the criterion it
/// is returned unchanged, so a solve that is warm-started from an exact
/// solution is an identity; time steppers rely on this to keep equilibrium
/// states bitwise constant.
pub fn solve_spd_warm(
    sys: &SparseSystem,
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = sys.n();
    let b = &sys.rhs;
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let threshold = tol * b_norm;

    let mut x = match x0 {
        Some(x0) => {
            debug_assert_eq!(x0.len(), n);
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    sys.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut r_norm = norm2(&r);
    if r_norm <= threshold {
        return Ok(x);
    }

    let mut inv_diag = vec![0.0; n];
    for (i, inv) in inv_diag.iter_mut().enumerate() {
        let d = sys.diag(i);
        // NaN must fail this check, not slip through as a preconditioner.
        if d.is_nan() || d <= 0.0 {
            return Err(Error::invalid(format!(
                "matrix diagonal must be positive for PCG, row {i} has {d}"
            )));
        }
        *inv = 1.0 / d;
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut q = vec![0.0; n];

    for it in 1..=max_iter {
        sys.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        // Loss of positive definiteness or a NaN both abort here.
        if pq.is_nan() || pq <= 0.0 {
            return Err(Error::SolverFailure {
                residual: r_norm / b_norm,
                iterations: it,
            });
        }
        let alpha = rho / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        r_norm = norm2(&r);
        if r_norm <= threshold {
            // Guard against drift of the recurrence residual: accept only if
            // the true residual agrees, otherwise restart from the current x.
            sys.matvec(&x, &mut q);
            for i in 0..n {
                r[i] = b[i] - q[i];
            }
            r_norm = norm2(&r);
            if r_norm <= threshold {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            rho = dot(&r, &z);
            p.copy_from_slice(&z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rho_next = dot(&r, &z);
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        residual: r_norm / b_norm,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.1));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        t
    }

    #[test]
    fn pattern_rows_are_sorted_and_complete() {
        let edges = vec![(0, 1), (1, 2), (0, 3), (2, 3)];
        let p = SymmetricPattern::from_edges(4, &edges).unwrap();
        assert_eq!(p.nnz(), 4 + 2 * 4);
        for i in 0..4 {
            let row = &p.col_idx[p.row_ptr[i]..p.row_ptr[i + 1]];
            let mut sorted = row.to_vec();
            sorted.sort_unstable();
            assert_eq!(row, &sorted[..], "row {i} not sorted: {row:?}");
            assert!(row.contains(&i));
        }
    }

    #[test]
    fn edge_updates_land_on_both_sides() {
        let edges = vec![(0, 1), (1, 2)];
        let p = SymmetricPattern::from_edges(3, &edges).unwrap();
        let mut sys = SparseSystem::new(p);
        sys.add_diag(0, 2.0);
        sys.add_diag(1, 3.0);
        sys.add_diag(2, 2.0);
        sys.add_edge(0, -1.0);
        sys.add_edge(1, -0.5);
        let mut y = vec![0.0; 3];
        sys.matvec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![1.0, 1.5, 1.5]);
        assert!(sys.is_diagonally_dominant(1e-12));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(SymmetricPattern::from_edges(3, &[(1, 1)]).is_err());
        assert!(SymmetricPattern::from_edges(3, &[(2, 1)]).is_err());
        assert!(SymmetricPattern::from_edges(3, &[(1, 3)]).is_err());
        assert!(SymmetricPattern::from_edges(3, &[(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn solves_small_spd_system_exactly() {
        // A = [[4, 1], [1, 3]], b = [1, 2]; x = [1/11, 7/11].
        let sys = SparseSystem::from_triplets(
            2,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)],
            vec![1.0, 2.0],
        )
        .unwrap();
        let x = solve_spd(&sys, 1e-14, 100).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn solves_shifted_laplacian_to_tolerance() {
        let n = 200;
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let sys = SparseSystem::from_triplets(n, &laplacian_1d(n), rhs.clone()).unwrap();
        let x = solve_spd(&sys, 1e-12, 10 * n).unwrap();
        let mut ax = vec![0.0; n];
        sys.matvec(&x, &mut ax);
        let res: f64 = ax
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let bn: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(res <= 1e-12 * bn, "residual {res:e} vs {bn:e}");
    }

    #[test]
    fn zero_rhs_returns_zero_vector() {
        let sys = SparseSystem::from_triplets(3, &laplacian_1d(3), vec![0.0; 3]).unwrap();
        assert_eq!(solve_spd(&sys, 1e-10, 10).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn warm_start_at_solution_is_identity() {
        let n = 50;
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let sys = SparseSystem::from_triplets(n, &laplacian_1d(n), rhs).unwrap();
        let x = solve_spd(&sys, 1e-13, 10 * n).unwrap();
        let again = solve_spd_warm(&sys, Some(&x), 1e-10, 10 * n).unwrap();
        assert_eq!(x, again, "warm start from a solution must be bitwise stable");
    }

    #[test]
    fn nonconvergence_reports_residual() {
        let sys = SparseSystem::from_triplets(
            2,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)],
            vec![1.0, 2.0],
        )
        .unwrap();
        match solve_spd(&sys, 1e-30, 1) {
            Err(Error::SolverFailure { residual, iterations }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 1);
            }
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        // [1 3; 3 1] has a negative eigenvalue along [1, -1].
        let sys = SparseSystem::from_triplets(
            2,
            &[(0, 0, 1.0), (0, 1, 3.0), (1, 0, 3.0), (1, 1, 1.0)],
            vec![1.0, -1.0],
        )
        .unwrap();
        assert!(matches!(
            solve_spd(&sys, 1e-10, 100),
            Err(Error::SolverFailure { .. })
        ));
    }
}
