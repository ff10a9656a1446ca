//! Simplicial up-looking LDL^T for sparse symmetric positive definite matrices.

/// Upper triangle of a symmetric matrix in compressed-column form.
#[derive(Debug, Clone)]
pub(crate) struct UpperCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl UpperCsc {
    /// Builds from `(row, col, value)` triplets with `row <= col`.
    /// Duplicates are summed in input order, so assembly is deterministic.
    pub fn from_triplets(n: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(trips.iter().all(|&(r, c, _)| r <= c && c < n));
        trips.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.row_idx[p] == c {
                    d[c] += self.values[p];
                }
            }
        }
        d
    }
}

#[derive(Debug)]
pub(crate) struct NotPositiveDefinite {
    pub column: usize,
    pub pivot: f64,
}

/// `A = L D L^T` with unit lower triangular `L` stored by columns.
#[derive(Debug, Clone)]
pub(crate) struct Ldl {
    n: usize,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

impl Ldl {
    /// Factors `a`; any pivot at or below `pivot_tol` is reported as a failure.
    pub fn factor(a: &UpperCsc, pivot_tol: f64) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        const NONE: usize = usize::MAX;

        // symbolic: elimination tree and column counts
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        let nnz = l_ptr[n];
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut d = vec![0.0; n];

        // numeric
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        flag.fill(NONE);
        lnz.fill(0);
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                if i > k {
                    continue;
                }
                y[i] += a.values[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = l_ptr[i] + lnz[i];
                for p in l_ptr[i]..p2 {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[p2] = k;
                l_val[p2] = l_ki;
                lnz[i] += 1;
            }
            if !(d[k] > pivot_tol) {
                return Err(NotPositiveDefinite { column: k, pivot: d[k] });
            }
        }
        Ok(Self { n, l_ptr, l_idx, l_val, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            let bj = b[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                b[self.l_idx[p]] -= self.l_val[p] * bj;
            }
        }
        for (bj, dj) in b.iter_mut().zip(&self.d) {
            *bj /= dj;
        }
        for j in (0..self.n).rev() {
            let mut acc = b[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                acc -= self.l_val[p] * b[self.l_idx[p]];
            }
            b[j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let n = 1 + trial % 12;
            // sparse random SPD: diagonally dominant with random pattern
            let mut dense = DMatrix::<f64>::zeros(n, n);
            let mut trips = Vec::new();
            for c in 0..n {
                for r in 0..c {
                    if rng.random::<f64>() < 0.3 {
                        let v = rng.random::<f64>() - 0.5;
                        dense[(r, c)] = v;
                        dense[(c, r)] = v;
                        trips.push((r, c, v));
                    }
                }
            }
            for k in 0..n {
                let v = n as f64 + rng.random::<f64>();
                dense[(k, k)] = v;
                // split the diagonal into two pieces to exercise duplicate summing
                trips.push((k, k, 0.25 * v));
                trips.push((k, k, 0.75 * v));
            }
            let a = UpperCsc::from_triplets(n, trips);
            let f = Ldl::factor(&a, 0.0).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let expect = dense.lu().solve(&DVector::from_vec(b)).unwrap();
            for k in 0..n {
                assert!((x[k] - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reports_singular_pivot() {
        // path-graph Laplacian is singular
        let trips = vec![(0, 0, 1.0), (0, 1, -1.0), (1, 1, 1.0)];
        let a = UpperCsc::from_triplets(2, trips);
        let err = Ldl::factor(&a, 1e-14).unwrap_err();
        assert_eq!(err.column, 1);
    }
}
