//! Sparse LDLᵀ factorization for quasi-definite matrices.
//!
//! The matrix is given by its upper triangle in CSC form together with the
//! expected sign of each pivot (+1 for the primal block, -1 for the dual
//! block). A fill-reducing permutation is computed once; numeric refactors
//! reuse the symbolic analysis. The numeric phase is an up-looking
//! elimination-tree factorization.

use crate::sparse::CscMatrix;
use crate::ConicError;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    /// Permuted upper triangle.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Position in `ax` of each entry of the original upper triangle.
    map: Vec<usize>,

    signs: Vec<f64>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactor {
    /// Symbolic analysis of `upper`, which must contain every diagonal entry.
    pub fn new(upper: &CscMatrix, signs: &[f64]) -> Result<Self, ConicError> {
        let n = upper.ncols;
        assert_eq!(upper.nrows, n);
        assert_eq!(signs.len(), n);

        let perm: Vec<usize> = if n == 0 {
            Vec::new()
        } else {
            let (p, _pinv, _info) = amd::order::<usize>(n, &upper.colptr, &upper.rowval, &amd::Control::default())
                .map_err(|s| ConicError::Factorization(format!("ordering failed: {s:?}")))?;
            p
        };
        let mut iperm = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            iperm[orig] = k;
        }

        // Permute the upper triangle: entry (i, j) moves to (min, max) of the
        // permuted indices.
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let i = upper.rowval[p];
                if i > j {
                    return Err(ConicError::Factorization("matrix is not upper triangular".into()));
                }
                let (pi, pj) = (iperm[i], iperm[j]);
                counts[pi.max(pj) + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let ap = counts.clone();
        let mut next = counts;
        let nnz = upper.nnz();
        let mut ai = vec![0usize; nnz];
        let mut map = vec![0usize; nnz];
        for j in 0..n {
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let i = upper.rowval[p];
                let (pi, pj) = (iperm[i], iperm[j]);
                let col = pi.max(pj);
                let slot = next[col];
                ai[slot] = pi.min(pj);
                map[p] = slot;
                next[col] += 1;
            }
        }

        let mut diag_pos = vec![NONE; n];
        for j in 0..n {
            for p in ap[j]..ap[j + 1] {
                if ai[p] == j {
                    diag_pos[j] = p;
                }
            }
            if diag_pos[j] == NONE {
                return Err(ConicError::Factorization(format!(
                    "missing diagonal entry in column {}",
                    perm[j]
                )));
            }
        }
        let psigns: Vec<f64> = perm.iter().map(|&o| signs[o]).collect();

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let lnnz = lp[n];

        Ok(Self {
            n,
            perm,
            ap,
            ai,
            ax: vec![0.0; nnz],
            map,

            signs: psigns,
            etree,
            lp,
            li: vec![0; lnnz],
            lx: vec![0.0; lnnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Loads numeric values given in the ordering of the original upper triangle.
    pub fn set_values(&mut self, values: &[f64]) {
        for (p, &v) in values.iter().enumerate() {
            self.ax[self.map[p]] = v;
        }
    }

    /// Numeric factorization. `static_reg` is added to every pivot with its
    /// expected sign; pivots whose signed value falls below `dyn_eps` are
    /// replaced by `dyn_delta` with the expected sign. Returns how many
    /// pivots were dynamically regularized.
    pub fn factor(&mut self, static_reg: f64, dyn_eps: f64, dyn_delta: f64) -> Result<usize, ConicError> {
        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_in_col: Vec<usize> = self.lp[..n].to_vec();
        let mut bumped = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut nxt = self.etree[b];
                    while nxt != NONE && nxt < k {
                        if y_used[nxt] {
                            break;
                        }
                        y_used[nxt] = true;
                        elim[ne] = nxt;
                        ne += 1;
                        nxt = self.etree[nxt];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            self.d[k] += self.signs[k] * static_reg;

            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let yc = y_vals[c];
                let end = next_in_col[c];
                for j in self.lp[c]..end {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[end] = k;
                let l = yc * self.dinv[c];
                self.lx[end] = l;
                self.d[k] -= yc * l;
                next_in_col[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }

            if !self.d[k].is_finite() {
                return Err(ConicError::Factorization(format!("non-finite pivot at {k}")));
            }
            if self.signs[k] * self.d[k] < dyn_eps {
                self.d[k] = self.signs[k] * dyn_delta;
                bumped += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(bumped)
    }

    /// Solves with the current factor; `b` is in the original ordering.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (k, &o) in self.perm.iter().enumerate() {
            b[o] = x[k];
        }
    }

    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.n - pos)
    }
}

/// `y = K x` where `K` is symmetric and given by its upper triangle.
pub fn sym_upper_mul(upper: &CscMatrix, x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..upper.ncols {
        for p in upper.colptr[j]..upper.colptr[j + 1] {
            let i = upper.rowval[p];
            let v = upper.nzval[p];
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper_of(dense: &[Vec<f64>]) -> CscMatrix {
        let n = dense.len();
        let mut t = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                if dense[i][j] != 0.0 || i == j {
                    t.push((i, j, dense[i][j]));
                }
            }
        }
        CscMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn solves_quasidefinite_system() {
        // [ 4  0  1  2 ]
        // [ 0  3  0  1 ]
        // [ 1  0 -2  0 ]
        // [ 2  1  0 -1 ]
        let k = vec![
            vec![4.0, 0.0, 1.0, 2.0],
            vec![0.0, 3.0, 0.0, 1.0],
            vec![1.0, 0.0, -2.0, 0.0],
            vec![2.0, 1.0, 0.0, -1.0],
        ];
        let upper = upper_of(&k);
        let mut f = LdlFactor::new(&upper, &[1.0, 1.0, -1.0, -1.0]).unwrap();
        f.set_values(&upper.nzval);
        assert_eq!(f.factor(0.0, 1e-14, 1e-7).unwrap(), 0);
        assert_eq!(f.inertia(), (2, 2));
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut b = vec![0.0; 4];
        sym_upper_mul(&upper, &x_true, &mut b);
        f.solve(&mut b);
        for (a, e) in b.iter().zip(x_true) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn dynamic_regularization_replaces_bad_pivots() {
        let upper = upper_of(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let mut f = LdlFactor::new(&upper, &[1.0, -1.0]).unwrap();
        f.set_values(&upper.nzval);
        let bumped = f.factor(0.0, 1e-13, 1e-7).unwrap();
        assert!(bumped >= 1);
        assert_eq!(f.inertia(), (1, 1));
    }
}
