//! Normal-equation matrix `A D Aᵀ` in envelope (skyline) storage.
//!
//! Rows are reordered by reverse Cuthill-McKee so that the envelope stays
//! narrow for the banded, time-ordered constraint systems built by the
//! planner. The Cholesky factor overwrites the matrix in place; rows are
//! stored contiguously so inner products run over unit-stride slices.

use std::collections::VecDeque;

pub(crate) struct NormalMatrix {
    m: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    diag_scale: Vec<f64>,
    pair_start: Vec<usize>,
    pair_pos: Vec<usize>,
    pair_coef: Vec<f64>,
    /// Pivots replaced by a huge value during the last factorization.
    pub tiny_pivots: usize,
}

impl NormalMatrix {
    /// Symbolic analysis for `A` given column-wise as `(row, value)` lists.
    pub fn new(m: usize, cols: &[Vec<(usize, f64)>]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        for col in cols {
            for (a, _) in col {
                for (b, _) in col {
                    if a != b {
                        adj[*a].push(*b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; m];
        for (new, old) in perm.iter().enumerate() {
            inv[*old] = new;
        }
        let mut first: Vec<usize> = (0..m).collect();
        for col in cols {
            if let Some(lo) = col.iter().map(|(r, _)| inv[*r]).min() {
                for (r, _) in col {
                    let r = inv[*r];
                    first[r] = first[r].min(lo);
                }
            }
        }
        let mut start = Vec::with_capacity(m + 1);
        let mut total = 0;
        for (i, f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        let mut pair_start = Vec::with_capacity(cols.len() + 1);
        let mut pair_pos = Vec::new();
        let mut pair_coef = Vec::new();
        for col in cols {
            pair_start.push(pair_pos.len());
            for (ra, va) in col {
                for (rb, vb) in col {
                    let (a, b) = (inv[*ra], inv[*rb]);
                    if a >= b {
                        pair_pos.push(start[a] + b - first[a]);
                        pair_coef.push(va * vb);
                    }
                }
            }
        }
        pair_start.push(pair_pos.len());
        Self {
            m,
            perm,
            inv,
            first,
            start,
            vals: vec![0.0; total],
            diag_scale: vec![0.0; m],
            pair_start,
            pair_pos,
            pair_coef,
            tiny_pivots: 0,
        }
    }

    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    /// Forms `A diag(d) Aᵀ` for the column structure given at construction.
    pub fn assemble(&mut self, d: &[f64]) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        for (j, dj) in d.iter().enumerate() {
            for p in self.pair_start[j]..self.pair_start[j + 1] {
                self.vals[self.pair_pos[p]] += dj * self.pair_coef[p];
            }
        }
    }

    fn diag_index(&self, i: usize) -> usize {
        self.start[i + 1] - 1
    }

    /// In-place Cholesky. Non-positive or negligible pivots (rank deficiency)
    /// are replaced by 1e128 so the corresponding component solves to ~0.
    pub fn factor(&mut self) {
        self.tiny_pivots = 0;
        for i in 0..self.m {
            self.diag_scale[i] = self.vals[self.diag_index(i)].abs();
        }
        for i in 0..self.m {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let ri = &self.vals[si + k0 - fi..si + k0 - fi + len];
                let rj = &self.vals[sj + k0 - fj..sj + k0 - fj + len];
                let s: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let ljj = self.vals[sj + j - fj];
                let idx = si + j - fi;
                self.vals[idx] = (self.vals[idx] - s) / ljj;
            }
            let row = &self.vals[si..si + i - fi];
            let s: f64 = row.iter().map(|a| a * a).sum();
            let di = self.diag_index(i);
            let d = self.vals[di] - s;
            if d > 1e-30 * self.diag_scale[i].max(f64::MIN_POSITIVE) && d.is_finite() {
                self.vals[di] = d.sqrt();
            } else {
                self.vals[di] = 1e64;
                self.tiny_pivots += 1;
            }
        }
    }

    /// Solves `(A D Aᵀ) x = rhs` with the current factor.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|old| rhs[*old]).collect();
        for i in 0..self.m {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.vals[si..si + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.vals[si + i - fi];
        }
        for i in (0..self.m).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            y[i] /= self.vals[si + i - fi];
            let yi = y[i];
            for (k, l) in (fi..i).zip(&self.vals[si..si + i - fi]) {
                y[k] -= l * yi;
            }
        }
        (0..self.m).map(|old| y[self.inv[old]]).collect()
    }
}

/// Reverse Cuthill-McKee ordering; returns `perm[new] = old`.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let m = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    while order.len() < m {
        let seed = (0..m).filter(|i| !visited[*i]).min_by_key(|i| (deg[*i], *i)).unwrap();
        let root = pseudo_peripheral(adj, &deg, seed);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|u| !visited[*u]).collect();
            next.sort_by_key(|u| (deg[*u], *u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = vec![root];
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                if level[u] > depth {
                    depth = level[u];
                    last.clear();
                }
                last.push(u);
                queue.push_back(u);
            }
        }
    }
    (depth, last)
}

fn pseudo_peripheral(adj: &[Vec<usize>], deg: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let (mut depth, mut last) = bfs_levels(adj, root);
    for _ in 0..8 {
        let cand = *last.iter().min_by_key(|u| (deg[**u], **u)).unwrap();
        let (d, l) = bfs_levels(adj, cand);
        if d <= depth {
            break;
        }
        root = cand;
        depth = d;
        last = l;
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense_normal(m: usize, cols: &[Vec<(usize, f64)>], d: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::<f64>::zeros(m, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (r, v) in c {
                a[(*r, j)] += v;
            }
        }
        &a * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)) * a.transpose()
    }

    #[test]
    fn solves_match_dense_cholesky() {
        // A chain-like system plus a few long-range couplings.
        let m = 40;
        let mut cols = Vec::new();
        for i in 0..m {
            cols.push(vec![(i, 1.0 + i as f64 * 0.1)]);
            if i + 1 < m {
                cols.push(vec![(i, -0.5), (i + 1, 0.7)]);
            }
        }
        cols.push(vec![(0, 0.3), (m - 1, 0.2), (m / 2, -1.0)]);
        let d: Vec<f64> = (0..cols.len()).map(|j| 0.5 + (j % 7) as f64).collect();
        let mut nm = NormalMatrix::new(m, &cols);
        nm.assemble(&d);
        nm.factor();
        assert_eq!(nm.tiny_pivots, 0);
        let rhs: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
        let x = nm.solve(&rhs);
        let dense = dense_normal(m, &cols, &d);
        let res = &dense * nalgebra::DVector::from_column_slice(&x) - nalgebra::DVector::from_column_slice(&rhs);
        assert!(res.amax() < 1e-10, "residual {}", res.amax());
    }

    #[test]
    fn rcm_keeps_a_shuffled_path_narrow() {
        // Path graph presented in a scrambled row order.
        let m = 200;
        let label = |i: usize| (i * 73) % m;
        let cols: Vec<Vec<(usize, f64)>> = (0..m - 1).map(|i| vec![(label(i), 1.0), (label(i + 1), 1.0)]).collect();
        let nm = NormalMatrix::new(m, &cols);
        assert!(nm.envelope_size() <= 2 * m, "envelope {}", nm.envelope_size());
    }

    #[test]
    fn rank_deficiency_is_tolerated() {
        // Rows 0 and 1 identical.
        let cols = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(2, 1.0)]];
        let mut nm = NormalMatrix::new(3, &cols);
        nm.assemble(&[1.0, 1.0, 1.0]);
        nm.factor();
        assert_eq!(nm.tiny_pivots, 1);
        let x = nm.solve(&[5.0, 5.0, 2.0]);
        assert!(x.iter().all(|v| v.is_finite()));
        assert!((x[2] - 2.0).abs() < 1e-12);
        assert!((5.0 * (x[0] + x[1]) - 5.0).abs() < 1e-9);
    }
}
