//! Symmetric positive-definite matrices in variable-band (skyline) storage with
//! an in-place Cholesky factorization, plus reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::error::{EitError, Result};

/// Lower triangle stored row by row from the first structurally nonzero column.
#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` is the leftmost column of row `i` (at most `i`).
    pub fn with_profile(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile column past the diagonal");
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Self {
            first,
            start,
            values: vec![0.0; total],
        }
    }

    /// Profile covering every `(i, j)` pair reported by `pairs`.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pairs {
            let (hi, lo) = (i.max(j), i.min(j));
            first[hi] = first[hi].min(lo);
        }
        Self::with_profile(first)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (hi, lo) = (i.max(j), i.min(j));
        (lo >= self.first[hi]).then(|| self.start[hi] + lo - self.first[hi])
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside the skyline profile");
        self.values[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim() {
            let f = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let mut acc = row[i - f] * x[i];
            for (k, &a) in row[..i - f].iter().enumerate() {
                acc += a * x[f + k];
                y[f + k] += a * x[i];
            }
            y[i] += acc;
        }
    }

    /// Consumes the matrix into its Cholesky factor `L` (`A = L Lᵀ`).
    pub fn factor(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.values[si + j - fi];
                for k in k0..j {
                    s -= self.values[si + k - fi] * self.values[sj + k - fj];
                }
                self.values[si + j - fi] = s / self.values[sj + j - fj];
            }
            let mut d = self.values[si + i - fi];
            for k in fi..i {
                let l = self.values[si + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(EitError::Solver(format!("matrix not positive definite at row {i} (pivot {d:e})")));
            }
            self.values[si + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let l = &self.l;
        let n = l.dim();
        for i in 0..n {
            let f = l.first[i];
            let row = &l.values[l.start[i]..l.start[i + 1]];
            let mut s = b[i];
            for (k, &a) in row[..i - f].iter().enumerate() {
                s -= a * b[f + k];
            }
            b[i] = s / row[i - f];
        }
        for i in (0..n).rev() {
            let f = l.first[i];
            let row = &l.values[l.start[i]..l.start[i + 1]];
            b[i] /= row[i - f];
            let bi = b[i];
            for (k, &a) in row[..i - f].iter().enumerate() {
                b[f + k] -= a * bi;
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering; `order[new] = old`. Handles disconnected graphs.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited vertex remains");
        let root = pseudo_peripheral(adjacency, seed, &visited);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].expect("queued vertices have levels");
        for &w in &adjacency[v] {
            if level[w].is_none() && !blocked[w] {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..8 {
        let level = bfs_levels(adjacency, root, blocked);
        let (far, d) = level
            .iter()
            .enumerate()
            .filter_map(|(v, l)| l.map(|l| (v, l)))
            .max_by_key(|&(v, l)| (l, std::cmp::Reverse(adjacency[v].len()), std::cmp::Reverse(v)))
            .expect("root has a level");
        if d <= depth {
            break;
        }
        depth = d;
        root = far;
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SkylineMatrix {
        let mut a = SkylineMatrix::from_pairs(n, (1..n).map(|i| (i, i - 1)));
        for i in 0..n {
            a.add(i, i, 2.0 + 1e-3);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn tridiagonal_solve_matches_product() {
        let a = laplacian_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 50];
        a.mul_vec(&x, &mut b);
        let chol = a.factor().unwrap();
        chol.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SkylineMatrix::from_pairs(2, [(1, 0)]);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.factor().is_err());
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![3], vec![2, 4], vec![1], vec![0], vec![1], vec![]];
        let mut order = reverse_cuthill_mckee(&adj);
        order.sort_unstable();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }
}
