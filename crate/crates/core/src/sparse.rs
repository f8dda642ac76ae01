//! Symmetric sparse matrix in compressed-row form with both halves stored.

use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SymCsr {
    /// Build from upper-triangle triplets `(i, j, v)` with `i <= j`.
    /// Duplicate coordinates are summed.
    pub fn from_upper(n: usize, triplets: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut entries: Vec<(u32, u32, f64)> = Vec::new();
        for (i, j, v) in triplets {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            assert!((j as usize) < n, "index {j} out of bounds for n={n}");
            entries.push((i, j, v));
            if i != j {
                entries.push((j, i, v));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i as usize + 1] += 1;
            cols.push(j);
            vals.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        SymCsr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Build from a dense row-major `n x n` matrix; only the upper triangle
    /// is read and exact zeros are not stored.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = dense[i * n + j];
                if v != 0.0 {
                    trip.push((i as u32, j as u32, v));
                }
            }
        }
        Self::from_upper(n, trip)
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_upper(n, std::iter::empty())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries counting both halves.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Upper-triangle entries `(i, j, v)`, `i <= j`, sorted by `(i, j)`.
    pub fn upper(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .filter(move |(&j, _)| j as usize >= i)
                .map(move |(&j, &v)| (i as u32, j, v))
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum()
    }

    /// `Y * U` for a dense row-major `n x k` matrix `U`.
    pub fn mul_dense(&self, u: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(u.len(), self.n * k);
        let mut out = vec![0.0; self.n * k];
        par::for_each_row(&mut out, k, |i, row| {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let uj = &u[j as usize * k..(j as usize + 1) * k];
                for (o, x) in row.iter_mut().zip(uj) {
                    *o += v * x;
                }
            }
        });
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[i * self.n + j as usize] = v;
            }
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }
}
