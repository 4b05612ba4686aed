//! Row-compressed sparse matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse matrix stored as one sorted `(column, value)` list per row.
///
/// Zero values are never stored; an absent cell is an unobserved cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseMatrix<T> {
    cols: usize,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(num_rows: usize, cols: usize) -> Self {
        Self {
            cols,
            rows: vec![Vec::new(); num_rows],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate cells keep the
    /// last value; zeros are dropped.
    pub fn from_triplets(
        num_rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); num_rows];
        for (r, c, v) in triplets {
            if r >= num_rows || c >= cols {
                return Err(Error::Dimension(format!(
                    "cell ({r}, {c}) outside {num_rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse matrix cell"));
            }
            rows[r].push((c, v));
        }
        for row in &mut rows {
            // stable sort keeps insertion order among duplicates
            row.sort_by_key(|&(c, _)| c);
            let mut dedup: Vec<(usize, T)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match dedup.last_mut() {
                    Some(last) if last.0 == c => last.1 = v,
                    _ => dedup.push((c, v)),
                }
            }
            dedup.retain(|&(_, v)| v != T::zero());
            *row = dedup;
        }
        Ok(Self { cols, rows })
    }

    pub fn from_dense(dense: &[Vec<T>]) -> Result<Self> {
        let cols = dense.first().map_or(0, Vec::len);
        if dense.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged dense input".into()));
        }
        Self::from_triplets(
            dense.len(),
            cols,
            dense
                .iter()
                .enumerate()
                .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (r, c, v))),
        )
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn num_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[(usize, T)] {
        &self.rows[r]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let row = &self.rows[r];
        row.binary_search_by_key(&c, |&(col, _)| col)
            .map_or(T::zero(), |k| row[k].1)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rows[r]
            .binary_search_by_key(&c, |&(col, _)| col)
            .is_ok()
    }

    pub fn dense_row(&self, r: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for &(c, v) in &self.rows[r] {
            out[c] = v;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.num_rows()).map(|r| self.dense_row(r)).collect()
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            cols: self.cols,
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
        }
    }

    pub(crate) fn replace_row(&mut self, r: usize, row: Vec<(usize, T)>) {
        debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
        self.rows[r] = row;
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<Vec<(usize, T)>> {
        &mut self.rows
    }

    pub(crate) fn set_cols(&mut self, cols: usize) {
        self.cols = cols;
    }

    /// Number of stored cells per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for row in &self.rows {
            for &(c, _) in row {
                counts[c] += 1;
            }
        }
        counts
    }
}
