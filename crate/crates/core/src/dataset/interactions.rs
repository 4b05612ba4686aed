use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

/// Field separator for delimited text files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Tab,
    /// MovieLens 1M `::` separator.
    DoubleColon,
    Comma,
    Pipe,
    Other(String),
}

impl Delimiter {
    pub fn as_str(&self) -> &str {
        match self {
            Delimiter::Tab => "\t",
            Delimiter::DoubleColon => "::",
            Delimiter::Comma => ",",
            Delimiter::Pipe => "|",
            Delimiter::Other(s) => s,
        }
    }

    pub fn split<'a>(&'a self, line: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        line.split(self.as_str()).map(str::trim)
    }
}

impl Default for Delimiter {
    fn default() -> Self {
        Delimiter::Tab
    }
}

/// Column layout of an interaction file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionLayout {
    pub delimiter: Delimiter,
    pub user_column: usize,
    pub item_column: usize,
    pub rating_column: usize,
    pub has_header: bool,
}

impl Default for InteractionLayout {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Tab,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            has_header: false,
        }
    }
}

impl InteractionLayout {
    pub fn movielens_100k() -> Self {
        Self::default()
    }

    pub fn movielens_1m() -> Self {
        Self {
            delimiter: Delimiter::DoubleColon,
            ..Self::default()
        }
    }
}

/// Binary user-item interaction history with external id maps.
///
/// Values lie in `[0, 1]`; loaded data is binary, perturbed data may be
/// continuous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Interactions<T> {
    matrix: SparseMatrix<T>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

/// Sorts ids numerically when every id is an integer, lexicographically
/// otherwise.
pub(crate) fn ordered_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = ids.into_iter().collect();
    let mut out: Vec<String> = set.into_iter().map(str::to_owned).collect();
    if out.iter().all(|s| s.parse::<u64>().is_ok()) {
        out.sort_by_key(|s| s.parse::<u64>().unwrap_or(0));
    }
    out
}

impl<T: Scalar> Interactions<T> {
    pub fn new(matrix: SparseMatrix<T>, user_ids: Vec<String>, item_ids: Vec<String>) -> Result<Self> {
        if matrix.num_rows() != user_ids.len() || matrix.num_cols() != item_ids.len() {
            return Err(Error::Dimension(format!(
                "{}x{} matrix with {} user ids and {} item ids",
                matrix.num_rows(),
                matrix.num_cols(),
                user_ids.len(),
                item_ids.len()
            )));
        }
        for r in 0..matrix.num_rows() {
            if matrix
                .row(r)
                .iter()
                .any(|&(_, v)| v < T::zero() || v > T::one())
            {
                return Err(Error::InvalidArgument(format!(
                    "user {} has interaction values outside [0, 1]",
                    user_ids[r]
                )));
            }
        }
        Ok(Self {
            matrix,
            user_ids,
            item_ids,
        })
    }

    /// Binary interactions from `(user, item)` index pairs with generated ids
    /// `0..num_users` / `0..num_items`.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let matrix = SparseMatrix::from_triplets(
            num_users,
            num_items,
            pairs.into_iter().map(|(u, i)| (u, i, T::one())),
        )?;
        Self::new(
            matrix,
            (0..num_users).map(|u| u.to_string()).collect(),
            (0..num_items).map(|i| i.to_string()).collect(),
        )
    }

    pub fn num_users(&self) -> usize {
        self.matrix.num_rows()
    }

    pub fn num_items(&self) -> usize {
        self.matrix.num_cols()
    }

    pub fn matrix(&self) -> &SparseMatrix<T> {
        &self.matrix
    }

    pub fn row(&self, user: usize) -> &[(usize, T)] {
        self.matrix.row(user)
    }

    /// Item ids with a positive value for `user`.
    pub fn history(&self, user: usize) -> Vec<usize> {
        self.matrix.row(user).iter().map(|&(i, _)| i).collect()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_counts(&self) -> Vec<usize> {
        self.matrix.column_counts()
    }

    pub fn is_binary(&self) -> bool {
        (0..self.num_users()).all(|u| self.row(u).iter().all(|&(_, v)| v == T::one()))
    }

    /// Keeps the listed users, in order, over the full item universe.
    pub fn select_users(&self, users: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(users),
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: self.item_ids.clone(),
        }
    }

    /// Keeps the first `max_users` users in id order.
    pub fn truncate_users(&self, max_users: usize) -> Self {
        let keep: Vec<usize> = (0..self.num_users().min(max_users)).collect();
        self.select_users(&keep)
    }

    /// Drops items with fewer than `min_count` interactions and recompacts
    /// item indices. Users left with empty histories are kept.
    pub fn filter_items(&self, min_count: usize) -> Self {
        let counts = self.item_counts();
        let mut remap = vec![usize::MAX; self.num_items()];
        let mut item_ids = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            if c >= min_count {
                remap[i] = item_ids.len();
                item_ids.push(self.item_ids[i].clone());
            }
        }
        let mut matrix = self.matrix.clone();
        for row in matrix.rows_mut().iter_mut() {
            *row = row
                .iter()
                .filter(|&&(i, _)| remap[i] != usize::MAX)
                .map(|&(i, v)| (remap[i], v))
                .collect();
        }
        matrix.set_cols(item_ids.len());
        Self {
            matrix,
            user_ids: self.user_ids.clone(),
            item_ids,
        }
    }

    pub(crate) fn with_matrix(&self, matrix: SparseMatrix<T>) -> Self {
        Self {
            matrix,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    /// Writes `user<TAB>item<TAB>value<TAB>0` records using external ids.
    pub fn write(&self, path: &Path, layout: &InteractionLayout) -> Result<()> {
        let mut out = String::new();
        let d = layout.delimiter.as_str();
        if layout.has_header {
            out.push_str(&["user_id", "item_id", "rating", "timestamp"].join(d));
            out.push('\n');
        }
        for u in 0..self.num_users() {
            for &(i, v) in self.row(u) {
                let mut fields = vec![String::new(); 4];
                fields[layout.user_column.min(3)] = self.user_ids[u].clone();
                fields[layout.item_column.min(3)] = self.item_ids[i].clone();
                fields[layout.rating_column.min(3)] = v.to_string();
                for f in fields.iter_mut().filter(|f| f.is_empty()) {
                    *f = "0".into();
                }
                out.push_str(&fields.join(d));
                out.push('\n');
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Parses interaction records. Every `(user, item)` pair present becomes a
/// value of 1 regardless of rating; timestamps are ignored.
pub fn parse_interactions<T: Scalar>(
    text: &str,
    source: &str,
    layout: &InteractionLayout,
) -> Result<Interactions<T>> {
    let mut records: Vec<(&str, &str)> = Vec::new();
    let needed = layout
        .user_column
        .max(layout.item_column)
        .max(layout.rating_column)
        + 1;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && layout.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = layout.delimiter.split(line).collect();
        let parse_err = |message: String| Error::Parse {
            path: source.to_owned(),
            line: lineno + 1,
            message,
        };
        if fields.len() < needed {
            return Err(parse_err(format!(
                "expected at least {needed} fields, found {}",
                fields.len()
            )));
        }
        let (user, item) = (fields[layout.user_column], fields[layout.item_column]);
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let rating = fields[layout.rating_column];
        if !rating.parse::<f64>().is_ok_and(f64::is_finite) {
            return Err(parse_err(format!("rating {rating:?} is not a number")));
        }
        records.push((user, item));
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("no interaction records in {source}")));
    }
    let user_ids = ordered_ids(records.iter().map(|r| r.0));
    let item_ids = ordered_ids(records.iter().map(|r| r.1));
    let user_index: HashMap<&str, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect();
    let item_index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect();
    let matrix = SparseMatrix::from_triplets(
        user_ids.len(),
        item_ids.len(),
        records
            .iter()
            .map(|&(u, i)| (user_index[u], item_index[i], T::one())),
    )?;
    Interactions::new(matrix, user_ids, item_ids)
}

pub fn load_interactions<T: Scalar>(path: &Path, layout: &InteractionLayout) -> Result<Interactions<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, &path.display().to_string(), layout)
}
