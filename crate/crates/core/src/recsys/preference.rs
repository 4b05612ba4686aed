use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dense::{Cholesky, Matrix};
use crate::embedding::{factorize, FactorizationConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

/// Ridge strength used when folding a raw history into preference space.
pub const FOLD_IN_RIDGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreferenceConfig {
    /// `d_cf`
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub reg: f64,
    pub negative_ratio: usize,
    pub seed: u64,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            latent: 32,
            epochs: 300,
            learning_rate: 0.05,
            reg: 0.001,
            negative_ratio: 4,
            seed: 0,
        }
    }
}

/// Interaction-derived preference vectors: `P` for training users, `Q` for
/// every item.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PreferenceModel<T> {
    pub user_factors: Matrix<T>,
    pub item_factors: Matrix<T>,
    /// Dataset user index of each `P` row.
    pub member_users: Vec<usize>,
    pub fold_in_ridge: f64,
    #[serde(skip)]
    fold: OnceLock<Cholesky<T>>,
}

impl<T: Scalar> PreferenceModel<T> {
    pub fn new(user_factors: Matrix<T>, item_factors: Matrix<T>, member_users: Vec<usize>) -> Result<Self> {
        if user_factors.rows() != member_users.len() || user_factors.cols() != item_factors.cols() {
            return Err(Error::Dimension("preference factor shapes disagree".into()));
        }
        Ok(Self {
            user_factors,
            item_factors,
            member_users,
            fold_in_ridge: FOLD_IN_RIDGE,
            fold: OnceLock::new(),
        })
    }

    pub fn latent(&self) -> usize {
        self.item_factors.cols()
    }

    pub fn num_items(&self) -> usize {
        self.item_factors.rows()
    }

    fn fold_solver(&self) -> Result<&Cholesky<T>> {
        if let Some(c) = self.fold.get() {
            return Ok(c);
        }
        let mut gram = self.item_factors.gram();
        let ridge = T::of(self.fold_in_ridge);
        for d in 0..gram.rows() {
            gram.set(d, d, gram.get(d, d) + ridge);
        }
        let chol = Cholesky::new(&gram)?;
        Ok(self.fold.get_or_init(|| chol))
    }

    /// Least-squares preference vector for a binary history:
    /// `(Q^T Q + ridge I)^-1 Q^T r`.
    pub fn fold_in(&self, history: &[usize]) -> Result<Vec<T>> {
        let mut rhs = vec![T::zero(); self.latent()];
        for &i in history {
            if i >= self.num_items() {
                return Err(Error::InvalidArgument(format!(
                    "history item {i} outside {} items",
                    self.num_items()
                )));
            }
            for (a, &q) in rhs.iter_mut().zip(self.item_factors.row(i)) {
                *a = *a + q;
            }
        }
        Ok(self.fold_solver()?.solve(&rhs))
    }

    /// `P_u . Q_i` for every training user and item.
    pub fn score_matrix(&self) -> Matrix<T> {
        self.user_factors.mul_transpose(&self.item_factors)
    }
}

/// Factorizes the training users' interaction rows into `P` and `Q`.
pub fn train_preference<T: Scalar>(
    member_rows: &SparseMatrix<T>,
    member_users: Vec<usize>,
    cfg: &PreferenceConfig,
) -> Result<PreferenceModel<T>> {
    if member_rows.num_rows() == 0 || member_rows.nnz() == 0 {
        return Err(Error::Empty("member interactions".into()));
    }
    if member_rows.num_rows() != member_users.len() {
        return Err(Error::Dimension("member ids do not match member rows".into()));
    }
    let fact = factorize(
        member_rows,
        &FactorizationConfig {
            latent: cfg.latent,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            reg: cfg.reg,
            negative_ratio: cfg.negative_ratio,
            seed: cfg.seed,
            ..FactorizationConfig::default()
        },
    )?;
    PreferenceModel::new(fact.user_factors, fact.item_factors, member_users)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PreferenceModel<f64> {
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        PreferenceModel::new(p, q, vec![0]).unwrap()
    }

    #[test]
    fn fold_in_solves_ridge_normal_equations() {
        let m = model();
        let v = m.fold_in(&[0, 2]).unwrap();
        // Q^T Q + 0.1 I = [[2.1, 1], [1, 5.1]], Q^T r = [2, 1]
        let det = 2.1 * 5.1 - 1.0;
        let oracle = [(5.1 * 2.0 - 1.0) / det, (2.1 - 2.0) / det];
        for (a, b) in v.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(m.fold_in(&[]).unwrap(), vec![0.0, 0.0]);
        assert!(m.fold_in(&[3]).is_err());
    }

    #[test]
    fn shape_checks() {
        let q = Matrix::<f64>::zeros(3, 2);
        assert!(PreferenceModel::new(Matrix::zeros(2, 2), q.clone(), vec![0]).is_err());
        assert!(PreferenceModel::new(Matrix::zeros(1, 3), q, vec![0]).is_err());
        let empty = SparseMatrix::<f64>::new(2, 3);
        assert!(train_preference(&empty, vec![0, 1], &PreferenceConfig::default()).is_err());
    }
}
