//! Attacker-side matrix factorization and item-list feature vectors.
//!
//! The auxiliary interaction matrix `C` (p users x q items) is approximated
//! by `H W^T`; rows of `W` are item latent features. Training is plain SGD
//! over observed cells plus uniformly sampled unobserved cells, with L2
//! regularization on both factors.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::sparse::SparseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorizationConfig {
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub reg: f64,
    /// Sampled unobserved cells per observed cell.
    pub negative_ratio: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Factors start i.i.d. uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for FactorizationConfig {
    fn default() -> Self {
        Self {
            latent: 64,
            epochs: 100,
            learning_rate: 0.05,
            reg: 0.01,
            negative_ratio: 4,
            seed: 0,
            checkpoint_every: 10,
            init_scale: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCheckpoint {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FactorizationResult<T> {
    /// `H`, one row per user of the factorized matrix.
    pub user_factors: Matrix<T>,
    /// `W`, one row per item.
    pub item_factors: Matrix<T>,
    pub latent: usize,
    pub final_loss: T,
    pub iterations_run: usize,
    /// Accepted checkpoints; losses are non-increasing.
    pub checkpoints: Vec<LossCheckpoint>,
    pub seed: u64,
}

impl<T: Scalar> FactorizationResult<T> {
    pub fn item_embeddings(&self) -> ItemEmbeddings<T> {
        ItemEmbeddings {
            factors: self.item_factors.clone(),
            seed: self.seed,
            loss: self.final_loss.to_f64_lossy(),
        }
    }

    /// `H W^T`
    pub fn reconstruct(&self) -> Matrix<T> {
        self.user_factors.mul_transpose(&self.item_factors)
    }
}

/// Gradient of `(c - h.w)^2` with respect to `h` and `w`.
#[inline]
pub fn cell_gradient<T: Scalar>(target: T, h: &[T], w: &[T]) -> (Vec<T>, Vec<T>) {
    let e = target - dot(h, w);
    let two = T::of(2.0);
    (
        w.iter().map(|&wk| -two * e * wk).collect(),
        h.iter().map(|&hk| -two * e * hk).collect(),
    )
}

/// `||C - H W^T||_F^2 + reg (||H||^2 + ||W||^2)` over a dense target.
pub fn dense_objective<T: Scalar>(c: &[Vec<T>], h: &Matrix<T>, w: &Matrix<T>, reg: T) -> T {
    let mut loss = T::zero();
    for (u, row) in c.iter().enumerate() {
        for (i, &target) in row.iter().enumerate() {
            let e = target - dot(h.row(u), w.row(i));
            loss = loss + e * e;
        }
    }
    loss + reg * (h.frobenius_sq() + w.frobenius_sq())
}

/// Analytic gradient of [`dense_objective`], accumulated cell by cell with
/// the same per-cell rule the SGD solver applies.
pub fn dense_gradient<T: Scalar>(c: &[Vec<T>], h: &Matrix<T>, w: &Matrix<T>, reg: T) -> (Matrix<T>, Matrix<T>) {
    let two = T::of(2.0);
    let mut gh = h.map(|v| two * reg * v);
    let mut gw = w.map(|v| two * reg * v);
    for (u, row) in c.iter().enumerate() {
        for (i, &target) in row.iter().enumerate() {
            let (dh, dw) = cell_gradient(target, h.row(u), w.row(i));
            for (a, b) in gh.row_mut(u).iter_mut().zip(dh) {
                *a = *a + b;
            }
            for (a, b) in gw.row_mut(i).iter_mut().zip(dw) {
                *a = *a + b;
            }
        }
    }
    (gh, gw)
}

/// Expected SGD objective: squared error on observed cells, squared
/// prediction on unobserved cells weighted by their sampling rate, plus L2.
pub fn sampled_objective<T: Scalar>(
    c: &SparseMatrix<T>,
    h: &Matrix<T>,
    w: &Matrix<T>,
    reg: T,
    negative_ratio: usize,
) -> T {
    let q = c.num_cols();
    let gram = w.gram();
    let l = w.cols();
    let mut loss = T::zero();
    let mut gh = vec![T::zero(); l];
    for u in 0..c.num_rows() {
        let hu = h.row(u);
        let row = c.row(u);
        let mut observed = T::zero();
        let mut observed_pred_sq = T::zero();
        for &(i, target) in row {
            let pred = dot(hu, w.row(i));
            let e = target - pred;
            observed = observed + e * e;
            observed_pred_sq = observed_pred_sq + pred * pred;
        }
        for (a, g) in gh.iter_mut().enumerate() {
            *g = dot(gram.row(a), hu);
        }
        let all_pred_sq = dot(hu, &gh);
        let unobserved = (all_pred_sq - observed_pred_sq).max(T::zero());
        let nnz = row.len();
        let weight = if q > nnz && negative_ratio > 0 {
            (T::from_usize_lossy(negative_ratio * nnz.max(1)) / T::from_usize_lossy(q - nnz)).min(T::one())
        } else {
            T::zero()
        };
        loss = loss + observed + weight * unobserved;
    }
    loss + reg * (h.frobenius_sq() + w.frobenius_sq())
}

fn validate(c_rows: usize, c_cols: usize, cfg: &FactorizationConfig) -> Result<()> {
    if cfg.latent == 0 || cfg.latent > c_rows.min(c_cols) {
        return Err(Error::InvalidArgument(format!(
            "latent width {} must be in 1..={} for a {c_rows}x{c_cols} matrix",
            cfg.latent,
            c_rows.min(c_cols)
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || !(cfg.reg >= 0.0) {
        return Err(Error::InvalidArgument("learning_rate must be positive and reg non-negative".into()));
    }
    Ok(())
}

/// Factorizes `c` into `H W^T` by SGD.
///
/// The objective is checked every `checkpoint_every` epochs (and after the
/// first and last epoch). A checkpoint that is worse than the best accepted
/// one rolls the factors back to it and halves the learning rate, so the
/// accepted loss sequence never increases. A non-finite loss is reported
/// as divergence.
pub fn factorize<T: Scalar>(c: &SparseMatrix<T>, cfg: &FactorizationConfig) -> Result<FactorizationResult<T>> {
    let (p, q) = (c.num_rows(), c.num_cols());
    validate(p, q, cfg)?;
    let l = cfg.latent;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = cfg.init_scale;
    let mut h = Matrix::from_fn(p, l, |_, _| T::of(rng.random_range(-scale..=scale)));
    let mut w = Matrix::from_fn(q, l, |_, _| T::of(rng.random_range(-scale..=scale)));
    let reg = T::of(cfg.reg);
    let mut lr = cfg.learning_rate;

    let mut best_loss = sampled_objective(c, &h, &w, reg, cfg.negative_ratio);
    if !best_loss.is_finite() {
        return Err(Error::NonFinite("factorization input"));
    }
    let mut best = (h.clone(), w.clone());
    let mut checkpoints = Vec::new();
    let every = cfg.checkpoint_every.max(1);

    let mut cells: Vec<(usize, usize, T)> = Vec::with_capacity(c.nnz() * (1 + cfg.negative_ratio));
    for epoch in 1..=cfg.epochs {
        cells.clear();
        for u in 0..p {
            let row = c.row(u);
            cells.extend(row.iter().map(|&(i, v)| (u, i, v)));
            if row.len() >= q || cfg.negative_ratio == 0 {
                continue;
            }
            let negatives = (cfg.negative_ratio * row.len().max(1)).min(q - row.len());
            for _ in 0..negatives {
                for _attempt in 0..8 {
                    let j = rng.random_range(0..q);
                    if !c.contains(u, j) {
                        cells.push((u, j, T::zero()));
                        break;
                    }
                }
            }
        }
        // Fisher-Yates
        for k in (1..cells.len()).rev() {
            let j = rng.random_range(0..=k);
            cells.swap(k, j);
        }
        let step = T::of(lr);
        for &(u, i, target) in &cells {
            let hu = h.row_mut(u);
            let wi = w.row_mut(i);
            let e = target - dot(hu, wi);
            for k in 0..l {
                let (hk, wk) = (hu[k], wi[k]);
                hu[k] = hk + step * (e * wk - reg * hk);
                wi[k] = wk + step * (e * hk - reg * wk);
            }
        }

        if epoch == 1 || epoch % every == 0 || epoch == cfg.epochs {
            let loss = sampled_objective(c, &h, &w, reg, cfg.negative_ratio);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss.to_f64_lossy(),
                });
            }
            let tolerance = T::of(1e-9) * best_loss.abs().max(T::one());
            if loss <= best_loss + tolerance {
                best_loss = best_loss.min(loss);
                best = (h.clone(), w.clone());
                checkpoints.push(LossCheckpoint {
                    epoch,
                    loss: best_loss.to_f64_lossy(),
                    learning_rate: lr,
                });
            } else {
                h = best.0.clone();
                w = best.1.clone();
                lr *= 0.5;
            }
        }
    }

    Ok(FactorizationResult {
        user_factors: best.0,
        item_factors: best.1,
        latent: l,
        final_loss: best_loss,
        iterations_run: cfg.epochs,
        checkpoints,
        seed: cfg.seed,
    })
}

/// Mean of item latent rows over a list of items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(self.0.iter().map(|&v| v * c).collect())
    }
}

/// Item latent matrix `W` as consumed by the attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ItemEmbeddings<T> {
    pub factors: Matrix<T>,
    pub seed: u64,
    pub loss: f64,
}

impl<T: Scalar> ItemEmbeddings<T> {
    pub fn new(factors: Matrix<T>) -> Self {
        Self {
            factors,
            seed: 0,
            loss: 0.0,
        }
    }

    pub fn num_items(&self) -> usize {
        self.factors.rows()
    }

    pub fn latent(&self) -> usize {
        self.factors.cols()
    }

    pub fn aggregate(&self, item_ids: &[usize]) -> Result<FeatureVector<T>> {
        aggregate_items(&self.factors, item_ids)
    }

    /// Text dump: a header line with `q`, `l`, seed and loss, then one
    /// whitespace-separated row per item.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "# refmia-embeddings q={} l={} seed={} loss={}\n",
            self.num_items(),
            self.latent(),
            self.seed,
            self.loss
        );
        for row in self.factors.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty(format!("embedding file {source}")))?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).and_then(|t| t.strip_prefix('=')))
                .ok_or_else(|| Error::Parse {
                    path: source.clone(),
                    line: 1,
                    message: format!("header lacks `{key}`"),
                })
        };
        let bad = |line: usize, message: String| Error::Parse {
            path: source.clone(),
            line,
            message,
        };
        let q: usize = field("q")?.parse().map_err(|_| bad(1, "bad q".into()))?;
        let l: usize = field("l")?.parse().map_err(|_| bad(1, "bad l".into()))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad(1, "bad seed".into()))?;
        let loss: f64 = field("loss")?.parse().map_err(|_| bad(1, "bad loss".into()))?;
        let mut data = Vec::with_capacity(q * l);
        for (k, line) in lines.enumerate() {
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<T>().map_err(|_| bad(k + 2, format!("bad value {tok:?}")))?);
            }
            if data.len() - before != l {
                return Err(bad(k + 2, format!("expected {l} values")));
            }
        }
        let factors = Matrix::from_vec(q, l, data)?;
        Ok(Self { factors, seed, loss })
    }
}

/// `(1/k) * sum of w_id` over `item_ids`.
pub fn aggregate_items<T: Scalar>(w: &Matrix<T>, item_ids: &[usize]) -> Result<FeatureVector<T>> {
    if item_ids.is_empty() {
        return Err(Error::Empty("cannot aggregate an empty item list".into()));
    }
    let mut acc = vec![T::zero(); w.cols()];
    for &id in item_ids {
        if id >= w.rows() {
            return Err(Error::InvalidArgument(format!(
                "item {id} outside embedding table of {} items",
                w.rows()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(w.row(id)) {
            *a = *a + v;
        }
    }
    let k = T::from_usize_lossy(item_ids.len());
    acc.iter_mut().for_each(|a| *a = *a / k);
    Ok(FeatureVector(acc))
}
