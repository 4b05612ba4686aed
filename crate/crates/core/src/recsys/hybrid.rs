use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preference::PreferenceModel;
use super::tower::{Adam, AdamState, Tower, TowerAdam};
use crate::dense::{gemm, ridge_solve, Matrix};
use crate::error::{Error, Result};
use crate::query::{top_n, Query, RecommendationList, Recommender};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HybridVariant {
    /// Input dropout on the preference vector (DropoutNet-style).
    DropoutHybrid,
    /// Attribute-to-preference transform mixed in by a learned gate
    /// (Heater-style).
    GatedHybrid,
}

impl std::fmt::Display for HybridVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HybridVariant::DropoutHybrid => "dropout-hybrid",
            HybridVariant::GatedHybrid => "gated-hybrid",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub variant: HybridVariant,
    pub hidden: usize,
    /// Width of the shared scoring space.
    pub output: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the attribute-transform similarity penalty (gated only).
    pub similarity_weight: f64,
    /// Users per optimizer step; 0 trains full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            variant: HybridVariant::DropoutHybrid,
            hidden: 64,
            output: 64,
            dropout_rate: 0.5,
            epochs: 300,
            learning_rate: 0.005,
            similarity_weight: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Attribute regression and gate of the gated variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GateBlock<T> {
    /// `(attr_dim + 1) x d_cf`, last row is the bias.
    pub regression: Matrix<T>,
    pub logit: T,
}

impl<T: Scalar> GateBlock<T> {
    fn transform(&self, attrs: &[T]) -> Vec<T> {
        let d = self.regression.cols();
        let mut out = self.regression.row(attrs.len()).to_vec();
        for (k, &a) in attrs.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.regression.row(k)) {
                *o = *o + a * r;
            }
        }
        debug_assert_eq!(out.len(), d);
        out
    }

    fn gate(&self) -> T {
        T::one() / (T::one() + (-self.logit).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    /// Mean squared error per epoch.
    pub losses: Vec<f64>,
}

/// A trained hybrid recommender. Reachable by the audit only through
/// [`Recommender`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HybridModel<T> {
    variant: HybridVariant,
    config: HybridConfig,
    preference: PreferenceModel<T>,
    user_tower: Tower<T>,
    item_tower: Tower<T>,
    gate: Option<GateBlock<T>>,
    item_attributes: Matrix<T>,
    user_attr_dim: usize,
    metadata: TrainingMetadata,
    #[serde(skip)]
    item_reps: OnceLock<Matrix<T>>,
}

fn concat_rows<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(a.rows(), b.rows());
    Matrix::from_fn(a.rows(), a.cols() + b.cols(), |r, c| {
        if c < a.cols() {
            a.get(r, c)
        } else {
            b.get(r, c - a.cols())
        }
    })
}

/// Trains the hybrid maps so that `user_map(P_u, attrs_u) . item_map(Q_i,
/// attrs_i)` reproduces `P_u . Q_i` for every training user and item.
pub fn train_hybrid<T: Scalar>(
    preference: PreferenceModel<T>,
    user_attributes: &Matrix<T>,
    item_attributes: &Matrix<T>,
    cfg: &HybridConfig,
) -> Result<HybridModel<T>> {
    let members = preference.user_factors.rows();
    let items = preference.num_items();
    let d_cf = preference.latent();
    if user_attributes.rows() != members {
        return Err(Error::Dimension(format!(
            "{} user attribute rows for {members} training users",
            user_attributes.rows()
        )));
    }
    if item_attributes.rows() != items {
        return Err(Error::Dimension(format!(
            "{} item attribute rows for {items} items",
            item_attributes.rows()
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout_rate) {
        return Err(Error::InvalidArgument("dropout_rate must be in [0, 1)".into()));
    }
    if cfg.epochs == 0 || cfg.hidden == 0 || cfg.output == 0 {
        return Err(Error::InvalidArgument("epochs and layer widths must be positive".into()));
    }
    let ua = user_attributes.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut user_tower = Tower::new(d_cf + ua, cfg.hidden, cfg.output, &mut rng);
    let mut item_tower = Tower::new(d_cf + item_attributes.cols(), cfg.hidden, cfg.output, &mut rng);

    let p = &preference.user_factors;
    let target = preference.score_matrix();
    let item_input = concat_rows(&preference.item_factors, item_attributes);
    let attrs_bias = Matrix::from_fn(members, ua + 1, |r, c| {
        if c < ua {
            user_attributes.get(r, c)
        } else {
            T::one()
        }
    });

    let mut gate = match cfg.variant {
        HybridVariant::DropoutHybrid => None,
        HybridVariant::GatedHybrid => Some(GateBlock {
            regression: ridge_solve(&attrs_bias, p, T::of(1e-2))?,
            logit: T::zero(),
        }),
    };

    let mut adam = Adam::new(cfg.learning_rate);
    let mut ut_state = TowerAdam::default();
    let mut it_state = TowerAdam::default();
    let mut reg_state = AdamState::default();
    let mut logit_state = AdamState::default();
    let sim_w = T::of(cfg.similarity_weight);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let batch_size = if cfg.batch_size == 0 { members } else { cfg.batch_size.min(members) };
    let mut order: Vec<usize> = (0..members).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = T::zero();
        let mut sim = T::zero();
        for batch in order.chunks(batch_size) {
            let b = batch.len();
            let dropped: Vec<bool> = batch
                .iter()
                .map(|_| cfg.dropout_rate > 0.0 && rng.random_bool(cfg.dropout_rate))
                .collect();
            let g = gate.as_ref().map(GateBlock::gate);
            let mut user_input = Matrix::zeros(b, d_cf + ua);
            let mut transformed = Matrix::zeros(b, d_cf);
            for (k, &u) in batch.iter().enumerate() {
                let row = user_input.row_mut(k);
                let (pref_part, attr_part) = row.split_at_mut(d_cf);
                attr_part.copy_from_slice(user_attributes.row(u));
                match &gate {
                    None => {
                        if !dropped[k] {
                            pref_part.copy_from_slice(p.row(u));
                        }
                    }
                    Some(block) => {
                        let r = block.transform(user_attributes.row(u));
                        let gv = g.unwrap_or_else(T::zero);
                        for c in 0..d_cf {
                            pref_part[c] = if dropped[k] {
                                r[c]
                            } else {
                                gv * p.get(u, c) + (T::one() - gv) * r[c]
                            };
                        }
                        transformed.row_mut(k).copy_from_slice(&r);
                    }
                }
            }

            let (u_hidden, u_out) = user_tower.forward(&user_input);
            let (i_hidden, i_out) = item_tower.forward(&item_input);

            // residuals and gradients of the batch mean squared error
            let scale = T::of(2.0) / T::from_usize_lossy(b * items);
            let mut residual = Matrix::zeros(b, items);
            gemm(T::one(), &u_out, false, &i_out, true, T::zero(), &mut residual);
            for (k, &u) in batch.iter().enumerate() {
                for (e, &t) in residual.row_mut(k).iter_mut().zip(target.row(u)) {
                    *e = *e - t;
                    sse = sse + *e * *e;
                }
            }
            let mut d_u = Matrix::zeros(b, cfg.output);
            gemm(scale, &residual, false, &i_out, false, T::zero(), &mut d_u);
            let mut d_i = Matrix::zeros(items, cfg.output);
            gemm(scale, &residual, true, &u_out, false, T::zero(), &mut d_i);

            adam.step += 1;
            let (ug, d_user_in) = user_tower.backward(&user_input, &u_hidden, &d_u);
            let (ig, _) = item_tower.backward(&item_input, &i_hidden, &d_i);
            user_tower.apply(&adam, &ug, &mut ut_state);
            item_tower.apply(&adam, &ig, &mut it_state);

            if let Some(block) = gate.as_mut() {
                let gv = block.gate();
                let mut d_reg = Matrix::zeros(ua + 1, d_cf);
                let mut d_logit = T::zero();
                let sim_scale = T::of(2.0) * sim_w / T::from_usize_lossy(b);
                for (k, &u) in batch.iter().enumerate() {
                    let dm = &d_user_in.row(k)[..d_cf];
                    let r = transformed.row(k);
                    let mut dr = vec![T::zero(); d_cf];
                    for c in 0..d_cf {
                        let diff = r[c] - p.get(u, c);
                        sim = sim + diff * diff;
                        if dropped[k] {
                            dr[c] = dm[c];
                        } else {
                            dr[c] = (T::one() - gv) * dm[c];
                            d_logit = d_logit + dm[c] * (p.get(u, c) - r[c]) * gv * (T::one() - gv);
                        }
                        dr[c] = dr[c] + sim_scale * diff;
                    }
                    for (c, &a) in attrs_bias.row(u).iter().enumerate() {
                        if a != T::zero() {
                            crate::scalar::axpy(a, &dr, d_reg.row_mut(c));
                        }
                    }
                }
                adam.update(block.regression.as_mut_slice(), d_reg.as_slice(), &mut reg_state);
                let mut logit = [block.logit];
                adam.update(&mut logit, &[d_logit], &mut logit_state);
                block.logit = logit[0];
            }
        }
        let mut loss = sse / T::from_usize_lossy(members * items);
        if gate.is_some() {
            loss = loss + sim_w * sim / T::from_usize_lossy(members);
        }
        let loss_f = loss.to_f64_lossy();
        if !loss_f.is_finite() {
            return Err(Error::Divergence { epoch, loss: loss_f });
        }
        losses.push(loss_f);
    }
    if !user_tower.is_finite() || !item_tower.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }

    Ok(HybridModel {
        variant: cfg.variant,
        config: cfg.clone(),
        preference,
        user_tower,
        item_tower,
        gate,
        item_attributes: item_attributes.clone(),
        user_attr_dim: ua,
        metadata: TrainingMetadata {
            epochs: cfg.epochs,
            seed: cfg.seed,
            losses,
        },
        item_reps: OnceLock::new(),
    })
}

impl<T: Scalar> HybridModel<T> {
    pub fn variant(&self) -> HybridVariant {
        self.variant
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub fn user_attr_dim(&self) -> usize {
        self.user_attr_dim
    }

    /// Learned gate value of the gated variant.
    pub fn gate_value(&self) -> Option<T> {
        self.gate.as_ref().map(GateBlock::gate)
    }

    fn item_representations(&self) -> &Matrix<T> {
        self.item_reps.get_or_init(|| {
            let input = concat_rows(&self.preference.item_factors, &self.item_attributes);
            self.item_tower.forward(&input).1
        })
    }

    fn user_representation(&self, history: Option<&[usize]>, attributes: &[T]) -> Result<Vec<T>> {
        if attributes.len() != self.user_attr_dim {
            return Err(Error::Dimension(format!(
                "{} attribute values, model expects {}",
                attributes.len(),
                self.user_attr_dim
            )));
        }
        if attributes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query attributes"));
        }
        let d_cf = self.preference.latent();
        let pref = match history {
            Some(h) => Some(self.preference.fold_in(h)?),
            None => None,
        };
        let mut input = Vec::with_capacity(d_cf + attributes.len());
        match (&self.gate, pref) {
            (None, Some(p)) => input.extend(p),
            (None, None) => input.extend(std::iter::repeat_n(T::zero(), d_cf)),
            (Some(block), Some(p)) => {
                let r = block.transform(attributes);
                let g = block.gate();
                input.extend(p.iter().zip(&r).map(|(&pk, &rk)| g * pk + (T::one() - g) * rk));
            }
            (Some(block), None) => input.extend(block.transform(attributes)),
        }
        input.extend_from_slice(attributes);
        Ok(self.user_tower.forward_one(&input))
    }

    /// Scores every item for one query.
    pub fn score_all(&self, history: Option<&[usize]>, attributes: &[T]) -> Result<Vec<T>> {
        let user = self.user_representation(history, attributes)?;
        Ok(self
            .item_representations()
            .iter_rows()
            .map(|row| dot(&user, row))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Top-n query against a trained hybrid model.
///
/// With a history the preference input is its ridge fold-in onto `Q`;
/// without one the preference input is empty (zero vector, or the attribute
/// transform for the gated variant).
pub fn recommend<T: Scalar>(
    model: &HybridModel<T>,
    history: Option<&[usize]>,
    attributes: &[T],
    n: usize,
    exclude_history: bool,
) -> Result<RecommendationList<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let scores = model.score_all(history, attributes)?;
    let excluded: &[usize] = match (exclude_history, history) {
        (true, Some(h)) => h,
        _ => &[],
    };
    top_n(&scores, n, excluded)
}

impl<T: Scalar> Recommender<T> for HybridModel<T> {
    fn recommend(&self, query: &Query<'_, T>) -> Result<RecommendationList<T>> {
        recommend(self, query.history, query.attributes, query.n, query.exclude_history)
    }

    fn num_items(&self) -> usize {
        self.preference.num_items()
    }
}
