use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, stage_seed, DataConfig, DataSource, DpSection, RunConfig};
use crate::attack::{
    absolute_distance, attack_user, baseline_popularity_reference, calibrate_tau, popular_items, AttackConfig,
    AttackRecord, Membership, TargetUser,
};
use crate::dataset::{
    load_interactions, load_table, parse_interactions, parse_table, split_membership, AttributeEncoder,
    AttributeMatrix, Interactions, MembershipSplit, RawTable,
};
use crate::defense::{perturb_member_interactions, DpConfig};
use crate::embedding::{factorize, FactorizationConfig, ItemEmbeddings};
use crate::error::{Error, Result};
use crate::eval::{mean_std, rho_medians, time_stage, MeanStd, MethodMetrics};
use crate::query::{CountingRecommender, Recommender};
use crate::recsys::{train_hybrid, train_preference, HybridConfig, HybridModel, PreferenceConfig};
use crate::scalar::Scalar;
use crate::synth;

/// Interactions plus the raw attribute tables they refer to.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub interactions: Interactions<T>,
    pub user_table: RawTable,
    pub item_table: RawTable,
}

pub fn load_dataset<T: Scalar>(cfg: &DataConfig) -> Result<Dataset<T>> {
    let (interactions, user_table, item_table) = match cfg.source {
        DataSource::Synthetic => {
            let files = synth::generate(&cfg.synthetic)?;
            (
                parse_interactions(&files.ratings, "synthetic u.data", &cfg.interaction_layout)?,
                parse_table(&files.users, "synthetic u.user", &cfg.user_layout)?,
                parse_table(&files.items, "synthetic u.item", &cfg.item_layout)?,
            )
        }
        DataSource::Files => (
            load_interactions(&cfg.interactions, &cfg.interaction_layout)?,
            load_table(&cfg.users, &cfg.user_layout)?,
            load_table(&cfg.items, &cfg.item_layout)?,
        ),
    };
    let mut interactions = interactions;
    if cfg.max_users > 0 {
        interactions = interactions.truncate_users(cfg.max_users);
    }
    if cfg.min_item_interactions > 1 {
        interactions = interactions.filter_items(cfg.min_item_interactions);
    }
    Ok(Dataset {
        interactions,
        user_table,
        item_table,
    })
}

/// Output of the preparation stage.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub interactions: Interactions<T>,
    pub split: MembershipSplit,
    /// Rows follow `interactions.user_ids()`.
    pub user_attributes: AttributeMatrix<T>,
    /// Rows follow `interactions.item_ids()`.
    pub item_attributes: AttributeMatrix<T>,
    pub user_encoder: AttributeEncoder,
    pub item_encoder: AttributeEncoder,
}

fn table_rows_for(table: &RawTable, id_column: &str, ids: &[&str]) -> Result<Vec<usize>> {
    let column = table.column(id_column)?;
    let index: HashMap<&str, usize> = column.iter().enumerate().map(|(k, s)| (*s, k)).collect();
    ids.iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| Error::MissingAttributes {
                kind: "user",
                id: id.to_string(),
            })
        })
        .collect()
}

/// Splits users and encodes attributes. Numeric user attributes are scaled
/// with ranges observed on the attacker's users only.
pub fn prepare<T: Scalar>(data: &Dataset<T>, cfg: &RunConfig, seed: u64) -> Result<Prepared<T>> {
    let split = split_membership(
        &data.interactions,
        cfg.split.member_frac,
        cfg.split.attacker_frac,
        derive_seed(seed, stage_seed::SPLIT),
    )?;
    prepare_with_split(data, cfg, split)
}

/// Encodes attributes for an existing split.
pub fn prepare_with_split<T: Scalar>(data: &Dataset<T>, cfg: &RunConfig, split: MembershipSplit) -> Result<Prepared<T>> {
    let interactions = data.interactions.clone();
    let attacker_ids: Vec<&str> = split
        .attacker_users
        .iter()
        .map(|&u| interactions.user_ids()[u].as_str())
        .collect();
    let range_rows = table_rows_for(&data.user_table, &cfg.data.user_schema.id_column, &attacker_ids)?;
    let user_encoder = AttributeEncoder::fit(&data.user_table, &cfg.data.user_schema, Some(&range_rows))?;
    let item_encoder = AttributeEncoder::fit(&data.item_table, &cfg.data.item_schema, None)?;
    let user_attributes = user_encoder
        .encode::<T>(&data.user_table)?
        .align(interactions.user_ids(), "user")?;
    let item_attributes = item_encoder
        .encode::<T>(&data.item_table)?
        .align(interactions.item_ids(), "item")?;
    Ok(Prepared {
        interactions,
        split,
        user_attributes,
        item_attributes,
        user_encoder,
        item_encoder,
    })
}

/// Attacker-side item embeddings from the attacker's own interactions.
pub fn embed<T: Scalar>(prepared: &Prepared<T>, cfg: &RunConfig, latent: usize, seed: u64) -> Result<ItemEmbeddings<T>> {
    let attacker = prepared.interactions.matrix().select_rows(&prepared.split.attacker_users);
    let e = &cfg.embedding;
    let fact = factorize(
        &attacker,
        &FactorizationConfig {
            latent,
            epochs: e.epochs,
            learning_rate: e.learning_rate,
            reg: e.reg,
            negative_ratio: e.negative_ratio,
            seed: derive_seed(seed, stage_seed::EMBEDDING),
            ..FactorizationConfig::default()
        },
    )?;
    Ok(fact.item_embeddings())
}

/// Trains the target recommender on member users, optionally on
/// Gaussian-perturbed interactions.
pub fn train_target<T: Scalar>(
    prepared: &Prepared<T>,
    cfg: &RunConfig,
    dp: Option<&DpSection>,
    seed: u64,
) -> Result<HybridModel<T>> {
    let members = &prepared.split.member_users;
    let source = match dp {
        Some(dp) => perturb_member_interactions(
            &prepared.interactions,
            members,
            &DpConfig {
                epsilon: dp.epsilon,
                delta: dp.delta,
                sensitivity: dp.sensitivity,
                seed: derive_seed(seed, stage_seed::DP),
            },
        )?,
        None => prepared.interactions.clone(),
    };
    let rows = source.matrix().select_rows(members);
    let t = &cfg.target;
    let preference = train_preference(
        &rows,
        members.clone(),
        &PreferenceConfig {
            latent: t.d_cf,
            epochs: t.preference_epochs,
            learning_rate: t.preference_learning_rate,
            reg: t.preference_reg,
            seed: derive_seed(seed, stage_seed::PREFERENCE),
            ..PreferenceConfig::default()
        },
    )?;
    let user_attrs = prepared.user_attributes.values().select_rows(members);
    train_hybrid(
        preference,
        &user_attrs,
        prepared.item_attributes.values(),
        &HybridConfig {
            variant: t.variant,
            hidden: t.hidden,
            output: t.d_s,
            dropout_rate: t.dropout_rate,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            similarity_weight: t.similarity_weight,
            batch_size: t.batch_size,
            seed: derive_seed(seed, stage_seed::HYBRID),
        },
    )
}

/// Labeled users the audit targets, split into a calibration part (used
/// only to fit the absolute baseline's threshold) and the reported part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub calibration: Vec<(usize, Membership)>,
    pub evaluation: Vec<(usize, Membership)>,
}

/// Balances members and non-members by subsampling the larger group, then
/// holds out `calibration_frac` of each group.
pub fn plan_evaluation(split: &MembershipSplit, calibration_frac: f64, seed: u64) -> EvalPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stage_seed::EVAL));
    let mut members = split.member_users.clone();
    let mut nonmembers = split.nonmember_users.clone();
    members.shuffle(&mut rng);
    nonmembers.shuffle(&mut rng);
    let size = members.len().min(nonmembers.len());
    members.truncate(size);
    nonmembers.truncate(size);
    let n_cal = if calibration_frac > 0.0 {
        ((calibration_frac * size as f64).round() as usize).clamp(1, size.saturating_sub(1))
    } else {
        0
    };
    let mut calibration = Vec::with_capacity(2 * n_cal);
    let mut evaluation = Vec::with_capacity(2 * (size - n_cal));
    for (group, truth) in [(&members, Membership::Member), (&nonmembers, Membership::NonMember)] {
        calibration.extend(group[..n_cal].iter().map(|&u| (u, truth)));
        evaluation.extend(group[n_cal..].iter().map(|&u| (u, truth)));
    }
    calibration.sort_unstable_by_key(|p| p.0);
    evaluation.sort_unstable_by_key(|p| p.0);
    EvalPlan {
        calibration,
        evaluation,
    }
}

/// Scores and verdicts of one method over the evaluation users.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredVerdicts {
    pub scores: Vec<f64>,
    pub verdicts: Vec<Membership>,
    pub truths: Vec<Membership>,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome<T> {
    pub records: Vec<AttackRecord<T>>,
    pub absolute: Option<ScoredVerdicts>,
    pub popularity: Option<ScoredVerdicts>,
    pub tau: Option<f64>,
    /// Queries issued by the reference-recommendation attack alone.
    pub attack_queries: usize,
    pub attack_seconds: f64,
}

fn target_user<'a, T: Scalar>(
    prepared: &'a Prepared<T>,
    histories: &'a [Vec<usize>],
    u: usize,
    truth: Membership,
) -> TargetUser<'a, T> {
    TargetUser {
        id: &prepared.interactions.user_ids()[u],
        history: &histories[u],
        attributes: prepared.user_attributes.row(u),
        truth,
    }
}

/// Runs the attack (and optionally both baselines) against a black-box
/// recommender.
pub fn run_attack<T: Scalar, R: Recommender<T>>(
    rs: &R,
    prepared: &Prepared<T>,
    embeddings: &ItemEmbeddings<T>,
    plan: &EvalPlan,
    attack: &AttackConfig,
    baselines: bool,
) -> Result<AttackOutcome<T>> {
    let histories: Vec<Vec<usize>> = (0..prepared.interactions.num_users())
        .map(|u| prepared.interactions.history(u))
        .collect();
    let counting = CountingRecommender::new(rs);
    let (records, attack_seconds) = time_stage(|| {
        plan.evaluation
            .iter()
            .map(|&(u, truth)| attack_user(&counting, embeddings, &target_user(prepared, &histories, u, truth), attack))
            .collect::<Result<Vec<_>>>()
    });
    let records = records?;
    let attack_queries = counting.queries();
    if !baselines {
        return Ok(AttackOutcome {
            records,
            absolute: None,
            popularity: None,
            tau: None,
            attack_queries,
            attack_seconds,
        });
    }

    let distance = |u: usize| absolute_distance(rs, embeddings, &histories[u], prepared.user_attributes.row(u), attack);
    let cal_distances = plan
        .calibration
        .iter()
        .map(|&(u, _)| distance(u))
        .collect::<Result<Vec<T>>>()?;
    let cal_labels: Vec<Membership> = plan.calibration.iter().map(|p| p.1).collect();
    let tau = calibrate_tau(&cal_distances, &cal_labels)?;
    let mut absolute = ScoredVerdicts::default();
    for &(u, truth) in &plan.evaluation {
        let d = distance(u)?;
        absolute.scores.push(-d.to_f64_lossy());
        absolute.verdicts.push(if d < tau {
            Membership::Member
        } else {
            Membership::NonMember
        });
        absolute.truths.push(truth);
    }

    let attacker_counts = prepared
        .interactions
        .select_users(&prepared.split.attacker_users)
        .item_counts();
    let popular = popular_items(&attacker_counts, attack.n);
    let mut popularity = ScoredVerdicts::default();
    for &(u, truth) in &plan.evaluation {
        let (rho, verdict) = baseline_popularity_reference(
            rs,
            embeddings,
            &histories[u],
            prepared.user_attributes.row(u),
            attack,
            &popular,
        )?;
        popularity.scores.push(-rho.to_f64_lossy());
        popularity.verdicts.push(verdict);
        popularity.truths.push(truth);
    }
    Ok(AttackOutcome {
        records,
        absolute: Some(absolute),
        popularity: Some(popularity),
        tau: Some(tau.to_f64_lossy()),
        attack_queries,
        attack_seconds,
    })
}

/// Metrics of one seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub proposed: MethodMetrics,
    pub absolute: Option<MethodMetrics>,
    pub popularity: Option<MethodMetrics>,
    pub member_median_rho: f64,
    pub nonmember_median_rho: f64,
    pub tau: Option<f64>,
    pub evaluated_users: usize,
    pub queries: usize,
    /// Stage name to seconds.
    pub timing: BTreeMap<String, f64>,
}

impl ScoredVerdicts {
    pub fn metrics(&self, fpr_targets: &[f64]) -> Result<MethodMetrics> {
        MethodMetrics::compute(&self.verdicts, &self.truths, &self.scores, fpr_targets)
    }
}

impl<T: Scalar> AttackOutcome<T> {
    /// The reference attack in the same shape as the baselines.
    pub fn proposed(&self) -> ScoredVerdicts {
        ScoredVerdicts {
            scores: self.records.iter().map(|r| r.score()).collect(),
            verdicts: self.records.iter().map(|r| r.verdict).collect(),
            truths: self.records.iter().map(|r| r.truth).collect(),
        }
    }
}

impl SeedMetrics {
    pub fn from_outcome<T: Scalar>(seed: u64, outcome: &AttackOutcome<T>, fpr_targets: &[f64]) -> Result<Self> {
        let mut m = Self::from_scored(
            seed,
            &outcome.proposed(),
            outcome.absolute.as_ref(),
            outcome.popularity.as_ref(),
            fpr_targets,
        )?;
        m.tau = outcome.tau;
        m.queries = outcome.attack_queries;
        m.timing.insert("attack".to_owned(), outcome.attack_seconds);
        Ok(m)
    }

    /// Metrics from per-method scores; rho is recovered as `-score` of the
    /// proposed method.
    pub fn from_scored(
        seed: u64,
        proposed: &ScoredVerdicts,
        absolute: Option<&ScoredVerdicts>,
        popularity: Option<&ScoredVerdicts>,
        fpr_targets: &[f64],
    ) -> Result<Self> {
        let rows: Vec<(Membership, f64)> = proposed
            .truths
            .iter()
            .zip(&proposed.scores)
            .map(|(&t, &s)| (t, -s))
            .collect();
        let (member_median_rho, nonmember_median_rho) = rho_medians(&rows);
        Ok(Self {
            seed,
            proposed: proposed.metrics(fpr_targets)?,
            absolute: absolute.map(|b| b.metrics(fpr_targets)).transpose()?,
            popularity: popularity.map(|b| b.metrics(fpr_targets)).transpose()?,
            member_median_rho,
            nonmember_median_rho,
            tau: None,
            evaluated_users: proposed.truths.len(),
            queries: 0,
            timing: BTreeMap::new(),
        })
    }
}

/// Everything produced for one seed.
#[derive(Debug)]
pub struct SeedRun<T> {
    pub prepared: Prepared<T>,
    pub embeddings: ItemEmbeddings<T>,
    pub model: HybridModel<T>,
    pub plan: EvalPlan,
    pub outcome: AttackOutcome<T>,
    pub metrics: SeedMetrics,
}

/// Prepare, embed, train, attack and score one seed in memory.
pub fn run_seed<T: Scalar>(data: &Dataset<T>, cfg: &RunConfig, seed: u64, dp: Option<&DpSection>) -> Result<SeedRun<T>> {
    let (prepared, t_prepare) = time_stage(|| prepare(data, cfg, seed));
    let prepared = prepared?;
    let (embeddings, t_embed) = time_stage(|| embed(&prepared, cfg, cfg.embedding.latent, seed));
    let embeddings = embeddings?;
    let (model, t_train) = time_stage(|| train_target(&prepared, cfg, dp, seed));
    let model = model?;
    let plan = plan_evaluation(&prepared.split, cfg.attack.calibration_frac, seed);
    let outcome = run_attack(
        &model,
        &prepared,
        &embeddings,
        &plan,
        &cfg.attack.attack_config(),
        cfg.attack.baselines,
    )?;
    let mut metrics = SeedMetrics::from_outcome(seed, &outcome, &cfg.eval.fpr_targets)?;
    metrics.timing.insert("prepare".into(), t_prepare);
    metrics.timing.insert("embed".into(), t_embed);
    metrics.timing.insert("train".into(), t_train);
    Ok(SeedRun {
        prepared,
        embeddings,
        model,
        plan,
        outcome,
        metrics,
    })
}

/// Mean and sample standard deviation over seeds, keyed by method and
/// metric (`asr`, `auc`, `tpr@<fpr>`).
pub fn summarize(seeds: &[SeedMetrics]) -> BTreeMap<String, BTreeMap<String, MeanStd>> {
    let mut out = BTreeMap::new();
    let methods: [(&str, fn(&SeedMetrics) -> Option<&MethodMetrics>); 3] = [
        ("reference", |s| Some(&s.proposed)),
        ("absolute_baseline", |s| s.absolute.as_ref()),
        ("popularity_baseline", |s| s.popularity.as_ref()),
    ];
    for (name, get) in methods {
        let metrics: Vec<&MethodMetrics> = seeds.iter().filter_map(get).collect();
        if metrics.is_empty() {
            continue;
        }
        let mut table = BTreeMap::new();
        table.insert("asr".to_owned(), mean_std(&metrics.iter().map(|m| m.asr).collect::<Vec<_>>()));
        table.insert("auc".to_owned(), mean_std(&metrics.iter().map(|m| m.auc).collect::<Vec<_>>()));
        for &(target, _) in &metrics[0].tpr_at_fpr {
            let values: Vec<f64> = metrics.iter().filter_map(|m| m.tpr_at(target)).collect();
            table.insert(format!("tpr@{target}"), mean_std(&values));
        }
        out.insert(name.to_owned(), table);
    }
    out
}
