//! Reference-recommendation membership inference.
//!
//! For a target user the attacker issues two black-box queries: one with the
//! user's history and attributes (target list) and one with attributes only
//! (reference list). Item lists are turned into feature vectors by averaging
//! attacker-side item embeddings, and membership is decided by the relative
//! metric `rho = ||v_t - v_h|| / ||v_t - v_r||`.
//!
//! Only the [`Recommender`] trait is used to reach the target model.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{FeatureVector, ItemEmbeddings};
use crate::error::{Error, Result};
use crate::query::{Query, RecommendationList, Recommender};
use crate::scalar::{euclidean, Scalar};

/// Floor applied to the reference distance.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NonMember,
}

impl Membership {
    pub fn is_member(self) -> bool {
        self == Membership::Member
    }
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Membership::Member => "member",
            Membership::NonMember => "nonmember",
        })
    }
}

impl FromStr for Membership {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "member" => Ok(Membership::Member),
            "nonmember" => Ok(Membership::NonMember),
            other => Err(Error::Format(format!("unknown membership label {other:?}"))),
        }
    }
}

fn check_vectors<T: Scalar>(vectors: &[&[T]]) -> Result<()> {
    let l = vectors[0].len();
    if vectors.iter().any(|v| v.len() != l) {
        return Err(Error::Dimension("feature vectors differ in length".into()));
    }
    if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("feature vector"));
    }
    Ok(())
}

/// `||v_t - v_h|| / max(||v_t - v_r||, floor)`; exactly 1 when both
/// distances are below the floor.
pub fn relative_metric<T: Scalar>(v_h: &[T], v_t: &[T], v_r: &[T]) -> Result<T> {
    check_vectors(&[v_h, v_t, v_r])?;
    let floor = T::of(DISTANCE_FLOOR);
    let to_history = euclidean(v_t, v_h);
    let to_reference = euclidean(v_t, v_r);
    if to_history < floor && to_reference < floor {
        return Ok(T::one());
    }
    Ok(to_history / to_reference.max(floor))
}

/// Member iff `rho < threshold`.
pub fn infer<T: Scalar>(rho: T, threshold: T) -> Result<Membership> {
    if !(rho >= T::zero()) {
        return Err(Error::InvalidArgument(format!("rho must be non-negative, got {rho}")));
    }
    if !(threshold > T::zero()) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    Ok(if rho < threshold {
        Membership::Member
    } else {
        Membership::NonMember
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub n: usize,
    pub threshold: f64,
    pub exclude_history: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n: 10,
            threshold: 1.0,
            exclude_history: false,
        }
    }
}

/// One target user as seen by the attacker.
#[derive(Clone, Copy, Debug)]
pub struct TargetUser<'a, T> {
    pub id: &'a str,
    pub history: &'a [usize],
    pub attributes: &'a [T],
    pub truth: Membership,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttackRecord<T> {
    pub user_id: String,
    pub v_h: FeatureVector<T>,
    pub v_t: FeatureVector<T>,
    pub v_r: FeatureVector<T>,
    pub rho: T,
    /// `||v_t - v_h||`
    pub dist_target_history: T,
    /// `||v_t - v_r||`
    pub dist_target_reference: T,
    pub threshold: T,
    pub verdict: Membership,
    pub truth: Membership,
    pub query_count: usize,
}

impl<T: Scalar> AttackRecord<T> {
    pub fn correct(&self) -> bool {
        self.verdict == self.truth
    }

    /// Membership score for ROC analysis; larger is more member-like.
    pub fn score(&self) -> f64 {
        -self.rho.to_f64_lossy()
    }
}

/// Query with history and attributes.
pub fn target_query<T: Scalar, R: Recommender<T>>(
    rs: &R,
    history: &[usize],
    attributes: &[T],
    n: usize,
    exclude_history: bool,
) -> Result<RecommendationList<T>> {
    rs.recommend(&Query {
        history: Some(history),
        attributes,
        n,
        exclude_history,
    })
}

/// Query with attributes only.
pub fn reference_query<T: Scalar, R: Recommender<T>>(
    rs: &R,
    attributes: &[T],
    n: usize,
) -> Result<RecommendationList<T>> {
    rs.recommend(&Query::attributes_only(attributes, n))
}

/// Runs the full two-query attack for one user.
pub fn attack_user<T: Scalar, R: Recommender<T>>(
    rs: &R,
    embeddings: &ItemEmbeddings<T>,
    user: &TargetUser<'_, T>,
    cfg: &AttackConfig,
) -> Result<AttackRecord<T>> {
    if user.history.is_empty() {
        return Err(Error::Empty(format!("history of user {}", user.id)));
    }
    let target = target_query(rs, user.history, user.attributes, cfg.n, cfg.exclude_history)?;
    let reference = reference_query(rs, user.attributes, cfg.n)?;
    let v_h = embeddings.aggregate(user.history)?;
    let v_t = embeddings.aggregate(target.item_ids())?;
    let v_r = embeddings.aggregate(reference.item_ids())?;
    let rho = relative_metric(v_h.as_slice(), v_t.as_slice(), v_r.as_slice())?;
    let threshold = T::of(cfg.threshold);
    let verdict = infer(rho, threshold)?;
    Ok(AttackRecord {
        user_id: user.id.to_owned(),
        dist_target_history: euclidean(v_t.as_slice(), v_h.as_slice()),
        dist_target_reference: euclidean(v_t.as_slice(), v_r.as_slice()),
        v_h,
        v_t,
        v_r,
        rho,
        threshold,
        verdict,
        truth: user.truth,
        query_count: 2,
    })
}

/// `||v_t - v_h||` from a single target query (the linear-metric baseline).
pub fn absolute_distance<T: Scalar, R: Recommender<T>>(
    rs: &R,
    embeddings: &ItemEmbeddings<T>,
    history: &[usize],
    attributes: &[T],
    cfg: &AttackConfig,
) -> Result<T> {
    let target = target_query(rs, history, attributes, cfg.n, cfg.exclude_history)?;
    let v_h = embeddings.aggregate(history)?;
    let v_t = embeddings.aggregate(target.item_ids())?;
    Ok(euclidean(v_t.as_slice(), v_h.as_slice()))
}

/// Absolute-distance baseline: member iff `||v_t - v_h|| < tau`.
pub fn baseline_absolute<T: Scalar, R: Recommender<T>>(
    rs: &R,
    embeddings: &ItemEmbeddings<T>,
    history: &[usize],
    attributes: &[T],
    cfg: &AttackConfig,
    tau: T,
) -> Result<(T, Membership)> {
    let distance = absolute_distance(rs, embeddings, history, attributes, cfg)?;
    let verdict = if distance < tau {
        Membership::Member
    } else {
        Membership::NonMember
    };
    Ok((distance, verdict))
}

/// Picks `tau` maximizing accuracy of `distance < tau` on a labeled
/// calibration set. Candidates are every observed distance plus one value
/// above the maximum; ties go to the smallest candidate.
pub fn calibrate_tau<T: Scalar>(distances: &[T], labels: &[Membership]) -> Result<T> {
    if distances.is_empty() {
        return Err(Error::Empty("calibration set".into()));
    }
    if distances.len() != labels.len() {
        return Err(Error::Dimension("distances and labels differ in length".into()));
    }
    let mut candidates: Vec<T> = distances.to_vec();
    let max = candidates.iter().copied().fold(T::zero(), T::max);
    candidates.push(max + max.abs().max(T::one()));
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    candidates.dedup();
    let mut best = (0usize, candidates[0]);
    for &tau in &candidates {
        let correct = distances
            .iter()
            .zip(labels)
            .filter(|(&d, &l)| (d < tau) == l.is_member())
            .count();
        if correct > best.0 {
            best = (correct, tau);
        }
    }
    Ok(best.1)
}

/// Global top-`n` items by interaction count; ties by ascending id.
pub fn popular_items(item_counts: &[usize], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..item_counts.len()).collect();
    ids.sort_by(|&a, &b| item_counts[b].cmp(&item_counts[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// Relative metric with a constant popularity-based reference list; one
/// target query.
pub fn baseline_popularity_reference<T: Scalar, R: Recommender<T>>(
    rs: &R,
    embeddings: &ItemEmbeddings<T>,
    history: &[usize],
    attributes: &[T],
    cfg: &AttackConfig,
    popular: &[usize],
) -> Result<(T, Membership)> {
    let target = target_query(rs, history, attributes, cfg.n, cfg.exclude_history)?;
    let v_h = embeddings.aggregate(history)?;
    let v_t = embeddings.aggregate(target.item_ids())?;
    let v_r = embeddings.aggregate(popular)?;
    let rho = relative_metric(v_h.as_slice(), v_t.as_slice(), v_r.as_slice())?;
    Ok((rho, infer(rho, T::of(cfg.threshold))?))
}

const RESULTS_HEADER: &str = "user_id\ttruth\trho\tverdict\tdist_target_history\tdist_target_reference";

/// Writes one tab-separated row per record.
pub fn write_records<T: Scalar>(path: &Path, records: &[AttackRecord<T>]) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.user_id, r.truth, r.rho, r.verdict, r.dist_target_history, r.dist_target_reference
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Row of an attack results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub user_id: String,
    pub truth: Membership,
    pub rho: f64,
    pub verdict: Membership,
    pub dist_target_history: f64,
    pub dist_target_reference: f64,
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: source.clone(),
            line: k + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        rows.push(ResultRow {
            user_id: f[0].to_owned(),
            truth: f[1].parse()?,
            rho: num(f[2])?,
            verdict: f[3].parse()?,
            dist_target_history: num(f[4])?,
            dist_target_reference: num(f[5])?,
        });
    }
    Ok(rows)
}
