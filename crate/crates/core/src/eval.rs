//! Attack-quality metrics, distribution exports, sweeps and timing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackRecord, Membership};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fraction of correct verdicts.
pub fn accuracy(verdicts: &[Membership], truths: &[Membership]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::Empty("no verdicts to score".into()));
    }
    if verdicts.len() != truths.len() {
        return Err(Error::Dimension("verdicts and labels differ in length".into()));
    }
    let correct = verdicts.iter().zip(truths).filter(|(v, t)| v == t).count();
    Ok(correct as f64 / verdicts.len() as f64)
}

/// Attack success rate over attack records.
pub fn asr<T: Scalar>(records: &[AttackRecord<T>]) -> Result<f64> {
    let verdicts: Vec<Membership> = records.iter().map(|r| r.verdict).collect();
    let truths: Vec<Membership> = records.iter().map(|r| r.truth).collect();
    accuracy(&verdicts, &truths)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Members are predicted for `score >= threshold`. The leading `+inf`
    /// point serializes as JSON `null`.
    #[serde(with = "inf_as_null")]
    pub threshold: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// ROC operating points for every distinct score threshold (descending),
/// starting from the empty prediction at `+inf`.
pub fn roc_curve(scores: &[f64], is_member: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != is_member.len() {
        return Err(Error::Dimension("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("membership scores"));
    }
    let positives = is_member.iter().filter(|&&m| m).count();
    let negatives = is_member.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::OneClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if is_member[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold,
        });
    }
    Ok(points)
}

/// Best true-positive rate among operating points whose false-positive rate
/// does not exceed `fpr_target`.
pub fn tpr_at_fpr(scores: &[f64], is_member: &[bool], fpr_target: f64) -> Result<f64> {
    Ok(roc_curve(scores, is_member)?
        .iter()
        .filter(|p| p.fpr <= fpr_target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Trapezoidal area under the ROC curve.
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn sorted_rho(rows: &[(Membership, f64)], group: Membership) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().filter(|r| r.0 == group).map(|r| r.1).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Median rho of members and of non-members.
pub fn rho_medians(rows: &[(Membership, f64)]) -> (f64, f64) {
    (
        quantile(&sorted_rho(rows, Membership::Member), 0.5),
        quantile(&sorted_rho(rows, Membership::NonMember), 0.5),
    )
}

/// Writes a `truth<TAB>rho` table, one row per record, preceded by
/// commented quantile summaries per group.
pub fn export_rho_distribution(path: &Path, rows: &[(Membership, f64)]) -> Result<()> {
    let mut out = String::new();
    let labels: Vec<String> = SUMMARY_QUANTILES.iter().map(|q| format!("q{:.2}", q)).collect();
    out.push_str(&format!("# quantiles: group\tcount\t{}\n", labels.join("\t")));
    for group in [Membership::Member, Membership::NonMember] {
        let sorted = sorted_rho(rows, group);
        let qs: Vec<String> = SUMMARY_QUANTILES
            .iter()
            .map(|&q| quantile(&sorted, q).to_string())
            .collect();
        out.push_str(&format!("# {group}\t{}\t{}\n", sorted.len(), qs.join("\t")));
    }
    out.push_str("truth\trho\n");
    for (truth, rho) in rows {
        out.push_str(&format!("{truth}\t{rho}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub asr: f64,
    pub tpr: f64,
}

/// Evaluates `run` once per value, in order.
pub fn sweep(values: &[f64], mut run: impl FnMut(f64) -> Result<(f64, f64)>) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let (asr, tpr) = run(value)?;
            Ok(SweepRow { value, asr, tpr })
        })
        .collect()
}

pub fn write_sweep(path: &Path, parameter: &str, rows: &[SweepRow]) -> Result<()> {
    let mut out = format!("{parameter}\tasr\ttpr\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.value, r.asr, r.tpr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs `stage` and returns its output with wall-clock seconds.
pub fn time_stage<R>(stage: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = stage();
    (out, start.elapsed().as_secs_f64())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Metrics of one attack method on one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub asr: f64,
    /// `(fpr_target, tpr)` pairs.
    pub tpr_at_fpr: Vec<(f64, f64)>,
    pub auc: f64,
}

impl MethodMetrics {
    pub fn compute(verdicts: &[Membership], truths: &[Membership], scores: &[f64], fpr_targets: &[f64]) -> Result<Self> {
        let labels: Vec<bool> = truths.iter().map(|t| t.is_member()).collect();
        let roc = roc_curve(scores, &labels)?;
        let tpr_at_fpr = fpr_targets
            .iter()
            .map(|&target| {
                let tpr = roc
                    .iter()
                    .filter(|p| p.fpr <= target)
                    .map(|p| p.tpr)
                    .fold(0.0, f64::max);
                (target, tpr)
            })
            .collect();
        Ok(Self {
            asr: accuracy(verdicts, truths)?,
            tpr_at_fpr,
            auc: roc_auc(&roc),
        })
    }

    pub fn tpr_at(&self, target: f64) -> Option<f64> {
        self.tpr_at_fpr
            .iter()
            .find(|(t, _)| (*t - target).abs() < 1e-12)
            .map(|p| p.1)
    }
}

/// Machine-readable evaluation report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Headline ASR of the reference-recommendation attack (seed mean).
    pub asr: f64,
    pub tpr_at_fpr: Vec<(f64, f64)>,
    pub roc: Vec<RocPoint>,
    /// Stage name to seconds.
    pub timing: BTreeMap<String, f64>,
    pub score_definition: String,
    pub seeds: Vec<u64>,
    /// Per-method mean and sample standard deviation over seeds.
    pub summary: BTreeMap<String, BTreeMap<String, MeanStd>>,
    pub per_seed: Vec<serde_json::Value>,
    pub notes: Vec<String>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
