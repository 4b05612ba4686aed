//! One PASS/FAIL line per acceptance criterion.
//!
//! Criteria 1, 2, 3 and 10 are deterministic and always fail the target when
//! they fail. The experiment criteria (4 to 9) are reported; they fail the
//! target only with `REFMIA_ACCEPTANCE_STRICT=1`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refmia_core::analysis::{f, f_double_prime, f_prime};
use refmia_core::attack::{attack_user, relative_metric, AttackConfig, Membership, TargetUser};
use refmia_core::dense::Matrix;
use refmia_core::embedding::{dense_gradient, dense_objective, factorize, FactorizationConfig, ItemEmbeddings};
use refmia_core::error::Result;
use refmia_core::eval::{mean_std, tpr_at_fpr};
use refmia_core::experiment::{embed, load_dataset, run_attack, run_seed, DpSection, EvalPlan, RunConfig, SeedRun};
use refmia_core::query::{top_n, CountingRecommender, Query, RecommendationList, Recommender};
use refmia_core::sparse::SparseMatrix;

// ----- tolerances -----
const C1_F_HALF: f64 = 1e-12;
const C1_DERIV: f64 = 1e-6;
const C1_INVARIANCE: f64 = 1e-9;
const C1_SECONDS: f64 = 1.0;
const C2_SECONDS: f64 = 5.0;
const C3_ERROR: f64 = 0.10;
const C3_GRAD: f64 = 1e-5;
const C3_SECONDS: f64 = 30.0;
const C4_ASR: f64 = 0.70;
const C4_MARGIN: f64 = 0.05;
const C4_SECONDS: f64 = 600.0;
const C5_RATIO: f64 = 2.0;
const C6_SEEDS: usize = 4;
const C7_DROP: f64 = 0.05;
const C8_SPREAD: f64 = 0.15;
const C9_SECONDS: f64 = 5.0;
const C9_LINEAR: f64 = 0.5;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u8, name: &str, deterministic: bool, outcome: &Outcome, failures: &mut Vec<(u8, bool)>) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {name:<26} {verdict}  {}", outcome.detail);
    if !outcome.pass {
        failures.push((id, deterministic));
    }
}

// ----- 1 -----

fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Gram-Schmidt on three random vectors
    let mut basis: Vec<[f64; 3]> = Vec::new();
    while basis.len() < 3 {
        let mut v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for b in &basis {
            let d: f64 = (0..3).map(|k| v[k] * b[k]).sum();
            for k in 0..3 {
                v[k] -= d * b[k];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            basis.push([v[0] / norm, v[1] / norm, v[2] / norm]);
        }
    }
    [basis[0], basis[1], basis[2]]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let half_err = (f(0.5f64).unwrap() - 1.0).abs();
    let h = 1e-5;
    let mut deriv_err = 0.0f64;
    for k in 0..100 {
        let x = 0.005 + 0.9 * k as f64 / 99.0;
        let fd1 = (f(x + h).unwrap() - f(x - h).unwrap()) / (2.0 * h);
        let fd2 = (f_prime(x + h).unwrap() - f_prime(x - h).unwrap()) / (2.0 * h);
        deriv_err = deriv_err
            .max((fd1 - f_prime(x).unwrap()).abs() / f_prime(x).unwrap())
            .max((fd2 - f_double_prime(x).unwrap()).abs() / f_double_prime(x).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut inv_err = 0.0f64;
    for _ in 0..1000 {
        let mut v = || [0; 3].map(|_| rng.random_range(-5.0..5.0));
        let (vh, vt, vr) = (v(), v(), v());
        let c = rng.random_range(0.01..100.0);
        let rot = rotation(&mut rng);
        let apply = |x: &[f64; 3]| (0..3).map(|i| (0..3).map(|k| rot[i][k] * x[k]).sum()).collect::<Vec<f64>>();
        let base = relative_metric(&vh, &vt, &vr).unwrap();
        let scaled = relative_metric(&vh.map(|x| c * x), &vt.map(|x| c * x), &vr.map(|x| c * x)).unwrap();
        let turned = relative_metric(&apply(&vh), &apply(&vt), &apply(&vr)).unwrap();
        let rel = |a: f64| (a - base).abs() / base.max(1.0);
        inv_err = inv_err.max(rel(scaled)).max(rel(turned));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: half_err <= C1_F_HALF && deriv_err <= C1_DERIV && inv_err <= C1_INVARIANCE && secs < C1_SECONDS,
        detail: format!(
            "|f(1/2)-1| = {half_err:.1e} (<= {C1_F_HALF:.0e}); max rel FD error {deriv_err:.1e} (<= {C1_DERIV:.0e}); \
             invariance {inv_err:.1e} (<= {C1_INVARIANCE:.0e}); {secs:.3} s (< {C1_SECONDS} s)"
        ),
    }
}

// ----- 2 -----

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for instance in 0..50 {
        let labels: Vec<bool> = (0..200).map(|k| k % 2 == 0 || rng.random_bool(0.1)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let s: f64 = rng.random_range(0.0..1.0) + if l { 0.3 } else { 0.0 };
                if instance % 2 == 0 { (s * 20.0).round() / 20.0 } else { s }
            })
            .collect();
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        for target in [0.0, 0.01, 0.05, 0.1, 0.5] {
            let mut oracle = 0.0f64;
            for &t in scores.iter().chain(&[f64::INFINITY]) {
                let tp = scores.iter().zip(&labels).filter(|(&s, &l)| l && s >= t).count() as f64;
                let fp = scores.iter().zip(&labels).filter(|(&s, &l)| !l && s >= t).count() as f64;
                if fp / neg <= target {
                    oracle = oracle.max(tp / pos);
                }
            }
            if tpr_at_fpr(&scores, &labels, target).unwrap() != oracle {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: mismatches == 0 && secs < C2_SECONDS,
        detail: format!("{mismatches} mismatches over 50 x 200 scores x 5 targets; {secs:.3} s (< {C2_SECONDS} s)"),
    }
}

// ----- 3 -----

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let patterns: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..40).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect())
        .collect();
    let c: Vec<Vec<f64>> = (0..50).map(|u| patterns[u % 5].clone()).collect();
    let cfg = FactorizationConfig {
        latent: 5,
        epochs: 2000,
        learning_rate: 0.02,
        reg: 1e-4,
        negative_ratio: 4,
        init_scale: 0.3,
        seed: 5,
        ..Default::default()
    };
    let fact = factorize(&SparseMatrix::from_dense(&c).unwrap(), &cfg).unwrap();
    let approx = fact.reconstruct();
    let (mut num, mut den) = (0.0, 0.0);
    for (u, row) in c.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            num += (v - approx.get(u, i)).powi(2);
            den += v * v;
        }
    }
    let err = (num / den).sqrt();

    let small: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).collect();
    let hm = Matrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
    let wm = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    let (gh, _) = dense_gradient(&small, &hm, &wm, 0.05);
    let eps = 1e-6;
    let mut grad_err = 0.0f64;
    for k in 0..hm.as_slice().len() {
        let (mut p, mut m) = (hm.clone(), hm.clone());
        p.as_mut_slice()[k] += eps;
        m.as_mut_slice()[k] -= eps;
        let fd = (dense_objective(&small, &p, &wm, 0.05) - dense_objective(&small, &m, &wm, 0.05)) / (2.0 * eps);
        let a = gh.as_slice()[k];
        grad_err = grad_err.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: err < C3_ERROR && grad_err < C3_GRAD && secs < C3_SECONDS,
        detail: format!(
            "rank-5 relative error {err:.4} (< {C3_ERROR}); gradient rel error {grad_err:.1e} (< {C3_GRAD:.0e}); {secs:.1} s (< {C3_SECONDS} s)"
        ),
    }
}

// ----- 4 to 9 -----

struct Runs {
    cfg: RunConfig,
    runs: Vec<SeedRun<f64>>,
    seconds: f64,
}

fn seed_runs() -> Runs {
    let cfg = RunConfig::default();
    let data = load_dataset::<f64>(&cfg.data).expect("dataset");
    let start = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&s| run_seed(&data, &cfg, s, None).expect("seed run"))
        .collect();
    Runs { cfg, runs, seconds: start.elapsed().as_secs_f64() }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    mean_std(&v).mean
}

fn criterion_4(r: &Runs) -> Outcome {
    let asr = mean(r.runs.iter().map(|s| s.metrics.proposed.asr));
    let abs = mean(r.runs.iter().map(|s| s.metrics.absolute.as_ref().unwrap().asr));
    let pop = mean(r.runs.iter().map(|s| s.metrics.popularity.as_ref().unwrap().asr));
    let per_seed: Vec<String> = r.runs.iter().map(|s| format!("{:.3}", s.metrics.proposed.asr)).collect();
    Outcome {
        pass: asr >= C4_ASR && asr - abs >= C4_MARGIN && asr - pop >= C4_MARGIN && r.seconds < C4_SECONDS,
        detail: format!(
            "mean ASR {asr:.3} (>= {C4_ASR}) [{}]; absolute {abs:.3} (margin {:+.3}, need >= {C4_MARGIN}); \
             popularity {pop:.3} (margin {:+.3}); {:.0} s (< {C4_SECONDS} s)",
            per_seed.join(" "),
            asr - abs,
            asr - pop,
            r.seconds
        ),
    }
}

fn criterion_5(r: &Runs, fpr: f64) -> Outcome {
    let ours = mean(r.runs.iter().map(|s| s.metrics.proposed.tpr_at(fpr).unwrap()));
    let abs = mean(r.runs.iter().map(|s| s.metrics.absolute.as_ref().unwrap().tpr_at(fpr).unwrap()));
    Outcome {
        pass: ours >= C5_RATIO * abs,
        detail: format!(
            "mean TPR@{fpr} proposed {ours:.3} vs absolute {abs:.3}; ratio {:.2} (>= {C5_RATIO})",
            ours / abs.max(1e-12)
        ),
    }
}

fn criterion_6(r: &Runs) -> Outcome {
    let ok = r
        .runs
        .iter()
        .filter(|s| s.metrics.member_median_rho < 1.0 && 1.0 < s.metrics.nonmember_median_rho)
        .count();
    let medians: Vec<String> = r
        .runs
        .iter()
        .map(|s| format!("{:.3}/{:.3}", s.metrics.member_median_rho, s.metrics.nonmember_median_rho))
        .collect();
    Outcome {
        pass: ok >= C6_SEEDS,
        detail: format!("{ok}/5 seeds with member median < 1 < non-member median (>= {C6_SEEDS}) [{}]", medians.join(" ")),
    }
}

fn criterion_7(r: &Runs) -> Outcome {
    let data = load_dataset::<f64>(&r.cfg.data).expect("dataset");
    let mut cfg = r.cfg.clone();
    cfg.attack.baselines = false;
    let dp_asr = |epsilon: f64| -> Vec<f64> {
        let dp = DpSection { enabled: true, epsilon, ..Default::default() };
        SEEDS
            .iter()
            .map(|&s| run_seed(&data, &cfg, s, Some(&dp)).expect("dp run").metrics.proposed.asr)
            .collect()
    };
    let none: Vec<f64> = r.runs.iter().map(|s| s.metrics.proposed.asr).collect();
    let tight = dp_asr(0.1);
    let loose = dp_asr(1.0);
    let drop = mean(none.iter().zip(&tight).map(|(a, b)| a - b));
    let (m_tight, m_loose) = (mean(tight.iter().copied()), mean(loose.iter().copied()));
    Outcome {
        pass: drop >= C7_DROP && m_tight <= m_loose,
        detail: format!(
            "no DP {:.3}, eps=1.0 {m_loose:.3}, eps=0.1 {m_tight:.3}; paired drop {drop:.3} (>= {C7_DROP}); \
             eps=0.1 <= eps=1.0: {}",
            mean(none.iter().copied()),
            m_tight <= m_loose
        ),
    }
}

fn spread(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min)
}

fn criterion_8(r: &Runs) -> Outcome {
    let run = &r.runs[0];
    let seed = SEEDS[0];
    let values: Vec<usize> = (1..=10).map(|k| 10 * k).collect();
    let base = r.cfg.attack.attack_config();
    let by_n: Vec<f64> = values
        .iter()
        .map(|&n| {
            let attack = AttackConfig { n, ..base.clone() };
            let out = run_attack(&run.model, &run.prepared, &run.embeddings, &run.plan, &attack, false).unwrap();
            asr_of(&out.records)
        })
        .collect();
    let by_l: Vec<f64> = values
        .iter()
        .map(|&l| {
            let emb = embed(&run.prepared, &r.cfg, l, seed).unwrap();
            let out = run_attack(&run.model, &run.prepared, &emb, &run.plan, &base, false).unwrap();
            asr_of(&out.records)
        })
        .collect();
    let (sn, sl) = (spread(&by_n), spread(&by_l));
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    Outcome {
        pass: sn <= C8_SPREAD && sl <= C8_SPREAD,
        detail: format!(
            "seed {seed}: spread over n {sn:.3} [{}], over l {sl:.3} [{}] (<= {C8_SPREAD})",
            fmt(&by_n),
            fmt(&by_l)
        ),
    }
}

fn asr_of(records: &[refmia_core::AttackRecord]) -> f64 {
    records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64
}

fn criterion_9(r: &Runs) -> Outcome {
    let run = &r.runs[0];
    let split = &run.prepared.split;
    let pool: Vec<(usize, Membership)> = split
        .member_users
        .iter()
        .map(|&u| (u, Membership::Member))
        .chain(split.nonmember_users.iter().map(|&u| (u, Membership::NonMember)))
        .collect();
    let plan = EvalPlan {
        calibration: Vec::new(),
        evaluation: (0..1000).map(|k| pool[k % pool.len()]).collect(),
    };
    let attack = r.cfg.attack.attack_config();
    let out = run_attack(&run.model, &run.prepared, &run.embeddings, &plan, &attack, false).unwrap();
    let attack_secs = out.attack_seconds;

    // per-user metric cost with pre-fetched lists
    let lists: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = plan
        .evaluation
        .iter()
        .map(|&(u, _)| {
            let h = run.prepared.interactions.history(u);
            let attrs = run.prepared.user_attributes.row(u);
            let t = run.model.recommend(&Query::with_history(&h, attrs, attack.n)).unwrap();
            let rf = run.model.recommend(&Query::attributes_only(attrs, attack.n)).unwrap();
            (h, t.item_ids().to_vec(), rf.item_ids().to_vec())
        })
        .collect();
    let items = run.prepared.interactions.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let widths = [10usize, 50, 100, 500];
    let times: Vec<f64> = widths
        .iter()
        .map(|&l| {
            let emb = ItemEmbeddings::new(Matrix::from_fn(items, l, |_, _| rng.random_range(-1.0..1.0)));
            (0..7)
                .map(|_| {
                    let start = Instant::now();
                    let mut sink = 0.0;
                    for (h, t, rf) in &lists {
                        let vh = emb.aggregate(h).unwrap();
                        let vt = emb.aggregate(t).unwrap();
                        let vr = emb.aggregate(rf).unwrap();
                        sink += relative_metric(vh.as_slice(), vt.as_slice(), vr.as_slice()).unwrap();
                    }
                    std::hint::black_box(sink);
                    start.elapsed().as_secs_f64() / lists.len() as f64
                })
                .fold(f64::MAX, f64::min)
        })
        .collect();
    // line t = a + b l fitted on relative residuals (weights 1/t)
    let xs: Vec<f64> = widths.iter().map(|&l| l as f64).collect();
    let (mut s11, mut s1x, mut sxx, mut s1y, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&times) {
        let w = 1.0 / (y * y);
        s11 += w;
        s1x += w * x;
        sxx += w * x * x;
        s1y += w * y;
        sxy += w * x * y;
    }
    let det = s11 * sxx - s1x * s1x;
    let a = (sxx * s1y - s1x * sxy) / det;
    let b = (s11 * sxy - s1x * s1y) / det;
    let worst = xs
        .iter()
        .zip(&times)
        .map(|(x, y)| ((y - (a + b * x)) / (a + b * x)).abs())
        .fold(0.0, f64::max);
    let per: Vec<String> = widths.iter().zip(&times).map(|(l, t)| format!("l={l} {:.1}us", t * 1e6)).collect();
    Outcome {
        pass: attack_secs < C9_SECONDS && b > 0.0 && worst <= C9_LINEAR,
        detail: format!(
            "1000-user attack {attack_secs:.2} s (< {C9_SECONDS} s, {} queries); per-user metric [{}]; \
             max deviation from linear fit {:.0}% (<= {:.0}%)",
            out.attack_queries,
            per.join(", "),
            worst * 100.0,
            C9_LINEAR * 100.0
        ),
    }
}

// ----- 10 -----

const ATTACK_SOURCE: &str = include_str!("../src/attack.rs");

struct ScoreTable(usize);

impl Recommender<f64> for ScoreTable {
    fn recommend(&self, query: &Query<'_, f64>) -> Result<RecommendationList<f64>> {
        let mut scores: Vec<f64> = (0..self.0).map(|i| 1.0 / (1.0 + i as f64)).collect();
        for &i in query.history.unwrap_or(&[]) {
            scores[i] += 1.0;
        }
        top_n(&scores, query.n, &[])
    }

    fn num_items(&self) -> usize {
        self.0
    }
}

fn criterion_10() -> Outcome {
    let code = &ATTACK_SOURCE[..ATTACK_SOURCE.find("#[cfg(test)]").unwrap_or(ATTACK_SOURCE.len())];
    let code_lines = || code.lines().map(str::trim).filter(|l| !l.starts_with("//"));
    let allowed = ["use crate::embedding", "use crate::error", "use crate::query", "use crate::scalar"];
    let bad_imports: Vec<&str> = code_lines()
        .filter(|l| l.starts_with("use crate::") && !allowed.iter().any(|a| l.starts_with(a)))
        .collect();
    let forbidden = ["recsys", "HybridModel", "PreferenceModel", "score_all", "fold_in", "super::"];
    let leaks: Vec<&str> = forbidden.iter().copied().filter(|f| code_lines().any(|l| l.contains(f))).collect();

    // links against a model that is nothing but the trait
    let rs = CountingRecommender::new(ScoreTable(50));
    let emb = ItemEmbeddings::new(Matrix::from_fn(50, 4, |i, k| ((i + 1) * (k + 2)) as f64 / 7.0));
    let history = [3usize, 9, 27];
    let attrs = [1.0, 0.0];
    let user = TargetUser { id: "u", history: &history, attributes: &attrs, truth: Membership::Member };
    let ok = attack_user(&rs, &emb, &user, &AttackConfig { n: 5, ..Default::default() }).is_ok();
    Outcome {
        pass: bad_imports.is_empty() && leaks.is_empty() && ok && rs.queries() == 2,
        detail: format!(
            "attack imports outside the query surface: {}; model internals referenced: {}; mock-only attack ok: {ok} ({} queries)",
            bad_imports.len(),
            if leaks.is_empty() { "none".to_owned() } else { leaks.join(", ") },
            rs.queries()
        ),
    }
}

fn main() -> ExitCode {
    let strict = std::env::var("REFMIA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failures = Vec::new();
    report(1, "metric exactness", true, &criterion_1(), &mut failures);
    report(2, "oracle equivalence", true, &criterion_2(), &mut failures);
    report(3, "factorization quality", true, &criterion_3(), &mut failures);
    report(10, "black-box discipline", true, &criterion_10(), &mut failures);

    let runs = seed_runs();
    let fpr = runs.cfg.eval.fpr_targets[0];
    report(4, "end-to-end efficacy", false, &criterion_4(&runs), &mut failures);
    report(5, "reliability", false, &criterion_5(&runs, fpr), &mut failures);
    report(6, "distribution separation", false, &criterion_6(&runs), &mut failures);
    report(9, "efficiency", false, &criterion_9(&runs), &mut failures);
    report(8, "stability", false, &criterion_8(&runs), &mut failures);
    report(7, "dp trend", false, &criterion_7(&runs), &mut failures);

    let hard: Vec<u8> = failures.iter().filter(|(_, d)| *d || strict).map(|(id, _)| *id).collect();
    let soft: Vec<u8> = failures.iter().filter(|(_, d)| !*d && !strict).map(|(id, _)| *id).collect();
    if !soft.is_empty() {
        println!("reported but not enforced (set REFMIA_ACCEPTANCE_STRICT=1): {soft:?}");
    }
    if hard.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {hard:?}");
        ExitCode::FAILURE
    }
}
