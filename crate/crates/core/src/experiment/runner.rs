//! On-disk stage driver. Each stage reads what it needs from the run
//! directory and writes its outputs next to a `stage.json` stamp holding a
//! content hash of everything the outputs depend on. A stage whose stamp
//! matches is skipped unless forced.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{content_hash, DataConfig, DataSource, DpSection, RunConfig};
use super::pipeline::{
    embed, load_dataset, plan_evaluation, prepare, prepare_with_split, run_attack, summarize, Dataset, EvalPlan,
    Prepared, ScoredVerdicts, SeedMetrics,
};
use crate::analysis::{emit_curves, write_curves};
use crate::attack::{read_records, write_records, Membership};
use crate::dataset::MembershipSplit;
use crate::embedding::ItemEmbeddings;
use crate::error::{Error, Result};
use crate::eval::{export_rho_distribution, roc_curve, sweep, time_stage, write_sweep, EvalReport, RocPoint, SweepRow};
use crate::recsys::HybridModel;
use crate::synth;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    Embed,
    Train,
    Attack,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Prepare, Stage::Embed, Stage::Train, Stage::Attack, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?} (expected prepare, embed, train, attack or evaluate)")))
    }
}

/// Target model flavour within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Trained on the raw member interactions.
    Target,
    /// Trained on Gaussian-perturbed member interactions.
    Dp,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Target => "target",
            Arm::Dp => "dp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Recommendation list length.
    N,
    /// Attacker embedding width.
    L,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::L => "l",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "l" => Ok(SweepParam::L),
            _ => Err(Error::Config(format!("unknown sweep parameter {s:?} (expected n or l)"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[source] Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Error,
    },
}

impl RunError {
    fn stage(stage: impl fmt::Display, source: Error) -> Self {
        RunError::Stage {
            stage: stage.to_string(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stage { .. } => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    key: String,
    seconds: f64,
}

/// The split as user ids, so it stays valid if row order changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub split_seed: u64,
    pub users: usize,
    pub items: usize,
    pub member_ids: Vec<String>,
    pub nonmember_ids: Vec<String>,
    pub attacker_ids: Vec<String>,
    pub coverage_augmented_ids: Vec<String>,
}

impl SplitManifest {
    pub fn new(seed: u64, split: &MembershipSplit, user_ids: &[String], items: usize) -> Self {
        let ids = |v: &[usize]| v.iter().map(|&u| user_ids[u].clone()).collect();
        Self {
            seed,
            split_seed: split.seed,
            users: user_ids.len(),
            items,
            member_ids: ids(&split.member_users),
            nonmember_ids: ids(&split.nonmember_users),
            attacker_ids: ids(&split.attacker_users),
            coverage_augmented_ids: ids(&split.coverage_augmented),
        }
    }

    pub fn to_split(&self, user_ids: &[String]) -> Result<MembershipSplit> {
        let index: BTreeMap<&str, usize> = user_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let map = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Format(format!("split names unknown user {id:?}")))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(MembershipSplit {
            member_users: map(&self.member_ids)?,
            nonmember_users: map(&self.nonmember_ids)?,
            attacker_users: map(&self.attacker_ids)?,
            coverage_augmented: map(&self.coverage_augmented_ids)?,
            seed: self.split_seed,
        })
    }
}

/// Attack-stage bookkeeping that the results table does not carry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub n: usize,
    pub evaluated_users: usize,
    pub calibration_users: usize,
    pub queries: usize,
    pub seconds: f64,
    pub tau: Option<f64>,
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const BASELINES_HEADER: &str =
    "user_id\ttruth\tabsolute_score\tabsolute_verdict\tpopularity_score\tpopularity_verdict";

fn write_baselines(path: &Path, user_ids: &[&str], absolute: &ScoredVerdicts, popularity: &ScoredVerdicts) -> Result<()> {
    let mut out = String::from(BASELINES_HEADER);
    out.push('\n');
    for k in 0..user_ids.len() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            user_ids[k],
            absolute.truths[k],
            absolute.scores[k],
            absolute.verdicts[k],
            popularity.scores[k],
            popularity.verdicts[k]
        ));
    }
    write_text(path, &out)
}

/// Reads a baselines table back as (absolute, popularity).
pub fn read_baselines(path: &Path) -> Result<(ScoredVerdicts, ScoredVerdicts)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut abs, mut pop) = (ScoredVerdicts::default(), ScoredVerdicts::default());
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: k + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let truth: Membership = f[1].parse()?;
        abs.truths.push(truth);
        abs.scores.push(num(f[2])?);
        abs.verdicts.push(f[3].parse()?);
        pop.truths.push(truth);
        pop.scores.push(num(f[4])?);
        pop.verdicts.push(f[5].parse()?);
    }
    Ok((abs, pop))
}

/// `fpr<TAB>tpr<TAB>threshold`, one row per operating point.
pub fn write_roc(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut out = String::from("fpr\ttpr\tthreshold\n");
    for p in points {
        out.push_str(&format!("{}\t{}\t{}\n", p.fpr, p.tpr, p.threshold));
    }
    write_text(path, &out)
}

fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<f64> = line
                .split('\t')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("{}: bad row {line:?}", path.display())))?;
            match f[..] {
                [value, asr, tpr] => Ok(SweepRow { value, asr, tpr }),
                _ => Err(Error::Format(format!("{}: bad row {line:?}", path.display()))),
            }
        })
        .collect()
}

/// Metrics of one seed and arm as written by the evaluate stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: Arm,
    #[serde(flatten)]
    pub metrics: SeedMetrics,
}

/// Drives the stages of one experiment inside an output directory.
pub struct Runner {
    cfg: RunConfig,
    out: PathBuf,
    force: bool,
    quiet: bool,
    dataset: OnceCell<Dataset<Real>>,
}

impl Runner {
    /// Validates the config; no computation happens here.
    pub fn new(cfg: RunConfig, force: bool) -> std::result::Result<Self, RunError> {
        cfg.validate().map_err(RunError::Config)?;
        if cfg.output.as_os_str().is_empty() {
            return Err(RunError::Config(Error::Config("no output directory (set `output` or pass --out)".into())));
        }
        Ok(Self {
            out: cfg.output.clone(),
            cfg,
            force,
            quiet: false,
            dataset: OnceCell::new(),
        })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn log(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Arms evaluated by this config; the first one is reported as primary.
    pub fn arms(&self) -> Vec<Arm> {
        match (self.cfg.dp.enabled, self.cfg.dp.compare_baseline) {
            (false, _) => vec![Arm::Target],
            (true, false) => vec![Arm::Dp],
            (true, true) => vec![Arm::Dp, Arm::Target],
        }
    }

    fn dp_for(&self, arm: Arm) -> Option<&DpSection> {
        (arm == Arm::Dp).then_some(&self.cfg.dp)
    }

    // ----- paths -----

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn stage_dir(&self, seed: u64, stage: Stage, arm: Arm) -> PathBuf {
        match stage {
            Stage::Prepare | Stage::Embed => self.seed_dir(seed).join(stage.name()),
            _ => self.seed_dir(seed).join(arm.name()).join(stage.name()),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("evaluate").join("report.json")
    }

    // ----- content keys -----

    fn prepare_key(&self, seed: u64) -> String {
        content_hash(&("prepare", &self.cfg.data, &self.cfg.split, seed))
    }

    fn embed_key(&self, seed: u64, latent: usize) -> String {
        content_hash(&("embed", self.prepare_key(seed), &self.cfg.embedding, latent))
    }

    fn train_key(&self, seed: u64, arm: Arm) -> String {
        content_hash(&("train", self.prepare_key(seed), &self.cfg.target, self.dp_for(arm)))
    }

    fn attack_key(&self, seed: u64, arm: Arm) -> String {
        content_hash(&(
            "attack",
            self.embed_key(seed, self.cfg.embedding.latent),
            self.train_key(seed, arm),
            &self.cfg.attack,
        ))
    }

    fn evaluate_key(&self) -> String {
        let attacks: Vec<String> = self
            .cfg
            .eval
            .seeds
            .iter()
            .flat_map(|&s| self.arms().into_iter().map(move |a| (s, a)))
            .map(|(s, a)| self.attack_key(s, a))
            .collect();
        content_hash(&("evaluate", attacks, &self.cfg.eval.fpr_targets))
    }

    fn key_for(&self, seed: u64, stage: Stage, arm: Arm) -> String {
        match stage {
            Stage::Prepare => self.prepare_key(seed),
            Stage::Embed => self.embed_key(seed, self.cfg.embedding.latent),
            Stage::Train => self.train_key(seed, arm),
            Stage::Attack => self.attack_key(seed, arm),
            Stage::Evaluate => self.evaluate_key(),
        }
    }

    // ----- stamps -----

    fn read_stamp(dir: &Path) -> Option<Stamp> {
        read_json(&dir.join("stage.json")).ok()
    }

    fn is_fresh(&self, dir: &Path, key: &str) -> bool {
        !self.force && Self::read_stamp(dir).is_some_and(|s| s.key == key)
    }

    /// Errors unless the stage output in `dir` was produced for `key`.
    fn require(dir: &Path, key: &str, producer: Stage) -> Result<()> {
        match Self::read_stamp(dir) {
            Some(s) if s.key == key => Ok(()),
            _ => Err(Error::MissingArtifact {
                path: dir.to_path_buf(),
                stage: producer.name(),
            }),
        }
    }

    fn require_stage(&self, seed: u64, stage: Stage, arm: Arm) -> Result<()> {
        Self::require(&self.stage_dir(seed, stage, arm), &self.key_for(seed, stage, arm), stage)
    }

    fn stage_seconds(&self, seed: u64, stage: Stage, arm: Arm) -> Option<f64> {
        Self::read_stamp(&self.stage_dir(seed, stage, arm)).map(|s| s.seconds)
    }

    /// Runs `body` into `dir` unless a matching stamp is present.
    fn run_stage(
        &self,
        stage: Stage,
        label: &str,
        dir: &Path,
        key: &str,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> std::result::Result<(), RunError> {
        if self.is_fresh(dir, key) {
            self.log(format_args!("[{label}] up to date"));
            return Ok(());
        }
        let stamp_path = dir.join("stage.json");
        let prepare_dir = || -> Result<()> {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if stamp_path.exists() {
                fs::remove_file(&stamp_path).map_err(|e| Error::io(&stamp_path, e))?;
            }
            Ok(())
        };
        prepare_dir().map_err(|e| RunError::stage(stage, e))?;
        let (result, seconds) = time_stage(|| body(dir));
        result.map_err(|e| RunError::stage(label, e))?;
        let stamp = Stamp {
            stage: stage.name().to_owned(),
            key: key.to_owned(),
            seconds,
        };
        write_json(&stamp_path, &stamp).map_err(|e| RunError::stage(stage, e))?;
        self.log(format_args!("[{label}] done in {seconds:.2} s"));
        Ok(())
    }

    // ----- shared inputs -----

    fn files_config(&self) -> DataConfig {
        let dir = self.data_dir();
        DataConfig {
            source: DataSource::Files,
            interactions: dir.join("u.data"),
            users: dir.join("u.user"),
            items: dir.join("u.item"),
            ..self.cfg.data.clone()
        }
    }

    fn dataset(&self) -> Result<&Dataset<Real>> {
        if let Some(d) = self.dataset.get() {
            return Ok(d);
        }
        let data = match self.cfg.data.source {
            DataSource::Files => load_dataset(&self.cfg.data)?,
            DataSource::Synthetic => {
                let cfg = self.files_config();
                if !cfg.interactions.exists() || self.force {
                    synth::generate(&self.cfg.data.synthetic)?.write(&self.data_dir())?;
                }
                load_dataset(&cfg)?
            }
        };
        Ok(self.dataset.get_or_init(|| data))
    }

    fn load_prepared(&self, seed: u64) -> Result<Prepared<Real>> {
        self.require_stage(seed, Stage::Prepare, Arm::Target)?;
        let data = self.dataset()?;
        let manifest: SplitManifest = read_json(&self.stage_dir(seed, Stage::Prepare, Arm::Target).join("split.json"))?;
        let split = manifest.to_split(data.interactions.user_ids())?;
        prepare_with_split(data, &self.cfg, split)
    }

    fn load_embeddings(&self, seed: u64) -> Result<ItemEmbeddings<Real>> {
        self.require_stage(seed, Stage::Embed, Arm::Target)?;
        ItemEmbeddings::read(&self.stage_dir(seed, Stage::Embed, Arm::Target).join("embeddings.txt"))
    }

    fn load_model(&self, seed: u64, arm: Arm) -> Result<HybridModel<Real>> {
        self.require_stage(seed, Stage::Train, arm)?;
        HybridModel::load(&self.stage_dir(seed, Stage::Train, arm).join("model.json"))
    }

    fn manifest_value(&self) -> serde_json::Value {
        let stages: BTreeMap<String, BTreeMap<String, String>> = self
            .cfg
            .eval
            .seeds
            .iter()
            .map(|&seed| {
                let mut keys = BTreeMap::new();
                keys.insert("prepare".to_owned(), self.prepare_key(seed));
                keys.insert("embed".to_owned(), self.embed_key(seed, self.cfg.embedding.latent));
                for arm in self.arms() {
                    keys.insert(format!("{}/train", arm.name()), self.train_key(seed, arm));
                    keys.insert(format!("{}/attack", arm.name()), self.attack_key(seed, arm));
                }
                (seed.to_string(), keys)
            })
            .collect();
        serde_json::json!({
            "tool": "refmia",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": content_hash(&self.cfg),
            "seeds": self.cfg.eval.seeds,
            "arms": self.arms(),
            "data_source": self.cfg.data.source,
            "evaluate_key": self.evaluate_key(),
            "stage_keys": stages,
        })
    }

    /// Writes `manifest.json` and `config.toml` at the top of the run
    /// directory.
    pub fn write_manifest(&self) -> std::result::Result<(), RunError> {
        let write = || -> Result<()> {
            fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
            write_json(&self.out.join("manifest.json"), &self.manifest_value())?;
            write_text(&self.out.join("config.toml"), &self.cfg.to_toml()?)
        };
        write().map_err(RunError::Config)
    }

    // ----- stages -----

    pub fn prepare(&self) -> std::result::Result<(), RunError> {
        for &seed in &self.cfg.eval.seeds {
            let dir = self.stage_dir(seed, Stage::Prepare, Arm::Target);
            self.run_stage(Stage::Prepare, &format!("prepare seed {seed}"), &dir, &self.prepare_key(seed), |dir| {
                let data = self.dataset()?;
                let prepared = prepare(data, &self.cfg, seed)?;
                let manifest = SplitManifest::new(
                    seed,
                    &prepared.split,
                    prepared.interactions.user_ids(),
                    prepared.interactions.num_items(),
                );
                write_json(&dir.join("split.json"), &manifest)
            })?;
        }
        Ok(())
    }

    pub fn embed(&self) -> std::result::Result<(), RunError> {
        for &seed in &self.cfg.eval.seeds {
            let dir = self.stage_dir(seed, Stage::Embed, Arm::Target);
            let key = self.embed_key(seed, self.cfg.embedding.latent);
            self.run_stage(Stage::Embed, &format!("embed seed {seed}"), &dir, &key, |dir| {
                let prepared = self.load_prepared(seed)?;
                embed(&prepared, &self.cfg, self.cfg.embedding.latent, seed)?.write(&dir.join("embeddings.txt"))
            })?;
        }
        Ok(())
    }

    pub fn train(&self) -> std::result::Result<(), RunError> {
        for &seed in &self.cfg.eval.seeds {
            for arm in self.arms() {
                let dir = self.stage_dir(seed, Stage::Train, arm);
                let label = format!("train {} seed {seed}", arm.name());
                self.run_stage(Stage::Train, &label, &dir, &self.train_key(seed, arm), |dir| {
                    let prepared = self.load_prepared(seed)?;
                    let model = super::pipeline::train_target(&prepared, &self.cfg, self.dp_for(arm), seed)?;
                    model.save(&dir.join("model.json"))
                })?;
            }
        }
        Ok(())
    }

    pub fn attack(&self) -> std::result::Result<(), RunError> {
        for &seed in &self.cfg.eval.seeds {
            for arm in self.arms() {
                let dir = self.stage_dir(seed, Stage::Attack, arm);
                let label = format!("attack {} seed {seed}", arm.name());
                self.run_stage(Stage::Attack, &label, &dir, &self.attack_key(seed, arm), |dir| {
                    self.attack_into(seed, arm, dir)
                })?;
            }
        }
        Ok(())
    }

    fn attack_into(&self, seed: u64, arm: Arm, dir: &Path) -> Result<()> {
        let prepared = self.load_prepared(seed)?;
        let embeddings = self.load_embeddings(seed)?;
        let model = self.load_model(seed, arm)?;
        let plan = plan_evaluation(&prepared.split, self.cfg.attack.calibration_frac, seed);
        let outcome = run_attack(
            &model,
            &prepared,
            &embeddings,
            &plan,
            &self.cfg.attack.attack_config(),
            self.cfg.attack.baselines,
        )?;
        write_json(&dir.join("plan.json"), &plan_ids(&plan, prepared.interactions.user_ids()))?;
        write_records(&dir.join("results.tsv"), &outcome.records)?;
        if let (Some(abs), Some(pop)) = (&outcome.absolute, &outcome.popularity) {
            let ids: Vec<&str> = outcome.records.iter().map(|r| r.user_id.as_str()).collect();
            write_baselines(&dir.join("baselines.tsv"), &ids, abs, pop)?;
        }
        write_json(
            &dir.join("summary.json"),
            &AttackSummary {
                n: self.cfg.attack.n,
                evaluated_users: outcome.records.len(),
                calibration_users: plan.calibration.len(),
                queries: outcome.attack_queries,
                seconds: outcome.attack_seconds,
                tau: outcome.tau,
            },
        )
    }

    /// Metrics for one seed and arm, read back from the attack outputs.
    fn seed_metrics(&self, seed: u64, arm: Arm) -> Result<(SeedMetrics, ScoredVerdicts)> {
        self.require_stage(seed, Stage::Attack, arm)?;
        let dir = self.stage_dir(seed, Stage::Attack, arm);
        let rows = read_records(&dir.join("results.tsv"))?;
        let proposed = ScoredVerdicts {
            scores: rows.iter().map(|r| -r.rho).collect(),
            verdicts: rows.iter().map(|r| r.verdict).collect(),
            truths: rows.iter().map(|r| r.truth).collect(),
        };
        let baselines_path = dir.join("baselines.tsv");
        let baselines = if baselines_path.exists() {
            Some(read_baselines(&baselines_path)?)
        } else {
            None
        };
        let fpr = &self.cfg.eval.fpr_targets;
        let mut m = SeedMetrics::from_scored(
            seed,
            &proposed,
            baselines.as_ref().map(|b| &b.0),
            baselines.as_ref().map(|b| &b.1),
            fpr,
        )?;
        let summary: AttackSummary = read_json(&dir.join("summary.json"))?;
        m.tau = summary.tau;
        m.queries = summary.queries;
        for (stage, a) in [
            (Stage::Prepare, Arm::Target),
            (Stage::Embed, Arm::Target),
            (Stage::Train, arm),
            (Stage::Attack, arm),
        ] {
            if let Some(s) = self.stage_seconds(seed, stage, a) {
                m.timing.insert(stage.name().to_owned(), s);
            }
        }
        Ok((m, proposed))
    }

    pub fn evaluate(&self) -> std::result::Result<EvalReport, RunError> {
        let dir = self.out.join("evaluate");
        let key = self.evaluate_key();
        self.run_stage(Stage::Evaluate, "evaluate", &dir, &key, |dir| {
            let report = self.build_report()?;
            report.write(&dir.join("report.json"))?;
            write_text(&dir.join("summary.tsv"), &summary_table(&report))
        })?;
        read_json(&self.report_path()).map_err(|e| RunError::stage(Stage::Evaluate, e))
    }

    fn build_report(&self) -> Result<EvalReport> {
        let arms = self.arms();
        let fpr = &self.cfg.eval.fpr_targets;
        let mut per_seed = Vec::new();
        let mut summary = BTreeMap::new();
        let mut timing: BTreeMap<String, f64> = BTreeMap::new();
        let mut primary = Vec::new();
        let mut pooled = ScoredVerdicts::default();
        for (k, &arm) in arms.iter().enumerate() {
            let mut metrics = Vec::new();
            for &seed in &self.cfg.eval.seeds {
                let (m, proposed) = self.seed_metrics(seed, arm)?;
                let out = self.stage_dir(seed, Stage::Evaluate, arm);
                fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                let rho_rows: Vec<(Membership, f64)> =
                    proposed.truths.iter().zip(&proposed.scores).map(|(&t, &s)| (t, -s)).collect();
                export_rho_distribution(&out.join("rho_distribution.tsv"), &rho_rows)?;
                let labels: Vec<bool> = proposed.truths.iter().map(|t| t.is_member()).collect();
                write_roc(&out.join("roc.tsv"), &roc_curve(&proposed.scores, &labels)?)?;
                let entry = ArmMetrics { arm, metrics: m.clone() };
                write_json(&out.join("metrics.json"), &entry)?;
                for (stage, secs) in &m.timing {
                    let name = if arms.len() > 1 && (stage == "train" || stage == "attack") {
                        format!("{}/{stage}", arm.name())
                    } else {
                        stage.clone()
                    };
                    *timing.entry(name).or_insert(0.0) += secs;
                }
                if k == 0 {
                    pooled.scores.extend(&proposed.scores);
                    pooled.truths.extend(&proposed.truths);
                    pooled.verdicts.extend(&proposed.verdicts);
                }
                per_seed.push(serde_json::to_value(&entry).map_err(|e| Error::Format(e.to_string()))?);
                metrics.push(m);
            }
            for (method, table) in summarize(&metrics) {
                let name = if arms.len() > 1 || arm == Arm::Dp {
                    format!("{}/{method}", arm.name())
                } else {
                    method
                };
                summary.insert(name, table);
            }
            if k == 0 {
                primary = metrics;
            }
        }
        // timing entries for prepare and embed were added once per arm
        for stage in ["prepare", "embed"] {
            if let Some(v) = timing.get_mut(stage) {
                *v /= arms.len() as f64;
            }
        }
        let n = primary.len() as f64;
        let asr = primary.iter().map(|m| m.proposed.asr).sum::<f64>() / n;
        let tpr_at_fpr = fpr
            .iter()
            .map(|&t| (t, primary.iter().filter_map(|m| m.proposed.tpr_at(t)).sum::<f64>() / n))
            .collect();
        let labels: Vec<bool> = pooled.truths.iter().map(|t| t.is_member()).collect();
        let roc = roc_curve(&pooled.scores, &labels)?;
        let mut notes = vec![
            format!(
                "headline asr, tpr_at_fpr and roc refer to the `{}` arm; roc pools all seeds",
                arms[0].name()
            ),
            "members and non-members are subsampled to equal size per seed".to_owned(),
            format!(
                "{:.0}% of each group is held out to calibrate the absolute baseline and excluded from metrics",
                100.0 * self.cfg.attack.calibration_frac
            ),
            "popularity reference counts item popularity on the attacker's users".to_owned(),
        ];
        if self.cfg.data.source == DataSource::Synthetic {
            notes.push("data: synthetic MovieLens-100K-format generator".to_owned());
        }
        Ok(EvalReport {
            asr,
            tpr_at_fpr,
            roc,
            timing,
            score_definition: "membership score = -rho; higher means more member-like".to_owned(),
            seeds: self.cfg.eval.seeds.clone(),
            summary,
            per_seed,
            notes,
            config: self.cfg.to_json(),
        })
    }

    /// Runs every stage up to and including `until`.
    pub fn run(&self, until: Option<Stage>) -> std::result::Result<Option<EvalReport>, RunError> {
        self.write_manifest()?;
        let last = until.unwrap_or(Stage::Evaluate);
        for stage in Stage::ALL.into_iter().take_while(|&s| s <= last) {
            match stage {
                Stage::Prepare => self.prepare()?,
                Stage::Embed => self.embed()?,
                Stage::Train => self.train()?,
                Stage::Attack => self.attack()?,
                Stage::Evaluate => return self.evaluate().map(Some),
            }
        }
        Ok(None)
    }

    /// Attack-only reruns across `n`, or re-embedding reruns across `l`,
    /// on one seed against the primary arm's model. Brings prepare, embed
    /// and train up to date first. Writes `sweep/sweep_<param>.tsv`.
    pub fn sweep(&self, param: SweepParam, seed: Option<u64>) -> std::result::Result<Vec<SweepRow>, RunError> {
        let seed = seed.unwrap_or(self.cfg.eval.seeds[0]);
        let arm = self.arms()[0];
        let values: Vec<usize> = match param {
            SweepParam::N => self.cfg.eval.sweep_n.clone(),
            SweepParam::L => self.cfg.eval.sweep_l.clone(),
        };
        if values.is_empty() || values.contains(&0) {
            return Err(RunError::Config(Error::Config(format!(
                "eval.sweep_{} must list positive values",
                param.name()
            ))));
        }
        self.run(Some(Stage::Train))?;
        let dir = self.out.join("sweep").join(param.name());
        let path = self.out.join("sweep").join(format!("sweep_{}.tsv", param.name()));
        let key = content_hash(&(
            "sweep",
            param.name(),
            &values,
            seed,
            self.train_key(seed, arm),
            match param {
                SweepParam::N => self.embed_key(seed, self.cfg.embedding.latent),
                SweepParam::L => content_hash(&(&self.cfg.embedding, self.prepare_key(seed))),
            },
            &self.cfg.attack,
            &self.cfg.eval.fpr_targets,
        ));
        let label = format!("sweep {} seed {seed}", param.name());
        self.run_stage(Stage::Attack, &label, &dir, &key, |_| {
            let rows = self.sweep_rows(param, seed, arm, &values)?;
            write_sweep(&path, param.name(), &rows)
        })?;
        read_sweep(&path).map_err(|e| RunError::stage(Stage::Attack, e))
    }

    fn sweep_rows(&self, param: SweepParam, seed: u64, arm: Arm, values: &[usize]) -> Result<Vec<SweepRow>> {
        let prepared = self.load_prepared(seed)?;
        let model = self.load_model(seed, arm)?;
        let plan = plan_evaluation(&prepared.split, self.cfg.attack.calibration_frac, seed);
        let fpr = self.cfg.eval.fpr_targets.first().copied().unwrap_or(0.01);
        let base = if param == SweepParam::N {
            Some(self.load_embeddings(seed)?)
        } else {
            None
        };
        let grid: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        sweep(&grid, |value| {
            let v = value as usize;
            let mut attack = self.cfg.attack.attack_config();
            let owned;
            let embeddings = match &base {
                Some(e) => {
                    attack.n = v;
                    e
                }
                None => {
                    owned = embed(&prepared, &self.cfg, v, seed)?;
                    &owned
                }
            };
            let outcome = run_attack(&model, &prepared, embeddings, &plan, &attack, false)?;
            let m = SeedMetrics::from_outcome(seed, &outcome, &[fpr])?;
            self.log(format_args!("[sweep {}={v}] asr {:.3}", param.name(), m.proposed.asr));
            Ok((m.proposed.asr, m.proposed.tpr_at(fpr).unwrap_or(0.0)))
        })
    }

    /// Writes `curves/curves.tsv` from the eval section's curve grid.
    pub fn curves(&self) -> std::result::Result<PathBuf, RunError> {
        let e = &self.cfg.eval;
        let samples = emit_curves(e.curve_points, e.curve_upper, e.curve_c).map_err(RunError::Config)?;
        let dir = self.out.join("curves");
        let path = dir.join("curves.tsv");
        fs::create_dir_all(&dir)
            .map_err(|err| Error::io(&dir, err))
            .and_then(|_| write_curves(&path, &samples, e.curve_c))
            .map_err(|err| RunError::stage("curves", err))?;
        Ok(path)
    }
}

fn plan_ids(plan: &EvalPlan, user_ids: &[String]) -> serde_json::Value {
    let rows = |v: &[(usize, Membership)]| -> Vec<(String, String)> {
        v.iter().map(|&(u, t)| (user_ids[u].clone(), t.to_string())).collect()
    };
    serde_json::json!({
        "calibration": rows(&plan.calibration),
        "evaluation": rows(&plan.evaluation),
    })
}

/// `method<TAB>metric<TAB>mean<TAB>std` rows of the report summary.
fn summary_table(report: &EvalReport) -> String {
    let mut out = String::from("method\tmetric\tmean\tstd\n");
    for (method, table) in &report.summary {
        for (metric, ms) in table {
            out.push_str(&format!("{method}\t{metric}\t{}\t{}\n", ms.mean, ms.std));
        }
    }
    out
}
