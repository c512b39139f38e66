//! Config-driven experiment pipelines: generate data, train every model a
//! template needs, score each epoch's checkpoint, fit summaries, and emit a
//! byte-stable report.

mod overfit;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use overfit::{detect_distributional_overfitting, OverfitThresholds, OverfitVerdict};
pub use report::{
    emit_report, read_manifest, read_records, write_records, EvalRecord, Fits, ReportManifest, RunStatus,
    FITS_FILE, MANIFEST_FILE, RECORDS_FILE, RECORD_HEADER, REPORT_VERSION,
};

use crate::datasets::{combine, generate, skew, subsample, Dataset, DistributionSpec};
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::learned::{evaluate, finetune, train, construct_model, Checkpoint, Model, ModelConfig, ModelInput, TrainConfig, TrainOutput};
use crate::metrics::{
    effective_robustness_fit, extract_features, laplacian_artifact_score, normalize_output, nn_similarity, pearson_corr,
    region_ssim, ssim, FeatureConfig, Region, SsimConfig,
};
use crate::par;
use crate::seed;

const MODEL_TAG: u64 = 0x6d6f_6465;
const TRAIN_TAG: u64 = 0x7472_6169;
const TEST_TAG: u64 = 0x7465_7374;
const MASK_TAG: u64 = 0x6d61_736b;
const SUBSAMPLE_TAG: u64 = 0x7375_6273;
const FEATURE_TAG: u64 = 0x6665_6174;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Specialists on P and Q, a joint model on P ∪ Q and one on half of it.
    JointVsSeparate,
    /// Q shrunk by `skew_factor` before training.
    Skewed,
    /// One model per source plus a union model, scored against a target.
    DiversityRobustness,
    /// Lesion-region SSIM split by lesion size.
    Pathology,
    /// One model per acceleration plus one trained on all of them.
    AccelCombo,
    /// Every training distribution against every test set.
    CoilShift,
    /// Per-epoch ID/OOD traces and the early-stopping verdict.
    OverfitMonitor,
    /// Parent on P, fine-tuned to Q, and trained on Q from scratch.
    FinetuneAblation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ssim,
    /// SSIM after matching the reconstruction's mean and variance to the
    /// target.
    NormalizedSsim,
    /// Laplacian variance of the difference between the normalized
    /// reconstruction and the target.
    LaplacianArtifact,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::NormalizedSsim => "normalized_ssim",
            Metric::LaplacianArtifact => "laplacian_artifact",
        }
    }
}

fn default_train_count() -> usize {
    32
}
fn default_test_count() -> usize {
    8
}
fn default_accelerations() -> Vec<f64> {
    vec![4.0]
}
fn default_metrics() -> Vec<Metric> {
    vec![Metric::Ssim]
}
fn default_skew() -> f64 {
    10.0
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub template: Template,
    /// Training distributions, in template order (P first, then Q).
    pub distributions: Vec<DistributionSpec>,
    /// Evaluation-only distributions (targets, OOD monitors).
    #[serde(default)]
    pub test_distributions: Vec<DistributionSpec>,
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Evaluation accelerations; for `accel_combo` also the training list.
    #[serde(default = "default_accelerations")]
    pub accelerations: Vec<f64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_skew")]
    pub skew_factor: f64,
    #[serde(default)]
    pub overfit: OverfitThresholds,
    /// Independent seeds per model (`joint_vs_separate` only); their spread
    /// is reported as the seed-noise band.
    #[serde(default = "one")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok && name != "." && name != ".." {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} `{name}` must be nonempty and use only ASCII letters, digits, `_`, `-` or `.`"
        )))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_name("experiment name", &self.name)?;
        let all: Vec<&DistributionSpec> = self.distributions.iter().chain(&self.test_distributions).collect();
        for s in &all {
            check_name("distribution name", &s.name)?;
            s.validate()?;
        }
        if let Some(first) = all.first() {
            if let Some(s) = all.iter().find(|s| (s.height, s.width) != (first.height, first.width)) {
                return Err(Error::Extent(format!(
                    "distribution {} is {}x{} but {} is {}x{}",
                    s.name, s.height, s.width, first.name, first.height, first.width
                )));
            }
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::invalid("train_count and test_count must be >= 1"));
        }
        if self.accelerations.is_empty() || self.accelerations.iter().any(|&r| !(r >= 1.0 && r.is_finite())) {
            return Err(Error::invalid("accelerations must be a non-empty list of finite values >= 1"));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid("metric set must not be empty"));
        }
        if !(self.skew_factor >= 1.0) {
            return Err(Error::invalid(format!("skew_factor {} must be >= 1", self.skew_factor)));
        }
        if self.overfit.window == 0 || !self.overfit.epsilon.is_finite() || !self.overfit.drop.is_finite() {
            return Err(Error::invalid("overfit thresholds need window >= 1 and finite epsilon/drop"));
        }
        if self.replicates == 0 || (self.replicates > 1 && self.template != Template::JointVsSeparate) {
            return Err(Error::invalid("replicates must be 1, or >= 1 for joint_vs_separate"));
        }
        self.model.validate()?;
        self.train.validate()?;

        let (n_train, n_test) = (self.distributions.len(), self.test_distributions.len());
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("template {:?} needs {what}", self.template)))
            }
        };
        match self.template {
            Template::JointVsSeparate | Template::Skewed | Template::FinetuneAblation => {
                need(n_train == 2, "exactly two distributions (P, Q)")?
            }
            Template::DiversityRobustness => {
                need(n_train >= 2 && n_test == 1, "at least two source distributions and one target test distribution")?
            }
            Template::Pathology => {
                need(n_train == 1 && n_test <= 1, "one training distribution and at most one test distribution")?;
                let test = self.test_distributions.first().unwrap_or(&self.distributions[0]);
                need(test.lesions.is_some_and(|l| l.rate > 0.0), "a test distribution with lesions")?
            }
            Template::AccelCombo | Template::CoilShift => need(n_train >= 1, "at least one distribution")?,
            Template::OverfitMonitor => {
                need(n_train == 1 && n_test == 1, "one ID distribution and one OOD test distribution")?;
                need(self.train.epochs > self.overfit.window, "more epochs than the overfit window")?
            }
        }
        if !matches!(
            self.template,
            Template::JointVsSeparate | Template::Skewed | Template::FinetuneAblation
        ) {
            let mut names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("distribution name `{}` is used twice", w[0])));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON config, ignoring the output directory.
    pub fn config_sha256(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes")))
    }

    /// Seed of the fixed evaluation masks shared by every model.
    pub fn mask_seed(&self) -> u64 {
        seed::derive(self.seed, &[MASK_TAG])
    }
}

/// Held-out split of a distribution: same spec under a derived seed, so no
/// item coincides with the training draw.
pub fn test_split(spec: &DistributionSpec, count: usize) -> Result<Dataset> {
    let mut s = spec.clone();
    s.seed = seed::derive(spec.seed, &[TEST_TAG]);
    let mut d = generate(&s, count)?;
    // report the original name and spec so sources match the training side
    d.specs = vec![spec.clone()];
    Ok(d)
}

fn in_stage<T>(stage: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.into(),
            source: Box::new(e),
        },
    })
}

/// Trains one model per source under identical configs and returns the
/// index whose model scores the highest mean SSIM on `target` (ties go to
/// the lowest index).
pub fn select_best_source(
    sources: &[Dataset],
    target: &Dataset,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    acceleration: f64,
    mask_seed: u64,
) -> Result<usize> {
    if sources.is_empty() {
        return Err(Error::invalid("select_best_source needs at least one source"));
    }
    let base = construct_model(model)?;
    let scores = par::try_map_indexed(sources.len(), |i| {
        let out = train(&base, &sources[i], train_cfg, &[])?;
        let last = out.checkpoints.last().expect("initial checkpoint").model()?;
        let s = evaluate(&last, target, acceleration, mask_seed)?;
        Ok::<_, Error>(s.iter().sum::<f64>() / s.len() as f64)
    })?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Mean of each metric (sorted, deduplicated) over `(recon, target)` pairs,
/// with the union of per-item flags.
pub fn score_pairs(pairs: &[(RealImage, RealImage)], metrics: &[Metric]) -> Result<Vec<(Metric, f64, Vec<String>)>> {
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to score"));
    }
    let ssim_cfg = SsimConfig::default();
    let mut metrics = metrics.to_vec();
    metrics.sort_unstable();
    metrics.dedup();
    metrics
        .into_iter()
        .map(|metric| {
            let mut flags = Vec::new();
            let mut values = Vec::with_capacity(pairs.len());
            for (recon, target) in pairs {
                values.push(match metric {
                    Metric::Ssim => ssim(recon, target, &ssim_cfg)?,
                    Metric::NormalizedSsim | Metric::LaplacianArtifact => {
                        let n = normalize_output(recon, target)?;
                        if let Some(f) = n.flag {
                            flags.push(f.as_str().to_owned());
                        }
                        if metric == Metric::NormalizedSsim {
                            ssim(&n.image, target, &ssim_cfg)?
                        } else {
                            laplacian_artifact_score(&n.image, target)?
                        }
                    }
                });
            }
            flags.sort();
            flags.dedup();
            Ok((metric, mean(&values), flags))
        })
        .collect()
}

/// Runs `cfg` end to end into `out` and returns the manifest.
///
/// A failing stage leaves an `incomplete` manifest behind and surfaces as
/// [`Error::Stage`].
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ReportManifest> {
    cfg.validate()?;
    let hash = cfg.config_sha256();
    // stale artifacts from an earlier run would leak into the artifact hashes
    for f in [RECORDS_FILE, FITS_FILE, MANIFEST_FILE] {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let ckpt = out.join("checkpoints");
    if ckpt.exists() {
        fs::remove_dir_all(&ckpt)?;
    }
    fs::create_dir_all(out)?;

    let runner = Runner {
        cfg,
        out,
        mask_seed: cfg.mask_seed(),
    };
    let result = runner
        .execute()
        .and_then(|(records, fits)| in_stage("emit", emit_report(&records, &fits, &hash, out)));
    if let Err(Error::Stage { stage, source }) = &result {
        let _ = report::mark_incomplete(out, &hash, stage, source);
    }
    result
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    mask_seed: u64,
}

struct Job {
    id: String,
    data: Dataset,
    train: TrainConfig,
    replicate: usize,
}

struct Trained {
    id: String,
    sources: Vec<String>,
    output: TrainOutput,
}

struct TestSet {
    name: String,
    data: Dataset,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Enlarges `r` about its center to at least `window` per side, clamped to
/// the image.
fn grow_region(r: Region, window: usize, height: usize, width: usize) -> (Region, bool) {
    let grow = |start: usize, len: usize, limit: usize| {
        let new_len = len.max(window).min(limit);
        let center = start + len / 2;
        (center.saturating_sub(new_len / 2).min(limit - new_len), new_len)
    };
    let (row, h) = grow(r.row, r.height, height);
    let (col, w) = grow(r.col, r.width, width);
    let grown = Region {
        row,
        col,
        height: h,
        width: w,
    };
    (grown, grown != r)
}

impl Runner<'_> {
    fn execute(&self) -> Result<(Vec<EvalRecord>, Fits)> {
        let cfg = self.cfg;
        let mut fits = Fits::new();
        fits.insert("overfit_thresholds".into(), serde_json::to_value(cfg.overfit)?);
        fits.insert("mask_seed".into(), json!(self.mask_seed));

        let train_sets = in_stage(
            "generate",
            cfg.distributions.iter().map(|s| generate(s, cfg.train_count)).collect::<Result<Vec<_>>>(),
        )?;
        let test_of = |s: &DistributionSpec, name: &str| -> Result<TestSet> {
            Ok(TestSet {
                name: name.to_owned(),
                data: test_split(s, cfg.test_count)?,
            })
        };
        let tests_by_name = || -> Result<Vec<TestSet>> {
            cfg.distributions.iter().chain(&cfg.test_distributions).map(|s| test_of(s, &s.name)).collect()
        };
        let letters = ["P", "Q"];
        let pq_tests = || -> Result<Vec<TestSet>> {
            cfg.distributions.iter().zip(letters).map(|(s, l)| test_of(s, l)).collect()
        };
        let job = |id: &str, data: Dataset| Job {
            id: id.to_owned(),
            data,
            train: cfg.train.clone(),
            replicate: 0,
        };

        let mut records: Vec<EvalRecord>;
        match cfg.template {
            Template::JointVsSeparate => {
                let tests = in_stage("generate", pq_tests())?;
                let joint = in_stage("generate", combine(&[&train_sets[0], &train_sets[1]]))?;
                let mut rng = seed::stream(cfg.seed, SUBSAMPLE_TAG);
                let half = in_stage("generate", subsample(&joint, 0.5, &mut rng))?;
                let bases = [
                    ("P", &train_sets[0]),
                    ("Q", &train_sets[1]),
                    ("joint", &joint),
                    ("joint_half", &half),
                ];
                let mut jobs = Vec::new();
                for r in 0..cfg.replicates {
                    for (id, data) in bases {
                        let id = if cfg.replicates > 1 { format!("{id}_r{r}") } else { id.to_owned() };
                        jobs.push(Job {
                            replicate: r,
                            ..job(&id, data.clone())
                        });
                    }
                }
                let trained = self.train_all(jobs)?;
                records = self.score_all(&trained, &tests)?;
                fits.insert("seed_band".into(), self.seed_band(&records, &tests)?);
            }
            Template::Skewed => {
                let tests = in_stage("generate", pq_tests())?;
                let (_, small) = in_stage("generate", skew(&train_sets[1], cfg.skew_factor))?;
                let joint = in_stage("generate", combine(&[&train_sets[0], &small]))?;
                fits.insert("q_small_count".into(), json!(small.len()));
                let jobs = vec![job("P", train_sets[0].clone()), job("Q_small", small), job("joint", joint)];
                records = self.score_all(&self.train_all(jobs)?, &tests)?;
            }
            Template::DiversityRobustness => {
                let tests = in_stage("generate", tests_by_name())?;
                let union = in_stage("generate", combine(&train_sets.iter().collect::<Vec<_>>()))?;
                let mut jobs: Vec<Job> = cfg
                    .distributions
                    .iter()
                    .zip(&train_sets)
                    .map(|(s, d)| job(&s.name, d.clone()))
                    .collect();
                jobs.push(job("union", union));
                records = self.score_all(&self.train_all(jobs)?, &tests)?;
                let diversity = in_stage("fit", self.diversity_fits(&records, &train_sets, &tests))?;
                fits.insert("diversity".into(), diversity);
            }
            Template::Pathology => {
                let spec = &cfg.distributions[0];
                let test_spec = cfg.test_distributions.first().unwrap_or(spec);
                let tests = in_stage("generate", test_of(test_spec, &test_spec.name).map(|t| vec![t]))?;
                let trained = self.train_all(vec![job(&spec.name, train_sets[0].clone())])?;
                records = self.score_all(&trained, &tests)?;
                let (region, grown) = in_stage("evaluate", self.region_records(&trained[0], &tests[0]))?;
                records.extend(region);
                fits.insert("regions_grown".into(), json!(grown));
            }
            Template::AccelCombo => {
                let tests = in_stage("generate", tests_by_name())?;
                let pool = in_stage("generate", combine(&train_sets.iter().collect::<Vec<_>>()))?;
                let jobs = if cfg.accelerations.len() == 1 {
                    let mut t = cfg.train.clone();
                    t.accelerations = cfg.accelerations.clone();
                    vec![Job {
                        train: t,
                        ..job(&pool.source_label(), pool.clone())
                    }]
                } else {
                    let mut jobs: Vec<Job> = cfg
                        .accelerations
                        .iter()
                        .map(|&r| {
                            let mut t = cfg.train.clone();
                            t.accelerations = vec![r];
                            Job {
                                train: t,
                                ..job(&format!("R{r}"), pool.clone())
                            }
                        })
                        .collect();
                    let mut t = cfg.train.clone();
                    t.accelerations = cfg.accelerations.clone();
                    jobs.push(Job {
                        train: t,
                        ..job("combo", pool.clone())
                    });
                    jobs
                };
                records = self.score_all(&self.train_all(jobs)?, &tests)?;
            }
            Template::CoilShift => {
                let tests = in_stage("generate", tests_by_name())?;
                let jobs = cfg
                    .distributions
                    .iter()
                    .zip(&train_sets)
                    .map(|(s, d)| job(&s.name, d.clone()))
                    .collect();
                records = self.score_all(&self.train_all(jobs)?, &tests)?;
            }
            Template::OverfitMonitor => {
                let tests = in_stage("generate", tests_by_name())?;
                let spec = &cfg.distributions[0];
                let trained = self.train_all(vec![job(&spec.name, train_sets[0].clone())])?;
                records = self.score_all(&trained, &tests)?;
                let trace = |test: &str| self.trace(&records, &spec.name, test);
                let (id, ood) = (trace(&tests[0].name), trace(&tests[1].name));
                let verdict = in_stage("fit", detect_distributional_overfitting(&id, &ood, &cfg.overfit))?;
                fits.insert(
                    "overfit".into(),
                    json!({"id_trace": id, "ood_trace": ood, "verdict": verdict}),
                );
            }
            Template::FinetuneAblation => {
                let tests = in_stage("generate", pq_tests())?;
                let mut trained = self.train_all(vec![job("P", train_sets[0].clone()), job("Q", train_sets[1].clone())])?;
                let parent = trained[0].output.checkpoints.last().expect("initial checkpoint").clone();
                let tuned = in_stage(
                    "train:P_to_Q",
                    self.finetune(&parent, &train_sets[1]).and_then(|o| {
                        self.save_checkpoints("P_to_Q", &o)?;
                        Ok(o)
                    }),
                )?;
                trained.push(Trained {
                    id: "P_to_Q".into(),
                    sources: vec![cfg.distributions[0].name.clone(), cfg.distributions[1].name.clone()],
                    output: tuned,
                });
                records = self.score_all(&trained, &tests)?;
            }
        }
        Ok((records, fits))
    }

    fn effective_configs(&self, replicate: usize, train_cfg: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let run_seed = self.cfg.seed.wrapping_add(replicate as u64);
        let model = ModelConfig {
            seed: seed::derive(run_seed, &[MODEL_TAG, self.cfg.model.seed]),
            ..self.cfg.model.clone()
        };
        let train = TrainConfig {
            seed: seed::derive(run_seed, &[TRAIN_TAG, train_cfg.seed]),
            ..train_cfg.clone()
        };
        (model, train)
    }

    fn save_checkpoints(&self, id: &str, out: &TrainOutput) -> Result<()> {
        let dir = self.out.join("checkpoints").join(id);
        fs::create_dir_all(&dir)?;
        for (e, c) in out.checkpoints.iter().enumerate() {
            c.save(&dir.join(format!("epoch_{e:03}.ckpt")))?;
        }
        Ok(())
    }

    fn finetune(&self, parent: &Checkpoint, data: &Dataset) -> Result<TrainOutput> {
        let (_, train_cfg) = self.effective_configs(0, &self.cfg.train);
        let train_cfg = TrainConfig {
            seed: seed::derive(train_cfg.seed, &[1]),
            ..train_cfg
        };
        finetune(parent, &parent.config, data, &train_cfg, &[])
    }

    /// Trains the jobs concurrently; results keep job order.
    fn train_all(&self, jobs: Vec<Job>) -> Result<Vec<Trained>> {
        par::try_map_indexed(jobs.len(), |i| {
            let j = &jobs[i];
            in_stage(format!("train:{}", j.id), (|| {
                let (model_cfg, train_cfg) = self.effective_configs(j.replicate, &j.train);
                let model = construct_model(&model_cfg)?;
                let output = train(&model, &j.data, &train_cfg, &[])?;
                self.save_checkpoints(&j.id, &output)?;
                Ok(Trained {
                    id: j.id.clone(),
                    sources: j.data.source_counts().into_keys().collect(),
                    output,
                })
            })())
        })
    }

    fn test_label(&self, test: &str, acceleration: f64) -> String {
        if self.cfg.accelerations.len() > 1 {
            format!("{test}@R{acceleration}")
        } else {
            test.to_owned()
        }
    }

    /// Scores every epoch checkpoint of every model on every test set and
    /// acceleration.
    fn score_all(&self, trained: &[Trained], tests: &[TestSet]) -> Result<Vec<EvalRecord>> {
        let cells: Vec<(usize, usize)> = trained
            .iter()
            .enumerate()
            .flat_map(|(m, t)| (0..t.output.checkpoints.len()).map(move |e| (m, e)))
            .collect();
        let per_cell = par::try_map_indexed(cells.len(), |c| {
            let (m, epoch) = cells[c];
            let t = &trained[m];
            in_stage(format!("evaluate:{}", t.id), (|| {
                let model = t.output.checkpoints[epoch].model()?;
                let mut out = Vec::new();
                for test in tests {
                    for &r in &self.cfg.accelerations {
                        for (metric, value, flags) in self.score(&model, &test.data, r)? {
                            out.push(EvalRecord {
                                model_id: t.id.clone(),
                                sources: t.sources.clone(),
                                epoch,
                                test_set: self.test_label(&test.name, r),
                                metric: metric.as_str().to_owned(),
                                value,
                                mask_seed: self.mask_seed,
                                flags,
                            });
                        }
                    }
                }
                Ok(out)
            })())
        })?;
        Ok(per_cell.into_iter().flatten().collect())
    }

    fn reconstruct_all(&self, model: &Model, data: &Dataset, acceleration: f64) -> Result<Vec<(RealImage, RealImage)>> {
        par::try_map_indexed(data.len(), |i| {
            let s = data.eval_sample(i, acceleration, self.mask_seed)?;
            let input = ModelInput {
                kspace: &s.kspace,
                sensitivities: &data.items[i].sensitivities,
                mask: &s.mask,
            };
            Ok((model.reconstruct(&input)?, s.target))
        })
    }

    fn score(&self, model: &Model, data: &Dataset, acceleration: f64) -> Result<Vec<(Metric, f64, Vec<String>)>> {
        score_pairs(&self.reconstruct_all(model, data, acceleration)?, &self.cfg.metrics)
    }

    fn final_value(&self, records: &[EvalRecord], model: &str, test: &str) -> Result<f64> {
        let label = self.test_label(test, self.cfg.accelerations[0]);
        records
            .iter()
            .filter(|r| r.model_id == model && r.test_set == label && r.metric == Metric::Ssim.as_str())
            .max_by_key(|r| r.epoch)
            .map(|r| r.value)
            .ok_or_else(|| Error::invalid(format!("no ssim record for model {model} on {label}; add ssim to the metric set")))
    }

    fn trace(&self, records: &[EvalRecord], model: &str, test: &str) -> Vec<f64> {
        let label = self.test_label(test, self.cfg.accelerations[0]);
        let mut rows: Vec<&EvalRecord> = records
            .iter()
            .filter(|r| r.model_id == model && r.test_set == label && r.metric == Metric::Ssim.as_str())
            .collect();
        rows.sort_by_key(|r| r.epoch);
        rows.into_iter().map(|r| r.value).collect()
    }

    /// Final-epoch SSIM of every replicate, per model family and test set,
    /// and whether the joint model lies within two standard deviations of
    /// the matching specialist.
    fn seed_band(&self, records: &[EvalRecord], tests: &[TestSet]) -> Result<serde_json::Value> {
        let reps = self.cfg.replicates;
        let id = |base: &str, r: usize| if reps > 1 { format!("{base}_r{r}") } else { base.to_owned() };
        let mut out = serde_json::Map::new();
        for test in tests {
            let mut cell = serde_json::Map::new();
            let mut stats = std::collections::BTreeMap::new();
            for base in ["P", "Q", "joint", "joint_half"] {
                let v = (0..reps).map(|r| self.final_value(records, &id(base, r), &test.name)).collect::<Result<Vec<_>>>()?;
                let (m, s) = (mean(&v), sample_std(&v));
                stats.insert(base, (m, s));
                cell.insert(base.into(), json!({"values": v, "mean": m, "std": s}));
            }
            let (spec_mean, spec_std) = stats[test.name.as_str()];
            let joint = stats["joint"].0;
            cell.insert("joint_within_2std".into(), json!((joint - spec_mean).abs() <= 2.0 * spec_std));
            out.insert(test.name.clone(), serde_json::Value::Object(cell));
        }
        Ok(serde_json::Value::Object(out))
    }

    fn diversity_fits(&self, records: &[EvalRecord], train_sets: &[Dataset], tests: &[TestSet]) -> Result<serde_json::Value> {
        let cfg = self.cfg;
        let target = &cfg.test_distributions[0].name;
        let target_test = tests.iter().find(|t| &t.name == target).expect("target test set");
        let mut baseline = Vec::new();
        for s in &cfg.distributions {
            baseline.push((self.final_value(records, &s.name, &s.name)?, self.final_value(records, &s.name, target)?));
        }
        let union_id = mean(
            &cfg.distributions
                .iter()
                .map(|s| self.final_value(records, "union", &s.name))
                .collect::<Result<Vec<_>>>()?,
        );
        let union = (union_id, self.final_value(records, "union", target)?);

        let fcfg = FeatureConfig {
            seed: seed::derive(cfg.seed, &[FEATURE_TAG]),
            ..FeatureConfig::default()
        };
        let target_features = extract_features(&target_test.data.targets(), &fcfg)?;
        let mut similarity = Vec::new();
        for d in train_sets {
            let f = extract_features(&d.targets(), &fcfg)?;
            similarity.push(nn_similarity(&target_features, &f)?.mean);
        }
        let ood: Vec<f64> = baseline.iter().map(|p| p.1).collect();
        let mut best = 0;
        for (i, &v) in ood.iter().enumerate() {
            if v > ood[best] {
                best = i;
            }
        }
        let fit = match effective_robustness_fit(&baseline, &[union]) {
            Ok(f) => json!(f),
            Err(e) => json!({"error": e.to_string()}),
        };
        let corr = match pearson_corr(&similarity, &ood) {
            Ok(c) => json!(c),
            Err(e) => json!({"error": e.to_string()}),
        };
        Ok(json!({
            "target": target,
            "sources": cfg.distributions.iter().map(|s| &s.name).collect::<Vec<_>>(),
            "baseline_points": baseline,
            "union_point": union,
            "robustness_fit": fit,
            "p_best": cfg.distributions[best].name,
            "similarity_means": similarity,
            "similarity_ssim_pearson": corr,
        }))
    }

    /// Final-epoch lesion-region SSIM, averaged per lesion size class.
    fn region_records(&self, t: &Trained, test: &TestSet) -> Result<(Vec<EvalRecord>, usize)> {
        let ssim_cfg = SsimConfig::default();
        let epoch = t.output.checkpoints.len() - 1;
        let model = t.output.checkpoints[epoch].model()?;
        let mut records = Vec::new();
        let mut grown_total = 0;
        for &r in &self.cfg.accelerations {
            let pairs = self.reconstruct_all(&model, &test.data, r)?;
            let mut by_class: std::collections::BTreeMap<&str, (Vec<f64>, usize)> = Default::default();
            for (item, (recon, target)) in test.data.items.iter().zip(&pairs) {
                let Some(lesion) = &item.lesion else { continue };
                let (region, grown) = grow_region(lesion.region(), ssim_cfg.window, target.height, target.width);
                let e = by_class.entry(lesion.size_class.as_str()).or_default();
                e.0.push(region_ssim(recon, target, &region, &ssim_cfg)?);
                e.1 += grown as usize;
            }
            if by_class.is_empty() {
                return Err(Error::invalid(format!("test set {} contains no lesions", test.name)));
            }
            for (class, (values, grown)) in by_class {
                grown_total += grown;
                records.push(EvalRecord {
                    model_id: t.id.clone(),
                    sources: t.sources.clone(),
                    epoch,
                    test_set: self.test_label(&format!("{}/lesion_{class}", test.name), r),
                    metric: "region_ssim".into(),
                    value: mean(&values),
                    mask_seed: self.mask_seed,
                    flags: if grown > 0 { vec!["region_grown".into()] } else { vec![] },
                });
            }
        }
        Ok((records, grown_total))
    }
}

#[cfg(test)]
mod tests;
