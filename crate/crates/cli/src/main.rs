use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shiftmri_core::classical::{tune_lambda, TuneConfig};
use shiftmri_core::datasets::{self, DistributionSpec, RawLayout};
use shiftmri_core::harness::{self, emit_report, EvalRecord, ExperimentConfig, Fits, Metric};
use shiftmri_core::learned::{self, construct_model, Checkpoint, Monitor, ModelConfig, TrainConfig};
use shiftmri_core::metrics::{effective_robustness_fit, extract_features, nn_similarity, pearson_corr, FeatureConfig};
use shiftmri_core::toy::{compare_estimators, SubspaceWorld};
use shiftmri_core::{par, Error};

/// Multi-coil MRI reconstruction under distribution shift.
#[derive(Parser)]
#[command(name = "shiftmri", version)]
struct Cli {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets or ingest raw k-space.
    GenData(ConfigArg),
    /// Train (or fine-tune) a model, checkpointing every epoch.
    Train(ConfigArg),
    /// Score a checkpoint on a dataset.
    Eval(ConfigArg),
    /// Grid-search the FISTA regularization weight.
    TuneLambda(ConfigArg),
    /// Nearest-neighbour similarity of a test set to a training set.
    Similarity(ConfigArg),
    /// Effective-robustness line fit and correlation.
    RobustnessReport(ConfigArg),
    /// Monte-Carlo study of the linear subspace toy problem.
    ToySubspace(ConfigArg),
    /// Run a full experiment template.
    Run(ConfigArg),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Config { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input { .. } | CliError::Config { .. } => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|source| CliError::Input {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Config {
        path: path.to_owned(),
        source,
    })
}

/// Resolves paths in a config relative to the config file.
fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn out_dir(cli: &Cli) -> CliResult<PathBuf> {
    cli.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(Error::from)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn hash_json<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("config serializes")))
}

fn load_dataset(config: &Path, p: &Path) -> CliResult<datasets::Dataset> {
    Ok(datasets::load(&resolve(config, p))?)
}

fn default_count() -> usize {
    32
}
fn default_accelerations() -> Vec<f64> {
    vec![4.0]
}
fn default_acceleration() -> f64 {
    4.0
}
fn default_metrics() -> Vec<Metric> {
    vec![Metric::Ssim]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestEntry {
    path: PathBuf,
    layout: RawLayout,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataConfig {
    #[serde(default)]
    distributions: Vec<DistributionSpec>,
    #[serde(default = "default_count")]
    count: usize,
    /// Size of the held-out split written next to each dataset; 0 skips it.
    #[serde(default)]
    test_count: usize,
    #[serde(default)]
    ingest: Vec<IngestEntry>,
}

fn gen_data(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: GenDataConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if cfg.distributions.is_empty() && cfg.ingest.is_empty() {
        return Err(CliError::Usage("config lists no distributions and nothing to ingest".into()));
    }
    if let Some(seed) = cli.seed {
        for (i, s) in cfg.distributions.iter_mut().enumerate() {
            s.seed = shiftmri_core::seed::derive(seed, &[i as u64]);
        }
    }
    for s in &cfg.distributions {
        let d = datasets::generate(s, cfg.count)?;
        datasets::save(&d, &out.join(&s.name))?;
        println!("wrote {} ({} items)", out.join(&s.name).display(), d.len());
        if cfg.test_count > 0 {
            let t = harness::test_split(s, cfg.test_count)?;
            let dir = out.join(format!("{}_test", s.name));
            datasets::save(&t, &dir)?;
            println!("wrote {} ({} items)", dir.display(), t.len());
        }
    }
    for e in &cfg.ingest {
        let d = datasets::ingest_raw_volume(&resolve(path, &e.path), &e.layout)?;
        datasets::save(&d, &out.join(&e.layout.name))?;
        println!("wrote {} ({} items)", out.join(&e.layout.name).display(), d.len());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonitorSpec {
    name: String,
    dataset: PathBuf,
    #[serde(default = "default_acceleration")]
    acceleration: f64,
    #[serde(default)]
    mask_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainCmdConfig {
    dataset: PathBuf,
    /// Ignored when fine-tuning; the parent's config is used.
    model: Option<ModelConfig>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    finetune_from: Option<PathBuf>,
    #[serde(default)]
    monitors: Vec<MonitorSpec>,
}

#[derive(Serialize)]
struct TrainLog {
    train_loss: Vec<f64>,
    monitors: Vec<learned::MonitorTrace>,
    checkpoints: Vec<String>,
}

fn train_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: TrainCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        if let Some(m) = cfg.model.as_mut() {
            m.seed = seed;
        }
    }
    let data = load_dataset(path, &cfg.dataset)?;
    let monitor_data = cfg
        .monitors
        .iter()
        .map(|m| load_dataset(path, &m.dataset))
        .collect::<CliResult<Vec<_>>>()?;
    let monitors: Vec<Monitor<'_>> = cfg
        .monitors
        .iter()
        .zip(&monitor_data)
        .map(|(m, d)| Monitor {
            name: &m.name,
            dataset: d,
            acceleration: m.acceleration,
            mask_seed: m.mask_seed,
        })
        .collect();
    let output = match &cfg.finetune_from {
        Some(parent) => {
            let parent = Checkpoint::load(&resolve(path, parent))?;
            learned::finetune(&parent, &parent.config, &data, &cfg.train, &monitors)?
        }
        None => {
            let model_cfg = cfg
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("train config needs `model` unless `finetune_from` is set".into()))?;
            learned::train(&construct_model(model_cfg)?, &data, &cfg.train, &monitors)?
        }
    };
    let dir = out.join("checkpoints");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let mut names = Vec::new();
    for (e, c) in output.checkpoints.iter().enumerate() {
        let name = format!("epoch_{e:03}.ckpt");
        c.save(&dir.join(&name))?;
        names.push(format!("checkpoints/{name}"));
    }
    write_json(
        &out.join("train_log.json"),
        &TrainLog {
            train_loss: output.train_loss,
            monitors: output.monitors,
            checkpoints: names,
        },
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalCmdConfig {
    checkpoint: PathBuf,
    dataset: PathBuf,
    #[serde(default = "default_accelerations")]
    accelerations: Vec<f64>,
    #[serde(default)]
    mask_seed: u64,
    #[serde(default = "default_metrics")]
    metrics: Vec<Metric>,
    /// Defaults to the checkpoint file stem.
    #[serde(default)]
    model_id: Option<String>,
    /// Training sources recorded with each row.
    #[serde(default)]
    sources: Vec<String>,
}

fn eval_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: EvalCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if let Some(seed) = cli.seed {
        cfg.mask_seed = seed;
    }
    let ckpt_path = resolve(path, &cfg.checkpoint);
    let checkpoint = Checkpoint::load(&ckpt_path)?;
    let data = load_dataset(path, &cfg.dataset)?;
    let model_id = cfg.model_id.clone().unwrap_or_else(|| {
        ckpt_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    });
    let test = data.source_label();
    let mut records = Vec::new();
    for &r in &cfg.accelerations {
        let pairs = par::try_map_indexed(data.len(), |i| {
            let s = data.eval_sample(i, r, cfg.mask_seed)?;
            Ok::<_, Error>((learned::infer(&checkpoint, &s.kspace, &data.items[i].sensitivities, &s.mask)?, s.target))
        })?;
        for (metric, value, flags) in harness::score_pairs(&pairs, &cfg.metrics)? {
            records.push(EvalRecord {
                model_id: model_id.clone(),
                sources: cfg.sources.clone(),
                epoch: checkpoint.epoch,
                test_set: if cfg.accelerations.len() > 1 { format!("{test}@R{r}") } else { test.clone() },
                metric: metric.as_str().to_owned(),
                value,
                mask_seed: cfg.mask_seed,
                flags,
            });
        }
    }
    emit_report(&records, &Fits::new(), &hash_json(&cfg), &out)?;
    for r in &records {
        println!("{} {} {} = {}", r.model_id, r.test_set, r.metric, r.value);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneCmdConfig {
    dataset: PathBuf,
    grid: Vec<f64>,
    #[serde(default)]
    tune: TuneConfig,
}

fn tune_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: TuneCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if let Some(seed) = cli.seed {
        cfg.tune.mask_seed = seed;
    }
    let data = load_dataset(path, &cfg.dataset)?;
    let tuning = tune_lambda(&data, &cfg.grid, &cfg.tune)?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    println!("best lambda {}", tuning.best_lambda);
    write_json(&out.join("lambda.json"), &tuning)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimilarityCmdConfig {
    train: PathBuf,
    test: PathBuf,
    #[serde(default)]
    features: FeatureConfig,
}

fn similarity_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: SimilarityCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if let Some(seed) = cli.seed {
        cfg.features.seed = seed;
    }
    let train = load_dataset(path, &cfg.train)?;
    let test = load_dataset(path, &cfg.test)?;
    let report = nn_similarity(
        &extract_features(&test.targets(), &cfg.features)?,
        &extract_features(&train.targets(), &cfg.features)?,
    )?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    println!("mean nearest-neighbour similarity {}", report.mean);
    write_json(&out.join("similarity.json"), &report)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Correlate {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobustnessCmdConfig {
    /// `(id, ood)` metric pairs of baseline models.
    baseline: Vec<(f64, f64)>,
    #[serde(default)]
    candidates: Vec<(f64, f64)>,
    #[serde(default)]
    correlate: Option<Correlate>,
}

fn robustness_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let cfg: RobustnessCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    let fit = effective_robustness_fit(&cfg.baseline, &cfg.candidates)?;
    let pearson = cfg.correlate.as_ref().map(|c| pearson_corr(&c.x, &c.y)).transpose()?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    write_json(
        &out.join("robustness.json"),
        &serde_json::json!({"fit": fit, "pearson": pearson}),
    )
}

fn toy_n() -> usize {
    64
}
fn toy_d() -> usize {
    4
}
fn toy_sigma_p() -> f64 {
    0.05
}
fn toy_sigma_q() -> f64 {
    0.5
}
fn toy_samples() -> usize {
    100_000
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyCmdConfig {
    #[serde(default = "toy_n")]
    n: usize,
    #[serde(default = "toy_d")]
    d: usize,
    #[serde(default = "toy_sigma_p")]
    sigma_p: f64,
    #[serde(default = "toy_sigma_q")]
    sigma_q: f64,
    #[serde(default = "toy_samples")]
    samples: usize,
    seed: u64,
}

fn toy_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: ToyCmdConfig = read_config(path)?;
    let out = out_dir(cli)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let world = SubspaceWorld::new(cfg.n, cfg.d, cfg.sigma_p, cfg.sigma_q, cfg.seed)?;
    let report = compare_estimators(&world, cfg.samples, cfg.seed)?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    write_json(&out.join("toy.json"), &report)
}

fn run_cmd(cli: &Cli, path: &Path) -> CliResult<()> {
    let mut cfg: ExperimentConfig = read_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = match (&cli.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(path, o),
        (None, None) => return Err(CliError::Usage("--out is required when the config has no output_dir".into())),
    };
    let manifest = harness::run_experiment(&cfg, &out)?;
    println!(
        "wrote {} ({} artifacts, config {})",
        out.display(),
        manifest.artifacts.len(),
        &manifest.config_sha256[..12]
    );
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        eprintln!("warning: built without the `parallel` feature; running on one thread");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::GenData(a) => gen_data(cli, &a.config),
        Command::Train(a) => train_cmd(cli, &a.config),
        Command::Eval(a) => eval_cmd(cli, &a.config),
        Command::TuneLambda(a) => tune_cmd(cli, &a.config),
        Command::Similarity(a) => similarity_cmd(cli, &a.config),
        Command::RobustnessReport(a) => robustness_cmd(cli, &a.config),
        Command::ToySubspace(a) => toy_cmd(cli, &a.config),
        Command::Run(a) => run_cmd(cli, &a.config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
