use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{Model, ModelConfig, ModelInput};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::kspace::{MaskPolicy, DEFAULT_CENTER_FRACTION};
use crate::metrics::{ssim, DataRange, SsimConfig};
use crate::par;
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    OneMinusSsim,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub loss: LossKind,
    /// Each mini-batch draws one of these accelerations uniformly.
    pub accelerations: Vec<f64>,
    pub center_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 4,
            optimizer: Optimizer::adam(),
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_fraction: 0.01,
            clip_norm: 1.0,
            loss: LossKind::OneMinusSsim,
            accelerations: vec![4.0],
            center_fraction: DEFAULT_CENTER_FRACTION,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must lie in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be > 0"));
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rates need lr_max >= lr_min >= 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        if self.accelerations.is_empty() || self.accelerations.iter().any(|&r| !(r >= 1.0)) {
            return Err(Error::invalid("accelerations must be a non-empty list of values >= 1"));
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return Err(Error::invalid("adam needs 0 <= beta < 1 and eps > 0"));
                }
            }
            Optimizer::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid("sgd momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Warmup length in steps: `round(fraction * total)`, at least one step
/// whenever there is anything to train.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    if total_steps == 0 {
        return 0;
    }
    ((warmup_fraction * total_steps as f64).round() as usize).clamp(1, total_steps)
}

/// Learning rate of step `step` (0-based): linear ramp to `lr_max` over the
/// warmup steps, then linear decay reaching `lr_min` on the final step.
pub fn learning_rate(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warm = warmup_steps(total_steps, cfg.warmup_fraction);
    if step < warm {
        return cfg.lr_max * (step + 1) as f64 / warm as f64;
    }
    let decay = total_steps - warm;
    cfg.lr_max + (cfg.lr_min - cfg.lr_max) * (step + 1 - warm) as f64 / decay as f64
}

/// Scales `grads` so their global l2 norm is at most `clip_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sqr).sum::<f64>().sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

struct OptimizerState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: usize,
}

impl OptimizerState {
    fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, opt: Optimizer, lr: f64, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match opt {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let b1t = 1.0 - beta1.powi(self.step as i32);
                    let b2t = 1.0 - beta2.powi(self.step as i32);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (k, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        *pv -= lr * (m[k] / b1t) / ((v[k] / b2t).sqrt() + eps);
                    }
                }
                Optimizer::Sgd { momentum } => {
                    let buf = self.first[i].data_mut();
                    for (k, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        buf[k] = momentum * buf[k] + gv;
                        *pv -= lr * buf[k];
                    }
                }
            }
        }
    }
}

/// An evaluation set scored after every epoch with fixed per-volume masks.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub name: &'a str,
    pub dataset: &'a Dataset,
    pub acceleration: f64,
    pub mask_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorTrace {
    pub name: String,
    /// Mean SSIM after each epoch.
    pub ssim: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Initial checkpoint followed by one per epoch.
    pub checkpoints: Vec<Checkpoint>,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
    pub monitors: Vec<MonitorTrace>,
}

/// Per-item SSIM of `model` on `dataset` under fixed per-volume masks.
pub fn evaluate(model: &Model, dataset: &Dataset, acceleration: f64, mask_seed: u64) -> Result<Vec<f64>> {
    let cfg = SsimConfig::default();
    par::try_map_indexed(dataset.len(), |i| {
        let s = dataset.eval_sample(i, acceleration, mask_seed)?;
        let input = ModelInput {
            kspace: &s.kspace,
            sensitivities: &dataset.items[i].sensitivities,
            mask: &s.mask,
        };
        ssim(&model.reconstruct(&input)?, &s.target, &cfg)
    })
}

fn item_loss(
    model: &Model,
    dataset: &Dataset,
    index: usize,
    input: &ModelInput<'_>,
    loss: LossKind,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let out = model.forward(&mut tape, &params, input)?;
    let target = dataset.items[index].target();
    let l: Var = match loss {
        LossKind::OneMinusSsim => {
            let cfg = SsimConfig {
                data_range: DataRange::TargetMax,
                ..SsimConfig::default()
            };
            let range = cfg.range_for(&target);
            tape.ssim_loss(out, &target, &cfg, range)?
        }
        LossKind::Mse => tape.mse_loss(out, &Tensor::from_real_image(&target))?,
    };
    let grads = tape.backward(l)?;
    Ok((tape.value(l).item(), params.iter().map(|&p| grads.wrt(&tape, p)).collect()))
}

fn run(
    mut model: Model,
    provenance: Vec<String>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    monitors: &[Monitor<'_>],
) -> Result<TrainOutput> {
    cfg.validate()?;
    let (h, w) = dataset.extents().ok_or_else(|| Error::invalid("training dataset is empty"))?;
    let fingerprint = dataset.content_hash();
    let checkpoint = |model: &Model, epoch: usize| Checkpoint {
        config: model.config.clone(),
        params: model.params.clone(),
        epoch,
        train_fingerprint: fingerprint.clone(),
        rng_seed: seed::derive(cfg.seed, &[0x6570_6f63, epoch as u64]),
        extents: (h, w),
        provenance: provenance.clone(),
    };
    let mut out = TrainOutput {
        checkpoints: vec![checkpoint(&model, 0)],
        train_loss: Vec::with_capacity(cfg.epochs),
        monitors: monitors
            .iter()
            .map(|m| MonitorTrace {
                name: m.name.to_string(),
                ssim: Vec::with_capacity(cfg.epochs),
            })
            .collect(),
    };
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let policy = MaskPolicy {
        seed: seed::derive(cfg.seed, &[0x6d61_736b]),
        center_fraction: cfg.center_fraction,
    };
    let mut state = OptimizerState::new(&model.params);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut rng = seed::stream(out.checkpoints[epoch - 1].rng_seed, 0);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let accel = cfg.accelerations[rng.gen_range(0..cfg.accelerations.len())];
            let mask = policy.batch_mask(w, accel, step as u64)?;
            let per_item = par::try_map_indexed(batch.len(), |b| {
                let idx = batch[b];
                let y = dataset.measure(idx, &mask, seed::derive(cfg.seed, &[0x6e6f_6973, step as u64, idx as u64]))?;
                let input = ModelInput {
                    kspace: &y,
                    sensitivities: &dataset.items[idx].sensitivities,
                    mask: &mask,
                };
                item_loss(&model, dataset, idx, &input, cfg.loss)
            })?;
            let n = batch.len() as f64;
            let loss = per_item.iter().map(|(l, _)| l).sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}, step {step}")));
            }
            let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (_, g) in &per_item {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b / n);
                }
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = learning_rate(step, total, cfg);
            state.update(cfg.optimizer, lr, &mut model.params, &grads);
            epoch_loss += loss;
            step += 1;
        }
        out.train_loss.push(epoch_loss / steps_per_epoch as f64);
        for (m, trace) in monitors.iter().zip(out.monitors.iter_mut()) {
            let scores = evaluate(&model, m.dataset, m.acceleration, m.mask_seed)?;
            trace.ssim.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
        out.checkpoints.push(checkpoint(&model, epoch));
    }
    Ok(out)
}

/// Trains from the model's current parameters, checkpointing every epoch.
pub fn train(model: &Model, dataset: &Dataset, cfg: &TrainConfig, monitors: &[Monitor<'_>]) -> Result<TrainOutput> {
    run(model.clone(), Vec::new(), dataset, cfg, monitors)
}

/// Continues training from `parent`, which must have been produced by a
/// model with exactly `config`.
pub fn finetune(
    parent: &Checkpoint,
    config: &ModelConfig,
    dataset: &Dataset,
    cfg: &TrainConfig,
    monitors: &[Monitor<'_>],
) -> Result<TrainOutput> {
    if &parent.config != config {
        return Err(Error::invalid(format!(
            "checkpoint was trained with {:?}, not {:?}",
            parent.config, config
        )));
    }
    let mut provenance = parent.provenance.clone();
    provenance.push(parent.fingerprint());
    run(parent.model()?, provenance, dataset, cfg, monitors)
}
