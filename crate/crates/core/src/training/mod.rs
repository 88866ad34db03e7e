//! Residual-learning training: losses, Adam with coupled L2 decay, the
//! dataset split, the step loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod observer;

pub use adam::{adam_step, AdamConfig, AdamState, DecayMode};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{loss, mse_loss, nlmse_loss, LossKind};
pub use observer::{NoObserver, RunLogger, TrainObserver};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::PairedSample;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, EvalRow, MetricConfig};
use crate::tensor::{Element, Graph};
use crate::unetpp::{compose_sr, UNetPPModel};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Total optimizer steps; one sample per step.
    pub steps: u64,
    pub batch_size: usize,
    /// Train : validation proportions.
    pub split_ratio: (u32, u32),
    pub seed: u64,
    pub nlmse_epsilon: f64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Zero disables validation.
    pub val_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Nlmse,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            decay_mode: DecayMode::Decoupled,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 60_000,
            batch_size: 1,
            split_ratio: (3, 1),
            seed: 0,
            nlmse_epsilon: 1e-12,
            checkpoint_every: 1000,
            val_every: 500,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("nlmse_epsilon", self.nlmse_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::usage(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::usage(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size != 1 {
            return Err(Error::usage(format!(
                "only batch_size = 1 is supported, got {}",
                self.batch_size
            )));
        }
        if self.split_ratio.0 == 0 || self.split_ratio.1 == 0 {
            return Err(Error::usage("split_ratio parts must both be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
        }
    }

    /// `key = value` pairs accepted by [`set`](Self::set).
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("loss", self.loss.name().to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("decay_mode", self.decay_mode.name().to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("split_ratio", format!("{}:{}", self.split_ratio.0, self.split_ratio.1)),
            ("seed", self.seed.to_string()),
            ("nlmse_epsilon", self.nlmse_epsilon.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("val_every", self.val_every.to_string()),
        ]
    }

    /// Sets one field by name. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "loss" => self.loss = value.trim().parse()?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "decay_mode" => self.decay_mode = value.trim().parse()?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "split_ratio" => {
                let (a, b) = value
                    .split_once(':')
                    .ok_or_else(|| format!("split_ratio must look like 3:1, got {value:?}"))?;
                self.split_ratio = (parse(key, a)?, parse(key, b)?);
            }
            "seed" => self.seed = parse(key, value)?,
            "nlmse_epsilon" => self.nlmse_epsilon = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Validation outcome at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValRecord {
    pub step: u64,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<E: Element> {
    /// Completed optimizer steps.
    pub step: u64,
    pub adam: AdamState<E>,
    /// Shuffle RNG positioned at the start of the current epoch.
    pub rng: ChaCha8Rng,
    /// `(step, loss)` for every step run since this state was created or
    /// loaded.
    pub loss_history: Vec<(u64, f64)>,
    /// Lowest validation loss seen.
    pub best_val: Option<ValRecord>,
}

impl<E: Element> TrainState<E> {
    pub fn new(model: &UNetPPModel<E>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            step: 0,
            adam: AdamState::for_params(model.named_params().into_iter().map(|(_, t)| t)),
            rng,
            loss_history: Vec::new(),
            best_val: None,
        }
    }
}

/// Index sets of a seeded shuffled split; `|train| = round(n·a / (a + b))`,
/// kept within `1..n`. Both sets are returned in ascending order.
pub fn split_indices(n: usize, ratio: (u32, u32), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(Error::usage(format!("need at least 4 samples to split, got {n}")));
    }
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::usage("split ratio parts must both be positive"));
    }
    let frac = ratio.0 as f64 / (ratio.0 + ratio.1) as f64;
    let n_train = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split_dataset<T: Clone>(samples: &[T], ratio: (u32, u32), seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(samples.len(), ratio, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| samples[i].clone()).collect();
    Ok((pick(train), pick(val)))
}

/// Mean of the (up to) `window` losses ending at `step` (1-based), or
/// `None` if `step` is not in the history.
pub fn smoothed_loss(history: &[(u64, f64)], step: u64, window: usize) -> Option<f64> {
    let end = history.iter().position(|&(s, _)| s == step)?;
    let start = (end + 1).saturating_sub(window);
    let span = &history[start..=end];
    Some(span.iter().map(|p| p.1).sum::<f64>() / span.len() as f64)
}

/// Samples and metric settings used for periodic validation.
pub struct Validation<'a, E: Element> {
    pub samples: &'a [PairedSample<E>],
    pub metrics: &'a MetricConfig,
    /// Clamp range of super-resolved images.
    pub range: (f64, f64),
}

fn check_dataset<E: Element>(model: &UNetPPModel<E>, samples: &[PairedSample<E>]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let dims = first.dims();
    for (k, s) in samples.iter().enumerate() {
        if s.dims() != dims || s.residual_target.shape() != s.lf_bilinear.shape() {
            return Err(Error::dim(format!(
                "sample {k} is {:?}, expected {:?}",
                s.dims(),
                dims
            )));
        }
    }
    model.check_input(first.lf_bilinear.shape())
}

/// Loss, PSNR and SSIM of the model over `val`.
pub fn validate<E: Element>(
    model: &UNetPPModel<E>,
    val: &Validation<'_, E>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<ValRecord> {
    if val.samples.is_empty() {
        return Err(Error::usage("validation set is empty"));
    }
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(val.samples.len());
    for s in val.samples {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let x = g.constant(&s.lf_bilinear);
        let trace = model.forward_graph(&mut g, &bound, x)?;
        let target = g.constant(&s.residual_target);
        let l = loss(&mut g, cfg.loss, trace.output, target, cfg.nlmse_epsilon)?;
        total += g.value(l).item()?.as_f64();
        let sr = compose_sr(&s.lf_bilinear, g.value(trace.output), val.range)?;
        scores.push((psnr(&sr, &s.hf, val.metrics)?, ssim(&sr, &s.hf, val.metrics)?));
    }
    let row = EvalRow::summarize("val", &scores)?;
    Ok(ValRecord {
        step,
        loss: total / val.samples.len() as f64,
        psnr: row.psnr_mean,
        ssim: row.ssim_mean,
    })
}

fn epoch_order(rng: &ChaCha8Rng, n: usize) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = rng.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (order, rng)
}

/// Runs optimizer steps until `state.step == cfg.steps`.
///
/// Each step draws the next sample of a per-epoch shuffle of `train_set`,
/// predicts its residual from `lf_bilinear`, computes the configured loss
/// against `residual_target` and applies one Adam update. Every
/// `val_every` steps the model is scored on `val`; every
/// `checkpoint_every` steps the observer is asked to checkpoint.
pub fn train<E: Element>(
    model: &mut UNetPPModel<E>,
    state: &mut TrainState<E>,
    train_set: &[PairedSample<E>],
    val: Option<&Validation<'_, E>>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<E>,
) -> Result<()> {
    cfg.validate()?;
    if state.step > cfg.steps {
        return Err(Error::usage(format!(
            "state is already at step {} beyond the configured {} steps",
            state.step, cfg.steps
        )));
    }
    if state.step == cfg.steps {
        return Ok(());
    }
    if train_set.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    check_dataset(model, train_set)?;
    if let Some(v) = val {
        check_dataset(model, v.samples)?;
    }

    let adam = cfg.adam();
    let n = train_set.len();
    let (mut order, mut next_rng) = epoch_order(&state.rng, n);
    while state.step < cfg.steps {
        let sample = &train_set[order[(state.step % n as u64) as usize]];
        let step = state.step + 1;

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let x = g.constant(&sample.lf_bilinear);
        let trace = model.forward_graph(&mut g, &bound, x)?;
        let target = g.constant(&sample.residual_target);
        let l = loss(&mut g, cfg.loss, trace.output, target, cfg.nlmse_epsilon)?;
        let value = g.value(l).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: value });
        }
        g.backward(l)?;
        let ids = bound.ids();
        let grads: Vec<Option<&[E]>> = ids.iter().map(|&id| g.grad(id)).collect();
        adam_step(&mut model.params_mut(), &grads, &mut state.adam, &adam)?;

        state.step = step;
        state.loss_history.push((step, value));
        if step % n as u64 == 0 {
            state.rng = next_rng;
            (order, next_rng) = epoch_order(&state.rng, n);
        }
        observer.step(step, value, cfg.learning_rate)?;

        if let Some(v) = val.filter(|_| cfg.val_every > 0 && step % cfg.val_every == 0) {
            let rec = validate(model, v, cfg, step)?;
            let best = state.best_val.map_or(true, |b| rec.loss < b.loss);
            if best {
                state.best_val = Some(rec);
            }
            observer.validation(&rec, best, model, state)?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            observer.checkpoint(model, state)?;
        }
    }
    Ok(())
}
