//! Teacher-forced training.
//!
//! A training window is `seq_len + 1` consecutive frames of one episode:
//! the first `seq_len` are inputs and every input position `s` is trained to
//! predict frame `s + 1`. An epoch is one shuffled pass over all windows of
//! the training set.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{csv_error, evaluate, EvalConfig, FrameType};
use crate::model::{embed_frame, embed_target, ModelConfig, WorldModel, STATE_CHANNELS};
use crate::tensor::{AdamW, Graph, Tensor};

/// `(episode, first frame)` of a training window.
pub type Window = (usize, usize);

/// Every window of `seq_len + 1` frames inside one episode.
pub fn all_windows(data: &Dataset, seq_len: usize) -> Vec<Window> {
    let per = data.frames.saturating_sub(seq_len);
    (0..data.len())
        .flat_map(|e| (0..per).map(move |s| (e, s)))
        .collect()
}

/// Shuffled passes over a fixed window list.
pub struct WindowSampler {
    windows: Vec<Window>,
    rng: ChaCha8Rng,
}

impl WindowSampler {
    pub fn new(windows: Vec<Window>, seed: u64) -> Self {
        WindowSampler {
            windows,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Batches of one epoch; the last batch may be smaller.
    pub fn epoch(&mut self, batch: usize) -> Vec<Vec<Window>> {
        self.windows.shuffle(&mut self.rng);
        self.windows.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Embedded inputs `(B, S, K, C_in, 8)` and targets `(B, S, K, 4, 8)`.
pub fn make_batch(data: &Dataset, windows: &[Window], cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let (s, k) = (cfg.seq_len, data.objects);
    if k != cfg.objects {
        return Err(Error::Shape(format!(
            "dataset has {k} objects, model expects {}",
            cfg.objects
        )));
    }
    let cin = cfg.input_channels();
    let mut input = Vec::with_capacity(windows.len() * s * k * cin * 8);
    let mut target = Vec::with_capacity(windows.len() * s * k * STATE_CHANNELS * 8);
    for &(e, start) in windows {
        let ep = &data.episodes[e];
        if start + s >= ep.len() {
            return Err(Error::Shape(format!(
                "window at frame {start} of length {} exceeds episode of {} frames",
                s + 1,
                ep.len()
            )));
        }
        for t in start..start + s {
            embed_frame(&ep.frames[t], &ep.shapes, cfg.vertices, &mut input);
            embed_target(&ep.frames[t + 1], &mut target);
        }
    }
    let b = windows.len();
    Ok((
        Tensor::new(vec![b, s, k, cin, 8], input)?,
        Tensor::new(vec![b, s, k, STATE_CHANNELS, 8], target)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to the variant's weight decay when absent.
    pub weight_decay: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_grad_norm: Option<f64>,
    /// Cosine decay of the learning rate to zero over all epochs.
    pub cosine_decay: bool,
    /// Stop after this many seconds of wall clock.
    pub time_budget_s: Option<f64>,
    /// Horizon of the validation rollout metrics.
    pub eval_horizon: usize,
    /// Rollout windows per validation episode.
    pub eval_windows: Option<usize>,
    /// Evaluate every this many epochs (and after the last).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamW::default();
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: opt.lr,
            weight_decay: None,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            clip_grad_norm: None,
            cosine_decay: false,
            time_budget_s: None,
            eval_horizon: 10,
            eval_windows: None,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self, model: &ModelConfig) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay.unwrap_or(model.variant.weight_decay()),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One line of the training metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub rmse_10: Option<f64>,
    pub rmse_free: Option<f64>,
    pub rmse_wall: Option<f64>,
    pub rmse_obj: Option<f64>,
    pub wall_clock_s: f64,
}

/// Mean teacher-forced loss over all windows, in batches.
pub fn dataset_loss(model: &WorldModel, data: &Dataset, batch: usize) -> Result<f64> {
    let windows = all_windows(data, model.config().seq_len);
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(batch.max(1)) {
        let (x, y) = make_batch(data, chunk, model.config())?;
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let l = model.loss(&mut g, &p, &x, &y)?;
        total += g.value(l).item() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step(model: &mut WorldModel, x: &Tensor, y: &Tensor, opt: &AdamW, clip: Option<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let l = model.loss(&mut g, &p, x, y)?;
    let loss = g.value(l).item();
    g.backward(l)?;
    model.params.zero_grad();
    model.params.accumulate_grads(&g, &p);
    let grad_norm = model.params.grad_norm();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: model.params.step_count() + 1,
            lr: opt.lr,
            grad_norm,
        });
    }
    if let Some(c) = clip {
        model.params.clip_grad_norm(c);
    }
    model.params.adamw_step(opt);
    Ok(loss)
}

/// Validation metrics at the configured horizon.
pub fn validation_metrics(
    model: &WorldModel,
    val: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    elapsed: f64,
) -> Result<EpochMetrics> {
    let loss = dataset_loss(model, val, cfg.batch_size)?;
    let eval_cfg = EvalConfig {
        horizon: cfg.eval_horizon,
        max_windows_per_episode: cfg.eval_windows,
        ..EvalConfig::default()
    };
    let result = evaluate(model, val, &eval_cfg)?;
    let t = &result.rollout;
    let n = cfg.eval_horizon;
    let (rmse_10, rmse_free, rmse_wall, rmse_obj) = if t.windows().is_empty() {
        (None, None, None, None)
    } else {
        (
            t.rmse_by_type(n, FrameType::All, None)?,
            t.rmse_by_type(n, FrameType::Free, None)?,
            t.rmse_by_type(n, FrameType::ObjectWall, None)?,
            t.rmse_by_type(n, FrameType::ObjectObject, None)?,
        )
    };
    Ok(EpochMetrics {
        epoch,
        split: "val".into(),
        loss,
        rmse_10,
        rmse_free,
        rmse_wall,
        rmse_obj,
        wall_clock_s: elapsed,
    })
}

/// Trains `model` and reports one train row per epoch plus a validation row
/// on evaluation epochs. Stops early when the time budget runs out, after
/// logging the interrupted epoch.
pub fn train(
    model: &mut WorldModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut log: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let windows = all_windows(train_set, model.config().seq_len);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "episodes of {} frames hold no window of {} frames",
            train_set.frames,
            model.config().seq_len + 1
        )));
    }
    let mut opt = cfg.optimizer(model.config());
    let mut sampler = WindowSampler::new(windows, cfg.seed);
    let steps_per_epoch = sampler.len().div_ceil(cfg.batch_size.max(1));
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    let start = Instant::now();
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        let mut out_of_time = false;
        for batch in sampler.epoch(cfg.batch_size) {
            let (x, y) = make_batch(train_set, &batch, model.config())?;
            if cfg.cosine_decay {
                opt.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            }
            step += 1;
            total += train_step(model, &x, &y, &opt, cfg.clip_grad_norm)? * batch.len() as f64;
            seen += batch.len();
            if cfg.time_budget_s.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
                out_of_time = true;
                break;
            }
        }
        let row = EpochMetrics {
            epoch,
            split: "train".into(),
            loss: total / seen as f64,
            rmse_10: None,
            rmse_free: None,
            rmse_wall: None,
            rmse_obj: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        log(&row)?;
        history.push(row);
        let last = epoch == cfg.epochs || out_of_time;
        if let Some(val) = val_set {
            if !val.is_empty() && (epoch % cfg.eval_every.max(1) == 0 || last) {
                let row = validation_metrics(model, val, cfg, epoch, start.elapsed().as_secs_f64())?;
                log(&row)?;
                history.push(row);
            }
        }
        if out_of_time {
            break;
        }
    }
    Ok(history)
}

/// Streams metrics rows to CSV with a header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Self {
        MetricsWriter {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, row: &EpochMetrics) -> Result<()> {
        self.inner.serialize(row).map_err(csv_error)?;
        self.inner.flush()?;
        Ok(())
    }
}
