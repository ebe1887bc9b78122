//! Rollout metrics.
//!
//! Errors are measured on seven variables per object: `x, y, vx, vy,
//! sin θ, cos θ, θ̇`. For a rollout window with frames `t = 0..=N`, where
//! frame 0 is the last context frame, the rollout RMSE is
//!
//! ```text
//! RMSE_N = sqrt( Σ_{t=0..N} Σ_i (y_t^i − ỹ_t^i)² / (max(N, 1) · N_vars) )
//! ```
//!
//! with `N_vars = 7 K`. Several windows are pooled by summing squared errors
//! and divisors. Frame-type RMSEs restrict the sum to predicted frames
//! (`t ≥ 1`) carrying a label and divide by the number of such frames; a
//! frame with both collision labels counts in both.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::WorldModel;
use crate::sim::{ContactLabels, ObjectState, Shape, World, WorldConfig};

pub const METRIC_VARIABLES: [&str; 7] = ["x", "y", "vx", "vy", "sin_theta", "cos_theta", "omega"];

pub fn metric_values(s: &ObjectState) -> [f64; 7] {
    let (sin, cos) = s.theta.sin_cos();
    [s.x, s.y, s.vx, s.vy, sin, cos, s.omega]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    All,
    Free,
    ObjectWall,
    ObjectObject,
}

impl FrameType {
    pub const ALL: [FrameType; 4] = [
        FrameType::All,
        FrameType::Free,
        FrameType::ObjectWall,
        FrameType::ObjectObject,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FrameType::All => "all",
            FrameType::Free => "free",
            FrameType::ObjectWall => "object_wall",
            FrameType::ObjectObject => "object_object",
        }
    }

    pub fn matches(&self, l: ContactLabels) -> bool {
        match self {
            FrameType::All => true,
            FrameType::Free => l.is_free(),
            FrameType::ObjectWall => l.object_wall,
            FrameType::ObjectObject => l.object_object,
        }
    }
}

/// Squared error of one frame, summed over objects, per metric variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameError {
    pub sq: [f64; 7],
    pub label: ContactLabels,
}

/// Per-frame squared errors of a set of rollout windows.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    objects: usize,
    windows: Vec<Vec<FrameError>>,
}

impl ErrorTable {
    pub fn new(objects: usize) -> Self {
        ErrorTable {
            objects,
            windows: Vec::new(),
        }
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    pub fn windows(&self) -> &[Vec<FrameError>] {
        &self.windows
    }

    /// Adds a window; `preds[t]`, `targets[t]` and `labels[t]` describe
    /// frame `t`, with `t = 0` the last context frame.
    pub fn push_window(
        &mut self,
        preds: &[Vec<ObjectState>],
        targets: &[Vec<ObjectState>],
        labels: &[ContactLabels],
    ) -> Result<()> {
        if preds.len() != targets.len() || preds.len() != labels.len() || preds.is_empty() {
            return Err(Error::Shape(format!(
                "window has {} predicted, {} target and {} labelled frames",
                preds.len(),
                targets.len(),
                labels.len()
            )));
        }
        let mut rows = Vec::with_capacity(preds.len());
        for ((p, t), &label) in preds.iter().zip(targets).zip(labels) {
            if p.len() != self.objects || t.len() != self.objects {
                return Err(Error::Shape(format!("frames must hold {} objects", self.objects)));
            }
            let mut sq = [0.0; 7];
            for (a, b) in p.iter().zip(t) {
                let (a, b) = (metric_values(a), metric_values(b));
                for v in 0..7 {
                    sq[v] += (a[v] - b[v]).powi(2);
                }
            }
            rows.push(FrameError { sq, label });
        }
        self.windows.push(rows);
        Ok(())
    }

    pub fn append(&mut self, other: ErrorTable) {
        self.windows.extend(other.windows);
    }

    /// Largest horizon available in every window.
    pub fn horizon(&self) -> usize {
        self.windows.iter().map(|w| w.len() - 1).min().unwrap_or(0)
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.windows.is_empty() || n > self.horizon() {
            return Err(Error::Horizon {
                requested: n,
                available: self.horizon(),
            });
        }
        Ok(())
    }

    fn frame_mass(e: &FrameError, variable: Option<usize>) -> f64 {
        match variable {
            Some(v) => e.sq[v],
            None => e.sq.iter().sum(),
        }
    }

    fn vars(&self, variable: Option<usize>) -> usize {
        self.objects * if variable.is_some() { 1 } else { 7 }
    }

    /// Squared-error mass of frames `1..=n` of a given type.
    pub fn mass(&self, n: usize, ty: FrameType, variable: Option<usize>) -> Result<f64> {
        self.check(n)?;
        Ok(self
            .windows
            .iter()
            .flat_map(|w| &w[1..=n])
            .filter(|e| ty.matches(e.label))
            .map(|e| Self::frame_mass(e, variable))
            .sum())
    }

    /// Pooled `RMSE_n` over all windows; `variable` restricts to one metric
    /// variable.
    pub fn rmse(&self, n: usize, variable: Option<usize>) -> Result<f64> {
        self.check(n)?;
        let mass: f64 = self
            .windows
            .iter()
            .flat_map(|w| &w[..=n])
            .map(|e| Self::frame_mass(e, variable))
            .sum();
        let denom = self.windows.len() * n.max(1) * self.vars(variable);
        Ok((mass / denom as f64).sqrt())
    }

    /// RMSE over predicted frames `1..=n` of one type; `None` when no frame
    /// carries the label.
    pub fn rmse_by_type(&self, n: usize, ty: FrameType, variable: Option<usize>) -> Result<Option<f64>> {
        if ty == FrameType::All {
            return self.rmse(n, variable).map(Some);
        }
        let mass = self.mass(n, ty, variable)?;
        let frames = self
            .windows
            .iter()
            .flat_map(|w| &w[1..=n])
            .filter(|e| ty.matches(e.label))
            .count();
        if frames == 0 {
            return Ok(None);
        }
        Ok(Some((mass / (frames * self.vars(variable)) as f64).sqrt()))
    }
}

/// Rollout RMSE of a single window.
pub fn rollout_rmse(preds: &[Vec<ObjectState>], targets: &[Vec<ObjectState>], n: usize) -> Result<f64> {
    let objects = targets.first().map(|f| f.len()).unwrap_or(0);
    if preds.len() < n + 1 || targets.len() < n + 1 {
        return Err(Error::Horizon {
            requested: n,
            available: preds.len().min(targets.len()).saturating_sub(1),
        });
    }
    let mut t = ErrorTable::new(objects);
    let labels = vec![ContactLabels::FREE; n + 1];
    t.push_window(&preds[..=n], &targets[..=n], &labels)?;
    t.rmse(n, None)
}

/// Squared errors between each predicted frame and one simulator step from
/// the previous predicted frame.
pub fn euler_window(
    preds: &[Vec<ObjectState>],
    labels: &[ContactLabels],
    shapes: &[Shape],
    world: &WorldConfig,
) -> Result<ErrorTable> {
    let mut stepped = Vec::with_capacity(preds.len());
    stepped.push(preds[0].clone());
    for prev in &preds[..preds.len() - 1] {
        let mut w = World::from_states(world.clone(), shapes, prev)?;
        w.step()?;
        stepped.push(w.states());
    }
    let mut t = ErrorTable::new(shapes.len());
    t.push_window(preds, &stepped, labels)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub horizon: usize,
    /// Frames between successive window starts; 0 means `horizon`.
    pub stride: usize,
    pub max_windows_per_episode: Option<usize>,
    pub euler: bool,
    pub world: WorldConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon: 10,
            stride: 0,
            max_windows_per_episode: None,
            euler: false,
            world: WorldConfig::default(),
        }
    }
}

/// Indices `c` of the last context frame of each evaluation window.
pub fn window_starts(frames: usize, seq_len: usize, cfg: &EvalConfig) -> Vec<usize> {
    let stride = if cfg.stride == 0 { cfg.horizon.max(1) } else { cfg.stride };
    let first = seq_len.saturating_sub(1);
    let mut out = Vec::new();
    let mut c = first;
    while c + cfg.horizon < frames {
        out.push(c);
        if cfg.max_windows_per_episode.is_some_and(|m| out.len() >= m) {
            break;
        }
        c += stride;
    }
    out
}

pub struct EvalResult {
    pub rollout: ErrorTable,
    pub euler: Option<ErrorTable>,
    /// Predicted frames of the first window of every episode, context frame
    /// included.
    pub first_rollouts: Vec<Vec<Vec<ObjectState>>>,
}

/// Rolls the model out from every window of every episode, in parallel
/// across episodes.
pub fn evaluate(model: &WorldModel, data: &Dataset, cfg: &EvalConfig) -> Result<EvalResult> {
    let seq_len = model.config().seq_len;
    let starts = window_starts(data.frames, seq_len, cfg);
    if starts.is_empty() && !data.is_empty() {
        return Err(Error::Horizon {
            requested: cfg.horizon,
            available: data.frames.saturating_sub(seq_len),
        });
    }
    let per_episode = data
        .episodes
        .par_iter()
        .map(|ep| -> Result<(ErrorTable, Option<ErrorTable>, Vec<Vec<ObjectState>>)> {
            let mut rollout = ErrorTable::new(data.objects);
            let mut euler = cfg.euler.then(|| ErrorTable::new(data.objects));
            let mut first = Vec::new();
            for &c in &starts {
                let context = &ep.frames[c + 1 - seq_len.min(c + 1)..=c];
                let mut preds = vec![ep.frames[c].clone()];
                preds.extend(model.rollout(&ep.shapes, context, cfg.horizon)?);
                let targets = &ep.frames[c..=c + cfg.horizon];
                let labels = &ep.labels[c..=c + cfg.horizon];
                rollout.push_window(&preds, targets, labels)?;
                if let Some(e) = euler.as_mut() {
                    e.append(euler_window(&preds, labels, &ep.shapes, &cfg.world)?);
                }
                if first.is_empty() {
                    first = preds;
                }
            }
            Ok((rollout, euler, first))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rollout = ErrorTable::new(data.objects);
    let mut euler = cfg.euler.then(|| ErrorTable::new(data.objects));
    let mut first_rollouts = Vec::with_capacity(per_episode.len());
    for (r, e, f) in per_episode {
        rollout.append(r);
        if let (Some(acc), Some(e)) = (euler.as_mut(), e) {
            acc.append(e);
        }
        first_rollouts.push(f);
    }
    Ok(EvalResult {
        rollout,
        euler,
        first_rollouts,
    })
}

/// First epoch (1-based) at which `model` reaches the best value of
/// `baseline`; `None` if it never does.
pub fn sample_efficiency(model: &[f64], baseline: &[f64]) -> Option<usize> {
    let best = baseline.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    model.iter().position(|&v| v <= best).map(|i| i + 1)
}

/// Mean and 95% normal-approximation half width, pointwise over runs.
pub fn ci_bands(runs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let n = runs.len() as f64;
            let mean = runs.iter().map(|r| r[i]).sum::<f64>() / n;
            if runs.len() < 2 {
                return (mean, 0.0);
            }
            let var = runs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, 1.96 * var.sqrt() / n.sqrt())
        })
        .collect()
}

/// One row of the evaluation CSV. Empty metric fields mean no frames of
/// that type occurred.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub horizon: usize,
    pub frame_type: String,
    pub variable: String,
    pub rmse: Option<f64>,
    pub euler_rmse: Option<f64>,
}

/// Rows for every horizon `1..=N`, frame type and variable.
pub fn eval_rows(model: &str, variant: &str, seed: u64, result: &EvalResult) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    let horizon = result.rollout.horizon();
    let variables: Vec<(String, Option<usize>)> = std::iter::once(("all".to_string(), None))
        .chain(METRIC_VARIABLES.iter().enumerate().map(|(i, v)| (v.to_string(), Some(i))))
        .collect();
    for n in 1..=horizon {
        for ty in FrameType::ALL {
            for (name, var) in &variables {
                let euler_rmse = match &result.euler {
                    Some(e) => e.rmse_by_type(n, ty, *var)?,
                    None => None,
                };
                rows.push(EvalRow {
                    model: model.to_string(),
                    variant: variant.to_string(),
                    seed,
                    horizon: n,
                    frame_type: ty.name().to_string(),
                    variable: name.clone(),
                    rmse: result.rollout.rmse_by_type(n, ty, *var)?,
                    euler_rmse,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_eval_csv(w: impl Write, rows: &[EvalRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: f64) -> ObjectState {
        ObjectState {
            x,
            ..Default::default()
        }
    }

    #[test]
    fn identical_frames_have_zero_error() {
        let f = vec![vec![state(0.1), state(0.2)]; 4];
        assert_eq!(rollout_rmse(&f, &f, 3).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scales_with_variable_count() {
        let targets = vec![vec![state(0.0), state(0.0)]; 6];
        let mut preds = targets.clone();
        for f in &mut preds[1..] {
            f[0].x = 0.3;
        }
        let rmse = rollout_rmse(&preds, &targets, 5).unwrap();
        assert!((rmse - 0.3 / 14f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn three_frame_example() {
        // errors x: 0, 0.1, 0.2 and theta: 0, 0, π/2 on a single object
        let targets = vec![vec![state(0.0)]; 3];
        let mut preds = targets.clone();
        preds[1][0].x = 0.1;
        preds[2][0].x = 0.2;
        preds[2][0].theta = std::f64::consts::FRAC_PI_2;
        let rmse = rollout_rmse(&preds, &targets, 2).unwrap();
        // sin: (1-0)², cos: (0-1)²
        let mass: f64 = 0.01 + 0.04 + 1.0 + 1.0;
        assert_eq!(rmse, (mass / 14.0).sqrt());
        let single = rollout_rmse(&preds, &targets, 0).unwrap();
        assert_eq!(single, 0.0);
    }

    #[test]
    fn horizon_beyond_window_is_an_error() {
        let f = vec![vec![state(0.0)]; 3];
        assert!(matches!(rollout_rmse(&f, &f, 3), Err(Error::Horizon { .. })));
    }

    #[test]
    fn frame_types_and_absence() {
        let targets = vec![vec![state(0.0)]; 4];
        let mut preds = targets.clone();
        preds[1][0].x = 0.5;
        preds[2][0].x = 0.25;
        preds[3][0].x = 1.0;
        let wall = ContactLabels { object_wall: true, object_object: false };
        let labels = [ContactLabels::FREE, ContactLabels::FREE, wall, ContactLabels::FREE];
        let mut t = ErrorTable::new(1);
        t.push_window(&preds, &targets, &labels).unwrap();
        let w = t.rmse_by_type(3, FrameType::ObjectWall, None).unwrap().unwrap();
        assert_eq!(w, (0.0625f64 / 7.0).sqrt());
        assert_eq!(t.rmse_by_type(3, FrameType::ObjectObject, None).unwrap(), None);
        let free = t.rmse_by_type(3, FrameType::Free, Some(0)).unwrap().unwrap();
        assert_eq!(free, ((0.25f64 + 1.0) / 2.0).sqrt());
    }

    #[test]
    fn sample_efficiency_cases() {
        let base = [3.0, 2.0, 2.5];
        assert_eq!(sample_efficiency(&base, &base), Some(2));
        assert_eq!(sample_efficiency(&[1.0, 1.0], &base), Some(1));
        assert_eq!(sample_efficiency(&[5.0, 4.0], &base), None);
    }

    #[test]
    fn confidence_bands() {
        assert_eq!(ci_bands(&[vec![1.0, 2.0]]), vec![(1.0, 0.0), (2.0, 0.0)]);
        let b = ci_bands(&[vec![1.0], vec![3.0]]);
        // s = sqrt(2), n = 2
        assert!((b[0].0 - 2.0).abs() < 1e-15);
        assert!((b[0].1 - 1.96).abs() < 1e-12);
    }

    #[test]
    fn window_start_positions() {
        let cfg = EvalConfig { horizon: 10, ..Default::default() };
        assert_eq!(window_starts(32, 2, &cfg), vec![1, 11, 21]);
        let cfg = EvalConfig { horizon: 10, max_windows_per_episode: Some(1), ..Default::default() };
        assert_eq!(window_starts(32, 1, &cfg), vec![0]);
        assert!(window_starts(10, 1, &EvalConfig::default()).is_empty());
    }

    #[test]
    fn csv_marks_absent_types_empty() {
        let row = EvalRow {
            model: "m".into(),
            variant: "s".into(),
            seed: 0,
            horizon: 1,
            frame_type: "object_wall".into(),
            variable: "all".into(),
            rmse: None,
            euler_rmse: Some(0.5),
        };
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "model,variant,seed,horizon,frame_type,variable,rmse,euler_rmse\nm,s,0,1,object_wall,all,,0.5\n"
        );
    }
}
