//! Full-batch ADAM training.

use crate::data::MultiModalDataset;
use crate::error::{Error, Result};
use crate::model::{LossParts, LossWeights, VmscModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Leading epochs that optimize reconstruction only, with `W` frozen.
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Checkpoint interval in epochs for callers that save progress; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 1000,
            warmup_epochs: 100,
            seed: 0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidInput(format!("eps must be positive, got {}", self.eps)));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidInput(format!(
                "warmup ({}) exceeds epoch budget ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "ADAM got {} parameters, {} gradients, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient at index {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Objective at the start of an epoch, under the model's configured weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub parts: LossParts,
}

impl EpochLog {
    pub fn total(&self) -> f64 {
        self.parts.total()
    }
}

pub fn fit(
    model: VmscModel,
    data: &MultiModalDataset,
    cfg: &TrainConfig,
) -> Result<(VmscModel, Vec<EpochLog>)> {
    fit_with(model, data, cfg, |_, _| Ok(()))
}

/// Trains for `cfg.epochs` full-batch steps, calling `on_epoch` after each.
/// During warmup the self-expression and sparsity terms are switched off
/// and `W` receives no update.
pub fn fit_with(
    mut model: VmscModel,
    data: &MultiModalDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&VmscModel, &EpochLog) -> Result<()>,
) -> Result<(VmscModel, Vec<EpochLog>)> {
    cfg.validate()?;
    let full = *model.weights();
    let warm = LossWeights {
        mu: 0.0,
        lambda: 0.0,
        ..full
    };
    let mut params = model.params();
    let mut state = AdamState::new(params.len());
    let w_at = model.selfexpr_offset();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let warming = epoch < cfg.warmup_epochs;
        let optimized = if warming { &warm } else { &full };
        let (parts, mut grad) = model
            .loss_grad_split(data, optimized, &full)
            .map_err(|e| at_epoch(e, epoch))?;
        if warming {
            grad[w_at..].iter_mut().for_each(|g| *g = 0.0);
        }
        adam_step(&mut params, &grad, &mut state, cfg).map_err(|e| at_epoch(e, epoch))?;
        model.set_params(&params)?;
        // pick up the projection so masked entries stay exactly zero
        params = model.params();
        let log = EpochLog { epoch, parts };
        on_epoch(&model, &log)?;
        history.push(log);
    }
    Ok((model, history))
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "total", "reg", "recon", "selfexpr"];

/// Writes the loss history as CSV with [`HISTORY_HEADER`].
pub fn write_history_csv(history: &[EpochLog], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:?}", h.total()),
            format!("{:?}", h.parts.reg),
            format!("{:?}", h.parts.recon),
            format!("{:?}", h.parts.selfexpr),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
