//! Training loop.

use super::model::{ForwardOptions, Model};
use crate::autodiff::{adam_step, mse_loss, AdamConfig, AdamState, Tape, BN_MOMENTUM};
use crate::dataset::{derive_seed, noisy_batch, Dataset};
use crate::error::{Error, Result};

/// Optimiser state carried between iterations and across checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// One entry per model parameter, in store order.
    pub adam: Vec<AdamState<f32>>,
    /// Iterations completed so far.
    pub iteration: usize,
}

impl TrainState {
    pub fn new(model: &Model<f32>) -> Self {
        TrainState {
            adam: model.params().iter().map(|(_, t)| AdamState::new(t.shape())).collect(),
            iteration: 0,
        }
    }
}

/// Seed of the patches and noise used at iteration `t`.
pub fn batch_seed(seed: u64, t: usize) -> u64 {
    derive_seed(seed, t as u64)
}

/// One optimisation step; returns the batch loss.
pub fn train_step(model: &mut Model<f32>, state: &mut TrainState, data: &Dataset) -> Result<f64> {
    let cfg = model.config().clone();
    let t = state.iteration;
    let seed = batch_seed(cfg.seed, t);
    let patches = data.sample_patches(cfg.batch, cfg.patch, seed)?;
    let (clean, noisy) = noisy_batch::<f32>(&patches, cfg.sigma, derive_seed(seed, u64::MAX))?;
    let tape = Tape::new();
    let x = tape.constant(noisy);
    let target = tape.constant(clean);
    let (out, vars) = model.forward(&tape, &x, ForwardOptions::train())?;
    let loss = mse_loss(&tape, &out.output, &target)?;
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::Diverged {
            iteration: t,
            batch_seed: seed,
            loss: value,
        });
    }
    let bn_stats = out.bn_stats;
    drop(out.output);
    let mut grads = tape.backward(&loss)?;
    let lr = cfg.learning_rate(t);
    let adam_cfg = AdamConfig::default();
    for (i, var) in vars.iter().enumerate() {
        let g = grads.take(var);
        let name = model.params().name(i).to_string();
        adam_step(&name, model.params_mut().tensor_mut(i), &g, &mut state.adam[i], lr, &adam_cfg).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                iteration: t,
                batch_seed: seed,
                loss: value,
            },
            other => other,
        })?;
    }
    model.update_running_stats(&bn_stats, BN_MOMENTUM)?;
    state.iteration += 1;
    Ok(value)
}

/// Run until `config.iters` iterations are done; `progress(t, loss)` is
/// called after every step. Returns the losses of this call.
pub fn train(
    model: &mut Model<f32>,
    state: &mut TrainState,
    data: &Dataset,
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if state.adam.len() != model.params().len() {
        return Err(Error::invalid("optimiser state does not match the model"));
    }
    let mut losses = Vec::new();
    while state.iteration < model.config().iters {
        let loss = train_step(model, state, data)?;
        progress(state.iteration - 1, loss);
        losses.push(loss);
    }
    Ok(losses)
}
