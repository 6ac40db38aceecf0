//! Patch-based detector training: mini-batch optimization of the map loss
//! with per-epoch shuffling and a one-step learning-rate decay schedule.

use crate::dataset::Patch;
use crate::error::{Error, Result};
use crate::model::IdcnnModel;
use crate::nn::{mse_loss, AdamState};
use crate::noise::TrainingNoise;
use crate::rng::SeedRng;
use crate::tensor::Element;

/// Training hyperparameters. Defaults follow the detector's reference
/// configuration: 50 epochs, learning rate 0.001 decayed by 0.1 after epoch
/// 30, batch size 128, 41×41 patches.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs after this one use lr · lr_decay.
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub train_noise: TrainingNoise,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 0.001,
            lr_decay: 0.1,
            decay_epoch: 30,
            batch_size: 128,
            patch_size: 41,
            train_noise: TrainingNoise::Fixed(0.3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::contract("training needs at least one epoch"));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::contract("learning-rate decay must lie in (0, 1]"));
        }
        if self.batch_size < 1 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if self.patch_size < 21 {
            return Err(Error::contract(
                "patch size below 21 is rejected: the detector fails to train there",
            ));
        }
        self.train_noise.validate()
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.decay_epoch {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Incremental training driver; owns the optimizer state so runs can be
/// checkpointed and resumed without a schedule discontinuity.
pub struct Trainer<'m, E: Element> {
    model: &'m mut IdcnnModel<E>,
    cfg: TrainConfig,
    adam: Vec<AdamState<E>>,
    epochs_done: usize,
}

impl<'m, E: Element> Trainer<'m, E> {
    pub fn new(model: &'m mut IdcnnModel<E>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = fresh_states(model, cfg.lr);
        Ok(Trainer {
            model,
            cfg,
            adam,
            epochs_done: 0,
        })
    }

    /// Continues a checkpointed run: `adam` (in parameter-group order) and
    /// the number of epochs already completed.
    pub fn resume(
        model: &'m mut IdcnnModel<E>,
        cfg: TrainConfig,
        adam: Vec<AdamState<E>>,
        epochs_done: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if adam.len() != param_group_count(model.depth()) {
            return Err(Error::contract(format!(
                "optimizer state has {} groups, model needs {}",
                adam.len(),
                param_group_count(model.depth())
            )));
        }
        Ok(Trainer {
            model,
            cfg,
            adam,
            epochs_done,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn into_adam(self) -> Vec<AdamState<E>> {
        self.adam
    }

    pub fn adam(&self) -> &[AdamState<E>] {
        &self.adam
    }

    /// One pass over the patch set; returns the mean training loss.
    pub fn run_epoch(&mut self, patches: &[Patch]) -> Result<f64> {
        validate_patches(patches, self.cfg.patch_size)?;
        let epoch = self.epochs_done + 1;
        let lr = self.cfg.lr_at(epoch);
        for state in &mut self.adam {
            state.lr = lr;
        }

        let mut order: Vec<usize> = (0..patches.len()).collect();
        SeedRng::derive(self.cfg.seed, &[0x5eed, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Patch> = chunk.iter().map(|&i| &patches[i]).collect();
            let (input, target) = crate::model::batch_to_tensors::<E>(&batch)?;
            let (out, cache) = self.model.forward_train(&input)?;
            let (loss, grad) = mse_loss(&out, &target)?;
            let grads = self.model.backward(&cache, &grad)?;
            apply_gradients(self.model, &grads, &mut self.adam)?;
            loss_sum += loss * chunk.len() as f64;
        }
        self.epochs_done = epoch;
        Ok(loss_sum / patches.len() as f64)
    }
}

/// Trains for `cfg.epochs` epochs and returns the per-epoch mean loss.
pub fn train<E: Element>(
    model: &mut IdcnnModel<E>,
    patches: &[Patch],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        history.push(trainer.run_epoch(patches)?);
    }
    Ok(history)
}

/// Parameter groups in forward-layer order: each convolution contributes
/// (weights, bias); each batchnorm contributes (gamma, beta).
pub fn param_group_count(depth: usize) -> usize {
    2 * depth + 2 * (depth - 2)
}

fn fresh_states<E: Element>(model: &IdcnnModel<E>, lr: f64) -> Vec<AdamState<E>> {
    let mut states = Vec::with_capacity(param_group_count(model.depth()));
    for (i, conv) in model.convs.iter().enumerate() {
        states.push(AdamState::new(conv.weights.len(), lr));
        states.push(AdamState::new(conv.bias.len(), lr));
        if i >= 1 && i <= model.depth() - 2 {
            let bn = &model.bns[i - 1];
            states.push(AdamState::new(bn.gamma.len(), lr));
            states.push(AdamState::new(bn.beta.len(), lr));
        }
    }
    states
}

fn apply_gradients<E: Element>(
    model: &mut IdcnnModel<E>,
    grads: &crate::model::ModelGrads<E>,
    states: &mut [AdamState<E>],
) -> Result<()> {
    let depth = model.depth();
    let mut idx = 0;
    for i in 0..depth {
        states[idx].step(&mut model.convs[i].weights, &grads.convs[i].weights)?;
        idx += 1;
        states[idx].step(&mut model.convs[i].bias, &grads.convs[i].bias)?;
        idx += 1;
        if i >= 1 && i <= depth - 2 {
            states[idx].step(&mut model.bns[i - 1].gamma, &grads.bns[i - 1].gamma)?;
            idx += 1;
            states[idx].step(&mut model.bns[i - 1].beta, &grads.bns[i - 1].beta)?;
            idx += 1;
        }
    }
    Ok(())
}

fn validate_patches(patches: &[Patch], p: usize) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::contract("training needs at least one patch"));
    }
    for patch in patches {
        if patch.noisy.dims() != (p, p) || patch.map.dims() != (p, p) {
            return Err(Error::contract(format!(
                "patch/map size {:?}/{:?} does not match the configured {p}x{p}",
                patch.noisy.dims(),
                patch.map.dims()
            )));
        }
        if !patch.map.is_binary() {
            return Err(Error::contract("ground-truth map patches must be binary"));
        }
    }
    Ok(())
}
