//! Mini-batch Adam training with per-epoch learning-rate decay.

use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{AdamConfig, AdamState, Mode, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::image::CsiImage;
use crate::loss::{loss_and_gradient, HuberVariant, LossConfig, LossParts};
use crate::net::{stack_images, PoseNet};
use crate::skeleton::{SkeletonPose, POSE_SCALARS};

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: CsiImage,
    pub pose: SkeletonPose,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub huber_delta: f64,
    pub huber_variant: HuberVariant,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Start the output layer's bias at the mean training pose.
    pub init_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 6,
            lr_decay: 0.9,
            huber_delta: 0.75,
            huber_variant: HuberVariant::Offset,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            seed: 0,
            init_output_bias: true,
        }
    }
}

/// Learning rate of the overfitting regime.
pub const OVERFIT_LEARNING_RATE: f64 = 1e-3;

impl TrainConfig {
    /// Overfitting regime for a set of `samples`: the default epoch count
    /// plus `extra_epochs`, full-batch, at a constant learning rate.
    ///
    /// With one fixed batch the batch statistics seen in training are the
    /// ones a recalibration pass stores, so the fitted function carries
    /// over to eval mode unchanged.
    pub fn overfit(extra_epochs: usize, samples: usize) -> Self {
        let base = Self::default();
        Self {
            epochs: base.epochs + extra_epochs,
            batch_size: samples.max(1),
            learning_rate: OVERFIT_LEARNING_RATE,
            lr_decay: 1.0,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.huber_delta > 0.0;
        if !positive || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "training hyper-parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * libm::pow(self.lr_decay, epoch as f64)
    }

    pub fn schedule(&self) -> Vec<f64> {
        (0..self.epochs).map(|e| self.learning_rate_at(e)).collect()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            huber_delta: self.huber_delta,
            huber_variant: self.huber_variant,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Zero-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub mean_position_loss: f64,
    pub mean_huber_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainWarning {
    /// Fewer samples than one batch; trained with a single smaller batch.
    SmallDataset { samples: usize, batch_size: usize },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub adam: AdamState,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<TrainWarning>,
}

/// Forward, backward and one Adam update on a batch; returns the batch loss.
pub fn train_step(net: &PoseNet, params: &mut ParamStore, adam: &mut AdamState, batch: &[&Sample], loss: LossConfig) -> Result<LossParts> {
    let mut tape = Tape::new();
    let input = tape.input(stack_images(batch.iter().map(|s| &s.image))?);
    let fwd = net.forward(&mut tape, params, input, Mode::Train)?;
    let truth: Vec<f64> = batch.iter().flat_map(|s| s.pose.to_flat()).collect();
    let mut parts = LossParts::default();
    let mut failure = None;
    let objective = tape.objective(fwd.output, |pred| match loss_and_gradient(pred.data(), &truth, loss) {
        Ok((p, g)) => {
            parts = p;
            let g = crate::compute::NdArray::new(pred.shape().to_vec(), g).expect("gradient matches prediction");
            (p.total(), g)
        }
        Err(e) => {
            failure = Some(e);
            (0.0, crate::compute::NdArray::zeros(pred.shape()))
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if !parts.total().is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    tape.backward(objective, params)?;
    tape.commit_running_stats(params, net.spec().batch_norm.momentum);
    adam.step(params);
    Ok(parts)
}

/// Splits shuffled indices into batches, folding a trailing singleton into
/// the previous batch so batch statistics never see a single sample.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = order.len() - batch_size - 1;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Mean of the poses in `data`, coordinate-wise.
pub fn mean_pose<S: Borrow<Sample>>(data: &[S]) -> Result<SkeletonPose> {
    if data.is_empty() {
        return Err(Error::Empty { what: "pose set" });
    }
    let mut sum = [0.0; POSE_SCALARS];
    for s in data {
        for (acc, v) in sum.iter_mut().zip(s.borrow().pose.to_flat()) {
            *acc += v;
        }
    }
    let n = data.len() as f64;
    SkeletonPose::from_flat(&sum.map(|v| v / n))
}

/// Trains freshly initialized parameters (seeded by `config.seed`).
pub fn train<S: Borrow<Sample>>(
    net: &PoseNet,
    data: &[S],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let mut params = net.init_params(config.seed);
    if config.init_output_bias && !data.is_empty() {
        net.set_output_bias(&mut params, &mean_pose(data)?.to_flat())?;
    }
    let adam = AdamState::new(&params, config.adam());
    train_from(net, params, adam, data, config, on_epoch)
}

/// Continues training from existing parameters and optimizer state.
pub fn train_from<S: Borrow<Sample>>(
    net: &PoseNet,
    mut params: ParamStore,
    mut adam: AdamState,
    data: &[S],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    net.check_params(&params)?;
    if data.is_empty() {
        return Err(Error::Empty { what: "training set" });
    }
    let mut warnings = Vec::new();
    if data.len() < config.batch_size {
        warnings.push(TrainWarning::SmallDataset {
            samples: data.len(),
            batch_size: config.batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_ba7c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.learning_rate = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let groups = batches(&order, config.batch_size);
        for group in &groups {
            let batch: Vec<&Sample> = group.iter().map(|&i| data[i].borrow()).collect();
            let parts = train_step(net, &mut params, &mut adam, &batch, config.loss())?;
            sum.position += parts.position;
            sum.huber += parts.huber;
        }
        let n = groups.len() as f64;
        let stats = EpochStats {
            epoch,
            learning_rate: adam.learning_rate,
            mean_loss: sum.total() / n,
            mean_position_loss: sum.position / n,
            mean_huber_loss: sum.huber / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        adam,
        history,
        warnings,
    })
}

/// Replaces every batch-norm layer's running statistics with the average of
/// its batch statistics over `data`, taken in batches of `batch_size` in
/// data order. Parameters other than the running statistics are untouched.
pub fn recalibrate_batch_norm<S: Borrow<Sample>>(net: &PoseNet, params: &mut ParamStore, data: &[S], batch_size: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty { what: "calibration set" });
    }
    let order: Vec<usize> = (0..data.len()).collect();
    for (b, group) in batches(&order, batch_size.max(2)).iter().enumerate() {
        let mut tape = Tape::new();
        let input = tape.input(stack_images(group.iter().map(|&i| &data[i].borrow().image))?);
        net.forward(&mut tape, params, input, Mode::Train)?;
        // A momentum of 1/(b+1) keeps the running values at the mean over
        // the batches seen so far.
        tape.commit_running_stats(params, 1.0 / (b + 1) as f64);
    }
    Ok(())
}
