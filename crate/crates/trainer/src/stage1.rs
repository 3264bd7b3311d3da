//! Stage I: similarity-guided global contrastive pretraining of encoder + projection head.

use losses::gcl_loss;
use nets::{encoder_forward, projection_head_forward, ModelParams, UNetConfig, ENCODER, HEAD};
use phantom::{augment_pair, similarity_matrix, AugmentConfig, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Real, Tape, Tensor};

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Result, TrainError};
use crate::optim::Sgd;

#[derive(Debug, Clone)]
pub struct Stage1Outcome<T> {
    /// Encoder and projection head parameters.
    pub params: ModelParams<T>,
    /// Mean gcl loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

pub fn stage1_init<T: Real>(cfg: &TrainConfig) -> ModelParams<T> {
    UNetConfig::new(cfg.organs).init(&[ENCODER, HEAD], cfg.seed)
}

/// Slices Stage I draws from: every labeled and unlabeled training slice.
pub fn stage1_pool(data: &Dataset) -> Vec<usize> {
    let mut pool = data.indices(Split::Labeled);
    pool.extend(data.indices(Split::Unlabeled));
    pool
}

/// One gcl step on `batch`: two augmented views per slice, positional similarity
/// between all views. Returns the loss value and parameter gradients.
pub fn stage1_step<T: Real>(
    cfg: &TrainConfig,
    params: &ModelParams<T>,
    data: &Dataset,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ModelParams<T>)> {
    let aug = AugmentConfig::default();
    let mut images = Vec::with_capacity(2 * batch.len() * data.pixels());
    let mut positions = Vec::with_capacity(2 * batch.len());
    for &i in batch {
        let (a, b) = augment_pair(&data.records[i], &aug, rng);
        for v in [a, b] {
            images.extend(v.image.data().iter().map(|&x| T::of(x as f64)));
            positions.push(v.position);
        }
    }
    let sim = similarity_matrix(&positions)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = Tensor::new(vec![positions.len(), 1, data.height, data.width], images)?;
    let x = tape.constant(x);
    let enc = encoder_forward(&mut tape, &bound, x)?;
    let z = projection_head_forward(&mut tape, &bound, enc.bottleneck)?;
    let loss = gcl_loss(&mut tape, z, sim.values(), cfg.threshold, cfg.tau)?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            what: "stage I loss",
            step: 0,
        });
    }
    tape.backward(loss)?;
    Ok((value, bound.grads(&tape)))
}

/// Runs every Stage I epoch: shuffle the pool, take batches of `stage1_batch`
/// (the last may be smaller), SGD with momentum on each.
pub fn pretrain_stage1<T: Real>(cfg: &TrainConfig, data: &Dataset) -> Result<Stage1Outcome<T>> {
    cfg.validate()?;
    let mut params = stage1_init::<T>(cfg);
    let mut sgd = Sgd::new(cfg.stage1_lr, cfg.stage1_momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut pool = stage1_pool(data);
    if pool.is_empty() {
        return Err(TrainError::Invalid("no training slices for Stage I".into()));
    }
    let mut epoch_losses = Vec::with_capacity(cfg.stage1_epochs);
    let mut step_losses = Vec::new();
    for _ in 0..cfg.stage1_epochs {
        pool.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for batch in pool.chunks(cfg.stage1_batch) {
            let (loss, grads) = stage1_step(cfg, &params, data, batch, &mut rng).map_err(|e| match e {
                TrainError::NonFinite { what, .. } => TrainError::NonFinite {
                    what,
                    step: step_losses.len(),
                },
                other => other,
            })?;
            sgd.step(&mut params, &grads)?;
            step_losses.push(loss);
            sum += loss;
            steps += 1;
        }
        epoch_losses.push(sum / steps as f64);
    }
    Ok(Stage1Outcome {
        params,
        epoch_losses,
        step_losses,
    })
}
