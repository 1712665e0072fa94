//! Joint verb/noun training with SGD, momentum and weight decay.

use crate::data::Episode;
use crate::sap::{sap_forward, AblationVariant, SapConfig, SapError, SapParams};
use crate::tensor::{Graph, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no gradients accumulated since the last step (forward/backward never ran)")]
    MissingGradient,
    #[error("hyperparameter {0} must be finite and non-negative")]
    BadHyperparameter(&'static str),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error(transparent)]
    Sap(#[from] SapError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Verb and noun class indices of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Labels {
    pub verb: usize,
    pub noun: usize,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// SGD hyperparameters plus one velocity buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(
        params: &SapParams,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self, TrainError> {
        for (name, v) in [
            ("learning_rate", learning_rate),
            ("momentum", momentum),
            ("weight_decay", weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::BadHyperparameter(name));
            }
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        })
    }

    pub fn with_defaults(params: &SapParams) -> Self {
        Self::new(params, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY)
            .expect("defaults are valid")
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// `-log softmax(logits)[target]`, recorded on the graph.
pub fn cross_entropy_loss(g: &mut Graph, logits: Var, target: usize) -> Result<Var, TensorError> {
    g.cross_entropy(logits, target)
}

/// Plain-value cross-entropy, max-shifted.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64, TensorError> {
    if target >= logits.len() {
        return Err(TensorError::Index {
            index: target,
            len: logits.len(),
        });
    }
    Ok(crate::tensor::cross_entropy_value(logits, target))
}

/// One in-place update per tensor, then gradients are zeroed:
/// `g = grad + wd * w; v = momentum * v + g; w -= lr * v`.
pub fn sgd_momentum_step(params: &mut SapParams, opt: &mut OptimState) -> Result<(), TrainError> {
    if !params.grads_ready() {
        return Err(TrainError::MissingGradient);
    }
    let (lr, mu, wd) = (opt.learning_rate, opt.momentum, opt.weight_decay);
    for (t, vel) in params.tensors_mut().into_iter().zip(opt.velocity.iter_mut()) {
        let grad = t.grad().ok_or(TensorError::NoGrad)?.to_vec();
        for ((w, v), g) in t.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
            let g = g + wd * *w;
            *v = mu * *v + g;
            *w -= lr * *v;
        }
    }
    params.zero_grad();
    Ok(())
}

/// Per-sample losses of one forward/backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub verb: f64,
    pub noun: f64,
}

/// Forward, backward and accumulate `scale * (L_verb + L_noun)` for one clip.
pub fn accumulate_episode(
    params: &mut SapParams,
    episode: &Episode,
    variant: AblationVariant,
    cfg: &SapConfig,
    scale: f64,
) -> Result<SampleLoss, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let out = sap_forward(&mut g, &bound, episode.inputs(), variant, cfg)?;
    let lv = cross_entropy_loss(&mut g, out.verb_logits, episode.labels.verb)?;
    let ln = cross_entropy_loss(&mut g, out.noun_logits, episode.labels.noun)?;
    let total = g.add(lv, ln)?;
    let loss = g.scale(total, scale);
    let grads = g.backward(loss)?;
    params.accumulate(&bound, &grads)?;
    Ok(SampleLoss {
        verb: g.value(lv)[0],
        noun: g.value(ln)[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub verb_loss: f64,
    pub noun_loss: f64,
    pub total_loss: f64,
}

/// One pass over `dataset` in an order shuffled by `rng`; one optimizer step
/// per batch on the batch-mean summed loss.
pub fn train_epoch(
    dataset: &[Episode],
    params: &mut SapParams,
    opt: &mut OptimState,
    variant: AblationVariant,
    cfg: &SapConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochMetrics, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TrainError::BadBatchSize);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);

    let (mut sv, mut sn) = (0.0, 0.0);
    for batch in order.chunks(batch_size) {
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let l = accumulate_episode(params, &dataset[i], variant, cfg, scale)?;
            sv += l.verb;
            sn += l.noun;
        }
        sgd_momentum_step(params, opt)?;
    }
    let n = dataset.len() as f64;
    Ok(EpochMetrics {
        epoch: 0,
        verb_loss: sv / n,
        noun_loss: sn / n,
        total_loss: (sv + sn) / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Seeds both parameter initialization and the shuffle stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
        }
    }
}

/// Trains `params` for `cfg.epochs` epochs and returns per-epoch metrics.
pub fn fit(
    dataset: &[Episode],
    params: &mut SapParams,
    variant: AblationVariant,
    sap_cfg: &SapConfig,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>, TrainError> {
    let mut opt = OptimState::new(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5AB5_EED5);
    (0..cfg.epochs)
        .map(|epoch| {
            let mut m = train_epoch(dataset, params, &mut opt, variant, sap_cfg, cfg.batch_size, &mut rng)?;
            m.epoch = epoch;
            log::debug!("{variant} epoch {epoch}: loss {:.6}", m.total_loss);
            Ok(m)
        })
        .collect()
}

/// Fresh parameters initialized from `cfg.seed`.
pub fn init_params(dims: crate::sap::ModelDims, seed: u64) -> SapParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SapParams::init(dims, &mut rng)
}
