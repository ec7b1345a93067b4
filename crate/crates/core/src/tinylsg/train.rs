use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Params, TinyModel};
use super::vocab::{BOS, EOS};
use super::{LsgConfig, LsgError};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Decays linearly from the initial rate to zero over all steps.
    #[default]
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 5e-5,
            epochs: 20,
            lr_schedule: LrSchedule::Linear,
            seed: 0,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LsgError> {
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(LsgError::InvalidConfig(format!(
                "learning rate {} must be finite and >= 0",
                self.initial_lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LsgError::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.initial_lr,
            LrSchedule::Linear => self.initial_lr * (1.0 - step as f64 / total_steps.max(1) as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Token-mean training loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Token-mean loss over the whole set after the last update.
    pub final_loss: f64,
    pub steps: usize,
    pub initial_lr: f64,
}

struct Adam<T> {
    m: Params<T>,
    v: Params<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(params: &Params<T>) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params<T>, grads: &mut Params<T>, lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let b1 = T::from_f64_lossy(tc.beta1);
        let b2 = T::from_f64_lossy(tc.beta2);
        let one = T::one();
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let eps = T::from_f64_lossy(tc.adam_eps);
        let lr = T::from_f64_lossy(lr);
        let ps = params.tensors_mut();
        let gs = grads.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            let p = p.data_mut();
            let (g, m, v) = (g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                if lr != T::zero() {
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Encodes text pairs with the model's vocabulary and trains on them.
pub fn train<T: Real, S: AsRef<str>>(
    model: &mut TinyModel<T>,
    pairs: &[(S, S)],
    tc: &TrainConfig,
    cfg: &LsgConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainHistory, LsgError> {
    let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|(s, t)| (model.vocab.encode(s.as_ref()), model.vocab.encode(t.as_ref())))
        .collect();
    train_ids(model, &encoded, tc, cfg, on_epoch)
}

/// Teacher-forced cross-entropy with Adam. Each step averages over the
/// target tokens of one shuffled batch.
pub fn train_ids<T: Real>(
    model: &mut TinyModel<T>,
    pairs: &[(Vec<usize>, Vec<usize>)],
    tc: &TrainConfig,
    cfg: &LsgConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainHistory, LsgError> {
    tc.validate()?;
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(LsgError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let batches_per_epoch = pairs.len().div_ceil(tc.batch_size);
    let total_steps = tc.epochs * batches_per_epoch;
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut step = 0;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_sum, mut epoch_tokens) = (0.0, 0usize);
        for batch in order.chunks(tc.batch_size) {
            let mut grads = model.params.zeros_like();
            let (mut sum, mut tokens) = (T::zero(), 0usize);
            for &i in batch {
                let (src, tgt) = &pairs[i];
                let (s, n) = model.accumulate_gradients(src, tgt, cfg, &mut grads)?;
                sum += s;
                tokens += n;
            }
            if !sum.is_finite() {
                return Err(LsgError::NonFiniteLoss { epoch });
            }
            grads.scale(T::one() / T::from_usize(tokens).expect("count fits"));
            adam.step(&mut model.params, &mut grads, tc.lr_at(step, total_steps), tc);
            step += 1;
            epoch_sum += sum.as_f64();
            epoch_tokens += tokens;
        }
        let mean = epoch_sum / epoch_tokens as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    let final_loss = mean_loss(model, pairs, cfg)?;
    Ok(TrainHistory {
        epoch_losses,
        final_loss,
        steps: step,
        initial_lr: tc.initial_lr,
    })
}

fn mean_loss<T: Real>(
    model: &TinyModel<T>,
    pairs: &[(Vec<usize>, Vec<usize>)],
    cfg: &LsgConfig,
) -> Result<f64, LsgError> {
    let (mut sum, mut tokens) = (0.0, 0usize);
    for (src, tgt) in pairs {
        let n = tgt.len() + 1;
        sum += model.loss(src, tgt, cfg)?.as_f64() * n as f64;
        tokens += n;
    }
    Ok(sum / tokens as f64)
}

/// Greedy decoding from BOS; stops at EOS or after `max_len` tokens. Ties
/// go to the lowest token id. The returned ids exclude BOS and EOS.
pub fn generate<T: Real>(
    model: &TinyModel<T>,
    src: &[usize],
    max_len: usize,
    cfg: &LsgConfig,
) -> Result<Vec<usize>, LsgError> {
    let enc = model.encode(src, cfg)?;
    let mut prefix = vec![BOS];
    while prefix.len() <= max_len {
        let logits = model.decode_logits(&enc, &prefix)?;
        let last = logits.row(logits.rows() - 1);
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        if best == EOS {
            break;
        }
        prefix.push(best);
    }
    prefix.remove(0);
    Ok(prefix)
}
