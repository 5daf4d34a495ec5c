//! Few-shot fine-tuning: replication augmentation, batching and AdamW.

mod adamw;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::encode_target;
use crate::doc::Page;
use crate::error::{Error, Result};
use crate::model::{Model, PackedBatch};
use crate::par::Exec;
use crate::tensor::{Gradients, Real};

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Copies of each page per epoch.
    pub augment: usize,
    /// Full training-loss evaluation every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        TrainConfig {
            lr: opt.lr,
            batch_size: 8,
            steps: 300,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            seed: 0,
            augment: 1,
            eval_every: 10,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.augment == 0 {
            return bad("augmentation factor must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight decay non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Each page index repeated `factor` times, in page order.
pub fn augment(n_pages: usize, factor: usize) -> Vec<usize> {
    (0..n_pages).flat_map(|i| std::iter::repeat_n(i, factor)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean loss of the step's batch.
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
    /// Loss over all training pages, on evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

pub fn write_log_jsonl(records: &[LogRecord], out: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Parameters with the lowest full training loss seen.
    pub model: Model<T>,
    pub log: Vec<LogRecord>,
    pub best_step: usize,
    pub best_loss: f64,
}

/// Endless stream of shuffled epochs over the augmented item list.
struct Sampler {
    items: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(items: Vec<usize>, seed: u64) -> Self {
        Sampler {
            order: Vec::new(),
            cursor: 0,
            items,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = self.items.clone();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn item_seed(seed: u64, step: usize, slot: usize) -> u64 {
    seed ^ ((step as u64) << 20 | slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Mean teacher-forced loss over packed pages.
pub fn mean_loss<T: Real>(model: &Model<T>, batches: &[PackedBatch], exec: Exec) -> Result<f64> {
    let losses = exec.try_map(batches, |b| model.loss_value(b))?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Encode and pack every page.
pub fn pack_pages<T: Real>(model: &Model<T>, pages: &[Page]) -> Result<Vec<PackedBatch>> {
    pages
        .iter()
        .map(|p| {
            let target = encode_target(p, &model.labels)?;
            model.pack(p, &target)
        })
        .collect()
}

/// Loss and summed gradients of one batch; items are processed per page and
/// reduced in slot order.
fn batch_gradients<T: Real>(
    model: &Model<T>,
    packed: &[PackedBatch],
    items: &[usize],
    seed: u64,
    step: usize,
    exec: Exec,
) -> Result<(f64, Gradients<T>)> {
    let slots: Vec<(usize, usize)> = items.iter().copied().enumerate().collect();
    let parts = exec.try_map(&slots, |&(slot, item)| -> Result<(f64, Gradients<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, step, slot));
        let mut tape = model.tape();
        let drop = (model.config.dropout > 0.0).then_some(&mut rng);
        let loss = model.loss(&mut tape, &packed[item], drop)?;
        let value = tape.scalar(loss).as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(value));
        }
        Ok((value, tape.backward(loss)?))
    })?;
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    let scale = 1.0 / items.len() as f64;
    total.scale(T::of(scale));
    Ok((loss * scale, total))
}

/// Fine-tune `model` on `pages`.
pub fn train<T: Real>(mut model: Model<T>, pages: &[Page], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if pages.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let packed = pack_pages(&model, pages)?;
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(&model.params);
    let mut sampler = Sampler::new(augment(pages.len(), cfg.augment), cfg.seed);
    let mut best = (0, mean_loss(&model, &packed, cfg.exec)?, model.params.clone());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let items = sampler.next_batch(cfg.batch_size);
        let (loss, grads) = batch_gradients(&model, &packed, &items, cfg.seed, step, cfg.exec)?;
        adamw_step(&mut model.params, &grads, &mut state, &opt)?;
        let evaluate = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let train_loss = if evaluate {
            let l = mean_loss(&model, &packed, cfg.exec)?;
            if l < best.1 {
                best = (step, l, model.params.clone());
            }
            Some(l)
        } else {
            None
        };
        log::debug!("step {step}: loss {loss:.5}");
        log.push(LogRecord {
            step,
            loss,
            lr: cfg.lr,
            seed: cfg.seed,
            train_loss,
        });
    }
    let (best_step, best_loss, params) = best;
    model.params = params;
    Ok(TrainOutcome {
        model,
        log,
        best_step,
        best_loss,
    })
}
