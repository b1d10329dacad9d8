use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{AdamW, LinearSchedule};
use crate::error::{Error, Result};
use crate::model::Dropout;
use crate::numerics::{ParamStore, Tape, Var};

/// Mini-batch loop shared by both stages: one tape per batch, mean loss,
/// clipped AdamW step on the scheduled rate.
pub(crate) struct Trainer {
    opt: AdamW,
    schedule: LinearSchedule,
    step: usize,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    dropout: f64,
    batch_size: usize,
    max_grad_norm: f64,
    stage: &'static str,
}

pub(crate) struct TrainerSettings {
    pub lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Trainer {
    pub fn new(s: TrainerSettings, n_examples: usize, epochs: usize, stage: &'static str) -> Self {
        let per_epoch = n_examples.div_ceil(s.batch_size);
        Self {
            opt: AdamW::new(s.weight_decay),
            schedule: LinearSchedule::new(s.lr, s.warmup_fraction, per_epoch * epochs),
            step: 0,
            order_rng: ChaCha8Rng::seed_from_u64(s.seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(s.seed ^ 0x9e37_79b9_7f4a_7c15),
            dropout: s.dropout,
            batch_size: s.batch_size,
            max_grad_norm: s.max_grad_norm,
            stage,
        }
    }

    /// One shuffled pass; returns the mean batch loss.
    pub fn epoch<E, F>(&mut self, store: &mut ParamStore, examples: &[E], mut loss: F) -> Result<f64>
    where
        F: FnMut(&mut Tape, &ParamStore, &E, &mut Dropout) -> Result<Var>,
    {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(self.batch_size) {
            let mut tape = Tape::new();
            let mut drop = Dropout::train(self.dropout, &mut self.dropout_rng);
            let mut sum: Option<Var> = None;
            for &i in batch {
                let l = loss(&mut tape, store, &examples[i], &mut drop)?;
                sum = Some(match sum {
                    None => l,
                    Some(s) => tape.add(s, l)?,
                });
            }
            let mean = tape.scale(sum.expect("batches are non-empty"), 1.0 / batch.len() as f64);
            let value = tape.scalar(mean);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: self.stage.into(),
                    step: self.step,
                    value,
                });
            }
            let grads = tape.backward(mean)?;
            store.zero_grad();
            grads.accumulate_into(store)?;
            AdamW::clip_grad_norm(store, self.max_grad_norm);
            self.opt.step(store, self.schedule.lr(self.step));
            self.step += 1;
            total += value;
            batches += 1;
        }
        store.zero_grad();
        Ok(total / batches.max(1) as f64)
    }
}
