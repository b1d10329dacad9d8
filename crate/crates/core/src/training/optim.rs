use crate::numerics::ParamStore;

/// Linear warmup to the base rate, then linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_steps: (warmup_fraction * total_steps as f64).ceil() as usize,
            total_steps,
        }
    }

    /// Rate for the zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let left = self.total_steps.saturating_sub(step);
        self.base_lr * left as f64 / rest as f64
    }
}

/// Adam with decoupled weight decay, applied to matrices only.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Scales every gradient so their joint L2 norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
        let mut sq = 0.0;
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(g) = store.get(id).grad() {
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if max_norm > 0.0 && norm > max_norm {
            let c = max_norm / norm;
            for id in store.ids().collect::<Vec<_>>() {
                let t = store.get_mut(id);
                if let Some(g) = t.grad() {
                    let scaled: Vec<f64> = g.iter().map(|x| x * (c - 1.0)).collect();
                    t.accumulate_grad(&scaled).expect("same shape");
                }
            }
        }
        norm
    }

    /// One update from the gradients held in `store`; parameters without a
    /// gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        if self.m.len() < ids.len() {
            for id in &ids[self.m.len()..] {
                let n = store.get(*id).len();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        for id in ids {
            let t = store.get_mut(id);
            let decay = if t.shape().len() >= 2 { self.weight_decay } else { 0.0 };
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, w) in t.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *w -= lr * (update + decay * *w);
            }
        }
    }
}
