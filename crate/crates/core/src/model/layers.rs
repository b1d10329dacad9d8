use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, SoftmaxMask, Tape, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Either registers fresh parameters or binds to existing ones by name, so
/// that construction and checkpoint loading share one code path.
pub enum ParamBuilder<'a> {
    Create {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha8Rng,
    },
    Bind {
        store: &'a ParamStore,
    },
}

impl ParamBuilder<'_> {
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match self {
            ParamBuilder::Create { store, rng } => {
                let t = match init {
                    Init::Xavier { fan_in, fan_out } => Tensor::xavier(shape, fan_in, fan_out, *rng),
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => {
                        let n = shape.iter().product();
                        Tensor::new(shape.to_vec(), vec![1.0; n])?
                    }
                };
                store.insert(name, t)
            }
            ParamBuilder::Bind { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
                if store.get(id).shape() != shape {
                    return Err(Error::Shape(format!(
                        "parameter {name}: expected {shape:?}, found {:?}",
                        store.get(id).shape()
                    )));
                }
                Ok(id)
            }
        }
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.param(
            name,
            &[rows, cols],
            Init::Xavier {
                fan_in: rows,
                fan_out: cols,
            },
        )
    }
}

/// Inverted dropout driven by a seeded generator; a no-op when `rng` is `None`.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.p > 0.0 && self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.p;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = tape.constant(tape.shape(x).to_vec(), mask)?;
        tape.mul(x, m)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn build(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: pb.matrix(&format!("{name}.w"), d_in, d_out)?,
            b: pb.param(&format!("{name}.b"), &[d_out], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn build(pb: &mut ParamBuilder, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.param(&format!("{name}.gamma"), &[d], Init::Ones)?,
            beta: pb.param(&format!("{name}.beta"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub fn build(pb: &mut ParamBuilder, name: &str, d: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::build(pb, &format!("{name}.q"), d, d)?,
            k: Linear::build(pb, &format!("{name}.k"), d, d)?,
            v: Linear::build(pb, &format!("{name}.v"), d, d)?,
            o: Linear::build(pb, &format!("{name}.o"), d, d)?,
            n_heads,
        })
    }

    /// `queries [n,d]` attend over `memory [m,d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        memory: Var,
        mask: &SoftmaxMask,
    ) -> Result<Var> {
        let (_, d) = tape.dims(queries);
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(tape, store, queries)?;
        let k = self.k.forward(tape, store, memory)?;
        let v = self.v.forward(tape, store, memory)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores, mask)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        self.o.forward(tape, store, joined)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn build(pb: &mut ParamBuilder, name: &str, d: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::build(pb, &format!("{name}.up"), d, d_ff)?,
            down: Linear::build(pb, &format!("{name}.down"), d_ff, d)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, drop: &mut Dropout) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        let h = drop.apply(tape, h)?;
        self.down.forward(tape, store, h)
    }
}

/// `logits = W_z · GeLU(W_H · h + b_H) + b_z`
#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead {
    pub hidden: Linear,
    pub out: Linear,
    pub d_in: usize,
    pub n_classes: usize,
}

impl ClassifierHead {
    pub fn build(
        pb: &mut ParamBuilder,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        n_classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::build(pb, &format!("{name}.hidden"), d_in, d_hidden)?,
            out: Linear::build(pb, &format!("{name}.out"), d_hidden, n_classes)?,
            d_in,
            n_classes,
        })
    }

    /// `h [1, d_in]` → pre-softmax logits `[1, n_classes]`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let (_, w) = tape.dims(h);
        if w != self.d_in {
            return Err(Error::Shape(format!(
                "classifier expects width {}, got {w}",
                self.d_in
            )));
        }
        let z = self.hidden.forward(tape, store, h)?;
        let z = tape.gelu(z);
        self.out.forward(tape, store, z)
    }
}
