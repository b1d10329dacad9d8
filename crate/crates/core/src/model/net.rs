//! The encoder-decoder: pre-norm transformer layers, learned positions and
//! a language-model head tied to the token embeddings.

use super::config::ModelConfig;
use super::input::{EncodedInput, Slot, Stage1Input, MASK_POSITION};
use super::layers::{Attention, ClassifierHead, Dropout, FeedForward, Init, LayerNorm, ParamBuilder};
use crate::corpus::TokenId;
use crate::error::{contract, Result};
use crate::numerics::{ParamId, ParamStore, SoftmaxMask, Tape, Var};

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

/// Encoder output plus the key mask the decoder must respect.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub states: Var,
    pub mask: Vec<bool>,
}

/// Parameter handles of the whole network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    enc_norm: LayerNorm,
    dec_norm: LayerNorm,
    pub head: ClassifierHead,
}

impl Seq2Seq {
    pub fn build(
        pb: &mut ParamBuilder,
        config: &ModelConfig,
        vocab_size: usize,
        n_classes: usize,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = pb.param(
            "embed",
            &[vocab_size, d],
            Init::Xavier {
                fan_in: vocab_size,
                fan_out: d,
            },
        )?;
        let enc_pos = pb.matrix("enc.pos", config.max_len, d)?;
        let dec_pos = pb.matrix("dec.pos", config.max_len, d)?;
        let mut encoder = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                ln_attn: LayerNorm::build(pb, &format!("{p}.ln_attn"), d)?,
                attn: Attention::build(pb, &format!("{p}.attn"), d, config.n_heads)?,
                ln_ff: LayerNorm::build(pb, &format!("{p}.ln_ff"), d)?,
                ff: FeedForward::build(pb, &format!("{p}.ff"), d, config.d_ff)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                ln_self: LayerNorm::build(pb, &format!("{p}.ln_self"), d)?,
                self_attn: Attention::build(pb, &format!("{p}.self"), d, config.n_heads)?,
                ln_cross: LayerNorm::build(pb, &format!("{p}.ln_cross"), d)?,
                cross_attn: Attention::build(pb, &format!("{p}.cross"), d, config.n_heads)?,
                ln_ff: LayerNorm::build(pb, &format!("{p}.ln_ff"), d)?,
                ff: FeedForward::build(pb, &format!("{p}.ff"), d, config.d_ff)?,
            });
        }
        Ok(Self {
            config: config.clone(),
            vocab_size,
            embed,
            enc_pos,
            dec_pos,
            encoder,
            decoder,
            enc_norm: LayerNorm::build(pb, "enc.norm", d)?,
            dec_norm: LayerNorm::build(pb, "dec.norm", d)?,
            head: ClassifierHead::build(pb, "head", d, d, n_classes)?,
        })
    }

    fn embed_slots(&self, tape: &mut Tape, store: &ParamStore, input: &EncodedInput) -> Result<Var> {
        let d = self.config.d_model;
        let table = tape.param(store, self.embed);
        let mut parts = Vec::new();
        let mut run: Vec<TokenId> = Vec::new();
        for slot in &input.slots {
            match *slot {
                Slot::Token(t) => run.push(t),
                Slot::Injected(v) => {
                    if !run.is_empty() {
                        parts.push(tape.gather_rows(table, &run)?);
                        run.clear();
                    }
                    let (r, c) = tape.dims(v);
                    contract!(r * c == d, "injected vector of size {} for width {d}", r * c);
                    parts.push(if r == 1 { v } else { tape.reshape(v, vec![1, d])? });
                }
            }
        }
        if !run.is_empty() {
            parts.push(tape.gather_rows(table, &run)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_rows(&parts)
        }
    }

    fn add_positions(&self, tape: &mut Tape, store: &ParamStore, x: Var, table: ParamId) -> Result<Var> {
        let (n, _) = tape.dims(x);
        let pos = tape.param(store, table);
        let rows = tape.slice_rows(pos, 0, n)?;
        tape.add(x, rows)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &EncodedInput,
        drop: &mut Dropout,
    ) -> Result<Encoded> {
        contract!(!input.is_empty(), "empty encoder input");
        contract!(
            input.len() <= self.config.max_len,
            "encoder input of {} positions exceeds max_len {}",
            input.len(),
            self.config.max_len
        );
        let x = self.embed_slots(tape, store, input)?;
        let x = self.add_positions(tape, store, x, self.enc_pos)?;
        let mut x = drop.apply(tape, x)?;
        let mask = SoftmaxMask::keys(input.attention.clone());
        for layer in &self.encoder {
            let h = layer.ln_attn.forward(tape, store, x)?;
            let h = layer.attn.forward(tape, store, h, h, &mask)?;
            let h = drop.apply(tape, h)?;
            x = tape.add(x, h)?;
            let h = layer.ln_ff.forward(tape, store, x)?;
            let h = layer.ff.forward(tape, store, h, drop)?;
            let h = drop.apply(tape, h)?;
            x = tape.add(x, h)?;
        }
        let states = self.enc_norm.forward(tape, store, x)?;
        Ok(Encoded {
            states,
            mask: input.attention.clone(),
        })
    }

    /// Causal decoder over `tokens`, cross-attending to `memory`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: &Encoded,
        tokens: &[TokenId],
        drop: &mut Dropout,
    ) -> Result<Var> {
        contract!(!tokens.is_empty(), "empty decoder input");
        contract!(
            tokens.len() <= self.config.max_len,
            "decoder input of {} positions exceeds max_len {}",
            tokens.len(),
            self.config.max_len
        );
        let table = tape.param(store, self.embed);
        let x = tape.gather_rows(table, tokens)?;
        let x = self.add_positions(tape, store, x, self.dec_pos)?;
        let mut x = drop.apply(tape, x)?;
        let causal = SoftmaxMask::causal();
        let cross = SoftmaxMask::keys(memory.mask.clone());
        for layer in &self.decoder {
            let h = layer.ln_self.forward(tape, store, x)?;
            let h = layer.self_attn.forward(tape, store, h, h, &causal)?;
            let h = drop.apply(tape, h)?;
            x = tape.add(x, h)?;
            let h = layer.ln_cross.forward(tape, store, x)?;
            let h = layer.cross_attn.forward(tape, store, h, memory.states, &cross)?;
            let h = drop.apply(tape, h)?;
            x = tape.add(x, h)?;
            let h = layer.ln_ff.forward(tape, store, x)?;
            let h = layer.ff.forward(tape, store, h, drop)?;
            let h = drop.apply(tape, h)?;
            x = tape.add(x, h)?;
        }
        self.dec_norm.forward(tape, store, x)
    }

    /// Decoder pass over `[s_t, feels, [mask]]`; returns all states and the
    /// `[1, d]` row at the mask position.
    pub fn mask_representation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: &Encoded,
        prompt: &[TokenId],
        drop: &mut Dropout,
    ) -> Result<(Var, Var)> {
        contract!(prompt.len() > MASK_POSITION, "decoder prompt too short");
        let states = self.decode(tape, store, memory, prompt, drop)?;
        let h = tape.slice_rows(states, MASK_POSITION, 1)?;
        Ok((states, h))
    }

    /// First-stage forward: encode `C_t`, decode `P_t`.
    pub fn forward_stage1(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &Stage1Input,
        pad: TokenId,
        drop: &mut Dropout,
    ) -> Result<(Var, Var)> {
        let enc = self.encode(tape, store, &EncodedInput::from_tokens(&input.context, pad), drop)?;
        self.mask_representation(tape, store, &enc, &input.prompt, drop)
    }

    /// Teacher-forced mean negative log-likelihood of `sequence[2..]`, the
    /// first two tokens (`s_t feels`) being conditioning context only.
    pub fn lm_generate_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: &Encoded,
        sequence: &[TokenId],
        drop: &mut Dropout,
    ) -> Result<Var> {
        contract!(
            sequence.len() >= 4,
            "paraphrase target needs a non-empty gloss between the prefix and </s>"
        );
        let inputs = &sequence[..sequence.len() - 1];
        let targets = &sequence[2..];
        let states = self.decode(tape, store, memory, inputs, drop)?;
        let rows = tape.slice_rows(states, 1, targets.len())?;
        let table = tape.param(store, self.embed);
        let logits = tape.matmul_bt(rows, table)?;
        tape.cross_entropy(logits, targets)
    }
}
