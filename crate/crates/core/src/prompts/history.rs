use crate::error::{contract, Result};
use crate::model::{Init, Linear, ParamBuilder};
use crate::numerics::{ParamId, ParamStore, SoftmaxMask, Tape, Var};

/// One direction of the LSTM: `gates = x·W_x + h·W_h + b`, split as
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn build(pb: &mut ParamBuilder, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_x: pb.matrix(&format!("{name}.w_x"), d_in, 4 * hidden)?,
            w_h: pb.matrix(&format!("{name}.w_h"), hidden, 4 * hidden)?,
            b: pb.param(&format!("{name}.b"), &[4 * hidden], Init::Zeros)?,
            hidden,
        })
    }

    /// Hidden states for `xs [n, d_in]` visited in `order`; row `i` of the
    /// result belongs to input row `i`.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: Var, order: &[usize]) -> Result<Var> {
        let h = self.hidden;
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b = tape.param(store, self.b);
        let projected = tape.matmul(xs, w_x)?;
        let projected = tape.add_bias(projected, b)?;
        let mut state = tape.constant(vec![1, h], vec![0.0; h])?;
        let mut cell = tape.constant(vec![1, h], vec![0.0; h])?;
        let mut out = vec![None; order.len()];
        for &i in order {
            let x = tape.slice_rows(projected, i, 1)?;
            let rec = tape.matmul(state, w_h)?;
            let gates = tape.add(x, rec)?;
            let gi = tape.slice_cols(gates, 0, h)?;
            let gf = tape.slice_cols(gates, h, h)?;
            let gg = tape.slice_cols(gates, 2 * h, h)?;
            let go = tape.slice_cols(gates, 3 * h, h)?;
            let i_g = tape.sigmoid(gi);
            let f_g = tape.sigmoid(gf);
            let g_g = tape.tanh(gg);
            let o_g = tape.sigmoid(go);
            let keep = tape.mul(f_g, cell)?;
            let write = tape.mul(i_g, g_g)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell);
            state = tape.mul(o_g, squashed)?;
            out[i] = Some(state);
        }
        let rows: Vec<Var> = out.into_iter().map(|v| v.expect("order covers every row")).collect();
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            tape.concat_rows(&rows)
        }
    }
}

/// Weights of the history-oriented prompt.
#[derive(Clone, Copy, Debug)]
pub struct HistoryPromptParams {
    /// Scores `[h_i ; h_t]`, shape `[2d, 1]`.
    pub score: ParamId,
    /// Applied to predecessors spoken by the target's speaker.
    pub same: ParamId,
    /// Applied to everyone else's predecessors.
    pub other: ParamId,
    pub forward: LstmCell,
    pub backward: LstmCell,
    /// `[fwd ; bwd]` back to width `d`.
    pub proj: Linear,
    pub d: usize,
}

impl HistoryPromptParams {
    pub fn build(pb: &mut ParamBuilder, d: usize) -> Result<Self> {
        Ok(Self {
            score: pb.matrix("hist.score", 2 * d, 1)?,
            same: pb.matrix("hist.w0", d, d)?,
            other: pb.matrix("hist.w1", d, d)?,
            forward: LstmCell::build(pb, "hist.lstm.fwd", d, d)?,
            backward: LstmCell::build(pb, "hist.lstm.bwd", d, d)?,
            proj: Linear::build(pb, "hist.proj", 2 * d, d)?,
            d,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.score, self.same, self.other];
        for c in [self.forward, self.backward] {
            ids.extend([c.w_x, c.w_h, c.b]);
        }
        ids.extend([self.proj.w, self.proj.b]);
        ids
    }
}

/// `[n, d]` constant from row vectors.
pub(crate) fn stack_rows(tape: &mut Tape, rows: &[&[f64]]) -> Result<Var> {
    contract!(!rows.is_empty(), "no rows to stack");
    let d = rows[0].len();
    contract!(rows.iter().all(|r| r.len() == d), "rows of unequal width");
    tape.constant(vec![rows.len(), d], rows.concat())
}

/// `h_i · W_0` where the speaker matches the target, `h_i · W_1` otherwise.
pub fn relation_aware_transform(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HistoryPromptParams,
    history: Var,
    same_speaker: &[bool],
) -> Result<Var> {
    let (n, _) = tape.dims(history);
    contract!(n >= 1, "relation transform needs at least one predecessor");
    contract!(same_speaker.len() == n, "{} speaker flags for {n} vectors", same_speaker.len());
    let w0 = tape.param(store, params.same);
    let w1 = tape.param(store, params.other);
    let mut rows = Vec::with_capacity(n);
    for (i, &same) in same_speaker.iter().enumerate() {
        let h = tape.slice_rows(history, i, 1)?;
        rows.push(tape.matmul(h, if same { w0 } else { w1 })?);
    }
    if n == 1 {
        Ok(rows[0])
    } else {
        tape.concat_rows(&rows)
    }
}

/// `softmax_i(W · [h_i ; h_t])` as a `[1, n]` row.
pub fn history_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HistoryPromptParams,
    history: Var,
    h_t: Var,
) -> Result<Var> {
    let (n, _) = tape.dims(history);
    contract!(n >= 1, "attention over an empty history");
    let target = tape.gather_rows(h_t, &vec![0; n])?;
    let pairs = tape.concat_cols(&[history, target])?;
    let w = tape.param(store, params.score);
    let scores = tape.matmul(pairs, w)?;
    let scores = tape.transpose(scores);
    tape.softmax_rows(scores, &SoftmaxMask::none())
}

/// Concatenated forward and backward LSTM states, `[n, 2d]`.
pub fn bilstm_states(tape: &mut Tape, store: &ParamStore, params: &HistoryPromptParams, seq: Var) -> Result<Var> {
    let (n, _) = tape.dims(seq);
    contract!(n >= 1, "empty sequence");
    let order: Vec<usize> = (0..n).collect();
    let reverse: Vec<usize> = (0..n).rev().collect();
    let fwd = params.forward.run(tape, store, seq, &order)?;
    let bwd = params.backward.run(tape, store, seq, &reverse)?;
    tape.concat_cols(&[fwd, bwd])
}

/// `h̃_0..h̃_{n-1}`: Bi-LSTM states projected back to width `d`.
pub fn contextualize(tape: &mut Tape, store: &ParamStore, params: &HistoryPromptParams, seq: Var) -> Result<Var> {
    let both = bilstm_states(tape, store, params, seq)?;
    params.proj.forward(tape, store, both)
}

/// Injected vector of the history prompt.
///
/// `history` holds the cached vectors of all predecessors of the target (may
/// be empty) and `same_speaker` flags those sharing the target's speaker.
/// With no predecessors the influence is zero and the result is `h_t` itself.
pub fn build_history_vector(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HistoryPromptParams,
    history: &[&[f64]],
    same_speaker: &[bool],
    h_t: Var,
) -> Result<Var> {
    if history.is_empty() {
        return Ok(h_t);
    }
    let raw = stack_rows(tape, history)?;
    let weights = history_attention(tape, store, params, raw, h_t)?;
    let transformed = relation_aware_transform(tape, store, params, raw, same_speaker)?;
    let contextual = contextualize(tape, store, params, transformed)?;
    let influ = tape.matmul(weights, contextual)?;
    tape.add(influ, h_t)
}
