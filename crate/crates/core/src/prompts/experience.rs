use super::history::stack_rows;
use crate::error::{contract, Result};
use crate::model::ParamBuilder;
use crate::numerics::{ParamId, ParamStore, SoftmaxMask, Tape, Var};
use crate::retrieval::SimilarSampleSet;

/// Scores `d_j ⊙ h_t`, shape `[d, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct ExperiencePromptParams {
    pub score: ParamId,
}

impl ExperiencePromptParams {
    pub fn build(pb: &mut ParamBuilder, d: usize) -> Result<Self> {
        Ok(Self {
            score: pb.matrix("exp.score", d, 1)?,
        })
    }
}

/// `softmax_j(W · (d_j ⊙ h_t))` as a `[1, k]` row.
pub fn experience_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ExperiencePromptParams,
    samples: Var,
    h_t: Var,
) -> Result<Var> {
    let (k, _) = tape.dims(samples);
    let target = tape.gather_rows(h_t, &vec![0; k])?;
    let prod = tape.mul(samples, target)?;
    let w = tape.param(store, params.score);
    let scores = tape.matmul(prod, w)?;
    let scores = tape.transpose(scores);
    tape.softmax_rows(scores, &SoftmaxMask::none())
}

/// Injected vector of the experience prompt: `Σ a_j d_j + h_t`.
pub fn build_experience_vector(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ExperiencePromptParams,
    similar: &SimilarSampleSet,
    h_t: Var,
) -> Result<Var> {
    contract!(!similar.is_empty(), "experience prompt needs at least one similar sample");
    let rows: Vec<&[f64]> = similar.samples.iter().map(|s| s.representation.as_slice()).collect();
    let samples = stack_rows(tape, &rows)?;
    let weights = experience_attention(tape, store, params, samples, h_t)?;
    let influ = tape.matmul(weights, samples)?;
    tape.add(influ, h_t)
}
