use crate::corpus::Split;
use crate::error::Result;
use crate::model::{classify, Dropout, ModelConfig, ModelState, Seq2Seq};
use crate::numerics::{ParamStore, Tape, Var};
use crate::prompts::RepresentationCache;

use super::config::TrainConfig;
use super::data::{Example, Prepared, SPLITS};
use super::parallel::par_map;
use super::trainer::{Trainer, TrainerSettings};

/// Cross-entropy of the first-stage prediction for one utterance.
pub fn stage1_loss(
    tape: &mut Tape,
    net: &Seq2Seq,
    store: &ParamStore,
    prep: &Prepared,
    ex: Example,
    drop: &mut Dropout,
) -> Result<Var> {
    let (logits, _) = stage1_logits(tape, net, store, prep, ex, drop)?;
    tape.cross_entropy(logits, &[prep.gold(ex)])
}

fn stage1_logits(
    tape: &mut Tape,
    net: &Seq2Seq,
    store: &ParamStore,
    prep: &Prepared,
    ex: Example,
    drop: &mut Dropout,
) -> Result<(Var, usize)> {
    let cfg = &net.config;
    let input = crate::model::build_stage1_input(prep.tokens(ex), ex.t, cfg.context_window, &prep.vocab, cfg.max_len)?;
    let (_, h) = net.forward_stage1(tape, store, &input, prep.vocab.pad(), drop)?;
    classify(tape, store, &net.head, h)
}

/// Fine-tunes a fresh model on the classification objective alone.
pub fn train_stage1(prep: &Prepared, model: &ModelConfig, cfg: &TrainConfig) -> Result<ModelState> {
    cfg.validate()?;
    let mut state = ModelState::new(model.clone(), prep.splits.labels.clone(), prep.vocab.clone(), cfg.seed)?;
    let examples = prep.examples(Split::Train);
    let mut trainer = Trainer::new(
        TrainerSettings {
            lr: cfg.learning_rate,
            warmup_fraction: cfg.warmup_fraction,
            weight_decay: cfg.weight_decay,
            max_grad_norm: cfg.max_grad_norm,
            batch_size: cfg.batch_size,
            dropout: model.dropout,
            seed: cfg.seed.wrapping_add(1),
        },
        examples.len(),
        cfg.stage1_epochs,
        "stage1",
    );
    let ModelState { net, store, .. } = &mut state;
    for epoch in 0..cfg.stage1_epochs {
        let loss = trainer.epoch(store, &examples, |tape, store, ex, drop| {
            stage1_loss(tape, net, store, prep, *ex, drop)
        })?;
        log::info!("stage1 epoch {} loss {loss:.4}", epoch + 1);
    }
    state.tag = "stage1".into();
    Ok(state)
}

/// First-stage predictions for every utterance of `split`, dropout off.
pub fn predict_stage1(state: &ModelState, prep: &Prepared, split: Split) -> Result<Vec<usize>> {
    let examples = prep.examples(split);
    par_map(&examples, |ex| {
        let mut tape = Tape::new();
        stage1_logits(&mut tape, &state.net, &state.store, prep, *ex, &mut Dropout::off()).map(|(_, p)| p)
    })
    .into_iter()
    .collect()
}

/// Mask vector of every utterance in every split under `state`.
pub fn cache_representations(state: &ModelState, prep: &Prepared) -> Result<RepresentationCache> {
    let mut cache = RepresentationCache::new(format!("{}:{}", state.tag, state.fingerprint()), state.config.d_model);
    for split in SPLITS {
        let examples = prep.examples(split);
        let vectors = par_map(&examples, |ex| state.mask_vector(prep.tokens(*ex), ex.t));
        for (ex, v) in examples.iter().zip(vectors) {
            cache.insert(prep.utterance_id(*ex), v?)?;
        }
    }
    Ok(cache)
}
