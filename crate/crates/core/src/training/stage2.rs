use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Split, TokenId};
use crate::error::{contract, Result};
use crate::model::{
    classify, context_tokens, decoder_prompt, paraphrase_sequence, soft_prompt_prefix, ClassifierHead, Dropout,
    EncodedInput, ModelState, ParamBuilder, Seq2Seq,
};
use crate::numerics::{ParamStore, Tape, Var};
use crate::prompts::{build_experience_vector, build_history_vector, push_soft_prompt, PromptParams, RepresentationCache};
use crate::retrieval::{CosineIndex, Retriever, SimilarSampleSet};

use super::config::{FusionMode, TrainConfig};
use super::data::{Example, Prepared, SPLITS};
use super::parallel::par_map;
use super::stage1::cache_representations;
use super::trainer::{Trainer, TrainerSettings};

/// Parameters added at the start of the second stage.
#[derive(Clone, Copy, Debug)]
pub struct Stage2Heads {
    pub prompts: PromptParams,
    /// Wider classifier used only by `fusion_mode = concat`.
    pub concat_head: Option<ClassifierHead>,
}

fn fused_width(cfg: &TrainConfig, d: usize) -> usize {
    d * (1 + cfg.use_hist_prompt as usize + cfg.use_exp_prompt as usize)
}

impl Stage2Heads {
    fn build(pb: &mut ParamBuilder, cfg: &TrainConfig, d: usize, n_classes: usize) -> Result<Self> {
        let prompts = PromptParams::build(pb, d)?;
        let concat_head = if cfg.fusion_mode == FusionMode::Concat {
            Some(ClassifierHead::build(pb, "concat_head", fused_width(cfg, d), d, n_classes)?)
        } else {
            None
        };
        Ok(Self { prompts, concat_head })
    }

    /// Registers fresh parameters in `store`.
    pub fn create(store: &mut ParamStore, cfg: &TrainConfig, d: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(&mut ParamBuilder::Create { store, rng: &mut rng }, cfg, d, n_classes)
    }

    /// Finds previously registered parameters by name.
    pub fn bind(store: &ParamStore, cfg: &TrainConfig, d: usize, n_classes: usize) -> Result<Self> {
        Self::build(&mut ParamBuilder::Bind { store }, cfg, d, n_classes)
    }
}

/// Retrieved neighbours of every utterance, keyed by utterance id.
pub type Neighbours = BTreeMap<String, SimilarSampleSet>;

/// Top-`k` training neighbours for every utterance of every split. A
/// training utterance never retrieves itself.
pub fn compute_neighbours(
    prep: &Prepared,
    cache: &RepresentationCache,
    retriever: &Retriever,
    k: usize,
) -> Result<Neighbours> {
    let labels = prep.train_labels();
    let mut out = Neighbours::new();
    for split in SPLITS {
        let examples = prep.examples(split);
        let sets = par_map(&examples, |ex| -> Result<SimilarSampleSet> {
            let id = prep.utterance_id(*ex);
            let text = &prep.conversations(ex.split)[ex.dialogue].utterances[ex.t].text;
            let hits = retriever.search(text, cache.get(id)?, k, [id])?;
            SimilarSampleSet::assemble(&hits, cache, &labels)
        });
        for (ex, set) in examples.iter().zip(sets) {
            out.insert(prep.utterance_id(*ex).to_string(), set?);
        }
    }
    Ok(out)
}

/// Read-only inputs of the second-stage forward pass.
pub struct Stage2Env<'a> {
    pub prep: &'a Prepared,
    pub cache: &'a RepresentationCache,
    pub neighbours: &'a Neighbours,
    pub cfg: &'a TrainConfig,
    /// Generation target per label; `None` when paraphrasing is off.
    pub targets: Option<Vec<Vec<TokenId>>>,
}

impl<'a> Stage2Env<'a> {
    pub fn new(
        prep: &'a Prepared,
        cache: &'a RepresentationCache,
        neighbours: &'a Neighbours,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        let targets = if cfg.use_label_para {
            Some(prep.paraphrase_targets(cfg.paraphrase_target)?)
        } else {
            None
        };
        Ok(Self {
            prep,
            cache,
            neighbours,
            cfg,
            targets,
        })
    }
}

pub struct Stage2Output {
    pub logits: Var,
    pub pred: usize,
    pub ce: Var,
    pub gen: Option<Var>,
    /// `ce + alpha * gen`
    pub loss: Var,
}

/// Builds `I'_t`, runs the classification pass and, when paraphrasing is
/// on and `with_generation` is set, the teacher-forced gloss pass.
pub fn stage2_forward(
    tape: &mut Tape,
    net: &Seq2Seq,
    store: &ParamStore,
    heads: &Stage2Heads,
    env: &Stage2Env,
    ex: Example,
    drop: &mut Dropout,
    with_generation: bool,
) -> Result<Stage2Output> {
    let cfg = env.cfg;
    let prep = env.prep;
    let vocab = &prep.vocab;
    let dialogue = prep.tokens(ex);
    let conv = &prep.conversations(ex.split)[ex.dialogue];
    let id = prep.utterance_id(ex);
    let d = net.config.d_model;

    let h_cached = tape.constant(vec![1, d], env.cache.get(id)?.to_vec())?;
    let h_hist = if cfg.use_hist_prompt {
        let preds = &conv.utterances[..ex.t];
        let history = preds
            .iter()
            .map(|u| env.cache.get(&u.utterance_id))
            .collect::<Result<Vec<_>>>()?;
        let speaker = &conv.utterances[ex.t].speaker;
        let same: Vec<bool> = preds.iter().map(|u| &u.speaker == speaker).collect();
        Some(build_history_vector(tape, store, &heads.prompts.hist, &history, &same, h_cached)?)
    } else {
        None
    };
    let h_exp = if cfg.use_exp_prompt {
        let similar = env
            .neighbours
            .get(id)
            .ok_or_else(|| crate::Error::Contract(format!("no retrieved neighbours for {id}")))?;
        contract!(similar.len() == cfg.k, "{} neighbours for k = {}", similar.len(), cfg.k);
        Some(build_experience_vector(tape, store, &heads.prompts.exp, similar, h_cached)?)
    } else {
        None
    };

    let mut input = EncodedInput::default();
    if cfg.fusion_mode == FusionMode::Prompt {
        let prefix = soft_prompt_prefix(dialogue, ex.t, vocab);
        for v in [h_hist, h_exp].into_iter().flatten() {
            push_soft_prompt(&mut input, &prefix, v, vocab.pad());
        }
    }
    if cfg.use_sep_prefix {
        input.push_tokens(&[vocab.sep()], vocab.pad());
    }
    let budget = net.config.max_len.saturating_sub(input.len());
    let context = context_tokens(dialogue, ex.t, net.config.context_window, vocab, budget)?;
    input.push_tokens(&context, vocab.pad());
    let enc = net.encode(tape, store, &input, drop)?;

    let (_, h) = net.mask_representation(tape, store, &enc, &decoder_prompt(dialogue, ex.t, vocab), drop)?;
    let extras: Vec<Var> = [h_hist, h_exp].into_iter().flatten().collect();
    let (logits, pred) = match cfg.fusion_mode {
        FusionMode::Prompt => classify(tape, store, &net.head, h)?,
        FusionMode::Add => {
            let mut fused = h;
            for v in extras {
                fused = tape.add(fused, v)?;
            }
            classify(tape, store, &net.head, fused)?
        }
        FusionMode::Concat => {
            let mut parts = vec![h];
            parts.extend(extras);
            let fused = tape.concat_cols(&parts)?;
            let head = heads
                .concat_head
                .ok_or_else(|| crate::Error::Contract("concat fusion without its head".into()))?;
            classify(tape, store, &head, fused)?
        }
    };
    let gold = prep.gold(ex);
    let ce = tape.cross_entropy(logits, &[gold])?;
    let gen = match &env.targets {
        Some(targets) if with_generation && cfg.alpha > 0.0 => {
            let seq = paraphrase_sequence(dialogue, ex.t, &targets[gold], vocab);
            Some(net.lm_generate_loss(tape, store, &enc, &seq, drop)?)
        }
        _ => None,
    };
    let loss = match gen {
        Some(g) => {
            let weighted = tape.scale(g, cfg.alpha);
            tape.add(ce, weighted)?
        }
        None => ce,
    };
    Ok(Stage2Output {
        logits,
        pred,
        ce,
        gen,
        loss,
    })
}

/// Full second-stage objective for one utterance.
pub fn stage2_loss(
    tape: &mut Tape,
    net: &Seq2Seq,
    store: &ParamStore,
    heads: &Stage2Heads,
    env: &Stage2Env,
    ex: Example,
    drop: &mut Dropout,
) -> Result<Var> {
    Ok(stage2_forward(tape, net, store, heads, env, ex, drop, true)?.loss)
}

/// Trained second-stage model.
#[derive(Clone, Debug)]
pub struct Stage2Model {
    pub state: ModelState,
    pub heads: Stage2Heads,
    pub config: TrainConfig,
    /// Dev weighted-F1 after each epoch.
    pub dev_history: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl Stage2Model {
    /// Wraps a loaded checkpoint whose store already holds the stage-2 parameters.
    pub fn from_checkpoint(state: ModelState, config: TrainConfig) -> Result<Self> {
        let heads = Stage2Heads::bind(&state.store, &config, state.config.d_model, state.labels.len())?;
        Ok(Self {
            state,
            heads,
            config,
            dev_history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn predict(&self, env: &Stage2Env, split: Split) -> Result<Vec<usize>> {
        predict_stage2(&self.state, &self.heads, env, split)
    }
}

pub fn predict_stage2(state: &ModelState, heads: &Stage2Heads, env: &Stage2Env, split: Split) -> Result<Vec<usize>> {
    let examples = env.prep.examples(split);
    par_map(&examples, |ex| {
        let mut tape = Tape::new();
        stage2_forward(&mut tape, &state.net, &state.store, heads, env, *ex, &mut Dropout::off(), false)
            .map(|o| o.pred)
    })
    .into_iter()
    .collect()
}

fn neighbours_for(prep: &Prepared, cache: &RepresentationCache, retriever: &Retriever, cfg: &TrainConfig) -> Result<Neighbours> {
    if cfg.use_exp_prompt {
        compute_neighbours(prep, cache, retriever, cfg.k)
    } else {
        Ok(Neighbours::new())
    }
}

/// Continues training from the first-stage model with both prompts and the
/// paraphrase loss; keeps the parameters of the best dev epoch.
pub fn train_stage2(
    stage1: &ModelState,
    prep: &Prepared,
    cache: &RepresentationCache,
    retriever: &Retriever,
    cfg: &TrainConfig,
) -> Result<Stage2Model> {
    cfg.validate()?;
    let mut state = stage1.clone();
    let d = state.config.d_model;
    let heads = Stage2Heads::create(&mut state.store, cfg, d, state.labels.len(), cfg.seed.wrapping_add(2))?;
    let examples = prep.examples(Split::Train);
    let gold_dev: Vec<usize> = prep.examples(Split::Dev).into_iter().map(|e| prep.gold(e)).collect();
    let epochs = cfg.stage2_epochs
        + if cfg.fusion_mode == FusionMode::Concat {
            cfg.concat_extra_epochs
        } else {
            0
        };
    let mut trainer = Trainer::new(
        TrainerSettings {
            lr: cfg.stage2_lr(),
            warmup_fraction: cfg.warmup_fraction,
            weight_decay: cfg.weight_decay,
            max_grad_norm: cfg.max_grad_norm,
            batch_size: cfg.batch_size,
            dropout: state.config.dropout,
            seed: cfg.seed.wrapping_add(3),
        },
        examples.len(),
        epochs,
        "stage2",
    );

    let mut cache = Cow::Borrowed(cache);
    let mut retriever = Cow::Borrowed(retriever);
    let mut neighbours = neighbours_for(prep, &cache, &retriever, cfg)?;
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut dev_history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let env = Stage2Env::new(prep, &cache, &neighbours, cfg)?;
        let ModelState { net, store, .. } = &mut state;
        let loss = trainer.epoch(store, &examples, |tape, store, ex, drop| {
            stage2_loss(tape, net, store, &heads, &env, *ex, drop)
        })?;
        if cfg.refresh_cache_every_epoch {
            let fresh = cache_representations(&state, prep)?;
            if let Retriever::Cosine(_) = retriever.as_ref() {
                retriever = Cow::Owned(Retriever::Cosine(CosineIndex::from_cache(
                    &fresh,
                    prep.train_labels().keys().map(String::as_str),
                )?));
            }
            cache = Cow::Owned(fresh);
            neighbours = neighbours_for(prep, &cache, &retriever, cfg)?;
        }
        let dev = if gold_dev.is_empty() {
            0.0
        } else {
            let env = Stage2Env::new(prep, &cache, &neighbours, cfg)?;
            let pred = predict_stage2(&state, &heads, &env, Split::Dev)?;
            crate::corpus::weighted_f1(&pred, &gold_dev, state.labels.len())?
        };
        log::info!("stage2 epoch {} loss {loss:.4} dev weighted-F1 {:.2}", epoch + 1, 100.0 * dev);
        dev_history.push(dev);
        if best.as_ref().is_none_or(|(b, _, _)| dev > *b) {
            best = Some((dev, epoch, state.store.clone()));
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            state.store = store;
            epoch
        }
        None => 0,
    };
    state.tag = "stage2".into();
    Ok(Stage2Model {
        state,
        heads,
        config: cfg.clone(),
        dev_history,
        best_epoch,
    })
}
