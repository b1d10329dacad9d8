use std::fmt;
use std::str::FromStr;

use crate::corpus::{utterance_id, Conversation, CorpusSplits, EmotionLabelSet, GlossTable, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::{Dropout, ModelConfig, ModelState};
use crate::numerics::{check_store_gradients, ParamId, ParamStore};

use super::config::{FusionMode, TrainConfig};
use super::data::Prepared;
use super::run::Stage1Artifacts;
use super::stage1::stage1_loss;
use super::stage2::{stage2_loss, Stage2Env, Stage2Heads};

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckScale {
    Tiny,
    Small,
}

impl FromStr for GradCheckScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "small" => Ok(Self::Small),
            other => Err(Error::Config(format!("unknown gradcheck scale {other}"))),
        }
    }
}

impl fmt::Display for GradCheckScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tiny => "tiny",
            Self::Small => "small",
        })
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn dialogue() -> CorpusSplits {
    let turns = [
        ("ann", "i finally got the job", 4),
        ("bob", "wow that is great news", 2),
        ("ann", "but the pay is awful", 5),
    ];
    let conv = Conversation {
        dialogue_id: "g".into(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(i, (s, text, label))| Utterance {
                utterance_id: utterance_id("g", i),
                speaker: s.to_string(),
                text: text.to_string(),
                label: *label,
            })
            .collect(),
    };
    CorpusSplits {
        labels: EmotionLabelSet::meld(),
        train: vec![conv],
        dev: Vec::new(),
        test: Vec::new(),
    }
}

fn model_config(scale: GradCheckScale) -> ModelConfig {
    let (d_model, n_layers, d_ff) = match scale {
        GradCheckScale::Tiny => (8, 1, 12),
        GradCheckScale::Small => (16, 2, 24),
    };
    ModelConfig {
        d_model,
        n_layers,
        n_heads: 2,
        d_ff,
        max_len: 64,
        context_window: 2,
        dropout: 0.0,
    }
}

/// Attention key biases shift every score of a row equally, so their exact
/// gradient is zero and only rounding noise is left to compare.
fn checked_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().filter(|&id| !store.name(id).ends_with(".k.b")).collect()
}

/// Central-difference checks of the stage-1 loss and the full stage-2 loss
/// under every fusion mode, on a three-turn dialogue with `k = 2`.
pub fn gradcheck_suite(scale: GradCheckScale, seed: u64) -> Result<Vec<GradCheckCase>> {
    let prep = Prepared::new(dialogue(), GlossTable::builtin())?;
    let model = model_config(scale);
    let coords = match scale {
        GradCheckScale::Tiny => 24,
        GradCheckScale::Small => 8,
    };
    let base = TrainConfig {
        k: 2,
        seed,
        ..TrainConfig::default()
    };
    let state = ModelState::new(model, prep.splits.labels.clone(), prep.vocab.clone(), seed)?;
    let arts = Stage1Artifacts::from_state(state, &prep, &base)?;
    let target = prep.examples(Split::Train)[2];
    let mut out = Vec::new();

    let mut store = arts.state.store.clone();
    let ids = checked_ids(&store);
    let net = arts.state.net.clone();
    let r = check_store_gradients(&mut store, &ids, EPS, coords, seed, |store, tape| {
        stage1_loss(tape, &net, store, &prep, target, &mut Dropout::off())
    })?;
    out.push(GradCheckCase {
        name: "stage1 classification loss".into(),
        max_rel_error: r.max_rel_error,
        worst_param: r.worst_param,
        coords_checked: r.coords_checked,
    });

    for fusion in [FusionMode::Prompt, FusionMode::Add, FusionMode::Concat] {
        let cfg = TrainConfig {
            fusion_mode: fusion,
            ..base.clone()
        };
        let mut store = arts.state.store.clone();
        let heads = Stage2Heads::create(&mut store, &cfg, arts.state.config.d_model, prep.splits.labels.len(), seed ^ 0x5eed)?;
        let neighbours = arts.neighbours(&prep, &cfg)?;
        let env = Stage2Env::new(&prep, &arts.cache, &neighbours, &cfg)?;
        let ids = checked_ids(&store);
        let r = check_store_gradients(&mut store, &ids, EPS, coords, seed, |store, tape| {
            stage2_loss(tape, &net, store, &heads, &env, target, &mut Dropout::off())
        })?;
        out.push(GradCheckCase {
            name: format!("stage2 loss, fusion {fusion}"),
            max_rel_error: r.max_rel_error,
            worst_param: r.worst_param,
            coords_checked: r.coords_checked,
        });
    }
    Ok(out)
}
