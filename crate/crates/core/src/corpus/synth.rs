//! Synthetic conversations with independently plantable label signals.
//!
//! Each utterance's label comes from exactly one mechanism:
//!
//! * `Hist`: the same speaker's previous label; text is filler only.
//! * `Exp`: a template family shared across dialogues; the family fixes
//!   the label and the text is the family's word sequence plus filler.
//! * `Lex`: a word unique to the label's gloss, mixed with filler.
//!
//! A speaker's first turn has no predecessor, so a `Hist` draw there falls
//! back to `Exp`/`Lex` in proportion to their weights (`Lex` when both are 0).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{utterance_id, Conversation, CorpusSplits, EmotionLabelSet, Utterance};
use super::gloss::GlossTable;
use super::tokenizer::tokenize;
use crate::error::{Error, Result};
use crate::kv::KvConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Hist,
    Exp,
    Lex,
}

/// Generator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_dialogues: usize,
    pub speakers_per_dialogue: usize,
    /// Speakers take turns in a fixed rotation instead of at random.
    pub alternate_speakers: bool,
    pub min_turns: usize,
    pub max_turns: usize,
    pub label_set: String,
    pub hist_weight: f64,
    pub exp_weight: f64,
    pub lex_weight: f64,
    pub n_templates: usize,
    pub template_len: usize,
    /// Words shared among template families; each family draws
    /// `template_len` distinct words from this pool.
    pub template_vocab: usize,
    pub filler_vocab: usize,
    pub filler_min: usize,
    pub filler_max: usize,
    pub speaker_pool: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_dialogues: 200,
            speakers_per_dialogue: 2,
            alternate_speakers: true,
            min_turns: 4,
            max_turns: 8,
            label_set: "meld".into(),
            hist_weight: 0.4,
            exp_weight: 0.3,
            lex_weight: 0.3,
            n_templates: 60,
            template_len: 2,
            template_vocab: 120,
            filler_vocab: 60,
            filler_min: 1,
            filler_max: 3,
            speaker_pool: 12,
            dev_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

const KEYS: &[&str] = &[
    "n_dialogues",
    "speakers_per_dialogue",
    "alternate_speakers",
    "min_turns",
    "max_turns",
    "label_set",
    "hist_weight",
    "exp_weight",
    "lex_weight",
    "n_templates",
    "template_len",
    "template_vocab",
    "filler_vocab",
    "filler_min",
    "filler_max",
    "speaker_pool",
    "dev_fraction",
    "test_fraction",
];

const NAMES: [&str; 24] = [
    "alex", "blair", "casey", "dana", "eli", "frankie", "gale", "harper", "indy", "jules",
    "kai", "lee", "morgan", "noel", "oakley", "parker", "quinn", "reese", "sage", "tatum",
    "uma", "val", "wren", "yael",
];

impl GeneratorSpec {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut s = Self::default();
        kv.read("n_dialogues", &mut s.n_dialogues)?;
        kv.read("speakers_per_dialogue", &mut s.speakers_per_dialogue)?;
        kv.read("alternate_speakers", &mut s.alternate_speakers)?;
        kv.read("min_turns", &mut s.min_turns)?;
        kv.read("max_turns", &mut s.max_turns)?;
        kv.read("label_set", &mut s.label_set)?;
        kv.read("hist_weight", &mut s.hist_weight)?;
        kv.read("exp_weight", &mut s.exp_weight)?;
        kv.read("lex_weight", &mut s.lex_weight)?;
        kv.read("n_templates", &mut s.n_templates)?;
        kv.read("template_len", &mut s.template_len)?;
        kv.read("template_vocab", &mut s.template_vocab)?;
        kv.read("filler_vocab", &mut s.filler_vocab)?;
        kv.read("filler_min", &mut s.filler_min)?;
        kv.read("filler_max", &mut s.filler_max)?;
        kv.read("speaker_pool", &mut s.speaker_pool)?;
        kv.read("dev_fraction", &mut s.dev_fraction)?;
        kv.read("test_fraction", &mut s.test_fraction)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("n_dialogues", self.n_dialogues);
        kv.set("speakers_per_dialogue", self.speakers_per_dialogue);
        kv.set("alternate_speakers", self.alternate_speakers);
        kv.set("min_turns", self.min_turns);
        kv.set("max_turns", self.max_turns);
        kv.set("label_set", &self.label_set);
        kv.set("hist_weight", self.hist_weight);
        kv.set("exp_weight", self.exp_weight);
        kv.set("lex_weight", self.lex_weight);
        kv.set("n_templates", self.n_templates);
        kv.set("template_len", self.template_len);
        kv.set("template_vocab", self.template_vocab);
        kv.set("filler_vocab", self.filler_vocab);
        kv.set("filler_min", self.filler_min);
        kv.set("filler_max", self.filler_max);
        kv.set("speaker_pool", self.speaker_pool);
        kv.set("dev_fraction", self.dev_fraction);
        kv.set("test_fraction", self.test_fraction);
        kv
    }

    /// Signal mix `(hist, exp, lex)` set in one call.
    pub fn with_weights(mut self, hist: f64, exp: f64, lex: f64) -> Self {
        self.hist_weight = hist;
        self.exp_weight = exp;
        self.lex_weight = lex;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.hist_weight, self.exp_weight, self.lex_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("signal weights must be non-negative".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "signal weights must sum to 1, got {}",
                w.iter().sum::<f64>()
            )));
        }
        if self.n_dialogues == 0 {
            return Err(Error::Config("n_dialogues must be positive".into()));
        }
        if self.speakers_per_dialogue == 0 || self.speakers_per_dialogue > self.speaker_pool {
            return Err(Error::Config(
                "speakers_per_dialogue must be in 1..=speaker_pool".into(),
            ));
        }
        if self.speaker_pool > NAMES.len() {
            return Err(Error::Config(format!("speaker_pool is at most {}", NAMES.len())));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return Err(Error::Config("need 1 <= min_turns <= max_turns".into()));
        }
        if self.filler_min > self.filler_max || self.filler_vocab == 0 {
            return Err(Error::Config("bad filler settings".into()));
        }
        if self.n_templates == 0
            || self.template_len == 0
            || self.template_len > self.template_vocab
        {
            return Err(Error::Config("bad template settings".into()));
        }
        let f = self.dev_fraction + self.test_fraction;
        if !(0.0..1.0).contains(&self.dev_fraction)
            || !(0.0..1.0).contains(&self.test_fraction)
            || f >= 1.0
        {
            return Err(Error::Config("split fractions must leave a training split".into()));
        }
        EmotionLabelSet::by_name(&self.label_set)?;
        Ok(())
    }
}

/// Hidden provenance of one generated utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub utterance_id: String,
    pub signal: Signal,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub template: Option<usize>,
    /// A `Hist` draw that fell back because the speaker had no earlier turn.
    #[serde(default)]
    pub anchor: bool,
}

/// Generated splits plus the per-utterance signal channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub splits: CorpusSplits,
    pub signals: BTreeMap<String, SignalRecord>,
    pub template_labels: Vec<usize>,
}

/// Pseudo-word `prefix` + base-`|C|·|V|` syllables of `i`, padded to `syllables`.
fn pseudo_word(prefix: &str, mut i: usize, syllables: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstv";
    const V: &[u8] = b"aeiou";
    let mut s = String::from(prefix);
    for _ in 0..syllables {
        let d = i % (C.len() * V.len());
        i /= C.len() * V.len();
        s.push(C[d / V.len()] as char);
        s.push(V[d % V.len()] as char);
    }
    s
}

pub fn filler_word(i: usize) -> String {
    pseudo_word("zu", i, 2)
}

pub fn template_word(i: usize) -> String {
    pseudo_word("qa", i, 2)
}

fn choose_signal(rng: &mut ChaCha8Rng, w: [f64; 3]) -> Signal {
    let r: f64 = rng.gen::<f64>() * (w[0] + w[1] + w[2]);
    if r < w[0] {
        Signal::Hist
    } else if r < w[0] + w[1] {
        Signal::Exp
    } else {
        Signal::Lex
    }
}

fn fillers(rng: &mut ChaCha8Rng, spec: &GeneratorSpec) -> Vec<String> {
    let n = rng.gen_range(spec.filler_min..=spec.filler_max);
    (0..n)
        .map(|_| filler_word(rng.gen_range(0..spec.filler_vocab)))
        .collect()
}

fn insert_randomly(rng: &mut ChaCha8Rng, base: &mut Vec<String>, extra: Vec<String>) {
    for w in extra {
        let pos = rng.gen_range(0..=base.len());
        base.insert(pos, w);
    }
}

/// Deterministic in `(spec, seed)`; splits are disjoint by dialogue.
pub fn generate_synthetic_corpus(
    spec: &GeneratorSpec,
    glosses: &GlossTable,
    seed: u64,
) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let labels = EmotionLabelSet::by_name(&spec.label_set)?;
    let lex_words = glosses.distinctive_words(&labels)?;
    let n_labels = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // template families: fixed word sequences, labels balanced over classes
    let mut template_labels: Vec<usize> = (0..spec.n_templates).map(|f| f % n_labels).collect();
    template_labels.shuffle(&mut rng);
    let template_words: Vec<Vec<String>> = (0..spec.n_templates)
        .map(|_| {
            rand::seq::index::sample(&mut rng, spec.template_vocab, spec.template_len)
                .into_iter()
                .map(template_word)
                .collect()
        })
        .collect();

    let weights = [spec.hist_weight, spec.exp_weight, spec.lex_weight];
    let anchor_weights = if spec.exp_weight + spec.lex_weight > 0.0 {
        [0.0, spec.exp_weight, spec.lex_weight]
    } else {
        [0.0, 0.0, 1.0]
    };

    let mut dialogues = Vec::with_capacity(spec.n_dialogues);
    let mut signals = BTreeMap::new();
    for d in 0..spec.n_dialogues {
        let dialogue_id = format!("d{d:05}");
        let speakers: Vec<&str> =
            rand::seq::index::sample(&mut rng, spec.speaker_pool, spec.speakers_per_dialogue)
                .into_iter()
                .map(|i| NAMES[i])
                .collect();
        let turns = rng.gen_range(spec.min_turns..=spec.max_turns);
        let first = rng.gen_range(0..speakers.len());
        let mut last_label: BTreeMap<&str, usize> = BTreeMap::new();
        let mut utterances = Vec::with_capacity(turns);
        for t in 0..turns {
            let speaker = if spec.alternate_speakers {
                speakers[(first + t) % speakers.len()]
            } else {
                speakers[rng.gen_range(0..speakers.len())]
            };
            let mut signal = choose_signal(&mut rng, weights);
            let mut anchor = false;
            if signal == Signal::Hist && !last_label.contains_key(speaker) {
                signal = choose_signal(&mut rng, anchor_weights);
                anchor = true;
            }
            let mut template = None;
            let (label, words) = match signal {
                Signal::Hist => (last_label[speaker], {
                    let mut f = fillers(&mut rng, spec);
                    if f.is_empty() {
                        f.push(filler_word(rng.gen_range(0..spec.filler_vocab)));
                    }
                    f
                }),
                Signal::Exp => {
                    let fam = rng.gen_range(0..spec.n_templates);
                    template = Some(fam);
                    let mut w = template_words[fam].clone();
                    // template words keep their relative order
                    let extra = fillers(&mut rng, spec);
                    insert_randomly(&mut rng, &mut w, extra);
                    (template_labels[fam], w)
                }
                Signal::Lex => {
                    let label = rng.gen_range(0..n_labels);
                    let cue = lex_words[label]
                        .choose(&mut rng)
                        .expect("every label has a distinctive gloss word")
                        .clone();
                    let mut w = fillers(&mut rng, spec);
                    insert_randomly(&mut rng, &mut w, vec![cue]);
                    (label, w)
                }
            };
            last_label.insert(speaker, label);
            let uid = utterance_id(&dialogue_id, t);
            signals.insert(
                uid.clone(),
                SignalRecord {
                    utterance_id: uid.clone(),
                    signal,
                    template,
                    anchor,
                },
            );
            utterances.push(Utterance {
                utterance_id: uid,
                speaker: speaker.to_string(),
                text: words.join(" "),
                label,
            });
        }
        dialogues.push(Conversation {
            dialogue_id,
            utterances,
        });
    }

    let n = dialogues.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_dev = (n as f64 * spec.dev_fraction).round() as usize;
    let n_train = n - n_test - n_dev;
    if n_train == 0 {
        return Err(Error::Config("no dialogues left for training".into()));
    }
    let test = dialogues.split_off(n_train + n_dev);
    let dev = dialogues.split_off(n_train);
    Ok(SyntheticCorpus {
        splits: CorpusSplits {
            labels,
            train: dialogues,
            dev,
            test,
        },
        signals,
        template_labels,
    })
}

/// How often each planted rule holds, as `(holds, total)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurityReport {
    pub hist: (usize, usize),
    pub exp: (usize, usize),
    pub lex: (usize, usize),
}

impl PurityReport {
    pub fn is_pure(&self) -> bool {
        self.hist.0 == self.hist.1 && self.exp.0 == self.exp.1 && self.lex.0 == self.lex.1
    }
}

/// Re-derives every signal's rule from the generated text and labels.
pub fn check_purity(corpus: &SyntheticCorpus, glosses: &GlossTable) -> Result<PurityReport> {
    let labels = &corpus.splits.labels;
    let lex_words = glosses.distinctive_words(labels)?;
    let mut report = PurityReport::default();
    let mut template_label: BTreeMap<usize, usize> = BTreeMap::new();
    for conv in corpus.splits.all() {
        let mut last: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &conv.utterances {
            let rec = corpus
                .signals
                .get(&u.utterance_id)
                .ok_or_else(|| Error::Validation(format!("no signal for {}", u.utterance_id)))?;
            match rec.signal {
                Signal::Hist => {
                    report.hist.1 += 1;
                    if last.get(u.speaker.as_str()) == Some(&u.label) {
                        report.hist.0 += 1;
                    }
                }
                Signal::Exp => {
                    report.exp.1 += 1;
                    let fam = rec.template.unwrap_or(usize::MAX);
                    let want = *template_label.entry(fam).or_insert(u.label);
                    if want == u.label {
                        report.exp.0 += 1;
                    }
                }
                Signal::Lex => {
                    report.lex.1 += 1;
                    let toks = tokenize(&u.text);
                    let cues: Vec<usize> = (0..labels.len())
                        .filter(|&l| toks.iter().any(|t| lex_words[l].contains(t)))
                        .collect();
                    if cues == [u.label] {
                        report.lex.0 += 1;
                    }
                }
            }
            last.insert(u.speaker.as_str(), u.label);
        }
    }
    Ok(report)
}
