use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{CorpusSplits, EmotionLabelSet, GlossTable, Split};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::model::{ModelConfig, ModelState, MODEL_KEYS};
use crate::prompts::RepresentationCache;
use crate::retrieval::{CosineIndex, RetrievalIndex, Retriever, RetrieverKind};

use super::config::{TrainConfig, TRAIN_KEYS};
use super::data::Prepared;
use super::report::EvalReport;
use super::stage1::{cache_representations, predict_stage1, train_stage1};
use super::stage2::{compute_neighbours, train_stage2, Neighbours, Stage2Env, Stage2Model};

const RUN_KEYS: &[&str] = &["data_dir", "label_set", "gloss_path"];

/// Everything a `train` invocation needs, read from one flat config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub label_set: String,
    /// Gloss table override; the built-in table otherwise.
    pub gloss_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data_dir: None,
            label_set: "meld".into(),
            gloss_path: None,
        }
    }
}

impl RunConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let known: Vec<&str> = RUN_KEYS.iter().chain(MODEL_KEYS).chain(TRAIN_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let mut cfg = Self::default();
        cfg.model.read_kv(kv)?;
        cfg.train.read_kv(kv)?;
        cfg.data_dir = kv.get_str("data_dir").map(PathBuf::from);
        kv.read("label_set", &mut cfg.label_set)?;
        cfg.gloss_path = kv.get_str("gloss_path").map(PathBuf::from);
        EmotionLabelSet::by_name(&cfg.label_set)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        self.model.write_kv(&mut kv);
        self.train.write_kv(&mut kv);
        if let Some(d) = &self.data_dir {
            kv.set("data_dir", d.display());
        }
        kv.set("label_set", &self.label_set);
        if let Some(g) = &self.gloss_path {
            kv.set("gloss_path", g.display());
        }
        kv
    }

    /// Model and training settings as echoed into reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut kv = KvConfig::default();
        self.model.write_kv(&mut kv);
        self.train.write_kv(&mut kv);
        kv.keys().map(|k| (k.to_string(), kv.get_str(k).unwrap_or("").to_string())).collect()
    }

    pub fn glosses(&self) -> Result<GlossTable> {
        match &self.gloss_path {
            Some(p) => GlossTable::load(p),
            None => Ok(GlossTable::builtin()),
        }
    }

    /// Loads the corpus named by `data_dir`.
    pub fn load_corpus(&self) -> Result<CorpusSplits> {
        let dir = self
            .data_dir
            .as_ref()
            .ok_or_else(|| Error::Config("data_dir is not set".into()))?;
        CorpusSplits::load_dir(dir, EmotionLabelSet::by_name(&self.label_set)?)
    }
}

/// Base model plus the frozen artifacts derived from it.
#[derive(Clone, Debug)]
pub struct Stage1Artifacts {
    pub state: ModelState,
    pub cache: RepresentationCache,
    pub index: RetrievalIndex,
}

impl Stage1Artifacts {
    pub fn build(prep: &Prepared, model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let state = train_stage1(prep, model, cfg)?;
        Self::from_state(state, prep, cfg)
    }

    pub fn from_state(state: ModelState, prep: &Prepared, cfg: &TrainConfig) -> Result<Self> {
        let cache = cache_representations(&state, prep)?;
        let index = RetrievalIndex::from_conversations(&prep.splits.train, cfg.bm25_k1, cfg.bm25_b)?;
        Ok(Self { state, cache, index })
    }

    pub fn retriever(&self, prep: &Prepared, kind: RetrieverKind) -> Result<Retriever> {
        build_retriever(kind, &self.index, &self.cache, prep)
    }

    pub fn train_stage2(&self, prep: &Prepared, cfg: &TrainConfig) -> Result<Stage2Model> {
        let retriever = self.retriever(prep, cfg.retriever)?;
        train_stage2(&self.state, prep, &self.cache, &retriever, cfg)
    }

    pub fn neighbours(&self, prep: &Prepared, cfg: &TrainConfig) -> Result<Neighbours> {
        neighbours_with(prep, &self.cache, &self.index, cfg)
    }

    pub fn evaluate_stage1(&self, prep: &Prepared, split: Split, cfg: &RunConfig) -> Result<EvalReport> {
        let pred = predict_stage1(&self.state, prep, split)?;
        report(prep, split, "stage1", &pred, cfg)
    }

    /// Stage-2 report; dev and test queries retrieve from the training index only.
    pub fn evaluate_stage2(
        &self,
        model: &Stage2Model,
        prep: &Prepared,
        split: Split,
        cfg: &RunConfig,
    ) -> Result<EvalReport> {
        let cache = if model.config.refresh_cache_every_epoch {
            Cow::Owned(cache_representations(&model.state, prep)?)
        } else {
            Cow::Borrowed(&self.cache)
        };
        let neighbours = neighbours_with(prep, &cache, &self.index, &model.config)?;
        let env = Stage2Env::new(prep, &cache, &neighbours, &model.config)?;
        let pred = model.predict(&env, split)?;
        report(prep, split, "stage2", &pred, cfg)
    }
}

fn build_retriever(
    kind: RetrieverKind,
    index: &RetrievalIndex,
    cache: &RepresentationCache,
    prep: &Prepared,
) -> Result<Retriever> {
    Ok(match kind {
        RetrieverKind::Bm25 => Retriever::Bm25(index.clone()),
        RetrieverKind::Cosine => Retriever::Cosine(CosineIndex::from_cache(
            cache,
            prep.train_labels().keys().map(String::as_str),
        )?),
    })
}

fn neighbours_with(
    prep: &Prepared,
    cache: &RepresentationCache,
    index: &RetrievalIndex,
    cfg: &TrainConfig,
) -> Result<Neighbours> {
    if !cfg.use_exp_prompt {
        return Ok(Neighbours::new());
    }
    compute_neighbours(prep, cache, &build_retriever(cfg.retriever, index, cache, prep)?, cfg.k)
}

fn report(prep: &Prepared, split: Split, model: &str, pred: &[usize], cfg: &RunConfig) -> Result<EvalReport> {
    let gold: Vec<usize> = prep.examples(split).into_iter().map(|e| prep.gold(e)).collect();
    EvalReport::from_predictions(split, model, pred, &gold, &prep.splits.labels, cfg.train.seed, cfg.echo())
}

/// Files of one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn stage1(&self) -> PathBuf {
        self.root.join("stage1.json")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache.json")
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index.bin")
    }
    pub fn stage2(&self) -> PathBuf {
        self.root.join("stage2.json")
    }
    pub fn eval(&self, model: &str, split: Split) -> PathBuf {
        self.root.join(format!("eval_{model}_{}.json", split.name()))
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    fn require(path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing run artifact {}", path.display()),
            )))
        }
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        Self::require(&self.config())?;
        RunConfig::from_kv(&KvConfig::load(&self.config())?)
    }

    pub fn save_stage1(&self, cfg: &RunConfig, arts: &Stage1Artifacts) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(self.config(), cfg.to_kv().to_text())?;
        arts.state.save(&self.stage1())?;
        arts.cache.save(&self.cache())?;
        arts.index.save(&self.index())
    }

    pub fn load_stage1(&self) -> Result<Stage1Artifacts> {
        for p in [self.stage1(), self.cache(), self.index()] {
            Self::require(&p)?;
        }
        Ok(Stage1Artifacts {
            state: ModelState::load(&self.stage1())?,
            cache: RepresentationCache::load(&self.cache())?,
            index: RetrievalIndex::load(&self.index())?,
        })
    }

    pub fn load_stage2(&self, cfg: &TrainConfig) -> Result<Stage2Model> {
        Self::require(&self.stage2())?;
        Stage2Model::from_checkpoint(ModelState::load(&self.stage2())?, cfg.clone())
    }

    /// Corpus of the run, encoded with the stage-1 vocabulary.
    pub fn prepare(&self, cfg: &RunConfig, arts: &Stage1Artifacts) -> Result<Prepared> {
        Ok(Prepared::with_vocab(cfg.load_corpus()?, cfg.glosses()?, arts.state.vocab.clone()))
    }
}

/// Reports written by [`train_run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub stage1_dev: EvalReport,
    pub stage2_dev: EvalReport,
    pub stage2_test: EvalReport,
}

/// Both stages end to end, writing every artifact under `dir`.
pub fn train_run(cfg: &RunConfig, prep: &Prepared, dir: &RunDir) -> Result<RunOutcome> {
    let arts = Stage1Artifacts::build(prep, &cfg.model, &cfg.train)?;
    dir.save_stage1(cfg, &arts)?;
    let stage1_dev = arts.evaluate_stage1(prep, Split::Dev, cfg)?;
    stage1_dev.save(&dir.eval("stage1", Split::Dev))?;
    let model = arts.train_stage2(prep, &cfg.train)?;
    model.state.save(&dir.stage2())?;
    let stage2_dev = arts.evaluate_stage2(&model, prep, Split::Dev, cfg)?;
    stage2_dev.save(&dir.eval("stage2", Split::Dev))?;
    let stage2_test = arts.evaluate_stage2(&model, prep, Split::Test, cfg)?;
    stage2_test.save(&dir.eval("stage2", Split::Test))?;
    Ok(RunOutcome {
        stage1_dev,
        stage2_dev,
        stage2_test,
    })
}
