//! `mplp`: generate synthetic corpora, train, evaluate, inspect retrieval,
//! check gradients and sweep hyper-parameters.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mplp::corpus::{
    check_purity, generate_synthetic_corpus, Conversation, GeneratorSpec, GlossTable, Split, Utterance,
};
use mplp::kv::KvConfig;
use mplp::model::DialogueTokens;
use mplp::training::{gradcheck_suite, train_run, GradCheckScale, Prepared, RunConfig, RunDir, GRADCHECK_TOLERANCE};

#[derive(Parser)]
#[command(name = "mplp", version, about = "Prompted emotion recognition in conversation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus with its signal sidecar.
    GenData {
        /// Generator spec (key = value); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` spec overrides.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Run both training stages and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory; overrides `data_dir` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Evaluate a trained run on one split.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum, default_value_t = Stage::Stage2)]
        model: Stage,
    },
    /// Show the top-k training neighbours of a text or utterance.
    Retrieve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, conflicts_with = "utterance", required_unless_present = "utterance")]
        text: Option<String>,
        /// Query with a stored utterance; it never retrieves itself.
        #[arg(long)]
        utterance: Option<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Finite-difference check of the training losses.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Retrain stage 2 over a grid of `k` or `alpha` and write a CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Stage1,
    Stage2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    K,
    Alpha,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            Self::K => "k",
            Self::Alpha => "alpha",
        }
    }
}

/// Check failed; exits with 1.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    config_hash: String,
    version: String,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(out: &Path, command: &str, config_path: Option<&Path>, resolved: &str, started: u64) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        config_path: config_path.map(Path::to_path_buf),
        config_hash: sha256_hex(resolved),
        version: format!("v{}", env!("CARGO_PKG_VERSION")),
        started_unix: started,
        finished_unix: unix_now(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_kv(path: Option<&Path>, overrides: &[String]) -> Result<KvConfig> {
    let mut kv = match path {
        Some(p) => KvConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => KvConfig::default(),
    };
    kv.apply_overrides(overrides)?;
    Ok(kv)
}

fn resolve_run_config(config: Option<&Path>, data: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_kv(&load_kv(config, overrides)?)?;
    if let Some(d) = data {
        cfg.data_dir = Some(d.to_path_buf());
    }
    let Some(dir) = &cfg.data_dir else {
        bail!(mplp::Error::Config("no corpus: pass --data or set data_dir".into()));
    };
    cfg.data_dir = Some(fs::canonicalize(dir).with_context(|| format!("corpus directory {}", dir.display()))?);
    Ok(cfg)
}

fn gen_data(spec: Option<&Path>, seed: u64, out: &Path, overrides: &[String]) -> Result<()> {
    let started = unix_now();
    let kv = load_kv(spec, overrides)?;
    let spec_cfg = GeneratorSpec::from_kv(&kv)?;
    let glosses = GlossTable::builtin();
    let corpus = generate_synthetic_corpus(&spec_cfg, &glosses, seed)?;
    corpus.splits.save_dir(out)?;
    let purity = check_purity(&corpus, &glosses)?;
    let sidecar = serde_json::json!({
        "seed": seed,
        "spec": kv_map(&spec_cfg.to_kv()),
        "purity": purity,
        "pure": purity.is_pure(),
        "template_labels": corpus.template_labels,
        "signals": corpus.signals.values().collect::<Vec<_>>(),
    });
    fs::write(out.join("signals.json"), serde_json::to_string_pretty(&sidecar)?)?;
    let resolved = format!("{}seed = {seed}\n", spec_cfg.to_kv().to_text());
    write_manifest(out, "gen-data", spec, &resolved, started)?;
    println!(
        "wrote {} / {} / {} dialogues to {} (pure: {})",
        corpus.splits.train.len(),
        corpus.splits.dev.len(),
        corpus.splits.test.len(),
        out.display(),
        purity.is_pure()
    );
    Ok(())
}

fn kv_map(kv: &KvConfig) -> serde_json::Map<String, serde_json::Value> {
    kv.keys()
        .map(|k| (k.to_string(), serde_json::Value::from(kv.get_str(k).unwrap_or_default())))
        .collect()
}

fn train(config: Option<&Path>, out: &Path, data: Option<&Path>, overrides: &[String]) -> Result<()> {
    let started = unix_now();
    let cfg = resolve_run_config(config, data, overrides)?;
    let prep = Prepared::new(cfg.load_corpus()?, cfg.glosses()?)?;
    let dir = RunDir::new(out);
    let outcome = train_run(&cfg, &prep, &dir)?;
    write_manifest(out, "train", config, &cfg.to_kv().to_text(), started)?;
    for r in [&outcome.stage1_dev, &outcome.stage2_dev, &outcome.stage2_test] {
        println!("{}", r.summary());
    }
    Ok(())
}

fn eval(run: &Path, split: &str, model: Stage) -> Result<()> {
    let split = Split::parse(split)?;
    let dir = RunDir::new(run);
    let cfg = dir.load_config()?;
    let arts = dir.load_stage1()?;
    let prep = dir.prepare(&cfg, &arts)?;
    let (name, report) = match model {
        Stage::Stage1 => ("stage1", arts.evaluate_stage1(&prep, split, &cfg)?),
        Stage::Stage2 => {
            let m = dir.load_stage2(&cfg.train)?;
            ("stage2", arts.evaluate_stage2(&m, &prep, split, &cfg)?)
        }
    };
    report.save(&dir.eval(name, split))?;
    println!("{}", report.summary());
    Ok(())
}

fn retrieve(run: &Path, text: Option<&str>, utterance: Option<&str>, k: usize) -> Result<()> {
    let dir = RunDir::new(run);
    let cfg = dir.load_config()?;
    let arts = dir.load_stage1()?;
    let prep = dir.prepare(&cfg, &arts)?;
    let retriever = arts.retriever(&prep, cfg.train.retriever)?;
    let (query_text, vector, exclude) = match (text, utterance) {
        (_, Some(id)) => {
            let u = prep
                .splits
                .all()
                .flat_map(|c| &c.utterances)
                .find(|u| u.utterance_id == id)
                .ok_or_else(|| mplp::Error::Config(format!("unknown utterance {id}")))?;
            (u.text.clone(), arts.cache.get(id)?.to_vec(), Some(id.to_string()))
        }
        (Some(t), None) => {
            let conv = Conversation {
                dialogue_id: "query".into(),
                utterances: vec![Utterance {
                    utterance_id: "query:0".into(),
                    speaker: "query".into(),
                    text: t.into(),
                    label: 0,
                }],
            };
            let tokens = DialogueTokens::encode(&conv, &prep.vocab);
            (t.to_string(), arts.state.mask_vector(&tokens, 0)?, None)
        }
        (None, None) => bail!(mplp::Error::Config("pass --text or --utterance".into())),
    };
    let hits = retriever.search(&query_text, &vector, k, exclude.as_deref())?;
    let labels = prep.train_labels();
    let texts: std::collections::BTreeMap<&str, &str> = prep
        .splits
        .train
        .iter()
        .flat_map(|c| c.utterances.iter().map(|u| (u.utterance_id.as_str(), u.text.as_str())))
        .collect();
    println!("query ({}): {query_text}", cfg.train.retriever);
    for (rank, h) in hits.iter().enumerate() {
        let label = labels.get(&h.utterance_id).map_or("?", |&l| prep.splits.labels.name(l));
        println!(
            "{:>2}. {:<14} {:>10.4}  [{label}] {}",
            rank + 1,
            h.utterance_id,
            h.score,
            texts.get(h.utterance_id.as_str()).copied().unwrap_or_default()
        );
    }
    Ok(())
}

fn gradcheck(scale: &str, seed: u64) -> Result<()> {
    let scale: GradCheckScale = scale.parse()?;
    let cases = gradcheck_suite(scale, seed)?;
    let mut failed = 0;
    for c in &cases {
        println!(
            "{} {:<32} max rel err {:.3e} over {} coords (worst {})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.coords_checked,
            c.worst_param
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(CheckFailed(format!("{failed} gradient check(s) above {GRADCHECK_TOLERANCE:e}")).into());
    }
    Ok(())
}

fn sweep(
    config: Option<&Path>,
    out: &Path,
    data: Option<&Path>,
    param: SweepParam,
    grid: &[String],
    overrides: &[String],
) -> Result<()> {
    let started = unix_now();
    let cfg = resolve_run_config(config, data, overrides)?;
    let mut variants = Vec::with_capacity(grid.len());
    for value in grid {
        let mut kv = cfg.to_kv();
        kv.set(param.key(), value.trim());
        variants.push((value.trim().to_string(), RunConfig::from_kv(&kv)?));
    }
    let prep = Prepared::new(cfg.load_corpus()?, cfg.glosses()?)?;
    let dir = RunDir::new(out);
    let arts = mplp::training::Stage1Artifacts::build(&prep, &cfg.model, &cfg.train)?;
    dir.save_stage1(&cfg, &arts)?;
    let mut csv = format!("{},dev_weighted_f1,test_weighted_f1,test_micro_f1_excluding_neutral,test_accuracy\n", param.key());
    for (value, v) in &variants {
        let model = arts.train_stage2(&prep, &v.train)?;
        let dev = arts.evaluate_stage2(&model, &prep, Split::Dev, v)?;
        let test = arts.evaluate_stage2(&model, &prep, Split::Test, v)?;
        let micro = test.micro_f1_excluding_neutral.map_or(String::new(), |m| format!("{m:.6}"));
        csv.push_str(&format!(
            "{value},{:.6},{:.6},{micro},{:.6}\n",
            dev.weighted_f1, test.weighted_f1, test.accuracy
        ));
        println!("{}={value}: {}", param.key(), test.summary());
    }
    fs::write(dir.sweep(), &csv)?;
    let resolved = format!("{}sweep_{} = {}\n", cfg.to_kv().to_text(), param.key(), grid.join(","));
    write_manifest(out, "sweep", config, &resolved, started)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            spec,
            seed,
            out,
            overrides,
        } => gen_data(spec.as_deref(), seed, &out, &overrides),
        Command::Train {
            config,
            out,
            data,
            overrides,
        } => train(config.as_deref(), &out, data.as_deref(), &overrides),
        Command::Eval { run, split, model } => eval(&run, &split, model),
        Command::Retrieve {
            run,
            text,
            utterance,
            k,
        } => retrieve(&run, text.as_deref(), utterance.as_deref(), k),
        Command::Gradcheck { scale, seed } => gradcheck(&scale, seed),
        Command::Sweep {
            config,
            out,
            data,
            param,
            grid,
            overrides,
        } => sweep(config.as_deref(), &out, data.as_deref(), param, &grid, &overrides),
    }
}

/// 1 for failed checks and internal errors, 2 for bad input or missing files.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match err.downcast_ref::<mplp::Error>() {
        Some(
            mplp::Error::Config(_)
            | mplp::Error::Parse { .. }
            | mplp::Error::Validation(_)
            | mplp::Error::Format(_)
            | mplp::Error::Io(_)
            | mplp::Error::Json(_),
        ) => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
