//! Command-line driver: `train`, `predict`, `evaluate`, `search`,
//! `features` and `crossval`.
//!
//! Settings come from an optional TOML file ([`config::RunConfig`]) and
//! are overridden by flags. Exit codes: 0 on success, 2 for usage, config
//! or input errors, 1 for internal failures.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use relclass::clstm::{self, ClstmModel, CLSTM_KIND};
use relclass::corpus::{self, ClassDistribution, Relation, RelationInstance};
use relclass::embeddings::{self, EmbeddingTable};
use relclass::eval::{self, CvReport, ScoreReport};
use relclass::features::{self, LevinTable};
use relclass::modelio::model_kind;
use relclass::search::{self, TrialResult};
use relclass::svm::{self, SvmModel, SVM_KIND};

use config::{ModelKind, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "relclass",
    version,
    about = "Semantic relation classification in scientific abstracts"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Word embedding table (text format)
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Verb class table (TSV: lemma, class id)
    #[arg(long, global = true)]
    pub levin: Option<PathBuf>,
    /// Primary output file (stdout if omitted, where applicable)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it together with a JSON report
    Train {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Training corpus; repeat to combine several
        #[arg(long)]
        train: Vec<PathBuf>,
        /// Report path (default: <out>.report.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Label a corpus with a trained model (JSON lines)
    Predict { model: PathBuf, corpus: PathBuf },
    /// Score predictions against a gold corpus
    Evaluate { gold: PathBuf, predictions: PathBuf },
    /// Random hyperparameter search for the C-LSTM
    Search {
        #[arg(long)]
        train: Vec<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        /// Trial log (default: <out>.trials.jsonl, or stderr)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Dump the boolean feature keys of every instance, grouped by namespace
    Features {
        corpus: PathBuf,
        #[arg(long)]
        min_lemma_freq: Option<usize>,
    },
    /// Stratified k-fold cross-validation
    Crossval {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long)]
        train: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
}

/// Errors caused by the caller: bad flags, bad config, unreadable or
/// inconsistent inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Process exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<relclass::Error>() {
            return match e {
                relclass::Error::Training(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = merge(&cli.common)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("configuring {n} worker threads: {e}"))?;
    }
    match cli.command {
        Command::Train { model, train, report } => cmd_train(&with_train(cfg, train), model, report),
        Command::Predict { model, corpus } => cmd_predict(&cfg, &model, &corpus),
        Command::Evaluate { gold, predictions } => cmd_evaluate(&cfg, &gold, &predictions),
        Command::Search { train, trials, log } => cmd_search(&with_train(cfg, train), trials, log),
        Command::Features { corpus, min_lemma_freq } => cmd_features(&cfg, &corpus, min_lemma_freq),
        Command::Crossval { model, train, k } => cmd_crossval(&with_train(cfg, train), model, k),
    }
}

/// Config file values overridden by common flags.
fn merge(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    if c.embeddings.is_some() {
        cfg.embeddings.clone_from(&c.embeddings);
    }
    if c.levin.is_some() {
        cfg.levin.clone_from(&c.levin);
    }
    if c.out.is_some() {
        cfg.out.clone_from(&c.out);
    }
    Ok(cfg)
}

fn with_train(mut cfg: RunConfig, train: Vec<PathBuf>) -> RunConfig {
    if !train.is_empty() {
        cfg.train = train;
    }
    cfg
}

// ─── Inputs ──────────────────────────────────────────────────────────

fn load_train(cfg: &RunConfig) -> anyhow::Result<Vec<RelationInstance>> {
    if cfg.train.is_empty() {
        return Err(usage("no training corpus given (use --train or `train` in the config)"));
    }
    let mut all = Vec::new();
    for p in &cfg.train {
        all.extend(corpus::parse_corpus(p)?);
    }
    if let Some(i) = all.iter().find(|i| i.label.is_none()) {
        return Err(usage(format!("training instance {} has no label", i.id)));
    }
    Ok(all)
}

fn load_embeddings(cfg: &RunConfig) -> anyhow::Result<EmbeddingTable> {
    let p = cfg
        .embeddings
        .as_ref()
        .ok_or_else(|| usage("no embedding table given (use --embeddings)"))?;
    Ok(embeddings::load_table(p)?)
}

fn load_levin(cfg: &RunConfig) -> anyhow::Result<LevinTable> {
    match &cfg.levin {
        Some(p) => Ok(features::load_levin(p)?),
        None => {
            log::warn!("no verb class table given; lc features will be empty");
            Ok(LevinTable::default())
        }
    }
}

fn model_kind_of(cfg: &RunConfig, flag: Option<ModelKind>) -> ModelKind {
    flag.or(cfg.model).unwrap_or(ModelKind::Svm)
}

/// Writer for the primary output: `--out` or stdout.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut w = output(Some(path))?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn class_counts(instances: &[RelationInstance]) -> BTreeMap<String, usize> {
    let mut m: BTreeMap<String, usize> = Relation::ALL.iter().map(|r| (r.to_string(), 0)).collect();
    for i in instances {
        if let Some(l) = i.label {
            *m.get_mut(l.as_str()).expect("all labels present") += 1;
        }
    }
    m
}

// ─── Models ──────────────────────────────────────────────────────────

pub enum AnyModel {
    Svm(SvmModel),
    Clstm(ClstmModel),
}

impl AnyModel {
    pub fn from_bytes(bytes: &[u8]) -> relclass::Result<Self> {
        match model_kind(bytes)?.as_str() {
            SVM_KIND => Ok(AnyModel::Svm(SvmModel::from_bytes(bytes)?)),
            CLSTM_KIND => Ok(AnyModel::Clstm(ClstmModel::from_bytes(bytes)?)),
            other => Err(relclass::Error::Model(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyModel::Svm(m) => m.to_bytes(),
            AnyModel::Clstm(m) => m.to_bytes(),
        }
    }

    pub fn predict_proba(
        &self,
        inst: &RelationInstance,
        table: &EmbeddingTable,
    ) -> relclass::Result<ClassDistribution> {
        match self {
            AnyModel::Svm(m) => m.predict_proba(inst, table),
            AnyModel::Clstm(m) => m.predict_proba(inst, table),
        }
    }
}

fn train_model(
    kind: ModelKind,
    cfg: &RunConfig,
    train: &[RelationInstance],
    table: &EmbeddingTable,
    levin: &LevinTable,
) -> relclass::Result<AnyModel> {
    Ok(match kind {
        ModelKind::Svm => AnyModel::Svm(svm::train_multiclass(train, table, levin.clone(), &cfg.svm_config())?),
        ModelKind::Clstm => AnyModel::Clstm(clstm::train(train, table, &cfg.hyperparams(), cfg.min_lemma_freq())?),
    })
}

fn score(model: &AnyModel, instances: &[RelationInstance], table: &EmbeddingTable) -> relclass::Result<ScoreReport> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for inst in instances {
        if let Some(g) = inst.label {
            gold.push(g);
            pred.push(model.predict_proba(inst, table)?.argmax());
        }
    }
    if gold.is_empty() {
        return Err(relclass::Error::InvalidArgument("no labeled instances to score".into()));
    }
    Ok(ScoreReport::from_labels(&gold, &pred))
}

// ─── Commands ────────────────────────────────────────────────────────

fn cmd_train(cfg: &RunConfig, flag: Option<ModelKind>, report: Option<PathBuf>) -> anyhow::Result<()> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| usage("train needs an output model path (use --out)"))?;
    let kind = model_kind_of(cfg, flag);
    let train = load_train(cfg)?;
    let table = load_embeddings(cfg)?;
    let levin = if kind == ModelKind::Svm {
        load_levin(cfg)?
    } else {
        LevinTable::default()
    };

    let start = Instant::now();
    let model = train_model(kind, cfg, &train, &table, &levin)?;
    let elapsed = start.elapsed().as_secs_f64();
    std::fs::write(&out, model.to_bytes()).with_context(|| format!("writing {}", out.display()))?;

    let mut rep = json!({
        "instances": train.len(),
        "class_distribution": class_counts(&train),
        "embedding": { "name": table.name(), "dim": table.dim() },
        "timing": { "train_seconds": elapsed },
    });
    match &model {
        AnyModel::Svm(m) => {
            rep["model"] = json!("svm");
            rep["config"] = json!(m.config);
            rep["feature_space_size"] = json!(m.pipeline.space.len());
            rep["binary_models"] = json!(m.trained_pairs());
        }
        AnyModel::Clstm(m) => {
            rep["model"] = json!("clstm");
            rep["hyperparams"] = json!(m.hyper);
            rep["l_max"] = json!(m.l_max);
            rep["parameters"] = json!(m.params.data.len());
        }
    }
    if let Some(test) = &cfg.test {
        let test = corpus::parse_corpus(test)?;
        rep["test_scores"] = json!(score(&model, &test, &table)?);
    }
    let report = report.unwrap_or_else(|| sibling(&out, ".report.json"));
    write_json(&report, &rep)?;
    log::info!("wrote {} and {}", out.display(), report.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Relation,
    pub proba: BTreeMap<Relation, f64>,
}

fn cmd_predict(cfg: &RunConfig, model_path: &Path, corpus_path: &Path) -> anyhow::Result<()> {
    let bytes = std::fs::read(model_path).map_err(|e| usage(format!("reading model {}: {e}", model_path.display())))?;
    let model = AnyModel::from_bytes(&bytes)?;
    let instances = corpus::parse_corpus(corpus_path)?;
    let table = load_embeddings(cfg)?;
    let mut w = output(cfg.out.as_deref())?;
    for inst in &instances {
        let p = model.predict_proba(inst, &table)?;
        let line = Prediction {
            id: inst.id.clone(),
            label: p.argmax(),
            proba: p.iter().collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let f = File::open(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).map_err(|e| usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(p);
    }
    Ok(out)
}

fn cmd_evaluate(cfg: &RunConfig, gold_path: &Path, pred_path: &Path) -> anyhow::Result<()> {
    let gold = corpus::parse_corpus(gold_path)?;
    let preds = read_predictions(pred_path)?;
    let mut by_id: HashMap<&str, Relation> = HashMap::with_capacity(preds.len());
    for p in &preds {
        if by_id.insert(&p.id, p.label).is_some() {
            return Err(usage(format!("duplicate prediction for id {}", p.id)));
        }
    }
    let mut g = Vec::with_capacity(gold.len());
    let mut p = Vec::with_capacity(gold.len());
    for inst in &gold {
        let label = inst
            .label
            .ok_or_else(|| usage(format!("gold instance {} has no label", inst.id)))?;
        let pred = by_id
            .remove(inst.id.as_str())
            .ok_or_else(|| usage(format!("no prediction for id {}", inst.id)))?;
        g.push(label);
        p.push(pred);
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(usage(format!("prediction for unknown id {extra}")));
    }
    if g.is_empty() {
        return Err(usage("gold corpus is empty"));
    }
    let report = ScoreReport::from_labels(&g, &p);
    print!("{}", report.text_table());
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    best_trial: usize,
    macro_f1: f64,
    micro_f1: f64,
    hyperparams: &'a clstm::Hyperparams,
}

fn cmd_search(cfg: &RunConfig, trials: Option<usize>, log_path: Option<PathBuf>) -> anyhow::Result<()> {
    let mut settings = cfg.search_settings();
    if let Some(n) = trials {
        settings.n_trials = n;
    }
    settings.space.validate().map_err(|e| usage(e.to_string()))?;
    let train = load_train(cfg)?;
    let table = load_embeddings(cfg)?;
    let log_path = log_path.or_else(|| cfg.out.as_ref().map(|o| sibling(o, ".trials.jsonl")));
    let mut log_out: Box<dyn Write> = match &log_path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stderr()),
    };
    let mut log_err = None;
    let outcome = search::random_search(&train, &table, &settings, |t: &TrialResult| {
        if log_err.is_none() {
            log_err = search::write_trial(&mut log_out, t).and_then(|_| log_out.flush()).err();
        }
        Ok(())
    })?;
    if let Some(e) = log_err {
        return Err(anyhow!(e).context("writing the trial log"));
    }
    let best = &outcome.trials[outcome.best_trial];
    let summary = SearchSummary {
        best_trial: outcome.best_trial,
        macro_f1: best.macro_f1,
        micro_f1: best.micro_f1,
        hyperparams: &outcome.best,
    };
    let mut w = output(cfg.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureDump {
    pub id: String,
    pub features: BTreeMap<String, Vec<String>>,
}

fn cmd_features(cfg: &RunConfig, corpus_path: &Path, min_freq: Option<usize>) -> anyhow::Result<()> {
    let instances = corpus::parse_corpus(corpus_path)?;
    let table = load_embeddings(cfg)?;
    let levin = load_levin(cfg)?;
    let threshold = min_freq.unwrap_or(cfg.min_lemma_freq());
    if threshold == 0 {
        return Err(usage("min_lemma_freq must be at least 1"));
    }
    let freq = corpus::build_lemma_counts(&instances);
    let mut w = output(cfg.out.as_deref())?;
    for inst in &instances {
        let keys = features::instance_keys(inst, &freq, threshold, &levin, &table);
        let dump = FeatureDump {
            id: inst.id.clone(),
            features: features::group_by_namespace(&keys)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        };
        serde_json::to_writer(&mut w, &dump)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_crossval(cfg: &RunConfig, flag: Option<ModelKind>, k: Option<usize>) -> anyhow::Result<()> {
    let kind = model_kind_of(cfg, flag);
    let k = k.or(cfg.crossval.k).unwrap_or(10);
    let instances = load_train(cfg)?;
    let table = load_embeddings(cfg)?;
    let levin = if kind == ModelKind::Svm {
        load_levin(cfg)?
    } else {
        LevinTable::default()
    };
    let report: CvReport = eval::cross_validate(&instances, k, cfg.seed(), |train: &[RelationInstance]| {
        let model = train_model(kind, cfg, train, &table, &levin)?;
        let table = &table;
        Ok(move |inst: &RelationInstance| Ok(model.predict_proba(inst, table)?.argmax()))
    })?;
    println!("{:<6} {:>9} {:>9}", "fold", "macro F1", "micro F1");
    for (i, f) in report.folds.iter().enumerate() {
        println!("{:<6} {:>9.4} {:>9.4}", i + 1, f.macro_f1, f.micro_f1);
    }
    println!(
        "{:<6} {:>9.4} {:>9.4}\n{:<6} {:>9.4} {:>9.4}",
        "mean", report.mean_macro_f1, report.mean_micro_f1, "std", report.std_macro_f1, report.std_micro_f1
    );
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
    }
    Ok(())
}
