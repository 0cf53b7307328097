//! `embench`: generate corpora, build and audit benchmarks, train and
//! evaluate matchers, and render reports.
//!
//! Exit codes: 0 success, 1 validation or contract failure, 2 usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use embench::audit::{self, AuditReport};
use embench::builder::{self, BenchmarkBundle, Paradigm, SplitPlan};
use embench::corpus::{self, Corpus};
use embench::eval::{self, StudyConfig, SweepAxis};
use embench::io;
use embench::matcher::{self, Hyper, MatcherKind, MatcherModel};
use embench::report::{self, Document, Format};
use embench::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "embench", version, about = "Open-world entity-matching benchmark toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Build the four benchmark bundles from a corpus.
    Build(BuildArgs),
    /// Audit bundles or external split files for train/test overlap.
    Audit(AuditArgs),
    /// Train a matcher on a bundle's train/val split.
    Train(TrainArgs),
    /// Evaluate trained matchers on a bundle, or run a study on a corpus.
    Eval(EvalArgs),
    /// F1 against the mismatched:matched ratio for all four benchmarks.
    Sweep(SweepArgs),
    /// Render a report or curve as a text table, CSV or JSON.
    Report(ReportArgs),
}

/// A bad invocation; exits with code 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v.clone()),
        None => usage(format!("{flag} is required (as a flag or in --config)")),
    }
}

/// Overlays explicitly given flags on the `--config` file. Unset options,
/// `false` switches and empty lists leave the file's value in place.
fn with_config<T: Serialize + DeserializeOwned>(args: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(args)?)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(mut merged) = file else {
        return usage(format!("config {} must hold a JSON object", path.display()));
    };
    if let Value::Object(flags) = serde_json::to_value(args)? {
        for (k, v) in flags {
            let unset = v.is_null() || v == Value::Bool(false) || v.as_array().is_some_and(Vec::is_empty);
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
}

/// Applies flag overrides to an optional nested config object.
fn overlay(base: Option<Value>, overrides: &[(&str, Option<Value>)]) -> Result<Value> {
    let mut map = match base {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return usage("nested config sections must be JSON objects"),
    };
    for (key, value) in overrides {
        if let Some(v) = value {
            map.insert((*key).to_string(), v.clone());
        }
    }
    Ok(Value::Object(map))
}

fn opt<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| serde_json::to_value(x).expect("flag values serialize"))
}

fn switch(on: bool, value: Value) -> Option<Value> {
    on.then_some(value)
}

fn parse_section<T: DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Usage(format!("{what}: {e}")).into())
}

/// Where the resolved config of a run writing `output` goes.
fn config_path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(io::sha256_hex(&bytes))
}

fn write_resolved(path: &Path, command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    let doc = json!({
        "command": command,
        "toolkit_version": embench::VERSION,
        "args": args,
        "resolved": resolved,
    });
    io::write_json(path, &doc)?;
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GenCorpusArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Root seed of the generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of entity clusters.
    #[arg(long)]
    clusters: Option<usize>,
    /// Number of product categories.
    #[arg(long)]
    categories: Option<usize>,
    /// Standard deviation of per-record image noise.
    #[arg(long)]
    image_sigma: Option<f64>,
    /// Output JSONL path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Full generator config (config file only).
    #[arg(skip)]
    synth: Option<Value>,
}

fn gen_corpus(args: &GenCorpusArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let out = required(&args.out, "--out")?;
    let value = overlay(
        args.synth.clone(),
        &[
            ("seed", opt(&args.seed)),
            ("n_clusters", opt(&args.clusters)),
            ("n_categories", opt(&args.categories)),
            ("image_noise_sigma", opt(&args.image_sigma)),
        ],
    )?;
    if value.get("seed").is_none() {
        return usage("--seed is required");
    }
    let cfg = SynthConfig::from_json(&value)?;
    let corpus = synth::generate(&cfg)?;
    corpus::save_corpus(&corpus, &out)?;
    write_resolved(
        &config_path_for(&out),
        "gen-corpus",
        &args,
        json!({ "synth": cfg, "outputs": { "corpus": corpus.content_hash() } }),
    )?;
    println!(
        "wrote {} records in {} clusters to {}",
        corpus.n_records(),
        corpus.n_clusters(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PlanFlags {
    /// Root seed of the split plan.
    #[arg(long)]
    seed: Option<u64>,
    /// Clusters whose records feed the training side.
    #[arg(long)]
    train_clusters: Option<usize>,
    /// Clusters held out entirely for the unseen-cluster benchmark.
    #[arg(long)]
    holdout_clusters: Option<usize>,
    /// Share of each training cluster's records held out as unseen records.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Mismatched:matched ratio of train and val.
    #[arg(long)]
    k_train: Option<f64>,
    /// Mismatched:matched ratio of the test sets.
    #[arg(long)]
    k_test: Option<f64>,
    /// Share of mismatched pairs drawn from look-alike clusters.
    #[arg(long)]
    family_bias: Option<f64>,
    /// Draw mismatched pairs within a category only.
    #[arg(long)]
    within_category: bool,
}

impl PlanFlags {
    fn resolve(&self, base: Option<Value>) -> Result<SplitPlan> {
        let value = overlay(
            base,
            &[
                ("seed", opt(&self.seed)),
                ("n_train_clusters", opt(&self.train_clusters)),
                ("n_holdout_clusters", opt(&self.holdout_clusters)),
                ("holdout_record_fraction", opt(&self.holdout_fraction)),
                ("k_train", opt(&self.k_train)),
                ("k_test", opt(&self.k_test)),
                ("family_bias", opt(&self.family_bias)),
                ("within_category", switch(self.within_category, Value::Bool(true))),
            ],
        )?;
        let plan: SplitPlan = parse_section(value, "plan")?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BuildArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Corpus JSONL.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory; one sub-directory per bundle.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also build the four bundles for each category.
    #[arg(long)]
    per_category: bool,
    #[command(flatten)]
    #[serde(flatten)]
    flags: PlanFlags,
    /// Full split plan (config file only).
    #[arg(skip)]
    plan: Option<Value>,
}

fn build(args: &BuildArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let corpus_path = required(&args.corpus, "--corpus")?;
    let out = required(&args.out, "--out")?;
    let plan = args.flags.resolve(args.plan.clone())?;
    let corpus = Arc::new(corpus::load_corpus(&corpus_path)?);

    let mut bundles: Vec<(PathBuf, BenchmarkBundle)> = Vec::new();
    if args.per_category {
        for (category, set) in builder::build_per_category(corpus.clone(), &plan)? {
            for (p, b) in set {
                bundles.push((out.join(&category).join(p.key()), b));
            }
        }
    } else {
        for (p, b) in builder::build_all(corpus.clone(), &plan)? {
            bundles.push((out.join(p.key()), b));
        }
    }

    let rows: Vec<(String, &AuditReport)> = bundles
        .iter()
        .map(|(dir, b)| {
            let name = dir.strip_prefix(&out).unwrap_or(dir).display().to_string();
            (name, b.manifest.audit.as_ref().expect("bundles are audited on build"))
        })
        .collect();
    print!("{}", audit::render_table(&rows));
    if rows.iter().any(|(_, r)| !r.contract.pass) {
        eprintln!("error: a bundle violates its paradigm contract; nothing was written");
        return Ok(ExitCode::from(1));
    }
    for (dir, b) in &bundles {
        for w in &b.manifest.warnings {
            log::warn!("{}: {w}", dir.display());
        }
        builder::write_bundle(b, dir)?;
    }
    let dirs: Vec<String> = bundles.iter().map(|(d, _)| d.display().to_string()).collect();
    write_resolved(
        &out.join("build.config.json"),
        "build",
        &args,
        json!({
            "plan": plan,
            "inputs": { "corpus": corpus.content_hash() },
            "bundles": dirs,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct AuditArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Bundle directory to audit; repeatable.
    #[arg(long)]
    bundle: Vec<PathBuf>,
    /// External train pairs (JSONL).
    #[arg(long)]
    train: Option<PathBuf>,
    /// External validation pairs (JSONL).
    #[arg(long)]
    val: Option<PathBuf>,
    /// External test pairs (JSONL).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Records the external pairs refer to (JSONL).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Contract to check external splits against.
    #[arg(long)]
    paradigm: Option<Paradigm>,
    /// Write the reports as JSON here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn run_audit(args: &AuditArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let external = [&args.train, &args.val, &args.test, &args.records];
    let mut reports: BTreeMap<String, AuditReport> = BTreeMap::new();
    let mut inputs: BTreeMap<String, String> = BTreeMap::new();
    if !args.bundle.is_empty() {
        if external.iter().any(|p| p.is_some()) {
            return usage("use either --bundle or --train/--val/--test/--records, not both");
        }
        for dir in &args.bundle {
            let bundle = builder::load_bundle(dir)?;
            reports.insert(dir.display().to_string(), bundle.audit()?);
            inputs.insert(dir.display().to_string(), bundle.manifest.corpus_hash.clone());
        }
    } else {
        let [Some(train), Some(val), Some(test), Some(records)] = external else {
            return usage("give --bundle, or all of --train, --val, --test and --records");
        };
        let report = audit::audit_external(train, val, test, records, args.paradigm)?;
        for (name, p) in [("train", train), ("val", val), ("test", test), ("records", records)] {
            inputs.insert(name.to_string(), file_hash(p)?);
        }
        reports.insert(test.display().to_string(), report);
    }
    let rows: Vec<(String, &AuditReport)> = reports.iter().map(|(k, v)| (k.clone(), v)).collect();
    print!("{}", audit::render_table(&rows));
    for (name, r) in &reports {
        for c in r.contract.checks.iter().filter(|c| !c.pass) {
            eprintln!("{name}: {} failed: {}", c.name, c.detail);
        }
    }
    if let Some(out) = &args.out {
        io::write_json(out, &json!({ "inputs": inputs, "reports": reports }))?;
        write_resolved(&config_path_for(out), "audit", &args, json!({ "inputs": inputs }))?;
    }
    let pass = reports.values().all(|r| r.contract.pass);
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct HyperFlags {
    /// Seed for minibatch order.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// L2 penalty on weights.
    #[arg(long)]
    l2: Option<f64>,
    /// Weight classes by inverse frequency.
    #[arg(long)]
    class_weighting: bool,
    /// Pick the decision threshold that maximizes validation F1.
    #[arg(long)]
    threshold_sweep: bool,
    /// Drop the entity-memory features.
    #[arg(long)]
    no_memory: bool,
}

impl HyperFlags {
    fn resolve(&self, base: Option<Value>) -> Result<Hyper> {
        let mut value = overlay(
            base,
            &[
                ("seed", opt(&self.seed)),
                ("epochs", opt(&self.epochs)),
                ("lr", opt(&self.lr)),
                ("batch_size", opt(&self.batch_size)),
                ("l2", opt(&self.l2)),
                ("class_weighting", switch(self.class_weighting, Value::Bool(true))),
                ("threshold_sweep", switch(self.threshold_sweep, Value::Bool(true))),
            ],
        )?;
        if self.no_memory {
            let memory = value
                .as_object_mut()
                .expect("overlay returns an object")
                .entry("memory")
                .or_insert_with(|| json!({}));
            match memory.as_object_mut() {
                Some(m) => {
                    m.insert("enabled".into(), Value::Bool(false));
                }
                None => return usage("hyper.memory must be a JSON object"),
            }
        }
        let hyper: Hyper = parse_section(value, "hyper")?;
        hyper.validate()?;
        Ok(hyper)
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Bundle directory whose train/val split is used.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// text, visual or fused.
    #[arg(long)]
    matcher: Option<MatcherKind>,
    /// Model JSON path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    flags: HyperFlags,
    /// Full hyperparameters (config file only).
    #[arg(skip)]
    hyper: Option<Value>,
}

fn run_train(args: &TrainArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let dir = required(&args.bundle, "--bundle")?;
    let out = required(&args.out, "--out")?;
    let kind = args.matcher.unwrap_or(MatcherKind::Text);
    let hyper = args.flags.resolve(args.hyper.clone())?;
    let bundle = builder::load_bundle(&dir)?;
    let model = matcher::train(kind, &bundle.train, &bundle.val, &bundle.records, &hyper)?;
    model.save(&out)?;
    let [train, val, _, _] = builder::bundle_files(&dir);
    write_resolved(
        &config_path_for(&out),
        "train",
        &args,
        json!({
            "matcher": kind,
            "hyper": hyper,
            "inputs": {
                "corpus": bundle.manifest.corpus_hash,
                "train": file_hash(&train)?,
                "val": file_hash(&val)?,
            },
            "outputs": { "model": file_hash(&out)? },
        }),
    )?;
    println!(
        "{kind} matcher: best epoch {} with val F1 {:.2}, threshold {:.3}; saved to {}",
        model.log.best_epoch,
        model.log.best_val_f1 * 100.0,
        model.threshold,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Experiment {
    /// Text matcher on all four benchmarks, per category.
    UnseenEntities,
    /// Text, visual and fused matchers at the balanced and imbalanced ratio.
    Modalities,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct StudyFlags {
    /// Root seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Mismatched:matched ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Vec<f64>,
    /// Training epochs per matcher.
    #[arg(long)]
    epochs: Option<usize>,
}

impl StudyFlags {
    fn resolve(&self, base: Option<Value>) -> Result<StudyConfig> {
        let list = |v: &[f64]| (!v.is_empty()).then(|| json!(v));
        let mut value = overlay(
            base,
            &[
                ("seeds", (!self.seeds.is_empty()).then(|| json!(self.seeds))),
                ("ks", list(&self.ks)),
            ],
        )?;
        if let Some(epochs) = self.epochs {
            let hyper = value
                .as_object_mut()
                .expect("overlay returns an object")
                .entry("hyper")
                .or_insert_with(|| json!({}));
            match hyper.as_object_mut() {
                Some(h) => {
                    h.insert("epochs".into(), json!(epochs));
                }
                None => return usage("study.hyper must be a JSON object"),
            }
        }
        let cfg: StudyConfig = parse_section(value, "study")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Trained model; repeatable.
    #[arg(long)]
    model: Vec<PathBuf>,
    /// Bundle whose test set is scored.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Per-pair predictions of the single --model, as JSONL.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Corpus to run a full study on, instead of --model/--bundle.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Study to run with --corpus.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[command(flatten)]
    #[serde(flatten)]
    study_flags: StudyFlags,
    /// Report JSON path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Full study config (config file only).
    #[arg(skip)]
    study: Option<Value>,
}

fn run_eval(args: &EvalArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let out = required(&args.out, "--out")?;
    let (report, resolved) = match (&args.corpus, &args.bundle) {
        (Some(_), Some(_)) => return usage("use either --corpus or --bundle, not both"),
        (None, None) => return usage("give --bundle with --model, or --corpus"),
        (Some(path), None) => {
            let cfg = args.study_flags.resolve(args.study.clone())?;
            let corpus: Arc<Corpus> = Arc::new(corpus::load_corpus(path)?);
            let report = match args.experiment.unwrap_or(Experiment::UnseenEntities) {
                Experiment::UnseenEntities => eval::run_findings_1(corpus, &cfg)?,
                Experiment::Modalities => eval::run_findings_3(corpus, &cfg)?,
            };
            (report, json!({ "study": cfg }))
        }
        (None, Some(dir)) => {
            if args.model.is_empty() {
                return usage("--model is required with --bundle");
            }
            if args.predictions.is_some() && args.model.len() != 1 {
                return usage("--predictions needs exactly one --model");
            }
            let bundle = builder::load_bundle(dir)?;
            let mut inputs = BTreeMap::new();
            let mut models = Vec::new();
            for (i, path) in args.model.iter().enumerate() {
                inputs.insert(format!("model{i}"), file_hash(path)?);
                models.push(MatcherModel::load(path)?);
            }
            let [_, _, test, _] = builder::bundle_files(dir);
            inputs.insert("test".to_string(), file_hash(&test)?);
            let report = eval::evaluate_bundle(&models, &bundle, inputs)?;
            if let Some(path) = &args.predictions {
                let preds = matcher::predict_set(&models[0], &bundle.test, &bundle.records)?;
                matcher::write_predictions(&preds, path)?;
            }
            let resolved = json!({ "inputs": report.inputs });
            (report, resolved)
        }
    };
    io::write_json(&out, &report)?;
    write_resolved(&config_path_for(&out), "eval", &args, resolved)?;
    print!("{}", report::render_report(&report, Format::Text)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SweepArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Corpus JSONL.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `test` varies the test ratio only; `train_and_test` varies both.
    #[arg(long)]
    axis: Option<SweepAxisArg>,
    #[command(flatten)]
    #[serde(flatten)]
    study_flags: StudyFlags,
    /// Curve JSON path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Full study config (config file only).
    #[arg(skip)]
    study: Option<Value>,
}

/// Sweep axis as accepted on the command line and in config files.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
struct SweepAxisArg(SweepAxis);

impl std::str::FromStr for SweepAxisArg {
    type Err = embench::Error;

    fn from_str(s: &str) -> embench::Result<Self> {
        s.parse().map(SweepAxisArg)
    }
}

impl TryFrom<String> for SweepAxisArg {
    type Error = embench::Error;

    fn try_from(s: String) -> embench::Result<Self> {
        s.parse()
    }
}

impl From<SweepAxisArg> for String {
    fn from(a: SweepAxisArg) -> String {
        match a.0 {
            SweepAxis::TestRatio => "test".into(),
            SweepAxis::TrainAndTestRatio => "train_and_test".into(),
        }
    }
}

fn run_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let path = required(&args.corpus, "--corpus")?;
    let out = required(&args.out, "--out")?;
    let axis = args.axis.map_or(SweepAxis::TestRatio, |a| a.0);
    let cfg = args.study_flags.resolve(args.study.clone())?;
    let corpus = Arc::new(corpus::load_corpus(&path)?);
    let curve = eval::run_findings_2(corpus, &cfg, axis)?;
    io::write_json(&out, &curve)?;
    write_resolved(
        &config_path_for(&out),
        "sweep",
        &args,
        json!({ "axis": axis, "study": cfg, "inputs": curve.inputs }),
    )?;
    print!("{}", report::render_curve(&curve, Format::Text)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ReportArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Report or curve JSON written by eval or sweep.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// text, csv or json.
    #[arg(long, short)]
    format: Option<Format>,
    /// Output path; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn run_report(args: &ReportArgs) -> Result<ExitCode> {
    let args = with_config(args, args.config.as_deref())?;
    let input = required(&args.input, "--input")?;
    let doc = Document::load(&input)?;
    let rendered = doc.render(args.format.unwrap_or(Format::Text))?;
    match &args.out {
        Some(out) => {
            report::write_rendered(&rendered, out)?;
            write_resolved(
                &config_path_for(out),
                "report",
                &args,
                json!({ "inputs": { "document": file_hash(&input)? } }),
            )?;
        }
        None => print!("{rendered}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<embench::Error>() {
        Some(embench::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Build(a) => build(a),
        Command::Audit(a) => run_audit(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
