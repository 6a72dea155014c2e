//! Command-line dispatch. Every artifact-producing subcommand writes a
//! manifest (config snapshot, seed, tool version, input hashes) alongside
//! its output so runs can be reproduced byte for byte.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_synthetic_corpus, load_labeled, load_schema, load_sessions, sample_episode,
    write_labeled, write_schema, write_sessions, IntentSchema, LabeledQuery, Session,
    SyntheticCorpusSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    emit_report, emit_timing_report, run_experiment, ExperimentInputs, ExperimentMatrix,
};
use crate::finetune::{
    finetune, model_from_checkpoint, model_to_checkpoint, ClassifierMode, FinetuneConfig,
    TransferStrategy,
};
use crate::model::{load_checkpoint, save_checkpoint, EncoderConfig};
use crate::numerics::derive_seed;
use crate::pretrain::{pretrain, PretrainConfig, RelationMix};
use crate::prompt::{
    assemble_intent_prompt, assemble_plain_prompt, assemble_relation_prompt, RelationKind,
};
use crate::tokenizer::Vocabulary;
use crate::{streams, SEED_ENV_VAR};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Vocabulary build settings; the other sections reuse their module configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub max_size: usize,
    pub min_freq: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { max_size: 8192, min_freq: 1 }
    }
}

/// One config tree for the whole pipeline. Every field has a default, a
/// config file overrides defaults section by section, and command-line
/// flags override the file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; flags and the RELPROMPT_SEED variable take precedence.
    pub seed: Option<u64>,
    pub corpus: SyntheticCorpusSpec,
    pub tokenizer: TokenizerConfig,
    pub model: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: ExperimentMatrix,
}

impl RunConfig {
    /// Loads TOML by default; `.json` files are parsed as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        }
    }
}

/// Seed precedence: command-line flag, then config file, then the
/// RELPROMPT_SEED environment variable, then `fallback`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    if let Some(seed) = file {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            Error::config(format!("{SEED_ENV_VAR} must be an unsigned integer, got {raw:?}"))
        }),
        Err(_) => Ok(fallback),
    }
}

fn parse_relations(raw: &str) -> Result<RelationMix> {
    let mut qq = false;
    let mut qa = false;
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "qq" => qq = true,
            "qa" => qa = true,
            "none" | "text" => {}
            other => {
                return Err(Error::config(format!(
                    "unknown relation kind {other:?}; expected qq, qa, or none"
                )))
            }
        }
    }
    Ok(match (qq, qa) {
        (true, true) => RelationMix::Both,
        (true, false) => RelationMix::QueryQueryOnly,
        (false, true) => RelationMix::QueryAnswerOnly,
        (false, false) => RelationMix::TextOnly,
    })
}

fn parse_lr_grid(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::config(format!("bad learning rate {p:?} in grid")))
        })
        .collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[derive(Serialize)]
struct Manifest {
    tool_version: &'static str,
    subcommand: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Manifest {
    fn new<C: Serialize>(subcommand: &'static str, seed: u64, config: &C) -> Result<Self> {
        Ok(Manifest {
            tool_version: TOOL_VERSION,
            subcommand,
            seed,
            config: serde_json::to_value(config)
                .map_err(|e| Error::config(format!("config snapshot: {e}")))?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    fn input_opt(&mut self, path: Option<&PathBuf>) -> Result<()> {
        if let Some(p) = path {
            self.input(p)?;
        }
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("manifest serialization: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Manifest location for a file output: `<out>.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[derive(Parser)]
#[command(
    name = "relprompt",
    version,
    about = "Relation-aware prompt pretraining and few-shot intent detection"
)]
struct Cli {
    /// Config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file and RELPROMPT_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (all pipelines are deterministic at the default).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus, labeled queries, and a schema.
    GenCorpus(GenCorpusArgs),
    /// Build a whitespace vocabulary from corpus files.
    BuildVocab(BuildVocabArgs),
    /// Pretrain the encoder with masked language modeling over prompts.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained checkpoint on a K-shot episode.
    Finetune(FinetuneArgs),
    /// Classify one query with a fine-tuned model.
    Predict(PredictArgs),
    /// Run the full experiment matrix and write a report.
    Eval(EvalArgs),
    /// Print the debug rendering of an assembled prompt.
    InspectPrompt(InspectPromptArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Directory for sessions.jsonl, labeled.jsonl, and schema.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    sessions: PathBuf,
    /// Labeled-query file; requires --schema to resolve intent names.
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Schema file; its intent names are added to the vocabulary.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Relation prompt kinds: "qq,qa", "qq", "qa", or "none".
    #[arg(long)]
    relations: Option<String>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    shots: usize,
    /// said | linear | mlp | queryadapt
    #[arg(long)]
    strategy: Option<String>,
    /// prompt | linear
    #[arg(long)]
    classifier: Option<String>,
    /// Comma-separated learning-rate grid.
    #[arg(long)]
    lr_grid: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    query: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Config file whose [eval] section defines the variant/shot matrix.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Reuse existing artifacts instead of generating from [corpus].
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct InspectPromptArgs {
    #[arg(long)]
    query: String,
    /// Intent name: renders the intent-prompt layout.
    #[arg(long)]
    intent: Option<String>,
    /// qq | qa: renders the relation-prompt layout (needs --right).
    #[arg(long)]
    relation: Option<String>,
    /// Right-hand text of a relation prompt.
    #[arg(long)]
    right: Option<String>,
    /// Relation tokens per kind; defaults to the model config.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Encode with this vocabulary instead of one built from the inputs.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

/// Parses argv and runs the command. Exit codes: 0 success, 1 usage error,
/// 2 data or config error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers == 0 {
        return Err(Error::config("--workers must be at least 1"));
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(cli.seed, config.seed, 0)?;
    config.seed = Some(seed);
    match cli.command {
        Command::GenCorpus(args) => gen_corpus(&cli.config, &config, seed, &args),
        Command::BuildVocab(args) => build_vocab(&cli.config, &config, seed, &args),
        Command::Pretrain(args) => run_pretrain(&cli.config, &config, seed, &args),
        Command::Finetune(args) => run_finetune(&cli.config, &config, seed, &args),
        Command::Predict(args) => predict(&args),
        Command::Eval(args) => run_eval(cli.seed, &args),
        Command::InspectPrompt(args) => inspect_prompt(&config, &args),
    }
}

fn gen_corpus(
    config_path: &Option<PathBuf>,
    config: &RunConfig,
    seed: u64,
    args: &GenCorpusArgs,
) -> Result<()> {
    let mut spec = config.corpus.clone();
    spec.seed = seed;
    let corpus = generate_synthetic_corpus(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let sessions_path = args.out_dir.join("sessions.jsonl");
    let labeled_path = args.out_dir.join("labeled.jsonl");
    let schema_path = args.out_dir.join("schema.json");
    write_sessions(&sessions_path, &corpus.sessions)?;
    write_labeled(&labeled_path, &corpus.labeled, &corpus.schema)?;
    write_schema(&schema_path, &corpus.schema)?;

    let mut manifest = Manifest::new("gen-corpus", seed, &spec)?;
    manifest.input_opt(config_path.as_ref())?;
    manifest.output(&sessions_path);
    manifest.output(&labeled_path);
    manifest.output(&schema_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    println!(
        "wrote {} sessions, {} labeled queries, {} intents to {}",
        corpus.sessions.len(),
        corpus.labeled.len(),
        corpus.schema.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn build_vocab(
    config_path: &Option<PathBuf>,
    config: &RunConfig,
    seed: u64,
    args: &BuildVocabArgs,
) -> Result<()> {
    let max_size = args.max_size.unwrap_or(config.tokenizer.max_size);
    let min_freq = args.min_freq.unwrap_or(config.tokenizer.min_freq);
    let (sessions, stats) = load_sessions(&args.sessions)?;
    if stats.queries_dropped > 0 || stats.sessions_dropped > 0 {
        eprintln!(
            "dropped {} empty queries and {} short sessions",
            stats.queries_dropped, stats.sessions_dropped
        );
    }
    let mut texts: Vec<String> = Vec::new();
    for session in &sessions {
        for turn in &session.turns {
            texts.push(turn.query.clone());
            texts.push(turn.answer.clone());
        }
    }
    let schema = args.schema.as_ref().map(|p| load_schema(p)).transpose()?;
    if let Some(labeled_path) = &args.labeled {
        let schema = schema.as_ref().ok_or_else(|| {
            Error::config("--labeled needs --schema to resolve intent names")
        })?;
        for ex in load_labeled(labeled_path, schema)? {
            texts.push(ex.query);
        }
    }
    if let Some(schema) = &schema {
        texts.extend(schema.labels().iter().cloned());
    }
    let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
    let vocab = Vocabulary::build(&refs, max_size, min_freq)?;
    vocab.save(&args.out)?;

    let mut manifest = Manifest::new(
        "build-vocab",
        seed,
        &TokenizerConfig { max_size, min_freq },
    )?;
    manifest.input_opt(config_path.as_ref())?;
    manifest.input(&args.sessions)?;
    manifest.input_opt(args.labeled.as_ref())?;
    manifest.input_opt(args.schema.as_ref())?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    println!("wrote {}-token vocabulary ({})", vocab.len(), vocab.content_hash());
    Ok(())
}

fn run_pretrain(
    config_path: &Option<PathBuf>,
    config: &RunConfig,
    seed: u64,
    args: &PretrainArgs,
) -> Result<()> {
    let (sessions, _) = load_sessions(&args.sessions)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let mut enc = config.model.clone();
    enc.vocab_size = vocab.len();
    let mut pt = config.pretrain.clone();
    pt.seed = seed;
    if let Some(v) = args.mask_ratio {
        pt.mask_ratio = v;
    }
    if let Some(v) = args.epochs {
        pt.epochs = v;
    }
    if let Some(v) = args.lr {
        pt.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        pt.batch_size = v;
    }
    if let Some(raw) = &args.relations {
        pt.relation_mix = parse_relations(raw)?;
    }
    let (ckpt, logs) = pretrain(&sessions, &vocab, &enc, &pt)?;
    save_checkpoint(&args.out, &ckpt)?;
    for log in &logs {
        println!(
            "{}",
            serde_json::json!({
                "epoch": log.epoch,
                "mean_loss": log.mean_loss,
                "wall_seconds": log.wall_seconds,
            })
        );
    }

    #[derive(Serialize)]
    struct Snapshot<'a> {
        model: &'a EncoderConfig,
        pretrain: &'a PretrainConfig,
    }
    let mut manifest = Manifest::new("pretrain", seed, &Snapshot { model: &enc, pretrain: &pt })?;
    manifest.input_opt(config_path.as_ref())?;
    manifest.input(&args.sessions)?;
    manifest.input(&args.vocab)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn run_finetune(
    config_path: &Option<PathBuf>,
    config: &RunConfig,
    seed: u64,
    args: &FinetuneArgs,
) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let schema = load_schema(&args.schema)?;
    let labeled = load_labeled(&args.labeled, &schema)?;

    let mut ft = config.finetune.clone();
    ft.seed = seed;
    if let Some(raw) = &args.strategy {
        ft.strategy = TransferStrategy::parse(raw)?;
    }
    if let Some(raw) = &args.classifier {
        ft.classifier = ClassifierMode::parse(raw)?;
    }
    if let Some(raw) = &args.lr_grid {
        ft.learning_rate_grid = parse_lr_grid(raw)?;
    }
    if let Some(v) = args.max_epochs {
        ft.max_epochs = v;
    }
    if let Some(v) = args.patience {
        ft.patience = v;
    }
    if let Some(v) = args.batch_size {
        ft.batch_size = v;
    }
    if args.freeze_encoder {
        ft.freeze_encoder = true;
    }

    let episode = sample_episode(
        &labeled,
        &schema,
        args.shots,
        derive_seed(seed, &[streams::EPISODE]),
    )?;
    let outcome = finetune(&episode, &schema, &vocab, &ckpt, &ft)?;
    let best = outcome
        .grid
        .iter()
        .find(|g| g.learning_rate == outcome.selected_lr)
        .expect("selected rate comes from the grid");
    let info = crate::model::FinetuneInfo {
        strategy: ft.strategy.name().to_string(),
        classifier: ft.classifier.name().to_string(),
        selected_lr: outcome.selected_lr,
        shots: args.shots,
        intent_names: schema.labels().to_vec(),
    };
    let model_ckpt = model_to_checkpoint(
        &outcome.model,
        vocab.content_hash(),
        ckpt.extras.pretrained_relations,
        info,
    );
    save_checkpoint(&args.out, &model_ckpt)?;
    println!(
        "{}",
        serde_json::json!({
            "selected_lr": outcome.selected_lr,
            "val_accuracy": best.val_accuracy,
            "epochs_run": best.epochs_run,
        })
    );

    let mut manifest = Manifest::new("finetune", seed, &ft)?;
    manifest.input_opt(config_path.as_ref())?;
    manifest.input(&args.ckpt)?;
    manifest.input(&args.labeled)?;
    manifest.input(&args.schema)?;
    manifest.input(&args.vocab)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let (model, info) = model_from_checkpoint(&ckpt, &vocab)?;
    let tokens = vocab.encode(&args.query);
    let probs = model.score(&tokens)?;
    let pred = model.predict(&tokens)?;
    let lambda = model.lambda(&tokens)?;

    #[derive(Serialize)]
    struct Prediction<'a> {
        intent: &'a str,
        intents: &'a [String],
        probabilities: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lambda_qq: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lambda_qa: Option<f64>,
    }
    let out = Prediction {
        intent: &info.intent_names[pred],
        intents: &info.intent_names,
        probabilities: probs.iter().map(|&p| f64::from(p)).collect(),
        lambda_qq: lambda.map(|(qq, _)| f64::from(qq)),
        lambda_qa: lambda.map(|(_, qa)| f64::from(qa)),
    };
    println!(
        "{}",
        serde_json::to_string(&out).map_err(|e| Error::config(format!("prediction: {e}")))?
    );
    Ok(())
}

fn run_eval(seed_flag: Option<u64>, args: &EvalArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.matrix)?;
    let seed = resolve_seed(seed_flag, config.seed, 0)?;
    config.seed = Some(seed);
    let mut matrix = config.eval.clone();
    if let Some(runs) = args.runs {
        matrix.n_runs = runs;
    }

    // Reuse artifacts when given; otherwise generate everything from the
    // [corpus] section so one config file drives the whole pipeline.
    let (sessions, labeled, schema): (Vec<Session>, Vec<LabeledQuery>, IntentSchema) =
        match (&args.sessions, &args.labeled, &args.schema) {
            (Some(s), Some(l), Some(c)) => {
                let schema = load_schema(c)?;
                let labeled = load_labeled(l, &schema)?;
                (load_sessions(s)?.0, labeled, schema)
            }
            (None, None, None) => {
                let mut spec = config.corpus.clone();
                spec.seed = seed;
                let corpus = generate_synthetic_corpus(&spec)?;
                (corpus.sessions, corpus.labeled, corpus.schema)
            }
            _ => {
                return Err(Error::config(
                    "--sessions, --labeled, and --schema must be given together",
                ))
            }
        };
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => {
            let mut texts: Vec<String> = Vec::new();
            for session in &sessions {
                for turn in &session.turns {
                    texts.push(turn.query.clone());
                    texts.push(turn.answer.clone());
                }
            }
            texts.extend(labeled.iter().map(|l| l.query.clone()));
            texts.extend(schema.labels().iter().cloned());
            let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
            Vocabulary::build(&refs, config.tokenizer.max_size, config.tokenizer.min_freq)?
        }
    };
    let mut enc = config.model.clone();
    enc.vocab_size = vocab.len();

    let inputs = ExperimentInputs {
        sessions: &sessions,
        labeled: &labeled,
        schema: &schema,
        vocab: &vocab,
        encoder: enc,
        pretrain: config.pretrain.clone(),
        finetune: config.finetune.clone(),
    };
    let reports = run_experiment(&inputs, &matrix, seed)?;
    fs::write(&args.out, emit_report(&reports)).map_err(|e| Error::io(&args.out, e))?;
    let timing_path = args.out.with_extension("timing.txt");
    fs::write(&timing_path, emit_timing_report(&reports))
        .map_err(|e| Error::io(&timing_path, e))?;

    let mut manifest = Manifest::new("eval", seed, &config)?;
    manifest.input(&args.matrix)?;
    manifest.input_opt(args.sessions.as_ref())?;
    manifest.input_opt(args.labeled.as_ref())?;
    manifest.input_opt(args.schema.as_ref())?;
    manifest.input_opt(args.vocab.as_ref())?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    println!("wrote {} records to {}", reports.len(), args.out.display());
    Ok(())
}

fn inspect_prompt(config: &RunConfig, args: &InspectPromptArgs) -> Result<()> {
    if args.intent.is_some() && args.relation.is_some() {
        return Err(Error::config("--intent and --relation are mutually exclusive"));
    }
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => {
            // ephemeral vocabulary over exactly the provided text
            let mut texts = vec![args.query.as_str()];
            texts.extend(args.intent.as_deref());
            texts.extend(args.right.as_deref());
            Vocabulary::build(&texts, usize::MAX, 1)?
        }
    };
    let m = args.m.unwrap_or(config.model.num_relation_tokens);
    let max_len = args.max_len.unwrap_or(config.model.max_len);
    let query = vocab.encode(&args.query);
    let prompt = if let Some(intent) = &args.intent {
        assemble_intent_prompt(&query, &vocab.encode(intent), m, max_len)?
    } else if let Some(relation) = &args.relation {
        let kind = match relation.as_str() {
            "qq" => RelationKind::QueryQuery,
            "qa" => RelationKind::QueryAnswer,
            other => {
                return Err(Error::config(format!(
                    "unknown relation {other:?}; expected qq or qa"
                )))
            }
        };
        let right = args.right.as_deref().ok_or_else(|| {
            Error::config("--relation needs --right for the second sequence")
        })?;
        assemble_relation_prompt(&query, kind, &vocab.encode(right), m, max_len)?
    } else {
        assemble_plain_prompt(&query, max_len)?
    };
    // one-line inspection: trailing padding carries no information
    let rendered = prompt.render();
    println!("{}", rendered.trim_end_matches(" PAD"));
    Ok(())
}
