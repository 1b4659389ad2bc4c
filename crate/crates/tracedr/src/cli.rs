use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracedr_benchgen::{
    emit_benchmark, stats_table, synth_kg, ChatClient, GenConfig, LlmFilter, LlmSymptoms, RuleOnly, SynthConfig,
    TemplateSymptoms, WithFallback,
};
use tracedr_core::encoders::EncoderConfig;
use tracedr_core::gnn::{train, Preset, TrainConfig};
use tracedr_core::metrics::{evaluate, Recommender, DEFAULT_EVAL_K};
use tracedr_core::pipeline::{check_patient, Bm25Baseline, Checkpoint, Pipeline, Recommendation, DEFAULT_TOP_EVIDENCE};
use tracedr_core::retrieval::{build_index, Bm25Index};
use tracedr_core::tokenize::DefaultTokenizer;
use tracedr_core::{load_kg, load_patients, KgStore, PatientEHR};

use crate::config::{overlay, FileConfig, ServeConfig};
use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "tracedr", version, about = "Traceable drug recommendation over a medical knowledge graph")]
pub struct Cli {
    /// TOML file with [generate], [synth], [train] and [serve] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the seed of the chosen command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic knowledge graph as JSONL.
    SynthKg(SynthKgArgs),
    /// Generate and audit a patient benchmark.
    Generate(GenerateArgs),
    /// Build and save the BM25 index.
    Index(IndexArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a model or the BM25 baseline on a split.
    Evaluate(EvaluateArgs),
    /// Recommend drugs with evidence for one patient.
    Recommend(RecommendArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    Planted,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Args)]
pub struct KgArgs {
    /// Knowledge graph JSONL.
    #[arg(long)]
    pub kg: PathBuf,
    /// Saved BM25 index; built from the KG when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthKgArgs {
    #[arg(long, value_enum, default_value = "planted")]
    pub scale: Scale,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub kg: PathBuf,
    /// Number of patients.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory for train/dev/test.jsonl and audit.json.
    #[arg(long)]
    pub out: PathBuf,
    /// OpenAI-compatible chat endpoint for the applicability filter and symptoms.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub llm_model: String,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub kg: KgArgs,
    /// Directory holding train.jsonl and dev.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use an external encoder service instead of feature hashing.
    #[arg(long)]
    pub encoder_url: Option<String>,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Training log path; defaults to train_log.json next to the checkpoint.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub kg: KgArgs,
    /// Directory holding the split files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Model checkpoint; omit with --baseline.
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Score the BM25 baseline instead of a model.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = DEFAULT_EVAL_K)]
    pub k: usize,
    /// JSON report path; a per-patient CSV is written beside it.
    #[arg(long, default_value = "eval_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub kg: KgArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Patient JSON object.
    #[arg(long)]
    pub patient: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EVAL_K)]
    pub k: usize,
    /// Supporting evidence items per drug.
    #[arg(long, default_value_t = DEFAULT_TOP_EVIDENCE)]
    pub evidence: usize,
    /// Print the full response as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub kg: KgArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bind: Option<String>,
}

fn load_store(path: &Path) -> anyhow::Result<KgStore> {
    let store = load_kg(path).with_context(|| format!("loading knowledge graph {}", path.display()))?;
    let dangling = store.dangling_references().len();
    if dangling > 0 {
        log::warn!("{dangling} dangling references in {}", path.display());
    }
    Ok(store)
}

fn load_or_build_index(args: &KgArgs, store: &KgStore) -> anyhow::Result<Bm25Index> {
    match &args.index {
        Some(p) => Bm25Index::load(p).with_context(|| format!("loading index {}", p.display())),
        None => Ok(build_index(store, Arc::new(DefaultTokenizer))?),
    }
}

fn load_pipeline(args: &KgArgs, model: &Path) -> anyhow::Result<(Pipeline, Checkpoint)> {
    let store = load_store(&args.kg)?;
    let index = load_or_build_index(args, &store)?;
    let ckpt = Checkpoint::load(model).with_context(|| format!("loading checkpoint {}", model.display()))?;
    let pipeline = Pipeline::from_checkpoint(store, index, ckpt.clone())?;
    Ok((pipeline, ckpt))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = FileConfig::load_opt(cli.config.as_deref())?;
    match cli.command {
        Command::SynthKg(a) => synth_cmd(&file, cli.seed, a),
        Command::Generate(a) => generate_cmd(&file, cli.seed, a),
        Command::Index(a) => {
            let store = load_store(&a.kg)?;
            let index = build_index(&store, Arc::new(DefaultTokenizer))?;
            index.save(&a.out)?;
            println!("indexed {} drugs into {}", index.num_docs(), a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(a) => train_cmd(&file, cli.seed, a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Recommend(a) => recommend_cmd(a),
        Command::Serve(a) => serve_cmd(&file, a),
    }
}

fn synth_cmd(file: &FileConfig, seed: Option<u64>, a: SynthKgArgs) -> anyhow::Result<ExitCode> {
    let base = match a.scale {
        Scale::Planted => SynthConfig::planted(),
        Scale::Audit => SynthConfig::audit_scale(),
    };
    let mut config = overlay(&base, file.synth.as_ref(), "synth")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let store = synth_kg(&config)?;
    store.save(&a.out)?;
    println!(
        "wrote {} drugs, {} diseases, {} ingredients to {}",
        store.drugs().len(),
        store.diseases().len(),
        store.ingredients().len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn generate_cmd(file: &FileConfig, seed: Option<u64>, a: GenerateArgs) -> anyhow::Result<ExitCode> {
    let mut config = overlay(&GenConfig::default(), file.generate.as_ref(), "generate")?;
    if let Some(n) = a.n {
        config.n_patients = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let store = load_store(&a.kg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let templates = TemplateSymptoms::new(config.seed);
    let (_, report) = match &a.llm_endpoint {
        Some(url) => {
            let client = ChatClient::new(url, &a.llm_model);
            let filter = LlmFilter { client: client.clone() };
            let symptoms = WithFallback {
                primary: LlmSymptoms { client },
                fallback: templates,
            };
            emit_benchmark(&config, &store, &filter, &symptoms, &a.out)?
        }
        None => emit_benchmark(&config, &store, &RuleOnly, &templates, &a.out)?,
    };
    print!("{}", stats_table(&report, &config));
    if report.passed {
        println!("audit passed; wrote {}", a.out.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in report.failures() {
            eprintln!("audit failure: {f}");
        }
        eprintln!("audit failed; see {}", a.out.join("audit.json").display());
        Ok(ExitCode::FAILURE)
    }
}

/// The training configuration a `train` invocation would use.
pub fn resolve_train_config(
    file: &FileConfig,
    preset: Preset,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> anyhow::Result<TrainConfig> {
    let mut config = overlay(&TrainConfig::preset(preset), file.train.as_ref(), "train")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    config.validate()?;
    Ok(config)
}

fn train_cmd(file: &FileConfig, seed: Option<u64>, a: TrainArgs) -> anyhow::Result<ExitCode> {
    let config = resolve_train_config(file, a.preset, seed, a.epochs)?;
    println!("{}", serde_json::to_string_pretty(&config)?);
    let store = load_store(&a.kg.kg)?;
    let index = load_or_build_index(&a.kg, &store)?;
    let train_set = load_patients(a.data.join(Split::Train.file()))?;
    let dev_set = load_patients(a.data.join(Split::Dev.file()))?;
    let encoder_config = match a.encoder_url {
        Some(url) => EncoderConfig::External { url, dim: config.dim },
        None => EncoderConfig::Hash {
            dim: config.dim,
            seed: 0,
        },
    };
    let encoder = encoder_config.build()?;
    let out = train(&train_set, &dev_set, &store, &index, encoder.as_ref(), &config)?;
    let mut ckpt = Checkpoint::new(config.model_config(), encoder_config, out.params);
    ckpt.retrieval_k = config.retrieval_k;
    ckpt.train_log = Some(out.log.clone());
    ckpt.save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        a.out
            .parent()
            .map(|p| p.join("train_log.json"))
            .unwrap_or_else(|| PathBuf::from("train_log.json"))
    });
    write_json(&log_path, &out.log)?;
    for e in &out.log.epochs {
        let f1 = e.dev.map(|d| format!("{:.4}", d.f1)).unwrap_or_else(|| "-".into());
        println!("epoch {:>3}  loss {:.5}  dev f1 {f1}  {:.1}s", e.epoch, e.mean_loss, e.seconds);
    }
    println!(
        "best epoch {}; wrote {} and {}",
        out.log.best_epoch,
        a.out.display(),
        log_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<ExitCode> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let patients = load_patients(a.data.join(a.split.file()))?;
    let (result, subject) = match (&a.model, a.baseline) {
        (_, true) => {
            let store = load_store(&a.kg.kg)?;
            let index = load_or_build_index(&a.kg, &store)?;
            let bm25 = Bm25Baseline {
                index: &index,
                store: &store,
            };
            (evaluate(&patients, &bm25, &store, a.k)?, "bm25".to_string())
        }
        (Some(model), false) => {
            let (pipeline, _) = load_pipeline(&a.kg, model)?;
            let r = evaluate(&patients, &pipeline as &dyn Recommender, &pipeline.store, a.k)?;
            (r, model.display().to_string())
        }
        (None, false) => bail!("--model is required unless --baseline is given"),
    };
    print!("{}", result.table());
    let mut report = result.summary_json();
    report["subject"] = subject.into();
    report["split"] = format!("{:?}", a.split).to_lowercase().into();
    write_json(&a.out, &report)?;
    let csv = a.out.with_extension("csv");
    result.save_csv(&csv)?;
    println!("wrote {} and {}", a.out.display(), csv.display());
    Ok(ExitCode::SUCCESS)
}

fn recommend_cmd(a: RecommendArgs) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&a.patient).with_context(|| format!("reading {}", a.patient.display()))?;
    let patient: PatientEHR = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.patient.display()))?;
    let (pipeline, _) = load_pipeline(&a.kg, &a.model)?;
    let issues = check_patient(&pipeline.store, &patient);
    if !issues.is_empty() {
        for i in &issues {
            eprintln!("{}: {}", i.field, i.message);
        }
        bail!("invalid patient record");
    }
    let rec = pipeline.recommend(&patient.without_ground_truth(), a.k, a.evidence)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rec)?);
    } else {
        print!("{}", render(&rec));
    }
    Ok(ExitCode::SUCCESS)
}

/// Plain-text listing of a recommendation.
pub fn render(rec: &Recommendation) -> String {
    let mut s = String::new();
    for r in &rec.recommendations {
        s.push_str(&format!("{}. {} ({})  score {:.4}\n", r.rank, r.label, r.drug_id, r.score));
        for ev in &r.supporting_evidence {
            s.push_str(&format!("   [{:.4}] {}\n", ev.score, ev.text));
        }
    }
    s.push_str(&format!("{} candidates considered\n", rec.candidate_count));
    s
}

fn serve_cmd(file: &FileConfig, a: ServeArgs) -> anyhow::Result<ExitCode> {
    let mut serve = overlay(&ServeConfig::default(), file.serve.as_ref(), "serve")?;
    if let Some(b) = a.bind {
        serve.bind = b;
    }
    let (pipeline, ckpt) = load_pipeline(&a.kg, &a.model)?;
    let state = AppState::new(pipeline, &ckpt, serve.clone());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(&serve.bind, state))?;
    Ok(ExitCode::SUCCESS)
}
