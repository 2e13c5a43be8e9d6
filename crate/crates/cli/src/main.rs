//! `sdt` — compile schema-guided dialogue corpora into seq2seq instances,
//! obtain raw model outputs, and score them.
//!
//! Each pipeline stage is its own subcommand so external training and
//! inference systems can consume or produce the intermediate line-delimited
//! artifacts; `run` and `robustness` drive the whole pipeline from a TOML
//! config.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sdt_core::backend::{run_backend, BackendConfig, BackendKind, RemoteConfig};
use sdt_core::compiler::{
    compile_corpus, AnnotationPosition, CategoricalMode, FormatFamily, FormatSpec, SlotNaming,
    TargetSlots,
};
use sdt_core::corpus::{load_corpus, load_schemas, Split, VariantId};
use sdt_core::metrics::{MatchPolicy, MetricsReport, SensitivityGranularity};
use sdt_core::pack::{load_pack, validate_pack};
use sdt_core::records::{read_jsonl, write_jsonl, InstanceRecord, ParsedRecord, RawOutputRecord};
use sdt_core::runner::{
    judge_predictions, parse_responses, run_experiment, run_robustness, ExperimentConfig,
};
use sdt_core::sampling::{
    kshot_selection, leave_one_out, select_dialogue_ids, SamplingMode, SamplingSpec,
};

#[derive(Parser)]
#[command(
    name = "sdt",
    version,
    about = "Schema-guided DST prompt compiler and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every demonstration in a prompt pack covers its schema.
    ValidatePack(ValidatePackArgs),
    /// Render model inputs/targets for a corpus as line-delimited records.
    Compile(CompileArgs),
    /// Emit dialogue-id manifests for sampling and leave-one-out regimes.
    Split(SplitArgs),
    /// Produce raw outputs for compiled instances with a backend.
    Infer(InferArgs),
    /// Parse raw outputs and score them against the corpus gold states.
    Evaluate(EvaluateArgs),
    /// Evaluate under the original and all five paraphrased schema sets.
    Robustness(RunArgs),
    /// Run the full experiment pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct FormatArgs {
    /// Prompt format family: sdt-seq, sdt-ind, desc-seq, desc-ind,
    /// sdt-seq-plus-desc (t5-seq / t5-ind are aliases for the desc forms).
    #[arg(long)]
    format: Option<String>,
    /// Categorical rendering: multiple-choice | value-string.
    #[arg(long)]
    categorical: Option<String>,
    /// Slot identifiers: name | id.
    #[arg(long)]
    slot_naming: Option<String>,
    /// Target coverage: all | active.
    #[arg(long)]
    target_slots: Option<String>,
    /// Demonstration annotation position: suffix | inline.
    #[arg(long)]
    annotation: Option<String>,
    /// Demonstrations concatenated per prompt.
    #[arg(long)]
    demos: Option<u32>,
}

impl FormatArgs {
    fn build(&self, default_family: Option<FormatFamily>) -> anyhow::Result<FormatSpec> {
        let family = match &self.format {
            Some(name) => name.parse::<FormatFamily>()?,
            None => default_family.context("--format is required")?,
        };
        let mut spec = FormatSpec::new(family);
        self.apply_knobs(&mut spec)?;
        Ok(spec)
    }

    /// Overlays only the flags that were actually given onto `spec`.
    fn apply_overrides(&self, spec: &mut FormatSpec) -> anyhow::Result<()> {
        if let Some(name) = &self.format {
            spec.family = name.parse()?;
        }
        self.apply_knobs(spec)
    }

    fn apply_knobs(&self, spec: &mut FormatSpec) -> anyhow::Result<()> {
        if let Some(mode) = &self.categorical {
            spec.categorical_mode = match mode.as_str() {
                "multiple-choice" => CategoricalMode::MultipleChoice,
                "value-string" => CategoricalMode::ValueString,
                other => bail!("unknown categorical mode '{other}'"),
            };
        }
        if let Some(naming) = &self.slot_naming {
            spec.slot_naming = match naming.as_str() {
                "name" => SlotNaming::Name,
                "id" => SlotNaming::Id,
                other => bail!("unknown slot naming '{other}'"),
            };
        }
        if let Some(target) = &self.target_slots {
            spec.target_slots = match target.as_str() {
                "all" => TargetSlots::All,
                "active" | "active-only" => TargetSlots::ActiveOnly,
                other => bail!("unknown target slots '{other}'"),
            };
        }
        if let Some(position) = &self.annotation {
            spec.annotation_position = match position.as_str() {
                "suffix" => AnnotationPosition::Suffix,
                "inline" => AnnotationPosition::Inline,
                other => bail!("unknown annotation position '{other}'"),
            };
        }
        if let Some(demos) = self.demos {
            spec.demos_per_prompt = demos;
        }
        spec.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct ValidatePackArgs {
    /// Prompt pack directory.
    #[arg(long)]
    pack: PathBuf,
    /// Split directory holding the governing schema.json.
    #[arg(long)]
    schemas: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    /// Split directory holding schema.json and dialogues_*.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Prompt pack directory (required for demonstration families).
    #[arg(long)]
    pack: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
    /// Prompt version to embed.
    #[arg(long, default_value_t = 1)]
    version: u32,
    /// Schema variant: orig or v1..v5.
    #[arg(long, default_value = "orig")]
    variant: String,
    /// Directory holding v1/..v5/ (defaults to --data).
    #[arg(long)]
    variant_root: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Split directory for the corpus being sampled.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Sampling mode: k-shot | fraction | holdout.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Holdout domain (holdout mode).
    #[arg(long)]
    domain: Option<String>,
    /// Test split directory (holdout mode).
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Manifest output for the sampled/training dialogues (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest output for the holdout evaluation dialogues.
    #[arg(long)]
    eval_out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Compiled instances (line-delimited records).
    #[arg(long)]
    instances: PathBuf,
    /// Backend: oracle | null | replay | remote.
    #[arg(long)]
    backend: String,
    /// Replay dump path (replay backend).
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Inference endpoint base URL (remote backend).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Split directory with schema.json (null backend).
    #[arg(long)]
    schemas: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
    /// Output file for raw outputs (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Split directory holding the gold corpus.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Training split directory, for the seen/unseen breakdown.
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    instances: PathBuf,
    /// Raw output dump to score.
    #[arg(long)]
    outputs: PathBuf,
    #[command(flatten)]
    format: FormatArgs,
    /// Value matcher: normalized-exact | exact.
    #[arg(long, default_value = "normalized-exact")]
    matcher: String,
    /// Directory to write report.json/report.txt and parsed.jsonl into
    /// (table prints to stdout when omitted).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    format: FormatArgs,
    /// Backend override: oracle | null | replay | remote.
    #[arg(long)]
    backend: Option<String>,
    /// Variant override: orig or v1..v5 (run only).
    #[arg(long)]
    variant: Option<String>,
    /// Sampling seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Prompt versions override, comma separated.
    #[arg(long)]
    versions: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Schema-sensitivity granularity: per-service | per-turn.
    #[arg(long)]
    sensitivity: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("sdt: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::ValidatePack(args) => cmd_validate_pack(args),
        Command::Compile(args) => cmd_compile(args),
        Command::Split(args) => cmd_split(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Robustness(args) => {
            let config = build_config(&args)?;
            let (report, manifest) = run_robustness(&config)?;
            print!("{}", report.to_table());
            eprintln!("report written to {}", manifest.report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let config = build_config(&args)?;
            let outcome = run_experiment(&config)?;
            print!("{}", outcome.aggregate.to_table());
            eprintln!(
                "report written to {}",
                outcome.manifest.report_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_validate_pack(args: ValidatePackArgs) -> anyhow::Result<ExitCode> {
    let pack = load_pack(&args.pack)?;
    let schemas = load_schemas(&args.schemas)?;
    let diagnostics = validate_pack(&pack, &schemas)?;
    for diagnostic in &diagnostics {
        println!("{diagnostic}");
    }
    if diagnostics.is_empty() {
        eprintln!("pack covers every schema slot");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} coverage gap(s)", diagnostics.len());
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_compile(args: CompileArgs) -> anyhow::Result<ExitCode> {
    let split: Split = args.split.parse()?;
    let variant: VariantId = args.variant.parse()?;
    let spec = args.format.build(None)?;

    let mut corpus = load_corpus(&args.data, split)?;
    let mut pack = match &args.pack {
        Some(path) => load_pack(path)?,
        None => sdt_core::PromptPack::new(),
    };
    if variant != VariantId::Orig {
        let root = args.variant_root.as_deref().unwrap_or(&args.data);
        let variants = sdt_core::corpus::load_variant_schemas(root)?;
        let schemas = &variants[&variant];
        pack = sdt_core::pack::translate_pack(&pack, &corpus.schemas, schemas)?;
        corpus = sdt_core::corpus::translate_corpus(&corpus, schemas)?;
    }

    let mut instances = compile_corpus(&corpus, &pack, &spec, args.version, variant)?;
    instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let records: Vec<InstanceRecord> = instances.iter().map(InstanceRecord::from).collect();
    emit_jsonl(args.out.as_deref(), &records)?;
    eprintln!("{} instances", records.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(args: SplitArgs) -> anyhow::Result<ExitCode> {
    let split: Split = args.split.parse()?;
    let corpus = load_corpus(&args.data, split)?;

    match args.mode.as_str() {
        "k-shot" => {
            let k = args.k.context("--k is required for k-shot mode")?;
            let spec = SamplingSpec {
                mode: SamplingMode::KShotPerService { k },
                seed: args.seed,
            };
            let ids = select_dialogue_ids(&corpus, &spec)?;
            emit_lines(args.out.as_deref(), ids.iter())?;
            let per_service = kshot_selection(&corpus, k, args.seed);
            for (service, picked) in per_service {
                eprintln!("{service}: {} dialogue(s)", picked.len());
            }
        }
        "fraction" => {
            let fraction = args
                .fraction
                .context("--fraction is required for fraction mode")?;
            let spec = SamplingSpec {
                mode: SamplingMode::UniformFraction { fraction },
                seed: args.seed,
            };
            let ids = select_dialogue_ids(&corpus, &spec)?;
            emit_lines(args.out.as_deref(), ids.iter())?;
            eprintln!("{} of {} dialogues", ids.len(), corpus.dialogues.len());
        }
        "holdout" => {
            let domain = args
                .domain
                .context("--domain is required for holdout mode")?;
            let test_corpus = match &args.test_data {
                Some(path) => load_corpus(path, Split::Test)?,
                None => corpus.clone(),
            };
            let split = leave_one_out(&corpus, &test_corpus, &domain)?;
            emit_lines(
                args.out.as_deref(),
                split.train.dialogues.iter().map(|d| &d.dialogue_id),
            )?;
            if let Some(eval_out) = &args.eval_out {
                emit_lines(
                    Some(eval_out.as_path()),
                    split.eval.dialogues.iter().map(|d| &d.dialogue_id),
                )?;
            }
            eprintln!(
                "train: {} dialogues, eval: {} dialogues",
                split.train.dialogues.len(),
                split.eval.dialogues.len()
            );
        }
        other => bail!("unknown split mode '{other}' (expected k-shot, fraction, or holdout)"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(args: InferArgs) -> anyhow::Result<ExitCode> {
    let kind: BackendKind = args.backend.parse()?;
    let records: Vec<InstanceRecord> = read_jsonl(&args.instances)?;

    let spec = match kind {
        BackendKind::Null => args.format.build(None)?,
        // Other backends never look at the format; compile settings travel
        // with the instance records.
        _ => args.format.build(Some(FormatFamily::SdtSeq))?,
    };
    let schemas = match &args.schemas {
        Some(path) => load_schemas(path)?,
        None => Default::default(),
    };
    if kind == BackendKind::Null && args.schemas.is_none() && !spec.family.is_independent() {
        bail!("null backend over a sequential family needs --schemas to shape its answers");
    }

    let config = BackendConfig {
        kind: Some(kind),
        replay_path: args.replay.clone(),
        remote: args.endpoint.as_ref().map(|endpoint| RemoteConfig {
            endpoint: endpoint.clone(),
            batch_size: args.batch_size,
            max_in_flight: args.max_in_flight,
            ..RemoteConfig::default()
        }),
    };
    let responses = run_backend(kind, &records, &config, &schemas, &spec)?;
    let raw: Vec<RawOutputRecord> = responses
        .iter()
        .map(|r| RawOutputRecord {
            instance_id: r.instance_id.clone(),
            raw_output: r.raw_output.clone(),
        })
        .collect();
    emit_jsonl(args.out.as_deref(), &raw)?;
    let failures = responses.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("{} of {} instances failed", failures, responses.len());
    }
    eprintln!("{} outputs", raw.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<ExitCode> {
    let split: Split = args.split.parse()?;
    let matcher: MatchPolicy = args.matcher.parse()?;
    let spec = args.format.build(None)?;

    let corpus = load_corpus(&args.data, split)?;
    let instances: Vec<InstanceRecord> = read_jsonl(&args.instances)?;
    let raw: Vec<RawOutputRecord> = read_jsonl(&args.outputs)?;
    let responses: Vec<sdt_core::BackendResponse> = raw
        .iter()
        .map(|r| sdt_core::BackendResponse {
            instance_id: r.instance_id.clone(),
            raw_output: r.raw_output.clone(),
            latency_ms: 0,
            error: None,
        })
        .collect();

    let seen_services: BTreeSet<String> = match &args.train_data {
        Some(path) => load_schemas(path)?.into_keys().collect(),
        None => BTreeSet::new(),
    };

    let predictions = parse_responses(&responses, &instances, &corpus, &spec);
    let (judgements, breakdown) = judge_predictions(
        &predictions,
        &instances,
        &corpus,
        &spec,
        matcher,
        &seen_services,
    )?;
    let report = MetricsReport::from_breakdown(&breakdown);

    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let parsed: Vec<ParsedRecord> = predictions
                .iter()
                .map(|p| ParsedRecord::new(&p.instance_id, &p.raw_output, &p.parsed))
                .collect();
            write_jsonl(&dir.join("parsed.jsonl"), &parsed)?;
            write_jsonl(&dir.join("judgements.jsonl"), &judgements)?;
            std::fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            std::fs::write(dir.join("report.txt"), report.to_table())?;
            eprintln!("report written to {}", dir.join("report.json").display());
        }
        None => print!("{}", report.to_table()),
    }
    Ok(ExitCode::SUCCESS)
}

fn build_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    args.format.apply_overrides(&mut config.format)?;
    if let Some(backend) = &args.backend {
        config.backend.kind = Some(backend.parse()?);
    }
    if let Some(variant) = &args.variant {
        config.variant = variant.parse()?;
    }
    if let Some(seed) = args.seed {
        if let Some(sampling) = &mut config.sampling {
            sampling.seed = seed;
        }
    }
    if let Some(versions) = &args.versions {
        config.versions = versions
            .split(',')
            .map(|v| v.trim().parse::<u32>().context("bad version list"))
            .collect::<anyhow::Result<Vec<u32>>>()?;
    }
    if let Some(out_dir) = &args.out_dir {
        config.out_dir = out_dir.clone();
    }
    if let Some(granularity) = &args.sensitivity {
        config.sensitivity = granularity.parse::<SensitivityGranularity>()?;
    }
    Ok(config)
}

fn emit_jsonl<T: serde::Serialize>(
    out: Option<&std::path::Path>,
    records: &[T],
) -> anyhow::Result<()> {
    match out {
        Some(path) => write_jsonl(path, records)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for record in records {
                serde_json::to_writer(&mut lock, record)?;
                lock.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn emit_lines<'a>(
    out: Option<&std::path::Path>,
    lines: impl Iterator<Item = &'a String>,
) -> anyhow::Result<()> {
    let mut body = String::new();
    for line in lines {
        body.push_str(line);
        body.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}
