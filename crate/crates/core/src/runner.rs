//! End-to-end experiment orchestration: load, sample, compile, infer, parse,
//! assemble, judge, report.
//!
//! A run is described by a declarative [`ExperimentConfig`]. Every stage
//! persists its artifact under the output directory with a stable name
//! before the next stage starts, so a failed run leaves its partial
//! artifacts behind and a finished run can be replayed byte-identically
//! from its raw-output dump.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{run_backend, BackendConfig, BackendKind, BackendResponse};
use crate::codec::{
    assemble_turn_state, merge_domains, parse_output, Diagnostic, DiagnosticKind, ParsedState,
    Prediction,
};
use crate::compiler::{compile_corpus, FormatSpec, Provenance};
use crate::corpus::{
    load_corpus, load_schemas, load_variant_schemas, translate_corpus, Corpus, Split, VariantId,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_trials, compute_jga, compute_rel_diff, compute_schema_sensitivity, judge_turn,
    ConfidenceInterval, JgaBreakdown, MatchPolicy, MetricsReport, RobustnessReport,
    SensitivityGranularity, TurnJudgement,
};
use crate::pack::{load_pack, translate_pack, validate_pack, PromptPack};
use crate::records::{InstanceRecord, ParsedRecord, RawOutputRecord};
use crate::sampling::{sample_corpus, SamplingSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// Split directory holding `schema.json` and `dialogues_*.json`.
    pub eval_root: PathBuf,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    /// Training split directory; used to derive the seen-service set and,
    /// when sampling, as the sampling source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_root: Option<PathBuf>,
    /// Directory containing the `v1/..v5/` variant schema directories.
    /// Defaults to `eval_root`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_root: Option<PathBuf>,
}

fn default_eval_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Prompt pack directory; required for demonstration-based families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pack_path: Option<PathBuf>,
    pub format: FormatSpec,
    /// Prompt versions to run; reports are aggregated across them.
    #[serde(default = "default_versions")]
    pub versions: Vec<u32>,
    /// Schema variant to evaluate under (single-variant runs).
    #[serde(default = "default_variant")]
    pub variant: VariantId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSpec>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub matcher: MatchPolicy,
    #[serde(default)]
    pub sensitivity: SensitivityGranularity,
    pub out_dir: PathBuf,
}

fn default_versions() -> Vec<u32> {
    vec![1]
}

fn default_variant() -> VariantId {
    VariantId::Orig
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        if self.versions.is_empty() {
            return Err(Error::Config("version list must be non-empty".into()));
        }
        if !self.data.eval_root.is_dir() {
            return Err(Error::Config(format!(
                "eval_root '{}' is not a directory",
                self.data.eval_root.display()
            )));
        }
        if let Some(train) = &self.data.train_root {
            if !train.is_dir() {
                return Err(Error::Config(format!(
                    "train_root '{}' is not a directory",
                    train.display()
                )));
            }
        }
        if self.format.family.needs_pack() && self.pack_path.is_none() {
            return Err(Error::Config(format!(
                "format {} needs a prompt pack; set pack_path",
                self.format.family
            )));
        }
        if let Some(pack) = &self.pack_path {
            if !pack.is_dir() {
                return Err(Error::Config(format!(
                    "pack_path '{}' is not a directory",
                    pack.display()
                )));
            }
        }
        if let Some(sampling) = &self.sampling {
            sampling.validate()?;
        }
        self.backend_kind()?;
        Ok(())
    }

    pub fn backend_kind(&self) -> Result<BackendKind> {
        self.backend
            .kind
            .ok_or_else(|| Error::Config("backend.kind is not set".into()))
    }

    /// Hash of the full configuration, recorded in the run manifest.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Bookkeeping for one finished (or aborted) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub instance_count: usize,
    pub prediction_count: usize,
    pub judgement_count: usize,
    pub judged_turn_count: usize,
    pub stage_millis: BTreeMap<String, u64>,
    pub diagnostics_by_kind: BTreeMap<String, usize>,
    pub report_path: PathBuf,
}

/// Per-version outputs of the evaluation pipeline.
#[derive(Debug)]
pub struct VersionArtifacts {
    pub version: u32,
    pub instances: Vec<InstanceRecord>,
    pub responses: Vec<BackendResponse>,
    pub predictions: Vec<Prediction>,
    pub judgements: Vec<TurnJudgement>,
    pub breakdown: JgaBreakdown,
    pub report: MetricsReport,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub per_version: BTreeMap<u32, MetricsReport>,
    pub aggregate: MetricsReport,
    pub manifest: RunManifest,
}

/// Accumulates wall-clock time per pipeline stage and tags errors with the
/// stage they occurred in.
pub struct StageClock {
    millis: BTreeMap<String, u64>,
}

impl Default for StageClock {
    fn default() -> Self {
        Self::new()
    }
}

impl StageClock {
    pub fn new() -> Self {
        StageClock {
            millis: BTreeMap::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage_name(stage)));
        let elapsed = started.elapsed().as_millis() as u64;
        *self.millis.entry(stage.to_string()).or_insert(0) += elapsed;
        out
    }
}

fn stage_name(stage: &str) -> &'static str {
    match stage {
        "load" => "load",
        "sample" => "sample",
        "validate-pack" => "validate-pack",
        "compile" => "compile",
        "infer" => "infer",
        "parse" => "parse",
        "judge" => "judge",
        "aggregate" => "aggregate",
        "persist" => "persist",
        _ => "run",
    }
}

/// Runs the full pipeline for one prompt version over an already loaded and
/// prepared corpus.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_version(
    corpus: &Corpus,
    pack: &PromptPack,
    spec: &FormatSpec,
    version: u32,
    variant: VariantId,
    backend_kind: BackendKind,
    backend_config: &BackendConfig,
    matcher: MatchPolicy,
    seen_services: &BTreeSet<String>,
    clock: &mut StageClock,
) -> Result<VersionArtifacts> {
    let compiled = clock.time("compile", || {
        let mut compiled = compile_corpus(corpus, pack, spec, version, variant)?;
        compiled.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        Ok(compiled)
    })?;
    let instances: Vec<InstanceRecord> = compiled.iter().map(InstanceRecord::from).collect();

    let responses = clock.time("infer", || {
        run_backend(
            backend_kind,
            &instances,
            backend_config,
            &corpus.schemas,
            spec,
        )
    })?;
    if responses.len() != instances.len() {
        return Err(Error::Validation(format!(
            "conservation violated: {} instances but {} responses",
            instances.len(),
            responses.len()
        ))
        .in_stage("infer"));
    }

    let predictions = clock.time("parse", || {
        Ok(parse_responses(&responses, &instances, corpus, spec))
    })?;

    let (judgements, breakdown) = clock.time("judge", || {
        judge_predictions(
            &predictions,
            &instances,
            corpus,
            spec,
            matcher,
            seen_services,
        )
    })?;

    let report = MetricsReport::from_breakdown(&breakdown);
    Ok(VersionArtifacts {
        version,
        instances,
        responses,
        predictions,
        judgements,
        breakdown,
        report,
    })
}

/// Parses backend responses against the schemas that govern each instance.
/// Backend-side failures surface as empty-output diagnostics.
pub fn parse_responses(
    responses: &[BackendResponse],
    instances: &[InstanceRecord],
    corpus: &Corpus,
    spec: &FormatSpec,
) -> Vec<Prediction> {
    let by_id: BTreeMap<&str, &InstanceRecord> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    responses
        .iter()
        .map(|response| {
            let mut parsed = match by_id.get(response.instance_id.as_str()) {
                Some(instance) => {
                    let schema = &corpus.schemas[&instance.provenance.service_name];
                    parse_output(
                        &response.raw_output,
                        schema,
                        instance.provenance.slot_name.as_deref(),
                        spec,
                    )
                }
                None => ParsedState::default(),
            };
            if let Some(error) = &response.error {
                parsed.diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::EmptyOutput,
                    detail: error.clone(),
                });
            }
            Prediction {
                instance_id: response.instance_id.clone(),
                raw_output: response.raw_output.clone(),
                parsed,
            }
        })
        .collect()
}

/// Assembles per-turn states from predictions and judges every frame of the
/// corpus against them.
pub fn judge_predictions(
    predictions: &[Prediction],
    instances: &[InstanceRecord],
    corpus: &Corpus,
    spec: &FormatSpec,
    matcher: MatchPolicy,
    seen_services: &BTreeSet<String>,
) -> Result<(Vec<TurnJudgement>, JgaBreakdown)> {
    let provenance_by_id: BTreeMap<&str, &Provenance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), &i.provenance))
        .collect();

    let mut groups: BTreeMap<(String, usize, String), Vec<(Provenance, ParsedState)>> =
        BTreeMap::new();
    for prediction in predictions {
        let provenance = provenance_by_id
            .get(prediction.instance_id.as_str())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "prediction for unknown instance '{}'",
                    prediction.instance_id
                ))
            })?;
        groups
            .entry(provenance.turn_key())
            .or_default()
            .push(((*provenance).clone(), prediction.parsed.clone()));
    }

    let mut judgements = Vec::new();
    for dialogue in &corpus.dialogues {
        for (turn_index, turn) in dialogue.turns.iter().enumerate() {
            if turn.frames.is_empty() {
                continue;
            }
            // Per-service assembly, then a keyed multi-domain merge; the
            // merge also rejects duplicate frames for one service.
            let mut per_service = Vec::with_capacity(turn.frames.len());
            for frame in &turn.frames {
                let key = (
                    dialogue.dialogue_id.clone(),
                    turn_index,
                    frame.service.clone(),
                );
                let schema = &corpus.schemas[&frame.service];
                let assembled = match groups.get(&key) {
                    Some(parts) => assemble_turn_state(parts, schema, spec)?,
                    None => {
                        let mut s = ParsedState::default();
                        s.diagnostics.push(Diagnostic {
                            kind: DiagnosticKind::EmptyOutput,
                            detail: "no predictions for this turn".into(),
                        });
                        s
                    }
                };
                per_service.push((frame.service.clone(), assembled));
            }
            let merged = merge_domains(per_service)?;

            for frame in &turn.frames {
                let schema = &corpus.schemas[&frame.service];
                judgements.push(judge_turn(
                    &dialogue.dialogue_id,
                    turn_index,
                    &merged[&frame.service],
                    &frame.state,
                    schema,
                    matcher,
                ));
            }
        }
    }
    judgements.sort_by_key(|j| j.turn_key());

    let breakdown = compute_jga(&judgements, seen_services)?;
    Ok((judgements, breakdown))
}

fn persist_version(dir: &Path, artifacts: &VersionArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.into(),
        source,
    })?;
    crate::records::write_jsonl(&dir.join("instances.jsonl"), &artifacts.instances)?;
    let raw: Vec<RawOutputRecord> = artifacts
        .responses
        .iter()
        .map(|r| RawOutputRecord {
            instance_id: r.instance_id.clone(),
            raw_output: r.raw_output.clone(),
        })
        .collect();
    crate::records::write_jsonl(&dir.join("raw_outputs.jsonl"), &raw)?;
    let parsed: Vec<ParsedRecord> = artifacts
        .predictions
        .iter()
        .map(|p| ParsedRecord::new(&p.instance_id, &p.raw_output, &p.parsed))
        .collect();
    crate::records::write_jsonl(&dir.join("parsed.jsonl"), &parsed)?;
    crate::records::write_jsonl(&dir.join("judgements.jsonl"), &artifacts.judgements)?;
    write_report(dir, &artifacts.report)?;
    Ok(())
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|source| Error::Json {
        path: dir.join("report.json"),
        source,
    })?;
    fs::write(dir.join("report.json"), json + "\n").map_err(|source| Error::Io {
        path: dir.join("report.json"),
        source,
    })?;
    fs::write(dir.join("report.txt"), report.to_table()).map_err(|source| Error::Io {
        path: dir.join("report.txt"),
        source,
    })?;
    Ok(())
}

fn count_diagnostics(predictions: &[Prediction]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for p in predictions {
        for d in &p.parsed.diagnostics {
            *out.entry(d.kind.as_str().to_string()).or_insert(0) += 1;
        }
    }
    out
}

/// Loads corpus, pack, and seen-service set per the config, applying
/// sampling and variant translation as configured.
fn prepare(
    config: &ExperimentConfig,
    clock: &mut StageClock,
) -> Result<(Corpus, PromptPack, BTreeSet<String>)> {
    let mut corpus = clock.time("load", || {
        load_corpus(&config.data.eval_root, config.data.eval_split)
    })?;

    if let Some(sampling) = &config.sampling {
        corpus = clock.time("sample", || sample_corpus(&corpus, sampling))?;
    }

    let mut pack = match &config.pack_path {
        Some(path) => clock.time("load", || load_pack(path))?,
        None => PromptPack::new(),
    };

    if config.variant != VariantId::Orig {
        (corpus, pack) = clock.time("load", || {
            let root = config
                .data
                .variant_root
                .as_ref()
                .unwrap_or(&config.data.eval_root);
            let variants = load_variant_schemas(root)?;
            let variant_schemas = &variants[&config.variant];
            let translated_pack = translate_pack(&pack, &corpus.schemas, variant_schemas)?;
            Ok((translate_corpus(&corpus, variant_schemas)?, translated_pack))
        })?;
    }

    if config.format.family.needs_pack() {
        clock.time("validate-pack", || {
            let diagnostics = validate_pack(&pack, &corpus.schemas)?;
            let relevant: Vec<_> = diagnostics
                .iter()
                .filter(|d| corpus.schemas.contains_key(&d.service_name))
                .collect();
            if !relevant.is_empty() {
                let lines: Vec<String> = relevant.iter().map(|d| d.to_string()).collect();
                return Err(Error::Validation(format!(
                    "prompt pack has coverage gaps:\n{}",
                    lines.join("\n")
                )));
            }
            Ok(())
        })?;
    }

    let seen_services = clock.time("load", || {
        Ok(match &config.data.train_root {
            Some(root) => load_schemas(root)?.into_keys().collect(),
            None => BTreeSet::new(),
        })
    })?;

    Ok((corpus, pack, seen_services))
}

/// Runs the end-to-end experiment: one evaluation per prompt version, plus
/// a cross-version aggregate with a Student-t confidence interval.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut clock = StageClock::new();
    let backend_kind = config.backend_kind()?;

    let (corpus, pack, seen_services) = prepare(config, &mut clock)?;

    fs::create_dir_all(&config.out_dir).map_err(|source| Error::Io {
        path: config.out_dir.clone(),
        source,
    })?;

    let mut per_version = BTreeMap::new();
    let mut version_jgas = Vec::new();
    let mut instance_count = 0;
    let mut prediction_count = 0;
    let mut judgement_count = 0;
    let mut diagnostics_by_kind: BTreeMap<String, usize> = BTreeMap::new();

    for &version in &config.versions {
        let artifacts = evaluate_version(
            &corpus,
            &pack,
            &config.format,
            version,
            config.variant,
            backend_kind,
            &config.backend,
            config.matcher,
            &seen_services,
            &mut clock,
        )?;
        let dir = config.out_dir.join(format!("version-{version}"));
        clock.time("persist", || persist_version(&dir, &artifacts))?;

        instance_count += artifacts.instances.len();
        prediction_count += artifacts.predictions.len();
        judgement_count += artifacts.judgements.len();
        for (kind, count) in count_diagnostics(&artifacts.predictions) {
            *diagnostics_by_kind.entry(kind).or_insert(0) += count;
        }
        version_jgas.push(artifacts.breakdown.jga_all());
        per_version.insert(version, artifacts.report.clone());
    }

    let aggregate = clock.time("aggregate", || {
        let mut aggregate = per_version
            .values()
            .next()
            .cloned()
            .expect("versions list is non-empty");
        if config.versions.len() > 1 {
            let (mean, half_width) = aggregate_trials(&version_jgas)?;
            let mut sum_report = aggregate.clone();
            sum_report.jga_all = mean;
            sum_report.ci = Some(ConfidenceInterval {
                mean,
                half_width,
                n: version_jgas.len(),
            });
            // Seen/unseen in the aggregate are plain means across versions.
            sum_report.jga_seen = mean_of(per_version.values().map(|r| r.jga_seen));
            sum_report.jga_unseen = mean_of(per_version.values().map(|r| r.jga_unseen));
            sum_report.per_domain = mean_per_domain(per_version.values());
            aggregate = sum_report;
        }
        Ok(aggregate)
    })?;

    clock.time("persist", || {
        let json = serde_json::to_string_pretty(&aggregate).map_err(|source| Error::Json {
            path: config.out_dir.join("report.json"),
            source,
        })?;
        fs::write(config.out_dir.join("report.json"), json + "\n").map_err(|source| Error::Io {
            path: config.out_dir.join("report.json"),
            source,
        })?;
        fs::write(config.out_dir.join("report.txt"), aggregate.to_table()).map_err(|source| {
            Error::Io {
                path: config.out_dir.join("report.txt"),
                source,
            }
        })?;
        Ok(())
    })?;

    // Conservation checks: every compiled instance produced exactly one
    // prediction, every judged frame produced exactly one judgement.
    if prediction_count != instance_count {
        return Err(Error::Validation(format!(
            "conservation violated: {instance_count} instances vs {prediction_count} predictions"
        )));
    }
    let judged_turn_count = corpus.frame_count() * config.versions.len();
    if judgement_count != judged_turn_count {
        return Err(Error::Validation(format!(
            "conservation violated: {judged_turn_count} judgeable frames vs {judgement_count} judgements"
        )));
    }

    let manifest = RunManifest {
        config_hash: config.config_hash(),
        instance_count,
        prediction_count,
        judgement_count,
        judged_turn_count,
        stage_millis: clock.millis.clone(),
        diagnostics_by_kind,
        report_path: config.out_dir.join("report.json"),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: config.out_dir.join("manifest.json"),
        source,
    })?;
    fs::write(config.out_dir.join("manifest.json"), manifest_json + "\n").map_err(|source| {
        Error::Io {
            path: config.out_dir.join("manifest.json"),
            source,
        }
    })?;

    Ok(ExperimentOutcome {
        per_version,
        aggregate,
        manifest,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let collected: Vec<f64> = values.flatten().collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

fn mean_per_domain<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for report in reports {
        for (domain, jga) in &report.per_domain {
            let entry = sums.entry(domain.clone()).or_insert((0.0, 0));
            entry.0 += jga;
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}

/// Runs the schema-robustness evaluation: the same corpus and predictions
/// pipeline under the original schemas and each of the five paraphrase
/// variants, reporting original JGA, variant mean, relative difference, and
/// schema sensitivity.
///
/// The first configured prompt version is used. With a replay backend,
/// `backend.replay_path` names the *root* of a previous robustness run; each
/// variant replays `<root>/variant-<id>/raw_outputs.jsonl`.
pub fn run_robustness(config: &ExperimentConfig) -> Result<(MetricsReport, RunManifest)> {
    config.validate()?;
    let mut clock = StageClock::new();
    let backend_kind = config.backend_kind()?;
    let version = config.versions[0];

    let base = ExperimentConfig {
        variant: VariantId::Orig,
        ..config.clone()
    };
    let (corpus, pack, seen_services) = prepare(&base, &mut clock)?;

    let variant_root = config
        .data
        .variant_root
        .as_ref()
        .unwrap_or(&config.data.eval_root);
    let variant_schemas = clock.time("load", || load_variant_schemas(variant_root))?;

    fs::create_dir_all(&config.out_dir).map_err(|source| Error::Io {
        path: config.out_dir.clone(),
        source,
    })?;

    let mut per_variant_judgements: BTreeMap<VariantId, Vec<TurnJudgement>> = BTreeMap::new();
    let mut per_variant_jga: BTreeMap<VariantId, f64> = BTreeMap::new();
    let mut instance_count = 0;
    let mut prediction_count = 0;
    let mut judgement_count = 0;
    let mut diagnostics_by_kind: BTreeMap<String, usize> = BTreeMap::new();

    for variant in VariantId::ALL {
        let (variant_corpus, variant_pack) = if variant == VariantId::Orig {
            (corpus.clone(), pack.clone())
        } else {
            clock.time("load", || {
                let schemas = &variant_schemas[&variant];
                Ok((
                    translate_corpus(&corpus, schemas)?,
                    translate_pack(&pack, &corpus.schemas, schemas)?,
                ))
            })?
        };

        let mut backend_config = config.backend.clone();
        if backend_kind == BackendKind::Replay {
            let root = config.backend.replay_path.as_ref().ok_or_else(|| {
                Error::Config("replay backend requires a replay dump root".into())
            })?;
            backend_config.replay_path = Some(
                root.join(format!("variant-{variant}"))
                    .join("raw_outputs.jsonl"),
            );
        }

        let artifacts = evaluate_version(
            &variant_corpus,
            &variant_pack,
            &config.format,
            version,
            variant,
            backend_kind,
            &backend_config,
            config.matcher,
            &seen_services,
            &mut clock,
        )?;
        let dir = config.out_dir.join(format!("variant-{variant}"));
        clock.time("persist", || persist_version(&dir, &artifacts))?;

        instance_count += artifacts.instances.len();
        prediction_count += artifacts.predictions.len();
        judgement_count += artifacts.judgements.len();
        for (kind, count) in count_diagnostics(&artifacts.predictions) {
            *diagnostics_by_kind.entry(kind).or_insert(0) += count;
        }
        per_variant_jga.insert(variant, artifacts.breakdown.jga_all());
        per_variant_judgements.insert(variant, artifacts.judgements);
    }

    let report = clock.time("aggregate", || {
        let jga_orig = per_variant_jga[&VariantId::Orig];
        let variant_values: Vec<f64> = VariantId::VARIANTS
            .iter()
            .map(|v| per_variant_jga[v])
            .collect();
        let jga_variant_mean = variant_values.iter().sum::<f64>() / variant_values.len() as f64;
        let rel_diff = compute_rel_diff(jga_orig, jga_variant_mean)?;
        let ss_jga = compute_schema_sensitivity(&per_variant_judgements, config.sensitivity)?;

        let orig_judgements = &per_variant_judgements[&VariantId::Orig];
        let breakdown = compute_jga(orig_judgements, &seen_services)?;
        let mut report = MetricsReport::from_breakdown(&breakdown);
        report.robustness = Some(RobustnessReport {
            jga_orig,
            jga_variants: per_variant_jga
                .iter()
                .filter(|(v, _)| **v != VariantId::Orig)
                .map(|(v, jga)| (*v, *jga))
                .collect(),
            jga_variant_mean,
            rel_diff,
            ss_jga,
            granularity: config.sensitivity,
        });
        Ok(report)
    })?;

    clock.time("persist", || write_report(&config.out_dir, &report))?;

    let manifest = RunManifest {
        config_hash: config.config_hash(),
        instance_count,
        prediction_count,
        judgement_count,
        judged_turn_count: corpus.frame_count() * VariantId::ALL.len(),
        stage_millis: clock.millis.clone(),
        diagnostics_by_kind,
        report_path: config.out_dir.join("report.json"),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: config.out_dir.join("manifest.json"),
        source,
    })?;
    fs::write(config.out_dir.join("manifest.json"), manifest_json + "\n").map_err(|source| {
        Error::Io {
            path: config.out_dir.join("manifest.json"),
            source,
        }
    })?;

    Ok((report, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults_and_sampling() {
        let config = ExperimentConfig::from_toml_str(
            r#"
                out_dir = "out"

                [data]
                eval_root = "data/test"

                [format]
                family = "sdt-seq"

                [sampling]
                mode = "k-shot-per-service"
                k = 10
                seed = 7

                [backend]
                kind = "oracle"
            "#,
        )
        .unwrap();
        assert_eq!(config.format.family, crate::compiler::FormatFamily::SdtSeq);
        assert_eq!(config.format.demos_per_prompt, 1);
        assert_eq!(config.versions, vec![1]);
        assert_eq!(config.variant, VariantId::Orig);
        assert_eq!(config.matcher, MatchPolicy::NormalizedExact);
        match config.sampling {
            Some(SamplingSpec {
                mode: crate::sampling::SamplingMode::KShotPerService { k },
                seed,
            }) => {
                assert_eq!(k, 10);
                assert_eq!(seed, 7);
            }
            other => panic!("unexpected sampling {other:?}"),
        }
        assert_eq!(config.backend.kind, Some(BackendKind::Oracle));
    }

    #[test]
    fn config_hash_is_stable_and_input_sensitive() {
        let toml = r#"
            out_dir = "out"

            [data]
            eval_root = "data/test"

            [format]
            family = "sdt-ind"

            [backend]
            kind = "null"
        "#;
        let a = ExperimentConfig::from_toml_str(toml).unwrap();
        let b = ExperimentConfig::from_toml_str(toml).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());

        let mut c = ExperimentConfig::from_toml_str(toml).unwrap();
        c.versions = vec![2];
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn validate_rejects_missing_paths_and_empty_versions() {
        let mut config = ExperimentConfig::from_toml_str(
            r#"
                out_dir = "out"

                [data]
                eval_root = "/nonexistent"

                [format]
                family = "desc-seq"

                [backend]
                kind = "oracle"
            "#,
        )
        .unwrap();
        assert!(config.validate().is_err());
        config.versions = vec![];
        assert!(config.validate().is_err());
    }

    #[test]
    fn demonstration_families_require_a_pack_path() {
        let config = ExperimentConfig::from_toml_str(
            r#"
                out_dir = "out"

                [data]
                eval_root = "."

                [format]
                family = "sdt-seq"

                [backend]
                kind = "oracle"
            "#,
        )
        .unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("pack"), "{err}");
    }
}
