//! Backends: anything that turns a model input string into a raw output
//! string.
//!
//! Four kinds are built in. `oracle` echoes each instance's target (the
//! end-to-end soundness probe), `null` answers as if every slot were
//! inactive, `replay` serves a previously dumped output file, and `remote`
//! posts batched requests to an inference HTTP endpoint. Whatever order work
//! completes in, responses are emitted sorted by instance id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::compiler::{render_target, FormatSpec};
use crate::corpus::{DialogueState, ServiceSchema};
use crate::error::{Error, Result};
use crate::records::{InstanceRecord, RawOutputRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Null,
    Replay,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(BackendKind::Oracle),
            "null" => Ok(BackendKind::Null),
            "replay" => Ok(BackendKind::Replay),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::Config(format!("unknown backend '{other}'"))),
        }
    }
}

/// One inference request on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub instance_id: String,
    pub input: String,
}

/// One raw model output, with transport bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub instance_id: String,
    pub raw_output: String,
    pub latency_ms: u64,
    /// Set when the backend could not obtain an output for this instance
    /// (an exhausted remote retry, for example). The raw output is then
    /// empty and downstream parsing records the failure as a diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    /// Name of the environment variable holding a bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    /// When set, request/response pairs are appended here as JSON lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            batch_size: 32,
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff_ms: 500,
            auth_token_env: None,
            trace_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: Option<BackendKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

/// Runs a backend over compiled instance records.
///
/// Exactly one response per instance, sorted by instance id.
pub fn run_backend(
    kind: BackendKind,
    instances: &[InstanceRecord],
    config: &BackendConfig,
    schemas: &BTreeMap<String, ServiceSchema>,
    format: &FormatSpec,
) -> Result<Vec<BackendResponse>> {
    let mut responses = match kind {
        BackendKind::Oracle => run_oracle(instances),
        BackendKind::Null => run_null(instances, schemas, format)?,
        BackendKind::Replay => {
            let path = config.replay_path.as_ref().ok_or_else(|| {
                Error::Config("replay backend requires a replay dump path".into())
            })?;
            run_replay(instances, path)?
        }
        BackendKind::Remote => {
            let remote = config.remote.as_ref().ok_or_else(|| {
                Error::Config("remote backend requires endpoint configuration".into())
            })?;
            run_remote(instances, remote)?
        }
    };
    responses.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(responses)
}

fn run_oracle(instances: &[InstanceRecord]) -> Vec<BackendResponse> {
    instances
        .iter()
        .map(|i| BackendResponse {
            instance_id: i.instance_id.clone(),
            raw_output: i.target.clone(),
            latency_ms: 0,
            error: None,
        })
        .collect()
}

/// Answers every instance as if no slot were active: the rendered
/// empty-state target for sequential families, `none` for independent ones.
fn run_null(
    instances: &[InstanceRecord],
    schemas: &BTreeMap<String, ServiceSchema>,
    format: &FormatSpec,
) -> Result<Vec<BackendResponse>> {
    let empty = DialogueState::new();
    let mut cache: BTreeMap<String, String> = BTreeMap::new();
    instances
        .iter()
        .map(|i| {
            let raw_output = if format.family.is_independent() {
                "none".to_string()
            } else {
                let service = &i.provenance.service_name;
                if let Some(cached) = cache.get(service) {
                    cached.clone()
                } else {
                    let schema = schemas.get(service).ok_or_else(|| {
                        Error::Config(format!("null backend: unknown service '{service}'"))
                    })?;
                    let rendered = render_target(format, schema, &empty)?;
                    cache.insert(service.clone(), rendered.clone());
                    rendered
                }
            };
            Ok(BackendResponse {
                instance_id: i.instance_id.clone(),
                raw_output,
                latency_ms: 0,
                error: None,
            })
        })
        .collect()
}

/// Serves raw outputs from a previously persisted dump. Every instance must
/// be covered; a gap is a hard error so silent partial replays cannot skew
/// metrics.
fn run_replay(instances: &[InstanceRecord], dump_path: &Path) -> Result<Vec<BackendResponse>> {
    let records: Vec<RawOutputRecord> = crate::records::read_jsonl(dump_path)?;
    let by_id: BTreeMap<&str, &str> = records
        .iter()
        .map(|r| (r.instance_id.as_str(), r.raw_output.as_str()))
        .collect();

    let missing: Vec<&str> = instances
        .iter()
        .filter(|i| !by_id.contains_key(i.instance_id.as_str()))
        .map(|i| i.instance_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::ReplayIncomplete {
            missing: missing.len(),
            total: instances.len(),
            first: missing[0].to_string(),
        });
    }

    Ok(instances
        .iter()
        .map(|i| BackendResponse {
            instance_id: i.instance_id.clone(),
            raw_output: by_id[i.instance_id.as_str()].to_string(),
            latency_ms: 0,
            error: None,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct InferRequest<'a> {
    inputs: Vec<&'a str>,
}

#[derive(Deserialize)]
struct InferResponse {
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    batch_index: usize,
    attempt: u32,
    instance_ids: Vec<&'a str>,
    outcome: &'a str,
}

/// Posts batches to `{endpoint}/infer` with bounded concurrency.
///
/// Workers pull batch indices from a shared counter, so at most
/// `max_in_flight` requests are outstanding. Transport errors and non-200
/// statuses are retried with exponential backoff; when retries are
/// exhausted the whole batch degrades to per-instance error responses and
/// the run continues. A response with the wrong output count is a protocol
/// error and aborts immediately.
fn run_remote(instances: &[InstanceRecord], config: &RemoteConfig) -> Result<Vec<BackendResponse>> {
    if config.endpoint.is_empty() {
        return Err(Error::Config("remote backend endpoint is empty".into()));
    }
    let batch_size = config.batch_size.max(1);
    let workers = config.max_in_flight.max(1);
    let url = format!("{}/infer", config.endpoint.trim_end_matches('/'));

    let auth_token = match &config.auth_token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            Error::Config(format!(
                "auth token environment variable '{var}' is not set"
            ))
        })?),
        None => None,
    };

    let batches: Vec<&[InstanceRecord]> = instances.chunks(batch_size).collect();
    let results: Mutex<Vec<Option<Result<Vec<BackendResponse>>>>> =
        Mutex::new((0..batches.len()).map(|_| None).collect());
    let trace: Option<Mutex<std::fs::File>> = match &config.trace_path {
        Some(path) => Some(Mutex::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?,
        )),
        None => None,
    };
    let next_batch = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(batches.len().max(1)) {
            scope.spawn(|| {
                let client = reqwest::blocking::Client::new();
                loop {
                    let index = next_batch.fetch_add(1, Ordering::SeqCst);
                    if index >= batches.len() {
                        break;
                    }
                    let outcome = post_batch(
                        &client,
                        &url,
                        auth_token.as_deref(),
                        batches[index],
                        config,
                        index,
                        trace.as_ref(),
                    );
                    results.lock().expect("worker panicked holding results")[index] = Some(outcome);
                }
            });
        }
    });

    let mut out = Vec::with_capacity(instances.len());
    for slot in results
        .into_inner()
        .expect("worker panicked holding results")
    {
        out.extend(slot.expect("every batch index visited")?);
    }
    Ok(out)
}

fn post_batch(
    client: &reqwest::blocking::Client,
    url: &str,
    auth_token: Option<&str>,
    batch: &[InstanceRecord],
    config: &RemoteConfig,
    batch_index: usize,
    trace: Option<&Mutex<std::fs::File>>,
) -> Result<Vec<BackendResponse>> {
    let requests: Vec<BackendRequest> = batch
        .iter()
        .map(|i| BackendRequest {
            instance_id: i.instance_id.clone(),
            input: i.input.clone(),
        })
        .collect();
    let inputs: Vec<&str> = requests.iter().map(|r| r.input.as_str()).collect();
    let ids: Vec<&str> = requests.iter().map(|r| r.instance_id.as_str()).collect();
    let started = Instant::now();

    let mut last_error = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            let backoff = config.initial_backoff_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let sent = client.post(url).json(&InferRequest {
            inputs: inputs.clone(),
        });
        let sent = match auth_token {
            Some(token) => sent.bearer_auth(token),
            None => sent,
        };
        match sent.send() {
            Ok(response) if response.status().is_success() => {
                let parsed: InferResponse = response.json().map_err(|e| {
                    Error::Protocol(format!("batch {batch_index}: malformed response body: {e}"))
                })?;
                if parsed.outputs.len() != batch.len() {
                    return Err(Error::Protocol(format!(
                        "batch {batch_index}: expected {} outputs, got {}",
                        batch.len(),
                        parsed.outputs.len()
                    )));
                }
                write_trace(trace, batch_index, attempt, &ids, "ok");
                let latency_ms = started.elapsed().as_millis() as u64;
                return Ok(batch
                    .iter()
                    .zip(parsed.outputs)
                    .map(|(i, raw_output)| BackendResponse {
                        instance_id: i.instance_id.clone(),
                        raw_output,
                        latency_ms,
                        error: None,
                    })
                    .collect());
            }
            Ok(response) => {
                last_error = format!("HTTP {}", response.status());
                write_trace(trace, batch_index, attempt, &ids, &last_error);
            }
            Err(e) => {
                last_error = format!("transport: {e}");
                write_trace(trace, batch_index, attempt, &ids, "transport error");
            }
        }
    }

    // Retries exhausted: degrade to per-instance errors, keep the run going.
    let latency_ms = started.elapsed().as_millis() as u64;
    Ok(batch
        .iter()
        .map(|i| BackendResponse {
            instance_id: i.instance_id.clone(),
            raw_output: String::new(),
            latency_ms,
            error: Some(format!(
                "remote inference failed after retries: {last_error}"
            )),
        })
        .collect())
}

fn write_trace(
    trace: Option<&Mutex<std::fs::File>>,
    batch_index: usize,
    attempt: u32,
    instance_ids: &[&str],
    outcome: &str,
) {
    if let Some(file) = trace {
        let line = TraceLine {
            batch_index,
            attempt,
            instance_ids: instance_ids.to_vec(),
            outcome,
        };
        if let (Ok(mut file), Ok(json)) = (file.lock(), serde_json::to_string(&line)) {
            use std::io::Write;
            let _ = writeln!(file, "{json}");
        }
    }
}
