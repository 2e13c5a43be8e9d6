//! Core library for compiling schema-guided dialogue corpora into
//! demonstration-based ("show") and description-based ("tell") seq2seq model
//! inputs, parsing decoded outputs back into dialogue states, and scoring
//! them with joint goal accuracy, leave-one-out, robustness, and
//! confidence-interval statistics.
//!
//! Modules follow the pipeline:
//!
//! - [`corpus`] — load and validate schemas, dialogues, and schema variants
//! - [`pack`] — authored demonstration dialogues and their coverage rules
//! - [`compiler`] — render (prompt, context, target) instances per format
//! - [`codec`] — parse raw decoded strings back into states, totally
//! - [`backend`] — oracle/null/replay/remote sources of raw outputs
//! - [`metrics`] — JGA, seen/unseen, leave-one-out, schema sensitivity, CIs
//! - [`sampling`] — k-shot, fractional, and leave-one-out data regimes
//! - [`records`] — line-delimited JSON interchange for all artifacts
//! - [`runner`] — end-to-end orchestration from a declarative config

pub mod backend;
pub mod codec;
pub mod compiler;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod pack;
pub mod records;
pub mod runner;
pub mod sampling;
pub mod synth;

pub use backend::{BackendConfig, BackendKind, BackendRequest, BackendResponse, RemoteConfig};
pub use codec::{Diagnostic, DiagnosticKind, ParsedState, Prediction};
pub use compiler::{
    AnnotationPosition, CategoricalMode, CompiledInstance, FormatFamily, FormatSpec, Provenance,
    SlotNaming, TargetSlots,
};
pub use corpus::{
    Corpus, Dialogue, DialogueState, DialogueTurn, Frame, ServiceSchema, SlotSpec, Speaker, Split,
    VariantId,
};
pub use error::{Error, Result};
pub use metrics::{MatchPolicy, MetricsReport, TurnJudgement};
pub use pack::{AnnotatedExample, CoverageDiagnostic, PromptPack, SlotExample};
pub use records::{InstanceRecord, ParsedRecord, RawOutputRecord};
pub use runner::{ExperimentConfig, ExperimentOutcome, RunManifest};
pub use sampling::{SamplingMode, SamplingSpec};
