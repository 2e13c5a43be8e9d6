//! Prompt packs: authored demonstration dialogues and single-slot example
//! utterances, the raw material for demonstration-based prompts.
//!
//! A pack holds one or more numbered versions per service. Sequential formats
//! consume [`AnnotatedExample`]s (a short dialogue whose final state touches
//! every slot of the schema); independent formats consume a complete set of
//! [`SlotExample`]s (one utterance per slot). Authoring these is human work;
//! this module only stores and validates them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueState, DialogueTurn, ServiceSchema, Speaker};
use crate::error::{Error, Result};

/// A single annotated example dialogue for one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub service_name: String,
    pub version_id: u32,
    /// Utterance-only turns; frames are always empty.
    pub turns: Vec<DialogueTurn>,
    /// The example dialogue's final state over the full schema.
    pub state: DialogueState,
    /// Optional explicit slot-to-turn attribution for in-line annotation
    /// rendering. Slots not listed fall back to value matching.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slot_turns: BTreeMap<String, usize>,
}

/// A single example utterance showcasing one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotExample {
    pub service_name: String,
    pub slot_name: String,
    pub version_id: u32,
    pub utterance: String,
    pub value: String,
}

/// All authored demonstrations, indexed by service and version.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptPack {
    examples: BTreeMap<String, BTreeMap<u32, AnnotatedExample>>,
    slot_examples: BTreeMap<String, BTreeMap<u32, BTreeMap<String, SlotExample>>>,
}

/// A coverage gap found by [`validate_pack`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageDiagnostic {
    pub service_name: String,
    pub version_id: u32,
    pub scope: CoverageScope,
    pub missing_slots: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageScope {
    /// An annotated example dialogue does not assign every schema slot.
    SeqExample,
    /// A per-slot example set is missing utterances for some slots.
    IndExampleSet,
}

impl fmt::Display for CoverageDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scope = match self.scope {
            CoverageScope::SeqExample => "seq",
            CoverageScope::IndExampleSet => "ind",
        };
        write!(
            f,
            "{}\tv{}\t{}\tmissing: {}",
            self.service_name,
            self.version_id,
            scope,
            self.missing_slots.join(", ")
        )
    }
}

impl PromptPack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an annotated example, enforcing the type's local invariants
    /// (non-empty turns starting with a user utterance, no frames).
    pub fn add_example(&mut self, example: AnnotatedExample) -> Result<()> {
        match example.turns.first() {
            None => {
                return Err(Error::Validation(format!(
                    "example for '{}' v{} has no turns",
                    example.service_name, example.version_id
                )))
            }
            Some(first) if first.speaker != Speaker::User => {
                return Err(Error::Validation(format!(
                    "example for '{}' v{} must start with a USER turn",
                    example.service_name, example.version_id
                )))
            }
            _ => {}
        }
        if example.turns.iter().any(|t| !t.frames.is_empty()) {
            return Err(Error::Validation(format!(
                "example for '{}' v{} must not carry frames",
                example.service_name, example.version_id
            )));
        }
        self.examples
            .entry(example.service_name.clone())
            .or_default()
            .insert(example.version_id, example);
        Ok(())
    }

    pub fn add_slot_example(&mut self, example: SlotExample) -> Result<()> {
        if example.value.trim().is_empty() {
            return Err(Error::Validation(format!(
                "slot example for '{}'/'{}' v{} has an empty value (the slot must be active in the utterance)",
                example.service_name, example.slot_name, example.version_id
            )));
        }
        self.slot_examples
            .entry(example.service_name.clone())
            .or_default()
            .entry(example.version_id)
            .or_default()
            .insert(example.slot_name.clone(), example);
        Ok(())
    }

    /// The exact authored example dialogue for (service, version).
    pub fn select_version(&self, service: &str, version: u32) -> Result<&AnnotatedExample> {
        let per_service = self.examples.get(service).ok_or_else(|| {
            Error::Lookup(format!("no example dialogues for service '{service}'"))
        })?;
        per_service.get(&version).ok_or_else(|| {
            let available: Vec<String> = per_service.keys().map(|v| v.to_string()).collect();
            Error::Lookup(format!(
                "no version {version} for service '{service}' (available: {})",
                available.join(", ")
            ))
        })
    }

    /// The authored single-slot example for (service, slot, version).
    pub fn select_slot_example(
        &self,
        service: &str,
        slot: &str,
        version: u32,
    ) -> Result<&SlotExample> {
        let per_version = self
            .slot_examples
            .get(service)
            .and_then(|m| m.get(&version))
            .ok_or_else(|| {
                let available: Vec<String> = self
                    .slot_examples
                    .get(service)
                    .map(|m| m.keys().map(|v| v.to_string()).collect())
                    .unwrap_or_default();
                Error::Lookup(format!(
                    "no slot examples for service '{service}' version {version} (available: {})",
                    available.join(", ")
                ))
            })?;
        per_version.get(slot).ok_or_else(|| {
            Error::Lookup(format!(
                "no slot example for '{service}'/'{slot}' version {version}"
            ))
        })
    }

    pub fn has_example(&self, service: &str, version: u32) -> bool {
        self.examples
            .get(service)
            .map(|m| m.contains_key(&version))
            .unwrap_or(false)
    }

    pub fn has_complete_slot_set(&self, schema: &ServiceSchema, version: u32) -> bool {
        let Some(set) = self
            .slot_examples
            .get(&schema.service_name)
            .and_then(|m| m.get(&version))
        else {
            return false;
        };
        schema.slots.iter().all(|s| set.contains_key(&s.name))
    }

    pub fn example_versions(&self, service: &str) -> Vec<u32> {
        self.examples
            .get(service)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn services(&self) -> BTreeSet<String> {
        self.examples
            .keys()
            .chain(self.slot_examples.keys())
            .cloned()
            .collect()
    }
}

// ---------------------------------------------------------------------------
// On-disk representation: one JSON document per service
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawPackFile {
    service_name: String,
    #[serde(default)]
    examples: Vec<RawExample>,
    #[serde(default)]
    slot_examples: Vec<RawSlotExample>,
}

#[derive(Deserialize)]
struct RawExample {
    version: u32,
    turns: Vec<RawPackTurn>,
    state: BTreeMap<String, String>,
    #[serde(default)]
    slot_turns: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct RawPackTurn {
    speaker: Speaker,
    utterance: String,
}

#[derive(Deserialize)]
struct RawSlotExample {
    version: u32,
    slot: String,
    utterance: String,
    value: String,
}

/// Loads every `*.json` pack document under `root` (sorted by file name).
pub fn load_pack(root: &Path) -> Result<PromptPack> {
    let mut files: Vec<_> = fs::read_dir(root)
        .map_err(|source| Error::Io {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    files.sort();

    let mut pack = PromptPack::new();
    for file in &files {
        let bytes = fs::read(file).map_err(|source| Error::Io {
            path: file.clone(),
            source,
        })?;
        let raw: RawPackFile = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: file.clone(),
            source,
        })?;
        for ex in raw.examples {
            let turns = ex
                .turns
                .into_iter()
                .map(|t| DialogueTurn {
                    speaker: t.speaker,
                    utterance: t.utterance,
                    frames: vec![],
                })
                .collect();
            let mut state = DialogueState::new();
            for (slot, value) in ex.state {
                state.set(slot, vec![value]);
            }
            pack.add_example(AnnotatedExample {
                service_name: raw.service_name.clone(),
                version_id: ex.version,
                turns,
                state,
                slot_turns: ex.slot_turns,
            })?;
        }
        for se in raw.slot_examples {
            pack.add_slot_example(SlotExample {
                service_name: raw.service_name.clone(),
                slot_name: se.slot,
                version_id: se.version,
                utterance: se.utterance,
                value: se.value,
            })?;
        }
    }
    Ok(pack)
}

/// Re-keys a pack's demonstrations onto a paraphrase variant's slot names,
/// positionally, mirroring corpus translation. Services absent from the
/// original schema map pass through unchanged.
pub fn translate_pack(
    pack: &PromptPack,
    orig: &BTreeMap<String, ServiceSchema>,
    variant: &BTreeMap<String, ServiceSchema>,
) -> Result<PromptPack> {
    let rename = |service: &str, slot: &str| -> Result<String> {
        let (Some(orig_schema), Some(var_schema)) = (orig.get(service), variant.get(service))
        else {
            return Ok(slot.to_string());
        };
        let index = orig_schema.slot_index(slot).ok_or_else(|| {
            Error::Validation(format!("pack slot '{slot}' not in service '{service}'"))
        })?;
        Ok(var_schema.slots[index].name.clone())
    };

    let mut out = PromptPack::new();
    for versions in pack.examples.values() {
        for example in versions.values() {
            let mut translated = example.clone();
            let mut state = DialogueState::new();
            for (slot, values) in &example.state.assignments {
                state
                    .assignments
                    .insert(rename(&example.service_name, slot)?, values.clone());
            }
            translated.state = state;
            let mut slot_turns = BTreeMap::new();
            for (slot, turn) in &example.slot_turns {
                slot_turns.insert(rename(&example.service_name, slot)?, *turn);
            }
            translated.slot_turns = slot_turns;
            out.add_example(translated)?;
        }
    }
    for versions in pack.slot_examples.values() {
        for set in versions.values() {
            for example in set.values() {
                let mut translated = example.clone();
                translated.slot_name = rename(&example.service_name, &example.slot_name)?;
                out.add_slot_example(translated)?;
            }
        }
    }
    Ok(out)
}

/// Checks that every stored demonstration covers its schema.
///
/// Returns one diagnostic per gap: an annotated example whose state misses
/// some slots, or a partial per-slot example set. References to unknown
/// services or slots are hard errors, not diagnostics.
pub fn validate_pack(
    pack: &PromptPack,
    schemas: &BTreeMap<String, ServiceSchema>,
) -> Result<Vec<CoverageDiagnostic>> {
    let mut diagnostics = Vec::new();

    for (service, versions) in &pack.examples {
        let schema = schemas.get(service).ok_or_else(|| {
            Error::Validation(format!("pack references unknown service '{service}'"))
        })?;
        for (version, example) in versions {
            for slot in example.state.assignments.keys() {
                if schema.slot(slot).is_none() {
                    return Err(Error::Validation(format!(
                        "pack example '{service}' v{version} references unknown slot '{slot}'"
                    )));
                }
            }
            let missing: Vec<String> = schema
                .slots
                .iter()
                .filter(|s| {
                    example
                        .state
                        .canonical(&s.name)
                        .map(|v| v.eq_ignore_ascii_case("none"))
                        .unwrap_or(true)
                })
                .map(|s| s.name.clone())
                .collect();
            if !missing.is_empty() {
                diagnostics.push(CoverageDiagnostic {
                    service_name: service.clone(),
                    version_id: *version,
                    scope: CoverageScope::SeqExample,
                    missing_slots: missing,
                });
            }
        }
    }

    for (service, versions) in &pack.slot_examples {
        let schema = schemas.get(service).ok_or_else(|| {
            Error::Validation(format!("pack references unknown service '{service}'"))
        })?;
        for (version, set) in versions {
            for slot in set.keys() {
                if schema.slot(slot).is_none() {
                    return Err(Error::Validation(format!(
                        "pack slot example '{service}' v{version} references unknown slot '{slot}'"
                    )));
                }
            }
            let missing: Vec<String> = schema
                .slots
                .iter()
                .filter(|s| !set.contains_key(&s.name))
                .map(|s| s.name.clone())
                .collect();
            if !missing.is_empty() {
                diagnostics.push(CoverageDiagnostic {
                    service_name: service.clone(),
                    version_id: *version,
                    scope: CoverageScope::IndExampleSet,
                    missing_slots: missing,
                });
            }
        }
    }

    Ok(diagnostics)
}
