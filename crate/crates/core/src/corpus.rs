//! Corpus ingestion: schemas, dialogues, and paraphrased schema variants.
//!
//! Data lives on disk in the SGD layout: a `schema.json` holding an array of
//! service definitions and any number of `dialogues_*.json` files holding
//! arrays of dialogues. Paraphrase variants of the schemas sit in sibling
//! directories `v1/`..`v5/` with the same file names. Everything is validated
//! for referential integrity at load time; a loaded [`Corpus`] is immutable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved value accepted for any slot, meaning "the user does not care".
pub const DONTCARE: &str = "dontcare";

/// One slot of a service schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub description: String,
    pub is_categorical: bool,
    #[serde(default)]
    pub possible_values: Vec<String>,
}

/// A service definition: identity, description, and its ordered slots.
///
/// Slot order is the ingestion order and is never re-sorted; prompt and
/// target rendering index into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSchema {
    pub service_name: String,
    #[serde(default)]
    pub description: String,
    pub slots: Vec<SlotSpec>,
}

impl ServiceSchema {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    /// Checks the per-slot invariants: unique names, categorical slots carry
    /// a duplicate-free non-empty value inventory, non-categorical carry none.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for slot in &self.slots {
            if !seen.insert(slot.name.as_str()) {
                return Err(Error::Validation(format!(
                    "service '{}': duplicate slot name '{}'",
                    self.service_name, slot.name
                )));
            }
            if slot.is_categorical {
                if slot.possible_values.is_empty() {
                    return Err(Error::Validation(format!(
                        "service '{}': categorical slot '{}' has no possible values",
                        self.service_name, slot.name
                    )));
                }
                let mut vals = BTreeSet::new();
                for v in &slot.possible_values {
                    if !vals.insert(v.as_str()) {
                        return Err(Error::Validation(format!(
                            "service '{}': categorical slot '{}' lists duplicate value '{}'",
                            self.service_name, slot.name, v
                        )));
                    }
                }
            } else if !slot.possible_values.is_empty() {
                return Err(Error::Validation(format!(
                    "service '{}': non-categorical slot '{}' must not list possible values",
                    self.service_name, slot.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => write!(f, "USER"),
            Speaker::System => write!(f, "SYSTEM"),
        }
    }
}

/// A turn-level dialogue state: slot name to the list of accepted values.
///
/// The first value is canonical (used when rendering targets); the rest are
/// aliases that also count as correct at evaluation time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub assignments: BTreeMap<String, Vec<String>>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Canonical (first accepted) value for a slot, if assigned.
    pub fn canonical(&self, slot: &str) -> Option<&str> {
        self.assignments
            .get(slot)
            .and_then(|v| v.first())
            .map(String::as_str)
    }

    pub fn set(&mut self, slot: impl Into<String>, values: Vec<String>) {
        self.assignments.insert(slot.into(), values);
    }

    fn validate(&self, schema: &ServiceSchema, at: &str) -> Result<()> {
        for (name, values) in &self.assignments {
            let slot = schema.slot(name).ok_or_else(|| {
                Error::Validation(format!(
                    "{at}: slot '{name}' does not exist in service '{}'",
                    schema.service_name
                ))
            })?;
            let canonical = values.first().ok_or_else(|| {
                Error::Validation(format!("{at}: slot '{name}' has an empty value list"))
            })?;
            if slot.is_categorical
                && canonical != DONTCARE
                && !slot.possible_values.iter().any(|v| v == canonical)
            {
                return Err(Error::Validation(format!(
                    "{at}: categorical slot '{name}' has value '{canonical}' outside its inventory"
                )));
            }
        }
        Ok(())
    }
}

/// A single frame: the state expressed for one service at one user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub service: String,
    pub state: DialogueState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default)]
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// True if any user turn carries a frame for `service`.
    pub fn mentions_service(&self, service: &str) -> bool {
        self.turns
            .iter()
            .any(|t| t.speaker == Speaker::User && t.frames.iter().any(|f| f.service == service))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// A validated, immutable corpus: schemas plus dialogues for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub schemas: BTreeMap<String, ServiceSchema>,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(
        split: Split,
        schemas: BTreeMap<String, ServiceSchema>,
        dialogues: Vec<Dialogue>,
    ) -> Result<Self> {
        let corpus = Corpus {
            split,
            schemas,
            dialogues,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Exhaustive referential-integrity check: every frame resolves to a
    /// schema, every mentioned slot exists, categorical canonical values are
    /// inside their inventory.
    pub fn validate(&self) -> Result<()> {
        for schema in self.schemas.values() {
            schema.validate()?;
        }
        for dialogue in &self.dialogues {
            for (turn_idx, turn) in dialogue.turns.iter().enumerate() {
                if turn.speaker == Speaker::System && !turn.frames.is_empty() {
                    return Err(Error::Validation(format!(
                        "dialogue '{}' turn {turn_idx}: system turns must not carry frames",
                        dialogue.dialogue_id
                    )));
                }
                for frame in &turn.frames {
                    let schema = self.schemas.get(&frame.service).ok_or_else(|| {
                        Error::Validation(format!(
                            "dialogue '{}' turn {turn_idx}: unknown service '{}'",
                            dialogue.dialogue_id, frame.service
                        ))
                    })?;
                    let at = format!("dialogue '{}' turn {turn_idx}", dialogue.dialogue_id);
                    frame.state.validate(schema, &at)?;
                }
            }
        }
        Ok(())
    }

    /// Service names mentioned by at least one frame.
    pub fn services_in_dialogues(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for d in &self.dialogues {
            for t in &d.turns {
                for f in &t.frames {
                    out.insert(f.service.clone());
                }
            }
        }
        out
    }

    /// Number of (user turn, frame) pairs, i.e. the number of judgeable turns.
    pub fn frame_count(&self) -> usize {
        self.dialogues
            .iter()
            .flat_map(|d| &d.turns)
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.frames.len())
            .sum()
    }
}

/// Identifier for the original schema set or one of its five paraphrase
/// variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantId {
    Orig,
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl VariantId {
    pub const VARIANTS: [VariantId; 5] = [
        VariantId::V1,
        VariantId::V2,
        VariantId::V3,
        VariantId::V4,
        VariantId::V5,
    ];

    pub const ALL: [VariantId; 6] = [
        VariantId::Orig,
        VariantId::V1,
        VariantId::V2,
        VariantId::V3,
        VariantId::V4,
        VariantId::V5,
    ];

    pub fn dir_name(&self) -> Option<&'static str> {
        match self {
            VariantId::Orig => None,
            VariantId::V1 => Some("v1"),
            VariantId::V2 => Some("v2"),
            VariantId::V3 => Some("v3"),
            VariantId::V4 => Some("v4"),
            VariantId::V5 => Some("v5"),
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariantId::Orig => "orig",
            VariantId::V1 => "v1",
            VariantId::V2 => "v2",
            VariantId::V3 => "v3",
            VariantId::V4 => "v4",
            VariantId::V5 => "v5",
        };
        f.pad(s)
    }
}

impl std::str::FromStr for VariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orig" => Ok(VariantId::Orig),
            "v1" => Ok(VariantId::V1),
            "v2" => Ok(VariantId::V2),
            "v3" => Ok(VariantId::V3),
            "v4" => Ok(VariantId::V4),
            "v5" => Ok(VariantId::V5),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected orig or v1..v5)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk representation (SGD layout)
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawTurn {
    speaker: Speaker,
    utterance: String,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
struct RawFrame {
    service: String,
    #[serde(default)]
    state: RawState,
}

#[derive(Deserialize, Default)]
struct RawState {
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    turns: Vec<RawTurn>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads `schema.json` from a split directory into a name-keyed map.
pub fn load_schemas(root: &Path) -> Result<BTreeMap<String, ServiceSchema>> {
    let path = root.join("schema.json");
    let schemas: Vec<ServiceSchema> = read_json(&path)?;
    let mut map = BTreeMap::new();
    for schema in schemas {
        schema.validate()?;
        if map.insert(schema.service_name.clone(), schema).is_some() {
            return Err(Error::Validation(format!(
                "{}: duplicate service definition",
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Loads a full corpus (schemas plus all `dialogues_*.json` files, sorted by
/// file name) from a split directory and validates it.
///
/// Frames are read from user turns only; system-side annotations, intents,
/// and requested slots in richer source files are ignored.
pub fn load_corpus(root: &Path, split: Split) -> Result<Corpus> {
    let schemas = load_schemas(root)?;

    let mut dialogue_files: Vec<_> = fs::read_dir(root)
        .map_err(|source| Error::Io {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    dialogue_files.sort();

    let mut dialogues = Vec::new();
    for file in &dialogue_files {
        let raw: Vec<RawDialogue> = read_json(file)?;
        for rd in raw {
            let turns = rd
                .turns
                .into_iter()
                .map(|rt| {
                    let frames = if rt.speaker == Speaker::User {
                        rt.frames
                            .into_iter()
                            .map(|rf| Frame {
                                service: rf.service,
                                state: DialogueState {
                                    assignments: rf.state.slot_values,
                                },
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    DialogueTurn {
                        speaker: rt.speaker,
                        utterance: rt.utterance,
                        frames,
                    }
                })
                .collect();
            dialogues.push(Dialogue {
                dialogue_id: rd.dialogue_id,
                turns,
            });
        }
    }

    Corpus::new(split, schemas, dialogues)
}

/// Loads the original schemas plus the five paraphrase variants from
/// `root/schema.json` and `root/v1/..v5/schema.json`.
///
/// Variants are parallel paraphrases: every variant must define the same
/// services with the same number of slots per service as the original, so
/// that slot identity can be carried by position.
pub fn load_variant_schemas(
    root: &Path,
) -> Result<BTreeMap<VariantId, BTreeMap<String, ServiceSchema>>> {
    let orig = load_schemas(root)?;
    let mut out = BTreeMap::new();

    for variant in VariantId::VARIANTS {
        let dir = root.join(variant.dir_name().expect("non-orig variant"));
        if !dir.join("schema.json").is_file() {
            return Err(Error::Validation(format!(
                "variant schema set missing: no {}/schema.json under {}",
                variant,
                root.display()
            )));
        }
        let schemas = load_schemas(&dir)?;
        check_parallel(&orig, &schemas, variant)?;
        out.insert(variant, schemas);
    }

    out.insert(VariantId::Orig, orig);
    Ok(out)
}

fn check_parallel(
    orig: &BTreeMap<String, ServiceSchema>,
    variant: &BTreeMap<String, ServiceSchema>,
    id: VariantId,
) -> Result<()> {
    if orig.len() != variant.len() {
        return Err(Error::Validation(format!(
            "variant {id} defines {} services, original defines {}",
            variant.len(),
            orig.len()
        )));
    }
    for (name, orig_schema) in orig {
        let var_schema = variant.get(name).ok_or_else(|| {
            Error::Validation(format!("variant {id} is missing service '{name}'"))
        })?;
        if var_schema.slots.len() != orig_schema.slots.len() {
            return Err(Error::Validation(format!(
                "variant {id} service '{name}' has {} slots, original has {} (variants must be parallel paraphrases)",
                var_schema.slots.len(),
                orig_schema.slots.len()
            )));
        }
    }
    Ok(())
}

/// Re-keys a corpus onto a paraphrase variant's schemas.
///
/// Slot identity is positional: slot i of the original service maps to slot i
/// of the variant service, so frame states are renamed accordingly. The
/// returned corpus validates against the variant schemas.
pub fn translate_corpus(
    corpus: &Corpus,
    variant_schemas: &BTreeMap<String, ServiceSchema>,
) -> Result<Corpus> {
    let mut dialogues = corpus.dialogues.clone();
    for dialogue in &mut dialogues {
        for turn in &mut dialogue.turns {
            for frame in &mut turn.frames {
                let orig_schema = corpus.schemas.get(&frame.service).ok_or_else(|| {
                    Error::Validation(format!("unknown service '{}'", frame.service))
                })?;
                let var_schema = variant_schemas.get(&frame.service).ok_or_else(|| {
                    Error::Validation(format!(
                        "variant schemas do not define service '{}'",
                        frame.service
                    ))
                })?;
                let mut renamed = BTreeMap::new();
                for (name, values) in std::mem::take(&mut frame.state.assignments) {
                    let idx = orig_schema.slot_index(&name).ok_or_else(|| {
                        Error::Validation(format!(
                            "slot '{name}' not in service '{}'",
                            frame.service
                        ))
                    })?;
                    renamed.insert(var_schema.slots[idx].name.clone(), values);
                }
                frame.state.assignments = renamed;
            }
        }
    }
    Corpus::new(corpus.split, variant_schemas.clone(), dialogues)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_root() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sgd")
    }

    fn copy_tree(from: &Path, to: &Path) {
        fs::create_dir_all(to).unwrap();
        for entry in fs::read_dir(from).unwrap() {
            let entry = entry.unwrap();
            let target = to.join(entry.file_name());
            if entry.file_type().unwrap().is_dir() {
                copy_tree(&entry.path(), &target);
            } else {
                fs::copy(entry.path(), &target).unwrap();
            }
        }
    }

    #[test]
    fn payments_schema_loads_with_slots_in_order() {
        let corpus = load_corpus(&fixture_root().join("test"), Split::Test).unwrap();
        let schema = &corpus.schemas["payments"];
        let names: Vec<&str> = schema.slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["amount", "receiver", "private_visibility", "payment_method"]
        );
        assert!(schema.slots[3].is_categorical);
        assert_eq!(
            schema.slots[3].possible_values,
            ["credit card", "debit card", "app balance"]
        );
    }

    #[test]
    fn empty_dialogue_directory_is_a_valid_corpus() {
        let dir = tempfile::tempdir().unwrap();
        fs::copy(
            fixture_root().join("test/schema.json"),
            dir.path().join("schema.json"),
        )
        .unwrap();
        let corpus = load_corpus(dir.path(), Split::Train).unwrap();
        assert_eq!(corpus.dialogues.len(), 0);
    }

    #[test]
    fn categorical_value_outside_inventory_is_rejected_naming_dialogue() {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root().join("test"), dir.path());
        let path = dir.path().join("dialogues_001.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"app balance\"]", "\"bitcoin\"]");
        fs::write(&path, text).unwrap();

        let err = load_corpus(dir.path(), Split::Test).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("pay_0001"), "{message}");
        assert!(message.contains("bitcoin"), "{message}");
    }

    #[test]
    fn unknown_service_in_frame_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root().join("test"), dir.path());
        let path = dir.path().join("dialogues_001.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"service\": \"banks\"", "\"service\": \"cruises\"");
        fs::write(&path, text).unwrap();

        let err = load_corpus(dir.path(), Split::Test).unwrap_err();
        assert!(err.to_string().contains("cruises"), "{err}");
    }

    #[test]
    fn unknown_slot_in_frame_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root().join("test"), dir.path());
        let path = dir.path().join("dialogues_001.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"receiver\":", "\"recipient_handle\":");
        fs::write(&path, text).unwrap();

        let err = load_corpus(dir.path(), Split::Test).unwrap_err();
        assert!(err.to_string().contains("recipient_handle"), "{err}");
    }

    #[test]
    fn loading_is_deterministic() {
        let root = fixture_root().join("test");
        let a = load_corpus(&root, Split::Test).unwrap();
        let b = load_corpus(&root, Split::Test).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variant_schemas_load_with_equal_counts() {
        let sets = load_variant_schemas(&fixture_root().join("test")).unwrap();
        assert_eq!(sets.len(), 6);
        let orig = &sets[&VariantId::Orig];
        assert_eq!(
            sets[&VariantId::V1]["payments"].slots[0].name,
            "amount_to_transfer"
        );
        for variant in VariantId::VARIANTS {
            let schemas = &sets[&variant];
            assert_eq!(schemas.len(), orig.len());
            for (name, schema) in schemas {
                assert_eq!(schema.slots.len(), orig[name].slots.len());
            }
        }
    }

    #[test]
    fn missing_v5_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root().join("test"), dir.path());
        fs::remove_dir_all(dir.path().join("v5")).unwrap();

        let err = load_variant_schemas(dir.path()).unwrap_err();
        assert!(err.to_string().contains("v5"), "{err}");
    }

    #[test]
    fn variant_dropping_a_slot_breaks_parallel_structure() {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root().join("test"), dir.path());
        let path = dir.path().join("v2/schema.json");
        let mut parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        parsed[0]["slots"].as_array_mut().unwrap().pop();
        fs::write(&path, serde_json::to_string(&parsed).unwrap()).unwrap();

        let err = load_variant_schemas(dir.path()).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("v2"), "{message}");
        assert!(message.contains("parallel"), "{message}");
    }

    #[test]
    fn translate_corpus_renames_slots_by_position() {
        let root = fixture_root().join("test");
        let corpus = load_corpus(&root, Split::Test).unwrap();
        let sets = load_variant_schemas(&root).unwrap();
        let translated = translate_corpus(&corpus, &sets[&VariantId::V1]).unwrap();

        let frame = &translated.dialogues[0].turns[2].frames[0];
        assert!(frame.state.assignments.contains_key("amount_to_transfer"));
        assert!(frame.state.assignments.contains_key("payment_source"));
        assert_eq!(frame.state.canonical("payment_source"), Some("app balance"));
        translated.validate().unwrap();
    }

    #[test]
    fn duplicate_categorical_values_are_rejected() {
        let schema = ServiceSchema {
            service_name: "s".into(),
            description: String::new(),
            slots: vec![SlotSpec {
                name: "a".into(),
                description: String::new(),
                is_categorical: true,
                possible_values: vec!["x".into(), "x".into()],
            }],
        };
        assert!(schema.validate().is_err());
    }

    #[test]
    fn non_categorical_with_values_is_rejected() {
        let schema = ServiceSchema {
            service_name: "s".into(),
            description: String::new(),
            slots: vec![SlotSpec {
                name: "a".into(),
                description: String::new(),
                is_categorical: false,
                possible_values: vec!["x".into()],
            }],
        };
        assert!(schema.validate().is_err());
    }

    #[test]
    fn loader_ignores_intents_and_other_extra_fields() {
        let dir = tempfile::tempdir().unwrap();
        fs::copy(
            fixture_root().join("test/schema.json"),
            dir.path().join("schema.json"),
        )
        .unwrap();
        fs::write(
            dir.path().join("dialogues_001.json"),
            r#"[{
                "dialogue_id": "rich_0001",
                "services": ["payments"],
                "turns": [{
                    "speaker": "USER",
                    "utterance": "send $5 to Kim",
                    "frames": [{
                        "service": "payments",
                        "actions": [{"act": "INFORM"}],
                        "state": {
                            "active_intent": "MakePayment",
                            "requested_slots": ["receiver"],
                            "slot_values": {"amount": ["$5"], "receiver": ["Kim"]}
                        }
                    }]
                }]
            }]"#,
        )
        .unwrap();

        let corpus = load_corpus(dir.path(), Split::Test).unwrap();
        let frame = &corpus.dialogues[0].turns[0].frames[0];
        assert_eq!(frame.state.assignments.len(), 2);
        assert_eq!(frame.state.canonical("amount"), Some("$5"));
    }
}
