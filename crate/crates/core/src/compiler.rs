//! Deterministic rendering of (prompt, context, target) instances.
//!
//! Five prompt families are supported. Demonstration-based families embed an
//! authored example; description-based families embed the schema's slot
//! descriptions; the combined family concatenates both.
//!
//! ```text
//! sdt-seq   [ex] [user] u1 [system] u2 ... [slot] name=value ...
//! sdt-ind   [ex] [user] u [slot] name=value            (one per slot)
//! desc-seq  0: description 1: description a) x b) y ...
//! desc-ind  name: description                          (one per slot)
//! sdt-seq-plus-desc   desc-seq prompt + " " + sdt-seq prompt
//! ```
//!
//! Every rendered string is a pure function of its inputs: single ASCII
//! spaces as joiners, no trailing space, no newlines. Categorical slot values
//! are enumerated as lettered multiple-choice options `a) v1 b) v2 ...` in
//! possible-value order; targets then carry the letter alone.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, DialogueState, DialogueTurn, ServiceSchema, SlotSpec, Speaker, VariantId, DONTCARE,
};
use crate::error::{Error, Result};
use crate::pack::{AnnotatedExample, PromptPack};

/// Delimiter tokens shared by all demonstration formats. Fixed constants;
/// every rendered string uses exactly these, joined by single spaces.
pub mod delimiters {
    pub const EX: &str = "[ex]";
    pub const SLOT: &str = "[slot]";
    pub const USER: &str = "[user]";
    pub const SYSTEM: &str = "[system]";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatFamily {
    SdtSeq,
    SdtInd,
    DescSeq,
    DescInd,
    SdtSeqPlusDesc,
}

impl FormatFamily {
    /// Independent families decode one slot per instance; sequential families
    /// decode the whole turn state in one pass.
    pub fn is_independent(&self) -> bool {
        matches!(self, FormatFamily::SdtInd | FormatFamily::DescInd)
    }

    /// Families that require authored demonstrations in the prompt pack.
    pub fn needs_pack(&self) -> bool {
        !matches!(self, FormatFamily::DescSeq | FormatFamily::DescInd)
    }
}

impl fmt::Display for FormatFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatFamily::SdtSeq => "sdt-seq",
            FormatFamily::SdtInd => "sdt-ind",
            FormatFamily::DescSeq => "desc-seq",
            FormatFamily::DescInd => "desc-ind",
            FormatFamily::SdtSeqPlusDesc => "sdt-seq-plus-desc",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for FormatFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdt-seq" => Ok(FormatFamily::SdtSeq),
            "sdt-ind" => Ok(FormatFamily::SdtInd),
            "desc-seq" | "t5-seq" => Ok(FormatFamily::DescSeq),
            "desc-ind" | "t5-ind" => Ok(FormatFamily::DescInd),
            "sdt-seq-plus-desc" => Ok(FormatFamily::SdtSeqPlusDesc),
            other => Err(Error::Config(format!("unknown format family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoricalMode {
    /// Enumerate values as lettered options in the prompt and decode the
    /// letter alone.
    MultipleChoice,
    /// Show and decode the literal value string; no enumeration is rendered.
    ValueString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotNaming {
    Name,
    /// Delexicalized: slots are identified by zero-based schema-order indices.
    Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationPosition {
    /// Slot-value pairs collected in a trailing `[slot]` section.
    Suffix,
    /// Each annotation placed in brackets right after the utterance that
    /// introduces the slot.
    Inline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSlots {
    /// Targets list every slot, inactive ones as `name=none`.
    All,
    /// Targets list only active slots.
    ActiveOnly,
}

/// Full description of a prompt/target format, main configuration plus the
/// ablation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormatSpec {
    pub family: FormatFamily,
    #[serde(default = "defaults::categorical_mode")]
    pub categorical_mode: CategoricalMode,
    #[serde(default = "defaults::slot_naming")]
    pub slot_naming: SlotNaming,
    #[serde(default = "defaults::annotation_position")]
    pub annotation_position: AnnotationPosition,
    #[serde(default = "defaults::target_slots")]
    pub target_slots: TargetSlots,
    #[serde(default = "defaults::demos_per_prompt")]
    pub demos_per_prompt: u32,
}

mod defaults {
    use super::*;

    pub fn categorical_mode() -> CategoricalMode {
        CategoricalMode::MultipleChoice
    }
    pub fn slot_naming() -> SlotNaming {
        SlotNaming::Name
    }
    pub fn annotation_position() -> AnnotationPosition {
        AnnotationPosition::Suffix
    }
    pub fn target_slots() -> TargetSlots {
        TargetSlots::All
    }
    pub fn demos_per_prompt() -> u32 {
        1
    }
}

impl FormatSpec {
    /// A family with the main-configuration defaults: multiple choice,
    /// slot names, suffix annotations, all slots in targets, one demo.
    pub fn new(family: FormatFamily) -> Self {
        FormatSpec {
            family,
            categorical_mode: CategoricalMode::MultipleChoice,
            slot_naming: SlotNaming::Name,
            annotation_position: AnnotationPosition::Suffix,
            target_slots: TargetSlots::All,
            demos_per_prompt: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotation_position == AnnotationPosition::Inline
            && self.family != FormatFamily::SdtSeq
        {
            return Err(Error::Config(format!(
                "in-line annotations are only legal for sdt-seq, not {}",
                self.family
            )));
        }
        if self.demos_per_prompt < 1 {
            return Err(Error::Config("demos_per_prompt must be at least 1".into()));
        }
        Ok(())
    }

    /// The slot identifier scheme actually used in slot sections and targets.
    ///
    /// Description-sequential prompts index slots by schema position, so the
    /// family pins naming to indices regardless of the configured knob.
    pub fn effective_naming(&self) -> SlotNaming {
        if self.family == FormatFamily::DescSeq {
            SlotNaming::Id
        } else {
            self.slot_naming
        }
    }
}

impl Default for FormatSpec {
    fn default() -> Self {
        FormatSpec::new(FormatFamily::SdtSeq)
    }
}

/// Provenance of a compiled instance, sufficient to re-associate predictions
/// with gold states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_name: Option<String>,
    pub variant: VariantId,
    pub version: u32,
}

impl Provenance {
    /// Key identifying the (dialogue, turn, service) group of this instance.
    pub fn turn_key(&self) -> (String, usize, String) {
        (
            self.dialogue_id.clone(),
            self.turn_index,
            self.service_name.clone(),
        )
    }
}

/// One model input/target pair plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledInstance {
    pub instance_id: String,
    pub prompt: String,
    pub context: String,
    pub target: String,
    pub format: FormatSpec,
    pub provenance: Provenance,
}

impl CompiledInstance {
    /// The full model input: prompt and context joined by a single space.
    pub fn input(&self) -> String {
        format!("{} {}", self.prompt, self.context)
    }
}

/// Builds the instance id `dialogue#turn#service[#slot]`. Zero-padding the
/// turn index keeps lexicographic id order aligned with turn order.
pub fn instance_id(
    dialogue_id: &str,
    turn_index: usize,
    service: &str,
    slot: Option<&str>,
) -> String {
    match slot {
        Some(slot) => format!("{dialogue_id}#{turn_index:04}#{service}#{slot}"),
        None => format!("{dialogue_id}#{turn_index:04}#{service}"),
    }
}

// ---------------------------------------------------------------------------
// Rendering primitives
// ---------------------------------------------------------------------------

/// The lettered enumeration `a) v1 b) v2 ...` over a categorical inventory.
pub fn enumeration(slot: &SlotSpec) -> Result<String> {
    if slot.possible_values.len() > 26 {
        return Err(Error::Compile(format!(
            "categorical slot '{}' has {} values; multiple-choice lettering supports at most 26",
            slot.name,
            slot.possible_values.len()
        )));
    }
    let parts: Vec<String> = slot
        .possible_values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}) {v}", letter(i)))
        .collect();
    Ok(parts.join(" "))
}

/// Letter for a zero-based option index.
pub fn letter(index: usize) -> char {
    (b'a' + index as u8) as char
}

/// Zero-based option index for a letter, if in range for the slot.
pub fn letter_index(c: char, slot: &SlotSpec) -> Option<usize> {
    let c = c.to_ascii_lowercase();
    if !c.is_ascii_lowercase() {
        return None;
    }
    let idx = (c as u8 - b'a') as usize;
    (idx < slot.possible_values.len()).then_some(idx)
}

fn slot_identifier(schema: &ServiceSchema, index: usize, naming: SlotNaming) -> String {
    match naming {
        SlotNaming::Name => schema.slots[index].name.clone(),
        SlotNaming::Id => index.to_string(),
    }
}

/// How a demonstrated value appears in a prompt's slot section.
fn demo_value(slot: &SlotSpec, value: &str, mode: CategoricalMode) -> Result<String> {
    if !slot.is_categorical || value == DONTCARE {
        return Ok(value.to_string());
    }
    match mode {
        CategoricalMode::MultipleChoice => {
            let idx = slot.possible_values.iter().position(|v| v == value).ok_or_else(|| {
                Error::Render(format!(
                    "demonstrated value '{value}' for categorical slot '{}' is not in its inventory",
                    slot.name
                ))
            })?;
            Ok(format!("{} of {}", letter(idx), enumeration(slot)?))
        }
        CategoricalMode::ValueString => Ok(value.to_string()),
    }
}

/// Serializes dialogue history as `[user] u1 [system] u2 ...`.
///
/// The history must be non-empty and end with a user turn; casing is
/// preserved.
pub fn render_context(history: &[DialogueTurn]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::Render(
            "cannot render an empty dialogue history".into(),
        ));
    }
    if history.last().map(|t| t.speaker) != Some(Speaker::User) {
        return Err(Error::Render(
            "dialogue history must end with a user turn".into(),
        ));
    }
    Ok(join_turns(history))
}

fn join_turns(turns: &[DialogueTurn]) -> String {
    let parts: Vec<String> = turns
        .iter()
        .map(|t| {
            let tag = match t.speaker {
                Speaker::User => delimiters::USER,
                Speaker::System => delimiters::SYSTEM,
            };
            format!("{tag} {}", t.utterance)
        })
        .collect();
    parts.join(" ")
}

/// One `ident=value` entry of a demonstration's slot section.
fn demo_pair(
    schema: &ServiceSchema,
    index: usize,
    example_state: &DialogueState,
    spec: &FormatSpec,
) -> Result<String> {
    let slot = &schema.slots[index];
    let ident = slot_identifier(schema, index, spec.effective_naming());
    let value = example_state.canonical(&slot.name).ok_or_else(|| {
        Error::Render(format!(
            "example for '{}' does not assign slot '{}'",
            schema.service_name, slot.name
        ))
    })?;
    Ok(format!(
        "{ident}={}",
        demo_value(slot, value, spec.categorical_mode)?
    ))
}

/// Renders one annotated example dialogue as a demonstration string.
fn render_seq_demo(
    schema: &ServiceSchema,
    example: &AnnotatedExample,
    spec: &FormatSpec,
) -> Result<String> {
    match spec.annotation_position {
        AnnotationPosition::Suffix => {
            let mut pairs = Vec::with_capacity(schema.slots.len());
            for index in 0..schema.slots.len() {
                pairs.push(demo_pair(schema, index, &example.state, spec)?);
            }
            Ok(format!(
                "{} {} {} {}",
                delimiters::EX,
                join_turns(&example.turns),
                delimiters::SLOT,
                pairs.join(" ")
            ))
        }
        AnnotationPosition::Inline => render_inline_demo(schema, example, spec),
    }
}

/// In-line variant: each `[ident=value]` annotation follows the utterance
/// that introduces the slot; there is no trailing slot section.
///
/// Attribution order: an explicit `slot_turns` entry in the pack wins; next,
/// the first utterance containing the demonstrated value (case-insensitive);
/// otherwise the last user turn.
fn render_inline_demo(
    schema: &ServiceSchema,
    example: &AnnotatedExample,
    spec: &FormatSpec,
) -> Result<String> {
    let last_user = example
        .turns
        .iter()
        .rposition(|t| t.speaker == Speaker::User)
        .ok_or_else(|| Error::Render("example has no user turn".into()))?;

    let mut per_turn: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for index in 0..schema.slots.len() {
        let slot = &schema.slots[index];
        let value = example.state.canonical(&slot.name).ok_or_else(|| {
            Error::Render(format!(
                "example for '{}' does not assign slot '{}'",
                schema.service_name, slot.name
            ))
        })?;
        let turn = example
            .slot_turns
            .get(&slot.name)
            .copied()
            .filter(|&t| t < example.turns.len())
            .or_else(|| {
                let needle = value.to_lowercase();
                example
                    .turns
                    .iter()
                    .position(|t| t.utterance.to_lowercase().contains(&needle))
            })
            .unwrap_or(last_user);
        per_turn.entry(turn).or_default().push(format!(
            "[{}]",
            demo_pair(schema, index, &example.state, spec)?
        ));
    }

    let parts: Vec<String> = example
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let tag = match t.speaker {
                Speaker::User => delimiters::USER,
                Speaker::System => delimiters::SYSTEM,
            };
            let mut s = format!("{tag} {}", t.utterance);
            if let Some(annotations) = per_turn.get(&i) {
                s.push(' ');
                s.push_str(&annotations.join(" "));
            }
            s
        })
        .collect();
    Ok(format!("{} {}", delimiters::EX, parts.join(" ")))
}

/// The description-based sequential prompt: indexed slot descriptions, with
/// multiple-choice enumerations appended for categorical slots.
fn render_desc_seq(schema: &ServiceSchema, spec: &FormatSpec) -> Result<String> {
    let mut parts = Vec::with_capacity(schema.slots.len());
    for (index, slot) in schema.slots.iter().enumerate() {
        let mut s = format!("{index}: {}", slot.description);
        if slot.is_categorical && spec.categorical_mode == CategoricalMode::MultipleChoice {
            s.push(' ');
            s.push_str(&enumeration(slot)?);
        }
        parts.push(s);
    }
    Ok(parts.join(" "))
}

/// The description-based single-slot prompt: `name: description`.
fn render_desc_ind(slot: &SlotSpec, spec: &FormatSpec) -> Result<String> {
    let mut s = format!("{}: {}", slot.name, slot.description);
    if slot.is_categorical && spec.categorical_mode == CategoricalMode::MultipleChoice {
        s.push(' ');
        s.push_str(&enumeration(slot)?);
    }
    Ok(s)
}

/// Renders the prompt string for a sequential-family format.
///
/// For demonstration families the prompt embeds `demos_per_prompt` authored
/// examples starting at `version`; for description families it is derived
/// from the schema alone and `pack`/`version` are unused.
pub fn render_prompt(
    spec: &FormatSpec,
    schema: &ServiceSchema,
    pack: &PromptPack,
    version: u32,
) -> Result<String> {
    spec.validate()?;
    match spec.family {
        FormatFamily::SdtSeq => render_sdt_seq_prompt(spec, schema, pack, version),
        FormatFamily::DescSeq => render_desc_seq(schema, spec),
        FormatFamily::SdtSeqPlusDesc => {
            let desc = render_desc_seq(schema, spec)?;
            let demo = render_sdt_seq_prompt(spec, schema, pack, version)?;
            Ok(format!("{desc} {demo}"))
        }
        FormatFamily::SdtInd | FormatFamily::DescInd => Err(Error::Render(format!(
            "{} renders one prompt per slot; use render_slot_prompt",
            spec.family
        ))),
    }
}

fn render_sdt_seq_prompt(
    spec: &FormatSpec,
    schema: &ServiceSchema,
    pack: &PromptPack,
    version: u32,
) -> Result<String> {
    let mut demos = Vec::with_capacity(spec.demos_per_prompt as usize);
    for i in 0..spec.demos_per_prompt {
        let example = pack.select_version(&schema.service_name, version + i)?;
        demos.push(render_seq_demo(schema, example, spec)?);
    }
    Ok(demos.join(" "))
}

/// Renders the per-slot prompt for an independent-family format.
pub fn render_slot_prompt(
    spec: &FormatSpec,
    schema: &ServiceSchema,
    slot_name: &str,
    pack: &PromptPack,
    version: u32,
) -> Result<String> {
    spec.validate()?;
    let slot = schema.slot(slot_name).ok_or_else(|| {
        Error::Render(format!(
            "slot '{slot_name}' not in service '{}'",
            schema.service_name
        ))
    })?;
    match spec.family {
        FormatFamily::DescInd => render_desc_ind(slot, spec),
        FormatFamily::SdtInd => {
            let mut demos = Vec::with_capacity(spec.demos_per_prompt as usize);
            for i in 0..spec.demos_per_prompt {
                let example =
                    pack.select_slot_example(&schema.service_name, slot_name, version + i)?;
                demos.push(format!(
                    "{} {} {} {} {}={}",
                    delimiters::EX,
                    delimiters::USER,
                    example.utterance,
                    delimiters::SLOT,
                    slot.name,
                    demo_value(slot, &example.value, spec.categorical_mode)?
                ));
            }
            Ok(demos.join(" "))
        }
        other => Err(Error::Render(format!(
            "{other} renders one prompt per service; use render_prompt"
        ))),
    }
}

/// How a target value is written for one slot: the multiple-choice letter
/// alone, or the literal value under value-string mode. `dontcare` passes
/// through as a reserved literal.
fn target_value(slot: &SlotSpec, value: &str, mode: CategoricalMode) -> Result<String> {
    if !slot.is_categorical || value == DONTCARE {
        return Ok(value.to_string());
    }
    match mode {
        CategoricalMode::MultipleChoice => {
            let idx = slot
                .possible_values
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| {
                    Error::Render(format!(
                        "value '{value}' for categorical slot '{}' is not in its inventory",
                        slot.name
                    ))
                })?;
            Ok(letter(idx).to_string())
        }
        CategoricalMode::ValueString => Ok(value.to_string()),
    }
}

/// Renders the sequential-family target for a turn state: `ident=value`
/// pairs in schema slot order. Inactive slots render as `ident=none` in
/// all-slots mode and are omitted in active-only mode (an entirely inactive
/// state then yields the empty string).
pub fn render_target(
    spec: &FormatSpec,
    schema: &ServiceSchema,
    state: &DialogueState,
) -> Result<String> {
    let naming = spec.effective_naming();
    let mut parts = Vec::with_capacity(schema.slots.len());
    for (index, slot) in schema.slots.iter().enumerate() {
        let ident = slot_identifier(schema, index, naming);
        match state.canonical(&slot.name) {
            Some(value) => parts.push(format!(
                "{ident}={}",
                target_value(slot, value, spec.categorical_mode)?
            )),
            None => {
                if spec.target_slots == TargetSlots::All {
                    parts.push(format!("{ident}=none"));
                }
            }
        }
    }
    Ok(parts.join(" "))
}

/// Renders the independent-family target for one slot: its value, or `none`.
pub fn render_slot_target(
    spec: &FormatSpec,
    schema: &ServiceSchema,
    slot_name: &str,
    state: &DialogueState,
) -> Result<String> {
    let slot = schema.slot(slot_name).ok_or_else(|| {
        Error::Render(format!(
            "slot '{slot_name}' not in service '{}'",
            schema.service_name
        ))
    })?;
    match state.canonical(slot_name) {
        Some(value) => target_value(slot, value, spec.categorical_mode),
        None => Ok("none".into()),
    }
}

// ---------------------------------------------------------------------------
// Corpus compilation
// ---------------------------------------------------------------------------

/// Compiles every (user turn, frame) of a corpus into model instances.
///
/// Sequential families yield one instance per frame; independent families one
/// per (frame, slot). Output order is corpus order: dialogue order, turn
/// order, frame order, schema slot order. Prompts are rendered once per
/// service (or per slot) and shared across instances.
pub fn compile_corpus(
    corpus: &Corpus,
    pack: &PromptPack,
    spec: &FormatSpec,
    version: u32,
    variant: VariantId,
) -> Result<Vec<CompiledInstance>> {
    spec.validate()?;

    if spec.family.needs_pack() {
        let services = corpus.services_in_dialogues();
        let missing: Vec<String> = services
            .iter()
            .filter(|s| {
                let schema = corpus.schemas.get(*s);
                match (spec.family.is_independent(), schema) {
                    (true, Some(schema)) => !(0..spec.demos_per_prompt)
                        .all(|i| pack.has_complete_slot_set(schema, version + i)),
                    _ => !(0..spec.demos_per_prompt).all(|i| pack.has_example(s, version + i)),
                }
            })
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Compile(format!(
                "prompt pack has no version-{version} demonstrations for: {}",
                missing.join(", ")
            )));
        }
    }

    let mut prompt_cache: BTreeMap<String, String> = BTreeMap::new();
    let mut instances = Vec::new();

    for dialogue in &corpus.dialogues {
        for (turn_index, turn) in dialogue.turns.iter().enumerate() {
            if turn.speaker != Speaker::User || turn.frames.is_empty() {
                continue;
            }
            let history = &dialogue.turns[..=turn_index];
            let context = render_context(history)?;
            for frame in &turn.frames {
                let schema = corpus.schemas.get(&frame.service).ok_or_else(|| {
                    Error::Compile(format!("unknown service '{}'", frame.service))
                })?;

                if spec.family.is_independent() {
                    for slot in &schema.slots {
                        let cache_key = format!("{}#{}", frame.service, slot.name);
                        if !prompt_cache.contains_key(&cache_key) {
                            let p = render_slot_prompt(spec, schema, &slot.name, pack, version)?;
                            prompt_cache.insert(cache_key.clone(), p);
                        }
                        let prompt = prompt_cache[&cache_key].clone();
                        let target = render_slot_target(spec, schema, &slot.name, &frame.state)?;
                        instances.push(CompiledInstance {
                            instance_id: instance_id(
                                &dialogue.dialogue_id,
                                turn_index,
                                &frame.service,
                                Some(&slot.name),
                            ),
                            prompt,
                            context: context.clone(),
                            target,
                            format: *spec,
                            provenance: Provenance {
                                dialogue_id: dialogue.dialogue_id.clone(),
                                turn_index,
                                service_name: frame.service.clone(),
                                slot_name: Some(slot.name.clone()),
                                variant,
                                version,
                            },
                        });
                    }
                } else {
                    if !prompt_cache.contains_key(&frame.service) {
                        let p = render_prompt(spec, schema, pack, version)?;
                        prompt_cache.insert(frame.service.clone(), p);
                    }
                    let prompt = prompt_cache[&frame.service].clone();
                    let target = render_target(spec, schema, &frame.state)?;
                    instances.push(CompiledInstance {
                        instance_id: instance_id(
                            &dialogue.dialogue_id,
                            turn_index,
                            &frame.service,
                            None,
                        ),
                        prompt,
                        context: context.clone(),
                        target,
                        format: *spec,
                        provenance: Provenance {
                            dialogue_id: dialogue.dialogue_id.clone(),
                            turn_index,
                            service_name: frame.service.clone(),
                            slot_name: None,
                            variant,
                            version,
                        },
                    });
                }
            }
        }
    }

    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, load_schemas, Dialogue, Frame, Split};
    use crate::pack::load_pack;

    const SDT_SEQ_GOLDEN: &str = "[ex] [user] I want to make a payment to Jerry for $82 from my \
        mastercard [system] Confirming you want to pay Jerry $82 with your credit card yes? \
        [user] Yes that's right, make the transaction private too [slot] amount=$82 \
        receiver=Jerry private_visibility=a of a) True b) False payment_method=a of a) credit \
        card b) debit card c) app balance";

    const DESC_SEQ_GOLDEN: &str = "0: The amount of money to send or request 1: Name of the \
        contact or account to make the transaction with 2: Whether the transaction is private \
        or not a) True b) False 3: The source of money used for making the payment a) credit \
        card b) debit card c) app balance";

    fn fixtures() -> (ServiceSchema, PromptPack) {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let schemas = load_schemas(&base.join("sgd/test")).unwrap();
        let pack = load_pack(&base.join("pack")).unwrap();
        (schemas["payments"].clone(), pack)
    }

    fn figure_state() -> DialogueState {
        let mut state = DialogueState::new();
        state.set("amount", vec!["$82".into()]);
        state.set("receiver", vec!["Jerry".into()]);
        state.set("private_visibility", vec!["True".into()]);
        state.set("payment_method", vec!["credit card".into()]);
        state
    }

    #[test]
    fn sdt_seq_prompt_is_byte_exact() {
        let (schema, pack) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let prompt = render_prompt(&spec, &schema, &pack, 1).unwrap();
        assert_eq!(prompt, SDT_SEQ_GOLDEN);
    }

    #[test]
    fn sdt_ind_prompts_are_byte_exact() {
        let (schema, pack) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtInd);
        let amount = render_slot_prompt(&spec, &schema, "amount", &pack, 1).unwrap();
        assert_eq!(
            amount,
            "[ex] [user] I need to transfer 125 dollars [slot] amount=125 dollars"
        );
        let receiver = render_slot_prompt(&spec, &schema, "receiver", &pack, 1).unwrap();
        assert_eq!(
            receiver,
            "[ex] [user] Make the transfer to Victoria. [slot] receiver=Victoria"
        );
    }

    #[test]
    fn desc_seq_prompt_is_byte_exact() {
        let (schema, pack) = fixtures();
        let spec = FormatSpec::new(FormatFamily::DescSeq);
        let prompt = render_prompt(&spec, &schema, &pack, 1).unwrap();
        assert_eq!(prompt, DESC_SEQ_GOLDEN);
    }

    #[test]
    fn desc_ind_prompts_are_byte_exact() {
        let (schema, pack) = fixtures();
        let spec = FormatSpec::new(FormatFamily::DescInd);
        let amount = render_slot_prompt(&spec, &schema, "amount", &pack, 1).unwrap();
        assert_eq!(amount, "amount: The amount of money to send or request");
        let receiver = render_slot_prompt(&spec, &schema, "receiver", &pack, 1).unwrap();
        assert_eq!(
            receiver,
            "receiver: Name of the contact or account to make the transaction with"
        );
        let method = render_slot_prompt(&spec, &schema, "payment_method", &pack, 1).unwrap();
        assert_eq!(
            method,
            "payment_method: The source of money used for making the payment a) credit card \
             b) debit card c) app balance"
        );
    }

    #[test]
    fn combined_prompt_contains_both_parts() {
        let (schema, pack) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtSeqPlusDesc);
        let prompt = render_prompt(&spec, &schema, &pack, 1).unwrap();
        assert!(prompt.contains(DESC_SEQ_GOLDEN));
        assert!(prompt.contains(SDT_SEQ_GOLDEN));
        assert_eq!(prompt, format!("{DESC_SEQ_GOLDEN} {SDT_SEQ_GOLDEN}"));
    }

    #[test]
    fn context_single_user_turn() {
        let history = vec![DialogueTurn {
            speaker: Speaker::User,
            utterance: "Hi".into(),
            frames: vec![],
        }];
        assert_eq!(render_context(&history).unwrap(), "[user] Hi");
    }

    #[test]
    fn context_of_example_matches_prompt_serialization() {
        let (_, pack) = fixtures();
        let example = pack.select_version("payments", 1).unwrap();
        let context = render_context(&example.turns).unwrap();
        let expected = SDT_SEQ_GOLDEN
            .strip_prefix("[ex] ")
            .unwrap()
            .split(" [slot] ")
            .next()
            .unwrap();
        assert_eq!(context, expected);
    }

    #[test]
    fn context_tags_alternate_over_seven_turns() {
        let mut history = Vec::new();
        for i in 0..7 {
            history.push(DialogueTurn {
                speaker: if i % 2 == 0 {
                    Speaker::User
                } else {
                    Speaker::System
                },
                utterance: format!("utterance {i}"),
                frames: vec![],
            });
        }
        let context = render_context(&history).unwrap();
        assert_eq!(context.matches("[user]").count(), 4);
        assert_eq!(context.matches("[system]").count(), 3);
        let first_user = context.find("[user]").unwrap();
        let first_system = context.find("[system]").unwrap();
        assert!(first_user < first_system);
    }

    #[test]
    fn empty_history_is_an_error() {
        assert!(render_context(&[]).is_err());
    }

    #[test]
    fn history_must_end_with_user_turn() {
        let history = vec![
            DialogueTurn {
                speaker: Speaker::User,
                utterance: "Hi".into(),
                frames: vec![],
            },
            DialogueTurn {
                speaker: Speaker::System,
                utterance: "Hello".into(),
                frames: vec![],
            },
        ];
        assert!(render_context(&history).is_err());
    }

    #[test]
    fn seq_target_letters_categoricals() {
        let (schema, _) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let target = render_target(&spec, &schema, &figure_state()).unwrap();
        assert_eq!(
            target,
            "amount=$82 receiver=Jerry private_visibility=a payment_method=a"
        );
    }

    #[test]
    fn empty_state_renders_all_none() {
        let (schema, _) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let target = render_target(&spec, &schema, &DialogueState::new()).unwrap();
        assert_eq!(
            target,
            "amount=none receiver=none private_visibility=none payment_method=none"
        );
    }

    #[test]
    fn value_string_mode_spells_out_values() {
        let (schema, _) = fixtures();
        let mut spec = FormatSpec::new(FormatFamily::SdtSeq);
        spec.categorical_mode = CategoricalMode::ValueString;
        let target = render_target(&spec, &schema, &figure_state()).unwrap();
        assert_eq!(
            target,
            "amount=$82 receiver=Jerry private_visibility=True payment_method=credit card"
        );
    }

    #[test]
    fn active_only_omits_inactive_slots() {
        let (schema, _) = fixtures();
        let mut spec = FormatSpec::new(FormatFamily::SdtSeq);
        spec.target_slots = TargetSlots::ActiveOnly;
        let mut state = DialogueState::new();
        state.set("receiver", vec!["Jerry".into()]);
        assert_eq!(
            render_target(&spec, &schema, &state).unwrap(),
            "receiver=Jerry"
        );
        assert_eq!(
            render_target(&spec, &schema, &DialogueState::new()).unwrap(),
            ""
        );
    }

    #[test]
    fn id_naming_uses_schema_order_indices() {
        let (schema, _) = fixtures();
        let mut spec = FormatSpec::new(FormatFamily::SdtSeq);
        spec.slot_naming = SlotNaming::Id;
        let target = render_target(&spec, &schema, &figure_state()).unwrap();
        assert_eq!(target, "0=$82 1=Jerry 2=a 3=a");
    }

    #[test]
    fn desc_seq_targets_are_always_indexed() {
        let (schema, _) = fixtures();
        let spec = FormatSpec::new(FormatFamily::DescSeq);
        assert_eq!(spec.slot_naming, SlotNaming::Name);
        let target = render_target(&spec, &schema, &figure_state()).unwrap();
        assert_eq!(target, "0=$82 1=Jerry 2=a 3=a");
    }

    #[test]
    fn ind_target_is_value_or_none() {
        let (schema, _) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtInd);
        let state = figure_state();
        assert_eq!(
            render_slot_target(&spec, &schema, "amount", &state).unwrap(),
            "$82"
        );
        assert_eq!(
            render_slot_target(&spec, &schema, "payment_method", &state).unwrap(),
            "a"
        );
        assert_eq!(
            render_slot_target(&spec, &schema, "amount", &DialogueState::new()).unwrap(),
            "none"
        );
    }

    #[test]
    fn dontcare_is_a_reserved_literal() {
        let (schema, _) = fixtures();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let mut state = DialogueState::new();
        state.set("payment_method", vec![DONTCARE.into()]);
        let target = render_target(&spec, &schema, &state).unwrap();
        assert!(target.contains("payment_method=dontcare"), "{target}");
    }

    #[test]
    fn inline_annotations_follow_their_utterances() {
        let (schema, pack) = fixtures();
        let mut spec = FormatSpec::new(FormatFamily::SdtSeq);
        spec.annotation_position = AnnotationPosition::Inline;
        spec.categorical_mode = CategoricalMode::ValueString;
        let prompt = render_prompt(&spec, &schema, &pack, 1).unwrap();
        assert_eq!(
            prompt,
            "[ex] [user] I want to make a payment to Jerry for $82 from my mastercard \
             [amount=$82] [receiver=Jerry] [system] Confirming you want to pay Jerry $82 with \
             your credit card yes? [payment_method=credit card] [user] Yes that's right, make \
             the transaction private too [private_visibility=True]"
        );
        assert!(!prompt.contains("[slot]"));
    }

    #[test]
    fn inline_is_illegal_outside_sdt_seq() {
        let mut spec = FormatSpec::new(FormatFamily::SdtInd);
        spec.annotation_position = AnnotationPosition::Inline;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn multiple_choice_letters_follow_inventory_order() {
        let slot = SlotSpec {
            name: "s".into(),
            description: String::new(),
            is_categorical: true,
            possible_values: (0..26).map(|i| format!("v{i}")).collect(),
        };
        let rendered = enumeration(&slot).unwrap();
        assert!(rendered.starts_with("a) v0 b) v1 c) v2"));
        assert!(rendered.ends_with("z) v25"));
    }

    #[test]
    fn more_than_26_values_is_rejected_under_multiple_choice() {
        let slot = SlotSpec {
            name: "s".into(),
            description: String::new(),
            is_categorical: true,
            possible_values: (0..27).map(|i| format!("v{i}")).collect(),
        };
        assert!(enumeration(&slot).is_err());
    }

    #[test]
    fn demonstrated_value_outside_inventory_is_a_render_error() {
        let (schema, mut pack) = fixtures();
        let mut example = pack.select_version("payments", 1).unwrap().clone();
        example.state.set("payment_method", vec!["bitcoin".into()]);
        pack.add_example(example).unwrap();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        assert!(render_prompt(&spec, &schema, &pack, 1).is_err());
    }

    #[test]
    fn multi_domain_turn_compiles_one_instance_per_service() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let pack = load_pack(&base.join("pack")).unwrap();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let instances = compile_corpus(&corpus, &pack, &spec, 1, VariantId::Orig).unwrap();

        let multi: Vec<_> = instances
            .iter()
            .filter(|i| i.provenance.dialogue_id == "multi_0002")
            .collect();
        assert_eq!(multi.len(), 2);
        let services: Vec<&str> = multi
            .iter()
            .map(|i| i.provenance.service_name.as_str())
            .collect();
        assert!(services.contains(&"payments"));
        assert!(services.contains(&"banks"));
    }

    #[test]
    fn empty_corpus_compiles_to_nothing() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let empty = Corpus::new(corpus.split, corpus.schemas.clone(), vec![]).unwrap();
        let pack = load_pack(&base.join("pack")).unwrap();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        assert!(compile_corpus(&empty, &pack, &spec, 1, VariantId::Orig)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ind_compiles_one_instance_per_slot_per_turn() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let pack = load_pack(&base.join("pack")).unwrap();

        // Three single-service payments turns over the 4-slot schema.
        let dialogues: Vec<Dialogue> = corpus
            .dialogues
            .iter()
            .filter(|d| d.dialogue_id == "pay_0001")
            .cloned()
            .chain(std::iter::once(Dialogue {
                dialogue_id: "pay_extra".into(),
                turns: vec![DialogueTurn {
                    speaker: Speaker::User,
                    utterance: "Send $1 to Zoe".into(),
                    frames: vec![Frame {
                        service: "payments".into(),
                        state: {
                            let mut s = DialogueState::new();
                            s.set("amount", vec!["$1".into()]);
                            s.set("receiver", vec!["Zoe".into()]);
                            s
                        },
                    }],
                }],
            }))
            .collect();
        let corpus = Corpus::new(corpus.split, corpus.schemas.clone(), dialogues).unwrap();

        let spec = FormatSpec::new(FormatFamily::SdtInd);
        let instances = compile_corpus(&corpus, &pack, &spec, 1, VariantId::Orig).unwrap();
        assert_eq!(instances.len(), 12);
        assert!(instances.iter().all(|i| i.provenance.slot_name.is_some()));
    }

    #[test]
    fn missing_pack_service_is_a_compile_error_listing_services() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let err =
            compile_corpus(&corpus, &PromptPack::new(), &spec, 1, VariantId::Orig).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("banks"), "{message}");
        assert!(message.contains("payments"), "{message}");
    }

    #[test]
    fn desc_families_compile_without_a_pack() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let spec = FormatSpec::new(FormatFamily::DescSeq);
        let instances =
            compile_corpus(&corpus, &PromptPack::new(), &spec, 1, VariantId::Orig).unwrap();
        assert_eq!(instances.len(), 4);
    }

    #[test]
    fn rendering_is_deterministic() {
        let (schema, pack) = fixtures();
        for family in [
            FormatFamily::SdtSeq,
            FormatFamily::DescSeq,
            FormatFamily::SdtSeqPlusDesc,
        ] {
            let spec = FormatSpec::new(family);
            let a = render_prompt(&spec, &schema, &pack, 1).unwrap();
            let b = render_prompt(&spec, &schema, &pack, 1).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn multi_demo_prompts_concatenate_versions() {
        let (schema, pack) = fixtures();
        let mut spec = FormatSpec::new(FormatFamily::SdtSeq);
        spec.demos_per_prompt = 2;
        let prompt = render_prompt(&spec, &schema, &pack, 1).unwrap();
        assert_eq!(prompt.matches("[ex]").count(), 2);
        assert!(prompt.starts_with(SDT_SEQ_GOLDEN));
    }

    #[test]
    fn instance_input_joins_prompt_and_context() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let corpus = load_corpus(&base.join("sgd/test"), Split::Test).unwrap();
        let pack = load_pack(&base.join("pack")).unwrap();
        let spec = FormatSpec::new(FormatFamily::SdtSeq);
        let instances = compile_corpus(&corpus, &pack, &spec, 1, VariantId::Orig).unwrap();
        let first = &instances[0];
        assert_eq!(first.input(), format!("{} {}", first.prompt, first.context));
        assert_eq!(first.instance_id, "pay_0001#0000#payments");
    }
}
