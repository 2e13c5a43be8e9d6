//! Parsing decoded model strings back into structured dialogue states.
//!
//! Parsing is total: any byte string, including empty and adversarial
//! garbage, yields a [`ParsedState`]; problems surface as diagnostics, never
//! as errors or panics. A parsed state only ever contains slots of the
//! governing schema, with categorical values resolved to inventory members
//! (multiple-choice letters never leak through).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::{letter_index, CategoricalMode, FormatSpec, Provenance, SlotNaming};
use crate::corpus::{ServiceSchema, SlotSpec, DONTCARE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// An `ident=value` segment whose identifier is not in the schema.
    UnknownSlot,
    /// A categorical value that could not be resolved: an out-of-range or
    /// non-letter answer under multiple choice, or an off-inventory string
    /// under value-string mode.
    BadLetter,
    /// The same slot assigned more than once; the last occurrence wins.
    DuplicateSlot,
    /// Empty or whitespace-only raw output, or a missing per-slot prediction.
    EmptyOutput,
}

impl DiagnosticKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagnosticKind::UnknownSlot => "unknown_slot",
            DiagnosticKind::BadLetter => "bad_letter",
            DiagnosticKind::DuplicateSlot => "duplicate_slot",
            DiagnosticKind::EmptyOutput => "empty_output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, detail: impl Into<String>) -> Self {
        Diagnostic {
            kind,
            detail: detail.into(),
        }
    }
}

/// A structured interpretation of one decoded string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedState {
    /// Slot name (schema vocabulary) to predicted value. Categorical values
    /// are canonical inventory members or `dontcare`.
    pub assignments: BTreeMap<String, String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedState {
    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// A raw decoded string paired with its parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub raw_output: String,
    pub parsed: ParsedState,
}

/// Trim, collapse internal whitespace runs, and lowercase; used when
/// matching decoded values against categorical inventories.
pub fn normalize(value: &str) -> String {
    value
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Resolves a decoded value for one slot, recording a diagnostic and
/// returning `None` when it cannot be resolved. `none` means "inactive" and
/// also resolves to `None`, without a diagnostic.
fn resolve_value(
    slot: &SlotSpec,
    raw_value: &str,
    mode: CategoricalMode,
    diagnostics: &mut Vec<Diagnostic>,
) -> Option<String> {
    let trimmed = raw_value.trim();
    if trimmed.is_empty() {
        return None;
    }
    let norm = normalize(trimmed);
    if norm == "none" {
        return None;
    }
    if norm == DONTCARE {
        return Some(DONTCARE.to_string());
    }
    if !slot.is_categorical {
        return Some(trimmed.to_string());
    }
    match mode {
        CategoricalMode::MultipleChoice => {
            let mut chars = norm.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => match letter_index(c, slot) {
                    Some(idx) => Some(slot.possible_values[idx].clone()),
                    None => {
                        diagnostics.push(Diagnostic::new(
                            DiagnosticKind::BadLetter,
                            format!("slot '{}': letter '{c}' is out of range", slot.name),
                        ));
                        None
                    }
                },
                _ => {
                    diagnostics.push(Diagnostic::new(
                        DiagnosticKind::BadLetter,
                        format!(
                            "slot '{}': expected a choice letter, got '{trimmed}'",
                            slot.name
                        ),
                    ));
                    None
                }
            }
        }
        CategoricalMode::ValueString => {
            match slot.possible_values.iter().find(|v| normalize(v) == norm) {
                Some(v) => Some(v.clone()),
                None => {
                    diagnostics.push(Diagnostic::new(
                        DiagnosticKind::BadLetter,
                        format!(
                            "slot '{}': value '{trimmed}' is not in its inventory",
                            slot.name
                        ),
                    ));
                    None
                }
            }
        }
    }
}

/// The set of identifiers a sequential parse recognizes as segment heads,
/// longest first so identifiers that prefix other identifiers never shadow
/// them.
fn identifier_table(schema: &ServiceSchema, naming: SlotNaming) -> Vec<(String, usize)> {
    let mut table: Vec<(String, usize)> = schema
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| match naming {
            SlotNaming::Name => (s.name.clone(), i),
            SlotNaming::Id => (i.to_string(), i),
        })
        .collect();
    table.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    table
}

/// Parses a sequential-family output into per-slot assignments.
///
/// The raw string is split into `ident=value` segments: a segment opens at a
/// token boundary where a known slot identifier is immediately followed by
/// `=`, and its value runs until the next segment. Tokens of the shape
/// `head=...` with an unrecognized head open a discarded segment and are
/// reported as unknown slots; everything else is ignored. Duplicate
/// assignments keep the last occurrence.
pub fn parse_seq_output(raw: &str, schema: &ServiceSchema, spec: &FormatSpec) -> ParsedState {
    let mut state = ParsedState::default();
    if raw.trim().is_empty() {
        state.diagnostics.push(Diagnostic::new(
            DiagnosticKind::EmptyOutput,
            "empty decoded string",
        ));
        return state;
    }

    let table = identifier_table(schema, spec.effective_naming());

    struct Segment {
        slot: Option<usize>,
        head: String,
        value_start: usize,
        value_end: usize,
    }
    let mut segments: Vec<Segment> = Vec::new();

    let mut pos = 0;
    let mut at_token_start = true;
    while pos < raw.len() {
        let c = raw[pos..]
            .chars()
            .next()
            .expect("pos stays on char boundaries");
        if c.is_whitespace() {
            at_token_start = true;
            pos += c.len_utf8();
            continue;
        }
        if at_token_start {
            at_token_start = false;
            if let Some((ident, slot_idx)) = table
                .iter()
                .find(|(ident, _)| {
                    raw[pos..].starts_with(ident.as_str())
                        && raw[pos + ident.len()..].starts_with('=')
                })
                .cloned()
            {
                if let Some(last) = segments.last_mut() {
                    last.value_end = pos;
                }
                let value_start = pos + ident.len() + 1;
                segments.push(Segment {
                    slot: Some(slot_idx),
                    head: ident,
                    value_start,
                    value_end: raw.len(),
                });
                pos = value_start;
                at_token_start = true;
                continue;
            }
            // Unknown assignment-shaped token: carve it out of the enclosing
            // value so stray hallucinated slots do not pollute neighbours.
            let token_end = raw[pos..]
                .find(char::is_whitespace)
                .map(|o| pos + o)
                .unwrap_or(raw.len());
            if let Some(eq) = raw[pos..token_end].find('=') {
                if eq > 0 {
                    if let Some(last) = segments.last_mut() {
                        last.value_end = pos;
                    }
                    segments.push(Segment {
                        slot: None,
                        head: raw[pos..pos + eq].to_string(),
                        value_start: pos + eq + 1,
                        value_end: raw.len(),
                    });
                }
            }
            pos = token_end;
            continue;
        }
        pos += c.len_utf8();
    }

    let mut mentioned = std::collections::BTreeSet::new();
    for segment in &segments {
        let value = raw[segment.value_start..segment.value_end].trim();
        match segment.slot {
            None => {
                state.diagnostics.push(Diagnostic::new(
                    DiagnosticKind::UnknownSlot,
                    format!("unrecognized slot identifier '{}'", segment.head),
                ));
            }
            Some(idx) => {
                let slot = &schema.slots[idx];
                if !mentioned.insert(idx) {
                    state.diagnostics.push(Diagnostic::new(
                        DiagnosticKind::DuplicateSlot,
                        format!(
                            "slot '{}' assigned more than once; keeping the last",
                            slot.name
                        ),
                    ));
                    state.assignments.remove(&slot.name);
                }
                if let Some(v) =
                    resolve_value(slot, value, spec.categorical_mode, &mut state.diagnostics)
                {
                    state.assignments.insert(slot.name.clone(), v);
                }
            }
        }
    }

    state
}

/// Parses an independent-family output: the whole (trimmed) string is the
/// value of `slot_name`.
pub fn parse_ind_output(
    raw: &str,
    schema: &ServiceSchema,
    slot_name: &str,
    spec: &FormatSpec,
) -> ParsedState {
    let mut state = ParsedState::default();
    let Some(slot) = schema.slot(slot_name) else {
        state.diagnostics.push(Diagnostic::new(
            DiagnosticKind::UnknownSlot,
            format!(
                "slot '{slot_name}' not in service '{}'",
                schema.service_name
            ),
        ));
        return state;
    };
    if raw.trim().is_empty() {
        state.diagnostics.push(Diagnostic::new(
            DiagnosticKind::EmptyOutput,
            "empty decoded string",
        ));
        return state;
    }
    if let Some(v) = resolve_value(slot, raw, spec.categorical_mode, &mut state.diagnostics) {
        state.assignments.insert(slot.name.clone(), v);
    }
    state
}

/// Dispatches on the format family.
pub fn parse_output(
    raw: &str,
    schema: &ServiceSchema,
    slot_name: Option<&str>,
    spec: &FormatSpec,
) -> ParsedState {
    match slot_name {
        Some(slot) if spec.family.is_independent() => parse_ind_output(raw, schema, slot, spec),
        _ => parse_seq_output(raw, schema, spec),
    }
}

/// Combines the per-instance parses of one (dialogue, turn, service) group
/// into a single turn state.
///
/// For independent families the group must hold exactly one prediction per
/// schema slot; gaps produce diagnostics. For sequential families the group
/// is a single prediction passed through unchanged. Mixed provenance is a
/// hard error.
pub fn assemble_turn_state(
    parts: &[(Provenance, ParsedState)],
    schema: &ServiceSchema,
    spec: &FormatSpec,
) -> Result<ParsedState> {
    let mut state = ParsedState::default();
    if parts.is_empty() {
        state.diagnostics.push(Diagnostic::new(
            DiagnosticKind::EmptyOutput,
            "no predictions for this turn",
        ));
        return Ok(state);
    }

    let key = parts[0].0.turn_key();
    for (provenance, _) in parts {
        if provenance.turn_key() != key {
            return Err(Error::ProvenanceConflict(format!(
                "cannot assemble predictions from different turns: {:?} vs {:?}",
                key,
                provenance.turn_key()
            )));
        }
    }

    if spec.family.is_independent() {
        for slot in &schema.slots {
            let covered = parts
                .iter()
                .any(|(p, _)| p.slot_name.as_deref() == Some(slot.name.as_str()));
            if !covered {
                state.diagnostics.push(Diagnostic::new(
                    DiagnosticKind::EmptyOutput,
                    format!("no prediction for slot '{}'", slot.name),
                ));
            }
        }
    }

    for (_, parsed) in parts {
        for (slot, value) in &parsed.assignments {
            if state
                .assignments
                .insert(slot.clone(), value.clone())
                .is_some()
            {
                state.diagnostics.push(Diagnostic::new(
                    DiagnosticKind::DuplicateSlot,
                    format!("slot '{slot}' predicted by more than one instance"),
                ));
            }
        }
        state.diagnostics.extend(parsed.diagnostics.iter().cloned());
    }

    Ok(state)
}

/// Combines per-service turn states of one multi-domain turn. Slots are
/// namespaced by service, so this is a keyed union; a duplicate service is a
/// hard error.
pub fn merge_domains(states: Vec<(String, ParsedState)>) -> Result<BTreeMap<String, ParsedState>> {
    let mut out = BTreeMap::new();
    for (service, state) in states {
        if out.insert(service.clone(), state).is_some() {
            return Err(Error::ProvenanceConflict(format!(
                "two states supplied for service '{service}'"
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::FormatFamily;
    use crate::corpus::load_schemas;

    fn payments() -> ServiceSchema {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        load_schemas(&base.join("sgd/test")).unwrap()["payments"].clone()
    }

    fn seq_spec() -> FormatSpec {
        FormatSpec::new(FormatFamily::SdtSeq)
    }

    fn ind_spec() -> FormatSpec {
        FormatSpec::new(FormatFamily::SdtInd)
    }

    fn kinds(state: &ParsedState) -> Vec<DiagnosticKind> {
        let mut kinds: Vec<DiagnosticKind> = state.diagnostics.iter().map(|d| d.kind).collect();
        kinds.sort();
        kinds
    }

    #[test]
    fn parses_letters_back_to_inventory_values() {
        let parsed = parse_seq_output(
            "amount=$82 receiver=Jerry private_visibility=a payment_method=a",
            &payments(),
            &seq_spec(),
        );
        assert!(parsed.diagnostics.is_empty());
        assert_eq!(parsed.assignments["amount"], "$82");
        assert_eq!(parsed.assignments["receiver"], "Jerry");
        assert_eq!(parsed.assignments["private_visibility"], "True");
        assert_eq!(parsed.assignments["payment_method"], "credit card");
    }

    #[test]
    fn all_none_parses_to_empty_state() {
        let parsed = parse_seq_output(
            "amount=none receiver=none private_visibility=none payment_method=none",
            &payments(),
            &seq_spec(),
        );
        assert!(parsed.assignments.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn unknown_slot_and_bad_letter_become_diagnostics() {
        let parsed = parse_seq_output(
            "amount=$82 fee=low payment_method=z",
            &payments(),
            &seq_spec(),
        );
        assert_eq!(parsed.assignments.len(), 1);
        assert_eq!(parsed.assignments["amount"], "$82");
        assert_eq!(
            kinds(&parsed),
            vec![DiagnosticKind::UnknownSlot, DiagnosticKind::BadLetter]
        );
        assert!(parsed.diagnostics.iter().any(|d| d.detail.contains("fee")));
        assert!(parsed
            .diagnostics
            .iter()
            .any(|d| d.detail.contains("payment_method")));
    }

    #[test]
    fn multiword_values_run_until_the_next_boundary() {
        let parsed = parse_seq_output(
            "amount=82 US dollars receiver=Jerry Jones Jr.",
            &payments(),
            &seq_spec(),
        );
        assert_eq!(parsed.assignments["amount"], "82 US dollars");
        assert_eq!(parsed.assignments["receiver"], "Jerry Jones Jr.");
    }

    #[test]
    fn longest_identifier_wins_at_a_boundary() {
        let mut schema = payments();
        schema.slots.push(SlotSpec {
            name: "amount_currency".into(),
            description: String::new(),
            is_categorical: false,
            possible_values: vec![],
        });
        let parsed = parse_seq_output("amount_currency=USD amount=5", &schema, &seq_spec());
        assert_eq!(parsed.assignments["amount_currency"], "USD");
        assert_eq!(parsed.assignments["amount"], "5");
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn duplicate_mentions_keep_the_last_occurrence() {
        let parsed = parse_seq_output("amount=$5 amount=$9", &payments(), &seq_spec());
        assert_eq!(parsed.assignments["amount"], "$9");
        assert_eq!(kinds(&parsed), vec![DiagnosticKind::DuplicateSlot]);

        let parsed = parse_seq_output("amount=$5 amount=none", &payments(), &seq_spec());
        assert!(!parsed.assignments.contains_key("amount"));
    }

    #[test]
    fn empty_output_is_diagnosed_not_fatal() {
        let parsed = parse_seq_output("", &payments(), &seq_spec());
        assert!(parsed.assignments.is_empty());
        assert_eq!(kinds(&parsed), vec![DiagnosticKind::EmptyOutput]);

        let parsed = parse_seq_output("   \t  ", &payments(), &seq_spec());
        assert_eq!(kinds(&parsed), vec![DiagnosticKind::EmptyOutput]);
    }

    #[test]
    fn garbage_parses_to_empty_assignments() {
        let parsed = parse_seq_output("garbage", &payments(), &seq_spec());
        assert!(parsed.assignments.is_empty());
    }

    #[test]
    fn id_naming_resolves_indices_through_schema_order() {
        let mut spec = seq_spec();
        spec.slot_naming = SlotNaming::Id;
        let parsed = parse_seq_output("0=$82 1=Jerry 2=a 3=a", &payments(), &spec);
        assert_eq!(parsed.assignments["amount"], "$82");
        assert_eq!(parsed.assignments["payment_method"], "credit card");
    }

    #[test]
    fn value_string_mode_matches_inventory_after_normalization() {
        let mut spec = seq_spec();
        spec.categorical_mode = CategoricalMode::ValueString;
        let parsed = parse_seq_output(
            "payment_method=Debit  Card private_visibility=true",
            &payments(),
            &spec,
        );
        assert_eq!(parsed.assignments["payment_method"], "debit card");
        assert_eq!(parsed.assignments["private_visibility"], "True");

        let parsed = parse_seq_output("payment_method=bank balance", &payments(), &spec);
        assert!(!parsed.assignments.contains_key("payment_method"));
        assert_eq!(kinds(&parsed), vec![DiagnosticKind::BadLetter]);
    }

    #[test]
    fn dontcare_passes_through_for_any_slot() {
        let parsed = parse_seq_output("payment_method=dontcare", &payments(), &seq_spec());
        assert_eq!(parsed.assignments["payment_method"], "dontcare");
    }

    #[test]
    fn uppercase_letters_resolve_case_insensitively() {
        let parsed = parse_seq_output("payment_method=B", &payments(), &seq_spec());
        assert_eq!(parsed.assignments["payment_method"], "debit card");
    }

    #[test]
    fn ind_value_is_the_whole_string() {
        let schema = payments();
        let parsed = parse_ind_output("125 dollars", &schema, "amount", &ind_spec());
        assert_eq!(parsed.assignments["amount"], "125 dollars");
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn ind_none_means_inactive() {
        let parsed = parse_ind_output("none", &payments(), "receiver", &ind_spec());
        assert!(parsed.assignments.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn ind_letter_resolves_through_inventory() {
        let parsed = parse_ind_output("b", &payments(), "payment_method", &ind_spec());
        assert_eq!(parsed.assignments["payment_method"], "debit card");

        let parsed = parse_ind_output("q", &payments(), "payment_method", &ind_spec());
        assert!(parsed.assignments.is_empty());
        assert_eq!(kinds(&parsed), vec![DiagnosticKind::BadLetter]);
    }

    fn prov(slot: Option<&str>) -> crate::compiler::Provenance {
        crate::compiler::Provenance {
            dialogue_id: "d1".into(),
            turn_index: 0,
            service_name: "payments".into(),
            slot_name: slot.map(String::from),
            variant: crate::corpus::VariantId::Orig,
            version: 1,
        }
    }

    fn single(slot: &str, value: &str) -> ParsedState {
        let mut parsed = ParsedState::default();
        parsed.assignments.insert(slot.into(), value.into());
        parsed
    }

    #[test]
    fn assemble_unions_ind_predictions() {
        let schema = payments();
        let parts = vec![
            (prov(Some("amount")), single("amount", "$82")),
            (prov(Some("receiver")), ParsedState::default()),
            (prov(Some("private_visibility")), ParsedState::default()),
            (
                prov(Some("payment_method")),
                single("payment_method", "credit card"),
            ),
        ];
        let state = assemble_turn_state(&parts, &schema, &ind_spec()).unwrap();
        assert_eq!(state.assignments.len(), 2);
        assert!(state.diagnostics.is_empty());
    }

    #[test]
    fn assemble_flags_missing_slot_predictions() {
        let schema = payments();
        let parts = vec![(prov(Some("amount")), single("amount", "$82"))];
        let state = assemble_turn_state(&parts, &schema, &ind_spec()).unwrap();
        assert_eq!(state.assignments.len(), 1);
        assert_eq!(state.diagnostics.len(), 3);
        assert!(state
            .diagnostics
            .iter()
            .all(|d| d.kind == DiagnosticKind::EmptyOutput));
    }

    #[test]
    fn assemble_of_nothing_is_empty_with_diagnostic() {
        let state = assemble_turn_state(&[], &payments(), &ind_spec()).unwrap();
        assert!(state.assignments.is_empty());
        assert_eq!(kinds(&state), vec![DiagnosticKind::EmptyOutput]);
    }

    #[test]
    fn assemble_seq_is_identity() {
        let schema = payments();
        let parsed = single("amount", "$82");
        let parts = vec![(prov(None), parsed.clone())];
        let state = assemble_turn_state(&parts, &schema, &seq_spec()).unwrap();
        assert_eq!(state, parsed);
    }

    #[test]
    fn assemble_rejects_mixed_turns() {
        let schema = payments();
        let mut other = prov(Some("receiver"));
        other.turn_index = 3;
        let parts = vec![
            (prov(Some("amount")), single("amount", "$82")),
            (other, single("receiver", "Jo")),
        ];
        assert!(assemble_turn_state(&parts, &schema, &ind_spec()).is_err());
    }

    #[test]
    fn merge_keeps_services_independent() {
        let merged = merge_domains(vec![
            ("restaurants".into(), single("city", "Oslo")),
            ("hotels".into(), single("stars", "4")),
        ])
        .unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged["restaurants"].assignments["city"], "Oslo");
        assert_eq!(merged["hotels"].assignments["stars"], "4");
    }

    #[test]
    fn merge_of_nothing_is_empty() {
        assert!(merge_domains(vec![]).unwrap().is_empty());
    }

    #[test]
    fn merge_rejects_duplicate_services() {
        let result = merge_domains(vec![
            ("hotels".into(), ParsedState::default()),
            ("hotels".into(), ParsedState::default()),
        ]);
        assert!(result.is_err());
    }
}
