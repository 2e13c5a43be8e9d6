//! Deterministic synthetic corpora and packs for tests and benchmarks.
//!
//! Everything here is seeded: the same parameters always produce the same
//! corpus, pack, and states, so fixtures can be regenerated inside tests
//! instead of being checked in.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{
    Corpus, Dialogue, DialogueState, DialogueTurn, Frame, ServiceSchema, SlotSpec, Speaker, Split,
};
use crate::pack::{AnnotatedExample, PromptPack, SlotExample};

pub struct SynthSpec {
    pub services: usize,
    pub slots_per_service: usize,
    /// Of which this many are categorical (at least 2 recommended).
    pub categorical_per_service: usize,
    pub dialogues: usize,
    pub user_turns_per_dialogue: usize,
    /// Every n-th dialogue pairs two services on its user turns.
    pub multi_domain_every: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            services: 3,
            slots_per_service: 5,
            categorical_per_service: 2,
            dialogues: 20,
            user_turns_per_dialogue: 4,
            multi_domain_every: 7,
            seed: 11,
        }
    }
}

fn service_name(i: usize) -> String {
    format!("service_{i}")
}

fn slot_name(service: usize, slot: usize) -> String {
    format!("svc{service}_slot{slot}")
}

pub fn make_schema(service: usize, spec: &SynthSpec) -> ServiceSchema {
    let slots = (0..spec.slots_per_service)
        .map(|s| {
            let categorical = s < spec.categorical_per_service;
            SlotSpec {
                name: slot_name(service, s),
                description: format!("Synthetic description of slot {s} in service {service}"),
                is_categorical: categorical,
                possible_values: if categorical {
                    (0..3).map(|v| format!("value {v} of {s}")).collect()
                } else {
                    vec![]
                },
            }
        })
        .collect();
    ServiceSchema {
        service_name: service_name(service),
        description: format!("Synthetic service {service}"),
        slots,
    }
}

fn random_state(schema: &ServiceSchema, rng: &mut ChaCha20Rng) -> DialogueState {
    let mut state = DialogueState::new();
    for slot in &schema.slots {
        if rng.random_bool(0.6) {
            let value = if slot.is_categorical {
                let idx = rng.random_range(0..slot.possible_values.len());
                slot.possible_values[idx].clone()
            } else {
                format!("free text {}", rng.random_range(0..1000))
            };
            state.set(slot.name.clone(), vec![value]);
        }
    }
    state
}

/// Builds a corpus with the requested shape. States grow monotonically
/// within a dialogue the way real dialogue states do.
pub fn make_corpus(split: Split, spec: &SynthSpec) -> Corpus {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let schemas: BTreeMap<String, ServiceSchema> = (0..spec.services)
        .map(|i| (service_name(i), make_schema(i, spec)))
        .collect();

    let mut dialogues = Vec::with_capacity(spec.dialogues);
    for d in 0..spec.dialogues {
        let primary = d % spec.services;
        let multi = spec.multi_domain_every > 0 && d % spec.multi_domain_every == 0;
        let secondary = (primary + 1) % spec.services;

        let mut turns = Vec::new();
        let mut states: BTreeMap<usize, DialogueState> = BTreeMap::new();
        for t in 0..spec.user_turns_per_dialogue {
            let mut frames = Vec::new();
            let mut involved = vec![primary];
            if multi && spec.services > 1 {
                involved.push(secondary);
            }
            for &svc in &involved {
                let schema = &schemas[&service_name(svc)];
                let state = states.entry(svc).or_default();
                // Grow the state by up to two new slots per turn.
                for slot in &schema.slots {
                    if state.assignments.contains_key(&slot.name) || !rng.random_bool(0.4) {
                        continue;
                    }
                    let value = if slot.is_categorical {
                        let idx = rng.random_range(0..slot.possible_values.len());
                        slot.possible_values[idx].clone()
                    } else {
                        format!("free text {}", rng.random_range(0..1000))
                    };
                    state.set(slot.name.clone(), vec![value]);
                }
                frames.push(Frame {
                    service: service_name(svc),
                    state: state.clone(),
                });
            }
            turns.push(DialogueTurn {
                speaker: Speaker::User,
                utterance: format!("synthetic user utterance {d}-{t}"),
                frames,
            });
            if t + 1 < spec.user_turns_per_dialogue {
                turns.push(DialogueTurn {
                    speaker: Speaker::System,
                    utterance: format!("synthetic system reply {d}-{t}"),
                    frames: vec![],
                });
            }
        }
        dialogues.push(Dialogue {
            dialogue_id: format!("synth_{d:05}"),
            turns,
        });
    }

    Corpus::new(split, schemas, dialogues).expect("synthetic corpus is valid by construction")
}

/// Builds a pack with `versions` annotated examples and slot-example sets
/// per service, each covering the full schema.
pub fn make_pack(spec: &SynthSpec, versions: u32) -> PromptPack {
    let mut pack = PromptPack::new();
    for svc in 0..spec.services {
        let schema = make_schema(svc, spec);
        for version in 1..=versions {
            let mut state = DialogueState::new();
            let mut mentions = Vec::new();
            for (i, slot) in schema.slots.iter().enumerate() {
                let value = if slot.is_categorical {
                    slot.possible_values[(version as usize + i) % slot.possible_values.len()]
                        .clone()
                } else {
                    format!("demo value {i} v{version}")
                };
                mentions.push(format!("the {} is {}", slot.name, value));
                state.set(slot.name.clone(), vec![value]);
            }
            let turns = vec![
                DialogueTurn {
                    speaker: Speaker::User,
                    utterance: format!("I need service {svc}, {}", mentions.join(", ")),
                    frames: vec![],
                },
                DialogueTurn {
                    speaker: Speaker::System,
                    utterance: "Sure, confirming your request".into(),
                    frames: vec![],
                },
                DialogueTurn {
                    speaker: Speaker::User,
                    utterance: "Yes that is right".into(),
                    frames: vec![],
                },
            ];
            pack.add_example(AnnotatedExample {
                service_name: service_name(svc),
                version_id: version,
                turns,
                state: state.clone(),
                slot_turns: BTreeMap::new(),
            })
            .expect("synthetic example is valid");

            for slot in &schema.slots {
                let value = state.canonical(&slot.name).expect("covered").to_string();
                pack.add_slot_example(SlotExample {
                    service_name: service_name(svc),
                    slot_name: slot.name.clone(),
                    version_id: version,
                    utterance: format!("single utterance mentioning {} as {}", slot.name, value),
                    value,
                })
                .expect("synthetic slot example is valid");
            }
        }
    }
    pack
}

/// A random valid state over a schema, for round-trip property tests.
pub fn random_valid_state(schema: &ServiceSchema, seed: u64) -> DialogueState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    random_state(schema, &mut rng)
}
