//! Shared fixture shapes for the throughput benchmarks.

use sdt_core::corpus::{Corpus, Split};
use sdt_core::pack::PromptPack;
use sdt_core::synth::{make_corpus, make_pack, SynthSpec};

/// A corpus sized so one sequential compile pass emits `user_turns`
/// instances (single-service dialogues, eight user turns each).
pub fn bench_corpus(user_turns: usize) -> (Corpus, PromptPack) {
    let spec = SynthSpec {
        services: 4,
        slots_per_service: 5,
        categorical_per_service: 2,
        dialogues: user_turns / 8,
        user_turns_per_dialogue: 8,
        multi_domain_every: 0,
        seed: 17,
    };
    (make_corpus(Split::Test, &spec), make_pack(&spec, 1))
}
