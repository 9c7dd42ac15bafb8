//! Seeded synthetic data: three-moons sequences, automaton-generated
//! in-context-learning sequences, and the induction task.

mod dump;
mod induction;
mod moons;
mod pfa;

pub use dump::{decode_dump, encode_dump, DatasetDump, DUMP_VERSION};
pub use induction::{
    gen_induction, gen_induction_set, gen_induction_with, gen_induction_with_map, InductionConfig, InductionSample,
};
pub use moons::{
    gcd, gen_moon_sequence, gen_moon_sequence_len, gen_moon_system, lcm, random_phases, MoonPool, MoonSequence,
    MoonSystem, Split, MAX_LCM, MOON_SEQUENCE_LEN,
};
pub use pfa::{
    exact_next_token_distribution, gen_pfa, gen_pfa_pool, gen_pfa_with, sample_icl_sequence, sample_icl_sequence_with,
    Edge, IclConfig, IclSequence, PfaConfig, PfaSpec, PfaSplit,
};
