//! Contextual and persistent associative memory units and their feature
//! extractors.
//!
//! Each unit comes in two forms: tape builders ([`contextual_layer`],
//! [`persistent_layer`]) used inside trainable networks, and plain
//! evaluation helpers over fixed parameters ([`contextual_forward`] and
//! friends) that run the same builders on a throwaway tape.

mod contextual;
mod moons;
mod persistent;
mod state;

pub use contextual::{
    contextual_forward, contextual_keys, contextual_layer, contextual_values, extract_keys, extract_values,
    ContextualUnitParams, ContextualVars,
};
pub use moons::{moons_linear_extractors, HeadFeatures};
pub use persistent::{persistent_forward, persistent_layer, PersistentUnitParams, PersistentVars};
pub use state::{MemoryState, StreamingContextualUnit};
