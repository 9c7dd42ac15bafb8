//! Measurement protocols: rollouts and error-versus-context curves for the
//! moons task, last-token scores for automaton sequences, induction
//! accuracy, and attention profiles.

mod moons;
mod tokens;

pub use moons::{moons_error_curve, rollout, ErrorCurve, MoonForecaster, PeriodicOracle, RepeatLast, HORIZON};
pub use tokens::{
    attention_profile, bandwidth, icl_eval, icl_eval_with, induction_accuracy, induction_eval, rollout_tokens,
    score_prediction, tvd, unit_attention_profile, AttentionProfile, IclScore,
};
