//! H-infinity norms, the weighted multichannel objective, and
//! fixed-structure synthesis over the flattened gain vector.
//!
//! The objective is `max_k ||W_k T_k||_inf` over scalar channels, which is the
//! norm of the block-diagonal collection `diag(W_k T_k)`.

mod norm;
mod objective;
mod search;
mod weight;

pub use norm::{
    hinf_norm_bisection, hinf_norm_bisection_from, hinf_norm_grid, sigma_max, FrequencyGrid,
};
pub use objective::{
    channel_norm, evaluate, is_penalty, objective, Channel, Evaluation, NormMethod,
    ObjectiveContext, FAILURE_PENALTY, PENALTY_BASE,
};
pub use search::{
    pattern_search, synthesize, HistoryEntry, SearchOptions, SearchOutcome, StopReason,
    SynthesisProblem, SynthesisResult,
};
pub use weight::{weighted_channel, Weight};
