//! Morphism-based architecture search: function-preserving edits (widen,
//! deepen, add skip) over dense networks, greedy hill climbing driven by a
//! softened distillation loss, and conversion of a winner into a two-exit
//! model.

mod ops;
mod search;
mod two_exit;

pub use ops::{add_skip, apply_morph, deepen, widen};
pub use search::{
    hill_climb, softened_loss, CandidateRecord, MorphKind, MorphOp, SearchConfig, SearchTrace,
};
pub use two_exit::{attach_exit, train_exits, ExitTrainMode, TwoExitModel};
