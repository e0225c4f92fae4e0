//! End-user operations built on the codec and the trained generator.

pub mod baseline;
pub mod cli;
pub mod cmaes;
pub mod complete;
pub mod eval;
pub mod generate;
pub mod synth;

pub use baseline::{baseline_linear, extrapolate_at, LinearMode};
pub use cmaes::{cmaes_minimize, CmaesConfig, CmaesResult};
pub use complete::{
    complete, complete_bidirectional, complete_optimized, completion_state, stitch, stitch_index,
    Completion, CompletionRequest, Strategy,
};
pub use eval::{
    eval_position_error, feature_change_curve, write_change_curve, EvalReport, ERROR_UNIT,
};
pub use generate::generate_conditional;
pub use synth::{
    bar_for_vertex_count, bar_mesh, bend, synth_dataset, synth_sequence, twist, write_sequence,
    SynthKind, SynthSpec,
};
