//! Levenshtein Transformer post-editor.

pub mod model;
pub mod oracle;

pub use model::{LevtConfig, LevtExample, LevtModel, RefineOutput};
pub use oracle::{
    apply_edits, indel_distance, init_state, oracle_edits, EditActions, EditState, EditSymbol,
    InitStrategy,
};
