//! Command line front end wiring the corpus, reader, objective and
//! evaluation pieces into runnable experiments.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_compare, cmd_eval, cmd_sweep, cmd_synth, cmd_train, train_model, CompareReport, SweepRow,
    TrainSummary, TrainedModel,
};
pub use config::{Overrides, RunConfig};
