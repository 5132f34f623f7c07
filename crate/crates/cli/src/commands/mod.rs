pub mod compare;
pub mod eval;
pub mod sweep;
pub mod synth;
pub mod train;

pub use compare::{cmd_compare, compare_dumps, format_compare, CompareReport};
pub use eval::{cmd_eval, format_report, write_dump};
pub use sweep::{cmd_sweep, format_csv, SweepRow};
pub use synth::cmd_synth;
pub use train::{cmd_train, format_log_line, train_model, TrainSummary, TrainedModel};
