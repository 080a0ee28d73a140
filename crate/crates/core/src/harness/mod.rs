//! Experiment plumbing behind the command line: configs, the exact-MI
//! oracle, SNR sweeps and result files.

pub mod config;
pub mod io;
pub mod oracle;
pub mod sweep;

pub use config::{ConstellationSpec, ExperimentConfig, Mode};
pub use io::{load_precoders, save_precoders, Provenance, SweepRow};
pub use oracle::{mc_exact_mi, mc_exact_wsr, ChannelSource, FixedChannels, OracleEstimate, OracleOptions};
pub use sweep::{count_table, run_sweep, CountRow, SweepOutcome};
