//! Monte Carlo simulator and analysis toolkit for three-time-bin
//! plug-and-play twin-field QKD in a Sagnac star topology.
//!
//! Modules follow the signal path: [`optics`] for beam-splitter
//! interference and detector clicks, [`channel`] for fiber loss, loop phase
//! drift and backscatter, [`timing`] for bins and guard bands, [`protocol`]
//! for encoding, sifting and flip correction, [`analysis`] for rates and the
//! closed-form model, and [`sim`] for the seeded Monte Carlo driver.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod optics;
pub mod output;
pub mod presets;
pub mod protocol;
pub mod selftest;
pub mod sim;
pub mod timing;

pub use analysis::{analytic_skr, secure_key_rate, LinkModel, RunStats};
pub use sim::{run, sweep, SimConfig, SweepSpec};

/// Crate version recorded in every result manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
