//! Edge-reinforced random walks on infinite b-ary trees: simulation,
//! regeneration analysis, tail estimation, and an exact small-horizon oracle.

pub mod cli;
pub mod estimators;
pub mod oracle;
pub mod regen;
pub(crate) mod stats;
pub mod walk;
