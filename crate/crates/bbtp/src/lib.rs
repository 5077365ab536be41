//! Analytical throughput bounds for x86 basic blocks on Intel Core pipelines.
//!
//! The model treats each pipeline component as an independent throughput
//! limiter and predicts the steady-state reciprocal throughput of a basic
//! block (cycles per iteration) as the maximum over the per-component
//! bounds. Because the bounds are independent, the prediction directly
//! identifies the bottleneck component(s) and supports counterfactual
//! queries ("how much faster if component X were infinitely fast?").
//!
//! Components, from the front of the pipeline to the back:
//!
//! * predecoder (16-byte fetch blocks, length-changing-prefix penalties)
//! * decoder (one complex + several simple decoders)
//! * decoded stream buffer (uop cache) and loop stream detector
//! * issue stage (renamer width)
//! * execution ports (contention over port combinations)
//! * precedence constraints (dependence cycles across loop iterations)
//!
//! Two execution modes are modeled: [`Mode::Unroll`] for blocks executed as
//! repeated straight-line copies (fetched and decoded every iteration), and
//! [`Mode::Loop`] for blocks that end in a branch back to their start
//! (served from the LSD or DSB in steady state, unless the JCC-erratum
//! mitigation forces the legacy decode path).
//!
//! All bounds are exact rationals; rounding happens only when formatting
//! output.

pub mod backend;
pub mod combine;
pub mod frontend;
pub mod io;
pub mod metrics;
pub mod model;
pub mod precedence;
pub mod rational;
pub mod report;

pub use combine::{counterfactual, jcc_affected, predict, predict_loop, predict_unroll};
pub use model::{
    BasicBlock, Component, ComponentResult, Detail, Instruction, MicroArchConfig, Mode, PortSet,
    PortUsageEntry, Prediction, ValueId, ValueKind,
};
pub use rational::Rat;
