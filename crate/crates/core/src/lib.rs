//! Lower bounds on the worst-case runtime complexity of integer transition
//! systems.
//!
//! The crate is organised bottom-up: [`arith`] provides exact symbolic
//! arithmetic, [`smt`] a decision procedure for (non-)linear integer
//! arithmetic, [`program`] the rule representation, and the remaining
//! modules implement loop acceleration, the simplification pipeline and the
//! final asymptotic analysis.

pub mod arith;
pub mod asymptotics;
pub mod cli;
pub mod interp;
pub mod metering;
pub mod parse;
pub mod pipeline;
pub mod program;
pub mod recurrence;
pub mod report;
pub mod smt;
pub mod transform;
