// Negated float comparisons are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod harness;
pub mod localtime;
pub mod model;
pub mod noise;
pub mod quad;
pub mod solver;
pub mod stats;
