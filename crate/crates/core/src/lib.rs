// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delay;
pub mod experiments;
pub mod mdp;
pub mod mixture;
pub mod timebase;
pub mod world;
