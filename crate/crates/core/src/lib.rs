// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex;
pub mod degiorgi;
pub mod fit;
pub mod error;
pub mod families;
pub mod grid;
pub mod inequalities;
pub mod sym2;
pub mod plegendre;
pub mod solver;
pub mod harness;
