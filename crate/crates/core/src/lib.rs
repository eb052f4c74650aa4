// `!(x > 0.0)` rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod driver;
pub mod dual;
pub mod error;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod repro;
pub mod screening;
mod simplex;
pub mod solvers;
pub mod synth;
