#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err, clippy::needless_range_loop)]

pub mod cell_problem;
pub mod cli_io;
pub mod convergence_lab;
pub mod exprlang;
pub mod gibbs;
pub mod integrator;
pub mod linalg;
pub mod linear_diag;
pub mod model_spec;
