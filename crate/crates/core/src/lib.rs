//! MPC for tracking with artificial references and a horizon-scaled offset
//! cost, plus closed-loop simulation and numerical audits of its stability
//! and transient-performance guarantees.

// Negated comparisons reject NaN; index loops follow the block structure.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod analysis;
pub mod costs;
pub mod linalg;
pub mod model;
pub mod nlp;
pub mod ocp;
pub mod qp;
pub mod sim;
pub mod terminal;
