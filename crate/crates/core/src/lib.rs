// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bracket;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod frame;
pub mod lattice;
pub mod oracle;
pub mod par;
pub mod shadowing;
