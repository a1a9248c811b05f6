//! Inner products, the differentiable-operator contract, sparse Jacobian
//! assembly and sparse direct solves.

pub mod inner;
pub mod jacobian;
pub mod op;
pub mod sparse;

pub use inner::{cholesky_diag, inner, DiagFactor, InnerProduct};
pub use jacobian::{assemble_jacobian, assemble_jacobian_ordered, dense_fd_jacobian, probe_pattern, StencilPattern};
pub use op::{dot_test, linearity_defect, AdOp, DifferentiableOp, Kernel};
pub use sparse::{lu_solve, transpose_solve, SparseOperator};
