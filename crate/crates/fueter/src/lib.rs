//! Computable k-Cauchy-Fueter complex on domains in R^4.
//!
//! The crate has three layers:
//!
//! * exact two-spinor index algebra and polynomial scalar fields, used to
//!   verify the operator identities of the complex coefficient-by-coefficient
//!   ([`spinor`], [`fields`], [`operators`]);
//! * Hermitian-form based convexity checks (k-plurisubharmonicity of weights,
//!   k-pseudoconvexity of domains) and the principal-symbol rank/kernel facts
//!   ([`convexity`], [`symbols`]);
//! * a discretized weighted Neumann solver on masked 4-D grids producing
//!   canonical solutions of `D0 u = f` and probing the associated L^2
//!   estimate ([`neumann`]), driven by a JSON-configured CLI ([`cli`]).

pub mod cli;
pub mod convexity;
pub mod fields;
pub mod neumann;
pub mod operators;
pub mod spinor;
pub mod symbols;

/// Complex double precision, the scalar type used everywhere.
pub type C64 = num_complex::Complex64;
