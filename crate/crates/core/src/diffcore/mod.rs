//! Minimal reverse-mode automatic differentiation over dense `f64` arrays,
//! the Adam update rule, and the named-array checkpoint container.

mod adam;
mod array;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;

pub use adam::Adam;
pub use array::Array;
pub use gradcheck::grad_check;
pub use graph::{Graph, OpTag, Var, COSINE_EPS};
pub use params::{Bound, ParamId, ParamStore};
