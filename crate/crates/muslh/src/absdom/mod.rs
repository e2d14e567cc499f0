//! Abstract domains: intervals, disjoint interval sets, base-offset
//! abstract values and the abstract memory model. Abstract taint vectors
//! are isomorphic to concrete ones and reuse [`crate::taint::TaintVector`].

pub mod check;
pub mod di;
pub mod interval;
pub mod memory;
pub mod value;

pub use di::{di_apply, Di};
pub use interval::{interval_apply, Interval};
pub use memory::{AbsMemory, Cell};
pub use value::{refine_on_branch, value_apply, AbsVal, Base};

/// Abstract taint vector over `{⊥̂, 0̂, 1̂, L̂, Ĥ}`.
pub type AbsTaint = crate::taint::TaintVector;
