//! Two-branch verb/noun action recognition with symbiotic attention over
//! detection features, on a small reverse-mode autodiff engine.

pub mod data;
pub mod eval;
pub mod harness;
pub mod sap;
pub mod tensor;
pub mod training;
