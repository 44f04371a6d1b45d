//! Minimal reverse-mode differentiation over dense `f64` arrays.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, SparseMap, Var};
pub use params::{ParamId, ParamStore, MANIFEST_FILE, PARAMS_FILE};
pub use tensor::FieldTensor;
