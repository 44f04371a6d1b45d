//! Layers whose weights are constrained so that transforming the input by a
//! group element transforms the output by a known representation.

pub mod basis;
pub mod conv;
pub mod extractor;
pub mod linear;
pub mod pool;

pub use basis::{constraint_matrix, solve_equivariant_basis, Matrix, NULLSPACE_TOLERANCE};
pub use conv::{geometry_is_equivariant, EquivariantConv, FieldType, PlainConv};
pub use extractor::{
    vector_rep, CnnExtractor, EquivariantExtractor, Extractor, ExtractorConfig, Features, ObsBatch,
    VECTOR_DIM,
};
pub use linear::{Dense, EquivariantLinear};
pub use pool::{group_pool, group_pool_values, SpatialMoments};
