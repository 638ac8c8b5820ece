//! Building-entity 3D city generation at desk scale.
//!
//! The pipeline runs footprint ingestion, volumetric structural priors,
//! latent-space prior blending, a conditional rectified-flow generator with
//! dual cross-attention pathways, appearance clustering, centroid-based
//! scene assembly, and a point-cloud/mask/embedding evaluation suite.
//! Heavy pretrained components (volumetric VAEs, vision encoders, language
//! models) are replaced by deterministic surrogates or ingested from files;
//! the math operating on their outputs is implemented in full.

pub mod cluster;
pub mod embedding;
pub mod flow;
pub mod geo;
pub mod latent;
pub mod metrics;
pub mod promptgen;
pub mod scene;
pub mod voxel;

pub use embedding::EmbeddingSet;
pub use geo::{BuildingRecord, Region};
pub use latent::Latent;
pub use voxel::{BinaryMask, VoxelGrid};
