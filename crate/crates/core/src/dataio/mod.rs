//! Mesh and point ingestion plus synthetic shape generation.

pub mod dataset;
pub mod off;
pub mod pts;
pub mod sample;
pub mod synth;

pub use dataset::{fnv1a, load_dataset, Dataset, Split};
pub use off::{parse_off, write_off, Mesh, OffError};
pub use pts::{read_points, read_points_file, write_points, write_points_file};
pub use sample::{sample_surface, sample_surface_detailed, SurfaceSample};
pub use synth::{sample_shape, synth_shapes, ShapeKind};
