//! Curve grouping and curve aggregation for point clouds.
//!
//! Curves are guided walks on a point cloud's KNN graph. A learnable policy
//! scores every neighbour of the current curve head, the argmax neighbour is
//! taken in the forward pass and the softmax gradient is used in the backward
//! pass, so the policy trains end to end with the rest of the network. The
//! grouped curves are then fused back into every point feature through
//! attentive pooling and curve-to-point attention maps.
//!
//! Everything runs on a small reverse-mode autodiff tape ([`autodiff`]) in
//! 64-bit floating point, which also hosts a central finite-difference
//! gradient checker.

pub mod aggregate;
pub mod analysis;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod model;
pub mod par;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
