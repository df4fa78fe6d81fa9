//! File formats: the tensor container, point clouds, splat sets and images.

pub mod checkpoint;
pub mod cloud;
pub mod container;
pub mod image;
pub mod splats;
