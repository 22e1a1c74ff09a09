//! Progressive, depth-aware novel-view synthesis for single-view garment
//! reconstruction and editing.
//!
//! The engine grows a colored, oriented point cloud one camera at a time:
//! the current cloud is projected into the next view, an image completer
//! fills the missing pixels, a depth completer estimates their depth, and
//! the newly inpainted pixels are unprojected and merged. Generative
//! completion sits behind the [`complete::ImageCompleter`] and
//! [`complete::DepthCompleter`] traits; an oracle backed by a ground-truth
//! mesh and a remote HTTP client are provided.

pub mod bvh;
pub mod camera;
pub mod cloud;
pub mod complete;
pub mod error;
pub mod grid;
pub mod io;
pub mod meshing;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod robust;
pub mod spatial;
pub mod warp;

pub use error::{CompletionError, Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
