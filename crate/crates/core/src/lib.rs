//! Gaze estimation with head-pose-dependent branches.
//!
//! Head poses are clustered on the unit sphere, and a convolutional network shares its
//! trunk across clusters while each cluster owns its last two fully connected layers.
//! The crate also ships a procedural eye-image generator, a dataset container, training
//! and evaluation protocols, and a command line front end.

pub mod cli;
pub mod clustering;
pub mod dataio;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod image;
pub mod nnet;
pub mod rng;
pub mod synthcam;
pub mod train;

pub use clustering::{ClusterId, ClusterModel};
pub use dataio::{Dataset, Sample};
pub use error::{Error, Result};
pub use geometry::{Angles, Rotation, UnitVec3};
pub use image::EyeImage;
