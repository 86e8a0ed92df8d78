//! Scale-space construction, DoG keypoint detection and stability experiments.

pub mod blobfit;
pub mod bspline;
pub mod camera;
pub mod config;
pub mod convolve;
pub mod dct;
pub mod dog;
pub mod error;
pub mod experiments;
pub mod extrema;
pub mod image;
pub mod io;
pub mod keypoint;
pub mod matching;
pub mod parallel;
pub mod plot;
pub mod roc;
pub mod scalespace;
pub mod synthetic;

pub use error::{Error, Result};
pub use image::{DigitalImage, Plane};
pub use keypoint::{Keypoint, Status};
