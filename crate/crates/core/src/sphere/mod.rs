//! Sphere regression: icosahedral mesh, triangle split rules, rotations and
//! per-face tree fitting.

pub mod fitter;
pub mod geometry;
pub mod rotation;

pub use fitter::{fit_sphere, predict_sphere, split_triangle, SphereFitParams, SphereModel};
pub use geometry::{icosahedron, SplitRule, Triangle, Triangulation, Vec3};
pub use rotation::{haar_rotation, Mat3};
