//! Layout-constrained oriented box fitting from point annotations.
//!
//! Point-annotated images are turned into rotated boxes by minimizing a
//! weighted sum of a Gaussian overlap penalty, a Voronoi-watershed size
//! prior, an edge-alignment size prior and an optional view-consistency
//! term. Synthetic scene generation, file formats and evaluation live
//! alongside so the whole pipeline can be checked end to end.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod edge;
pub mod error;
pub mod fitter;
pub mod gaussian;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod synth;
pub mod tessellation;
pub mod watershed;

pub use error::{Error, Result};
pub use fitter::{fit_scene, FitConfig, FitResult, Instance, SceneAnnotation};
pub use geometry::{rotated_iou, Point2, RBox};
pub use grid::{GrayImage, Grid};
