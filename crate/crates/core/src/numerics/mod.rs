//! Geometry and clustering primitives shared by all pipeline stages.
//!
//! Everything here is pure and reentrant: boxes, RLE masks, DBSCAN,
//! plane fitting, homographies, the 3x3 surface grid, and pinhole
//! backprojection.

pub mod bbox;
pub mod cluster;
pub mod geometry;
pub mod grid;
pub mod homography;
pub mod mask;

pub use bbox::{iou, BBox};
pub use cluster::{dbscan, ClusterLabel};
pub use geometry::{
    backproject, fit_plane, remove_statistical_outliers, DepthMap, Intrinsics, Plane, PointCloud,
    DEFAULT_PLANE_INLIER_THRESHOLD,
};
pub use grid::{grid_cell, ColBand, GridCell, RowBand};
pub use homography::{
    convex_hull, fit_quadrilateral, homography_from_corners, Homography, UNIT_SQUARE,
};
pub use mask::{connected_components, mask_iou, Mask, Run};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("degenerate quadrilateral: {0}")]
    DegenerateQuad(String),
    #[error("three or more source points are collinear")]
    CollinearPoints,
    #[error("homography is singular")]
    SingularHomography,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("intrinsics require fx > 0 and fy > 0")]
    InvalidIntrinsics,
}
