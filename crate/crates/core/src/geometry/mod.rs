//! Affine maps over images, keypoints and heatmaps, plus Gaussian heatmap
//! rendering and argmax decoding.
//!
//! Pixel convention: y points down, the origin is the centre of the top-left
//! pixel, and pixel centres sit on integer coordinates. Heatmap cell `(i, j)`
//! corresponds to image position `(stride * j, stride * i)`.

mod affine;
mod heatmap;
mod image;
mod keypoints;

pub use affine::{compose, invert, AffineMap};
pub use heatmap::{decode_heatmaps, render_heatmaps, warp_heatmap, Heatmap};
pub use image::{warp_image, Image, CHANNELS};
pub use keypoints::{warp_points, Joint, JointState, KeypointSet};

/// Centre of a `(height, width)` raster in pixel coordinates.
pub fn raster_center(size: (usize, usize)) -> (f64, f64) {
    ((size.1 as f64 - 1.0) / 2.0, (size.0 as f64 - 1.0) / 2.0)
}
