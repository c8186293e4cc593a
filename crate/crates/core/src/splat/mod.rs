//! Feature and depth rasterization by depth-sorted alpha blending, the
//! feature backward pass, and minimum visible depth.

mod min_depth;
mod project;
mod raster;

pub use min_depth::{compute_min_depth, min_depth_map, MinDepthMap, MinDepthReport, DEFAULT_VISIBILITY_THRESHOLD};
pub use project::{project, Projected2D, CUTOFF_SIGMA, LOW_PASS};
pub use raster::{
    render, render_backward, render_with, RenderOptions, RenderOutput, SplatPlan, MAX_ALPHA,
    MIN_TRANSMITTANCE, NO_GAUSSIAN, TILE_SIZE,
};
