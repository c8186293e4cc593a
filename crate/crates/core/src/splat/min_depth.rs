use super::raster::{RenderOutput, SplatPlan, NO_GAUSSIAN};
use crate::error::{Error, Result};
use crate::field::{Camera, GaussianField};
use crate::grid::Grid;

/// Default blend weight a Gaussian must reach somewhere in a view to count
/// as visible (unoccluded) in that view.
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MinDepthReport {
    /// Gaussians not visible in any view; their depth falls back to the
    /// nearest view in which they project at all.
    pub fallback: usize,
    /// Gaussians that no camera sees in front of it; left unset.
    pub unset: usize,
}

/// Fills `Gaussian::min_depth` with the minimum camera-space depth over the
/// views in which the Gaussian is visible, i.e. its largest per-pixel blend
/// weight reaches `visibility_threshold`.
pub fn compute_min_depth(
    field: &mut GaussianField,
    cameras: &[Camera],
    visibility_threshold: f64,
) -> Result<MinDepthReport> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("min-depth needs at least one camera".into()));
    }
    let n = field.len();
    let mut visible = vec![f64::INFINITY; n];
    let mut projected = vec![f64::INFINITY; n];
    for camera in cameras {
        let plan = SplatPlan::new(field, camera)?;
        let weights = plan.max_blend_weights();
        for s in plan.splats() {
            let i = s.source_index as usize;
            projected[i] = projected[i].min(s.depth);
            if weights[i] >= visibility_threshold {
                visible[i] = visible[i].min(s.depth);
            }
        }
    }
    let mut report = MinDepthReport::default();
    for (i, g) in field.gaussians_mut().iter_mut().enumerate() {
        g.min_depth = if visible[i].is_finite() {
            Some(visible[i])
        } else if projected[i].is_finite() {
            report.fallback += 1;
            Some(projected[i])
        } else {
            report.unset += 1;
            None
        };
    }
    if report.fallback > 0 || report.unset > 0 {
        log::warn!(
            "{} gaussians visible in no view (fallback depth), {} never in frustum",
            report.fallback,
            report.unset
        );
    }
    Ok(report)
}

/// Minimum visible depth lifted to pixels.
#[derive(Debug, Clone)]
pub struct MinDepthMap {
    pub md: Grid<f64>,
    pub valid: Grid<bool>,
}

impl MinDepthMap {
    pub fn get(&self, index: usize) -> Option<f64> {
        self.valid.as_slice()[index].then(|| self.md.as_slice()[index])
    }
}

/// Per-pixel minimum visible depth through the pixel's dominant Gaussian.
///
/// The dominant Gaussian's depth ratio between this view and its nearest
/// visible view is transferred to the pixel's expected depth:
/// `md(p) = D(p) · MD_g / z_g`, which equals `MD_g` when the pixel is covered
/// by that Gaussian alone and keeps `md(p) ≤ D(p)` whenever `g` is visible
/// here. Pixels whose dominant weight is below `visibility_threshold` are
/// left invalid.
pub fn min_depth_map(
    render: &RenderOutput,
    field: &GaussianField,
    visibility_threshold: f64,
) -> Result<MinDepthMap> {
    let (w, h) = (render.width(), render.height());
    let mut md = Grid::new(w, h, 0.0);
    let mut valid = Grid::new(w, h, false);
    for i in 0..w * h {
        let dom = render.dominant_index.as_slice()[i];
        if dom == NO_GAUSSIAN || !render.is_covered(i) {
            continue;
        }
        let g = field
            .gaussians()
            .get(dom as usize)
            .ok_or_else(|| Error::ShapeMismatch(format!("dominant index {dom} outside field")))?;
        let min_depth = g.min_depth.ok_or_else(|| {
            Error::MissingData(format!("gaussian {dom} has no min depth; run compute_min_depth first"))
        })?;
        if render.dominant_weight.as_slice()[i] < visibility_threshold {
            continue;
        }
        let z = render.dominant_depth.as_slice()[i];
        md.as_mut_slice()[i] = render.depth.as_slice()[i] * min_depth / z;
        valid.as_mut_slice()[i] = true;
    }
    Ok(MinDepthMap { md, valid })
}
