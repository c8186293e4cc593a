use crate::field::{Camera, GaussianField};

/// Isotropic low-pass added to every projected covariance, in pixels².
pub const LOW_PASS: f64 = 0.3;
/// Splats are evaluated inside their 3σ ellipse only.
pub const CUTOFF_SIGMA: f64 = 3.0;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub mean2d: [f64; 2],
    /// Symmetric 2×2 covariance `[xx, xy, yy]` after low-pass dilation.
    pub cov2d: [f64; 3],
    /// Inverse covariance `[a, b, c]` so that `δᵀΣ⁻¹δ = aδx² + 2bδxδy + cδy²`.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
    pub opacity: f64,
    pub source_index: u32,
    /// Inclusive pixel range `[x0, y0, x1, y1]` whose centers lie in the 3σ box.
    pub pixel_bounds: [usize; 4],
}

impl Projected2D {
    /// Mahalanobis distance² of the pixel center `(x + 0.5, y + 0.5)`.
    #[inline]
    pub fn mahalanobis(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.mean2d[0];
        let dy = y as f64 + 0.5 - self.mean2d[1];
        let [a, b, c] = self.conic;
        a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    }
}

/// Projects every Gaussian into `camera`, dropping those outside the clip
/// range or whose 3σ extent misses the viewport. Output is sorted by
/// ascending depth, ties broken by source index.
pub fn project(field: &GaussianField, camera: &Camera) -> Vec<Projected2D> {
    let mut out: Vec<Projected2D> = field
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let p = camera.world_to_camera(g.position.map(|c| c as f64));
            let z = p[2];
            if !(z > camera.near && z < camera.far) {
                return None;
            }
            let u = camera.fx * p[0] / z + camera.cx;
            let v = camera.fy * p[1] / z + camera.cy;

            let sigma = g.covariance();
            let r = &camera.rotation;
            // Σ_cam = R Σ Rᵀ
            let mut rs = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    rs[a][b] = (0..3).map(|k| r[a][k] * sigma[k][b]).sum();
                }
            }
            let mut sc = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    sc[a][b] = (0..3).map(|k| rs[a][k] * r[b][k]).sum();
                }
            }
            let j = [
                [camera.fx / z, 0.0, -camera.fx * p[0] / (z * z)],
                [0.0, camera.fy / z, -camera.fy * p[1] / (z * z)],
            ];
            let mut js = [[0.0; 3]; 2];
            for a in 0..2 {
                for b in 0..3 {
                    js[a][b] = (0..3).map(|k| j[a][k] * sc[k][b]).sum();
                }
            }
            let cxx = (0..3).map(|k| js[0][k] * j[0][k]).sum::<f64>() + LOW_PASS;
            let cxy = (0..3).map(|k| js[0][k] * j[1][k]).sum::<f64>();
            let cyy = (0..3).map(|k| js[1][k] * j[1][k]).sum::<f64>() + LOW_PASS;
            let det = cxx * cyy - cxy * cxy;
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            let conic = [cyy / det, -cxy / det, cxx / det];

            let hx = CUTOFF_SIGMA * cxx.sqrt();
            let hy = CUTOFF_SIGMA * cyy.sqrt();
            let x0 = (u - hx - 0.5).ceil().max(0.0);
            let x1 = (u + hx - 0.5).floor().min(camera.width as f64 - 1.0);
            let y0 = (v - hy - 0.5).ceil().max(0.0);
            let y1 = (v + hy - 0.5).floor().min(camera.height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some(Projected2D {
                mean2d: [u, v],
                cov2d: [cxx, cxy, cyy],
                conic,
                depth: z,
                opacity: g.opacity as f64,
                source_index: i as u32,
                pixel_bounds: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    out
}
