use rayon::prelude::*;

use super::project::{project, Projected2D, CUTOFF_SIGMA};
use crate::error::{Error, Result};
use crate::field::{Camera, GaussianField};
use crate::grid::{FeatureMap, Grid};

pub const TILE_SIZE: usize = 16;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// `dominant_index` value for pixels no Gaussian reaches.
pub const NO_GAUSSIAN: u32 = u32::MAX;

const CUTOFF_MAHALANOBIS: f64 = CUTOFF_SIGMA * CUTOFF_SIGMA;

/// Per-pixel outputs of the forward pass.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub features: FeatureMap,
    /// Coverage-renormalized expected depth; only meaningful where `blend_count > 0`.
    pub depth: Grid<f64>,
    pub transmittance: Grid<f64>,
    pub dominant_index: Grid<u32>,
    /// Blend weight `αT` of the dominant Gaussian.
    pub dominant_weight: Grid<f64>,
    /// Camera-space depth of the dominant Gaussian.
    pub dominant_depth: Grid<f64>,
    pub blend_count: Grid<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    #[inline]
    pub fn is_covered(&self, index: usize) -> bool {
        self.blend_count.as_slice()[index] > 0
    }

    /// Accumulated opacity `1 - T_final`.
    #[inline]
    pub fn coverage(&self, index: usize) -> f64 {
        1.0 - self.transmittance.as_slice()[index]
    }

    pub fn depth_at(&self, index: usize) -> Option<f64> {
        self.is_covered(index).then(|| self.depth.as_slice()[index])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Render an empty field to a blank image instead of failing.
    pub allow_empty: bool,
}

/// Projected splats binned into screen tiles for one camera. Geometry is
/// frozen, so a plan can be reused across feature updates.
#[derive(Debug, Clone)]
pub struct SplatPlan {
    width: usize,
    height: usize,
    tiles_x: usize,
    tiles_y: usize,
    splats: Vec<Projected2D>,
    /// Depth-ordered splat indices per tile.
    tiles: Vec<Vec<u32>>,
    num_gaussians: usize,
}

impl SplatPlan {
    pub fn new(field: &GaussianField, camera: &Camera) -> Result<Self> {
        Self::with_options(field, camera, RenderOptions::default())
    }

    pub fn with_options(field: &GaussianField, camera: &Camera, options: RenderOptions) -> Result<Self> {
        camera.validate()?;
        if field.is_empty() && !options.allow_empty {
            return Err(Error::EmptyField);
        }
        let splats = project(field, camera);
        let tiles_x = camera.width.div_ceil(TILE_SIZE);
        let tiles_y = camera.height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (k, s) in splats.iter().enumerate() {
            let [x0, y0, x1, y1] = s.pixel_bounds;
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tiles[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Ok(Self {
            width: camera.width,
            height: camera.height,
            tiles_x,
            tiles_y,
            splats,
            tiles,
            num_gaussians: field.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn splats(&self) -> &[Projected2D] {
        &self.splats
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(self.width);
        let y1 = (y0 + TILE_SIZE).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    /// Front-to-back alpha blending at one pixel. Calls `visit(position in
    /// tile list, splat, αT)` per contribution and returns the final
    /// transmittance.
    #[inline]
    fn blend_pixel(
        &self,
        tile: usize,
        x: usize,
        y: usize,
        mut visit: impl FnMut(usize, &Projected2D, f64),
    ) -> f64 {
        let mut t = 1.0;
        for (k, &si) in self.tiles[tile].iter().enumerate() {
            let s = &self.splats[si as usize];
            let [bx0, by0, bx1, by1] = s.pixel_bounds;
            if x < bx0 || x > bx1 || y < by0 || y > by1 {
                continue;
            }
            let m = s.mahalanobis(x, y);
            if m > CUTOFF_MAHALANOBIS {
                continue;
            }
            let alpha = (s.opacity * (-0.5 * m).exp()).min(MAX_ALPHA);
            visit(k, s, alpha * t);
            t *= 1.0 - alpha;
            if t < MIN_TRANSMITTANCE {
                break;
            }
        }
        t
    }

    pub fn render(&self, field: &GaussianField) -> Result<RenderOutput> {
        self.check_field(field)?;
        let d = field.feature_dim();
        let feats: Vec<f64> = field.features().iter().map(|&f| f as f64).collect();

        struct PixelOut {
            index: usize,
            t: f64,
            depth: f64,
            dominant: u32,
            dominant_weight: f64,
            dominant_depth: f64,
            count: u32,
        }

        let per_tile: Vec<(Vec<PixelOut>, Vec<f64>)> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let mut pixels = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
                let mut fbuf = Vec::with_capacity(TILE_SIZE * TILE_SIZE * d);
                for (x, y) in self.tile_pixels(tile) {
                    let base = fbuf.len();
                    fbuf.resize(base + d, 0.0);
                    let mut depth = 0.0;
                    let mut best = (NO_GAUSSIAN, 0.0, 0.0);
                    let mut count = 0;
                    let t = self.blend_pixel(tile, x, y, |_, s, w| {
                        let f = &feats[s.source_index as usize * d..(s.source_index as usize + 1) * d];
                        for (acc, &fv) in fbuf[base..base + d].iter_mut().zip(f) {
                            *acc += w * fv;
                        }
                        depth += w * s.depth;
                        if w > best.1 {
                            best = (s.source_index, w, s.depth);
                        }
                        count += 1;
                    });
                    let covered = 1.0 - t;
                    pixels.push(PixelOut {
                        index: y * self.width + x,
                        t,
                        depth: if count > 0 && covered > 0.0 { depth / covered } else { 0.0 },
                        dominant: best.0,
                        dominant_weight: best.1,
                        dominant_depth: best.2,
                        count,
                    });
                }
                (pixels, fbuf)
            })
            .collect();

        let (w, h) = (self.width, self.height);
        let mut out = RenderOutput {
            features: FeatureMap::zeros(w, h, d),
            depth: Grid::new(w, h, 0.0),
            transmittance: Grid::new(w, h, 1.0),
            dominant_index: Grid::new(w, h, NO_GAUSSIAN),
            dominant_weight: Grid::new(w, h, 0.0),
            dominant_depth: Grid::new(w, h, 0.0),
            blend_count: Grid::new(w, h, 0),
        };
        for (pixels, fbuf) in per_tile {
            for (k, p) in pixels.into_iter().enumerate() {
                out.features
                    .pixel_mut(p.index)
                    .copy_from_slice(&fbuf[k * d..(k + 1) * d]);
                out.depth.as_mut_slice()[p.index] = p.depth;
                out.transmittance.as_mut_slice()[p.index] = p.t;
                out.dominant_index.as_mut_slice()[p.index] = p.dominant;
                out.dominant_weight.as_mut_slice()[p.index] = p.dominant_weight;
                out.dominant_depth.as_mut_slice()[p.index] = p.dominant_depth;
                out.blend_count.as_mut_slice()[p.index] = p.count;
            }
        }
        Ok(out)
    }

    /// Gradient of a scalar loss with respect to every Gaussian feature,
    /// `∂L/∂f_i = Σ_p α_i(p) T_i(p) ∂L/∂f_render(p)`, returned row-major
    /// `len × feature_dim`. Per-tile partial sums are reduced in tile order,
    /// so the result does not depend on the thread count.
    pub fn backward(&self, field: &GaussianField, grad: &FeatureMap) -> Result<Vec<f64>> {
        self.check_field(field)?;
        let d = field.feature_dim();
        if grad.width() != self.width || grad.height() != self.height || grad.dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "gradient map {}x{}x{} does not match render {}x{}x{}",
                grad.width(),
                grad.height(),
                grad.dim(),
                self.width,
                self.height,
                d
            )));
        }
        let partials: Vec<Vec<f64>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let mut local = vec![0.0; self.tiles[tile].len() * d];
                for (x, y) in self.tile_pixels(tile) {
                    let g = grad.pixel(y * self.width + x);
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    self.blend_pixel(tile, x, y, |k, _, w| {
                        for (acc, &gv) in local[k * d..(k + 1) * d].iter_mut().zip(g) {
                            *acc += w * gv;
                        }
                    });
                }
                local
            })
            .collect();
        let mut out = vec![0.0; self.num_gaussians * d];
        for (tile, local) in partials.iter().enumerate() {
            for (k, &si) in self.tiles[tile].iter().enumerate() {
                let gi = self.splats[si as usize].source_index as usize;
                for (acc, &v) in out[gi * d..(gi + 1) * d].iter_mut().zip(&local[k * d..(k + 1) * d]) {
                    *acc += v;
                }
            }
        }
        Ok(out)
    }

    /// Largest per-pixel blend weight of each Gaussian in this view (0 when
    /// it never contributes).
    pub fn max_blend_weights(&self) -> Vec<f64> {
        let partials: Vec<Vec<f64>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let mut local = vec![0.0f64; self.tiles[tile].len()];
                for (x, y) in self.tile_pixels(tile) {
                    self.blend_pixel(tile, x, y, |k, _, w| local[k] = local[k].max(w));
                }
                local
            })
            .collect();
        let mut out = vec![0.0f64; self.num_gaussians];
        for (tile, local) in partials.iter().enumerate() {
            for (k, &si) in self.tiles[tile].iter().enumerate() {
                let gi = self.splats[si as usize].source_index as usize;
                out[gi] = out[gi].max(local[k]);
            }
        }
        out
    }

    /// Blend weights of every contribution at one pixel, front to back, as
    /// `(gaussian index, αT)` pairs.
    pub fn pixel_contributions(&self, x: usize, y: usize) -> Vec<(u32, f64)> {
        let tile = (y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE;
        let mut out = Vec::new();
        self.blend_pixel(tile, x, y, |_, s, w| out.push((s.source_index, w)));
        out
    }

    fn check_field(&self, field: &GaussianField) -> Result<()> {
        if field.len() != self.num_gaussians {
            return Err(Error::ShapeMismatch(format!(
                "plan built for {} gaussians, field has {}",
                self.num_gaussians,
                field.len()
            )));
        }
        Ok(())
    }

    #[allow(dead_code)]
    pub(crate) fn tiles_y(&self) -> usize {
        self.tiles_y
    }
}

pub fn render(field: &GaussianField, camera: &Camera) -> Result<RenderOutput> {
    SplatPlan::new(field, camera)?.render(field)
}

pub fn render_with(field: &GaussianField, camera: &Camera, options: RenderOptions) -> Result<RenderOutput> {
    SplatPlan::with_options(field, camera, options)?.render(field)
}

pub fn render_backward(field: &GaussianField, camera: &Camera, grad: &FeatureMap) -> Result<Vec<f64>> {
    SplatPlan::new(field, camera)?.backward(field, grad)
}
