//! Prompt planning: per-patch point budgets from the depth ratio between the
//! current view and the nearest visible view, and density-guided sampling
//! of prompt pixels inside each patch.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::seed;
use crate::splat::{MinDepthMap, RenderOutput, NO_GAUSSIAN};

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_BASE_COUNT: usize = 4;
pub const DEFAULT_SUBPATCHES: usize = 4;
pub const DEFAULT_RATIO_CAP: f64 = 25.0;
pub const DEFAULT_JITTER: f64 = 0.25;

const STREAM_ROUNDING: u64 = 0x726f_756e;
const STREAM_SAMPLING: u64 = 0x7361_6d70;
const STREAM_UNIFORM: u64 = 0x756e_6966;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Pixels with both a depth and a minimum depth.
    pub valid_pixels: usize,
    pub n_p: f64,
    pub count: usize,
    /// Remainder patch at the right or bottom image border.
    pub partial: bool,
}

impl Patch {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub image_width: usize,
    pub image_height: usize,
    pub patch_size: usize,
    pub base_count: usize,
    pub patches: Vec<Patch>,
    pub points: Vec<PromptPoint>,
}

impl PromptPlan {
    pub fn total_count(&self) -> usize {
        self.patches.iter().map(|p| p.count).sum()
    }

    /// Marks prompt pixels on an RGB image of the plan's size.
    pub fn overlay_rgb(&self, rgb: &mut [u8]) {
        let w = self.image_width;
        for p in &self.points {
            for (dx, dy) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                if x < 0 || y < 0 || x >= w as i64 || y >= self.image_height as i64 {
                    continue;
                }
                let i = (y as usize * w + x as usize) * 3;
                rgb[i..i + 3].copy_from_slice(&[255, 32, 32]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetParams {
    pub patch_size: usize,
    pub base_count: usize,
    pub ratio_cap: f64,
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            base_count: DEFAULT_BASE_COUNT,
            ratio_cap: DEFAULT_RATIO_CAP,
        }
    }
}

fn patch_grid(width: usize, height: usize, patch_size: usize) -> Vec<Patch> {
    let mut patches = Vec::new();
    for y0 in (0..height).step_by(patch_size) {
        for x0 in (0..width).step_by(patch_size) {
            let pw = patch_size.min(width - x0);
            let ph = patch_size.min(height - y0);
            patches.push(Patch {
                id: patches.len(),
                x0,
                y0,
                width: pw,
                height: ph,
                valid_pixels: 0,
                n_p: 0.0,
                count: 0,
                partial: pw < patch_size || ph < patch_size,
            });
        }
    }
    patches
}

/// Rounds `x` down or up with probability given by its fractional part.
fn stochastic_round(x: f64, rng: &mut impl Rng) -> usize {
    let base = x.floor();
    let frac = x - base;
    base as usize + usize::from(frac > 0.0 && rng.random::<f64>() < frac)
}

/// Per-patch budget `n_P = n · mean_p clamp(D²/MD², 1, cap)` over the
/// patch's valid pixels, rounded stochastically.
pub fn patch_prompt_counts(depth: &Grid<f64>, md: &MinDepthMap, params: &BudgetParams, seed: u64) -> Result<PromptPlan> {
    if !depth.same_shape(&md.md) || !depth.same_shape(&md.valid) {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} vs min-depth {}x{}",
            depth.width(),
            depth.height(),
            md.md.width(),
            md.md.height()
        )));
    }
    if params.base_count == 0 || params.patch_size == 0 {
        return Err(Error::InvalidArgument("base count and patch size must be positive".into()));
    }
    if params.ratio_cap.is_nan() || params.ratio_cap < 1.0 {
        return Err(Error::InvalidArgument(format!("ratio cap {} below 1", params.ratio_cap)));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut patches = patch_grid(w, h, params.patch_size);
    if patches.iter().any(|p| p.partial) {
        log::debug!("{}x{} image is not a multiple of patch size {}", w, h, params.patch_size);
    }
    for patch in &mut patches {
        let mut sum = 0.0;
        let mut valid = 0usize;
        for y in patch.y0..patch.y0 + patch.height {
            for x in patch.x0..patch.x0 + patch.width {
                let i = depth.index(x, y);
                let (d, m) = (depth.as_slice()[i], md.md.as_slice()[i]);
                if !md.valid.as_slice()[i] || !(m > 0.0) || !d.is_finite() {
                    continue;
                }
                let r = d / m;
                sum += (r * r).clamp(1.0, params.ratio_cap);
                valid += 1;
            }
        }
        patch.valid_pixels = valid;
        patch.n_p = if valid == 0 { 0.0 } else { sum / valid as f64 * params.base_count as f64 };
        let mut rng = seed::rng(seed, &[STREAM_ROUNDING, patch.id as u64]);
        patch.count = stochastic_round(patch.n_p, &mut rng);
    }
    Ok(PromptPlan {
        image_width: w,
        image_height: h,
        patch_size: params.patch_size,
        base_count: params.base_count,
        patches,
        points: Vec::new(),
    })
}

/// Sub-patch distribution of pixels reached by some Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    pub subdivisions: usize,
    /// Row-major `S × S` pixel counts.
    pub counts: Vec<usize>,
    pub probabilities: Vec<f64>,
    /// Sub-patch rectangles `[x0, y0, x1, y1)` in image coordinates.
    pub cells: Vec<[usize; 4]>,
}

impl DensityHistogram {
    pub fn is_fallback(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

fn split(start: usize, len: usize, parts: usize, k: usize) -> usize {
    start + k * len / parts
}

fn subpatch_cells(patch: &Patch, s: usize) -> Vec<[usize; 4]> {
    let mut cells = Vec::with_capacity(s * s);
    for j in 0..s {
        for i in 0..s {
            cells.push([
                split(patch.x0, patch.width, s, i),
                split(patch.y0, patch.height, s, j),
                split(patch.x0, patch.width, s, i + 1),
                split(patch.y0, patch.height, s, j + 1),
            ]);
        }
    }
    cells
}

/// Histogram of covered pixels over an `S × S` subdivision of `patch`.
/// An uncovered patch falls back to a distribution proportional to
/// sub-patch area, which is uniform whenever the subdivision is even.
pub fn visible_gaussian_density(render: &RenderOutput, patch: &Patch, s: usize) -> Result<DensityHistogram> {
    if s == 0 {
        return Err(Error::InvalidArgument("sub-patch count must be positive".into()));
    }
    if patch.x0 + patch.width > render.width() || patch.y0 + patch.height > render.height() {
        return Err(Error::ShapeMismatch("patch exceeds render".into()));
    }
    let cells = subpatch_cells(patch, s);
    let dom = &render.dominant_index;
    let counts: Vec<usize> = cells
        .iter()
        .map(|&[x0, y0, x1, y1]| {
            (y0..y1)
                .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                .filter(|&(x, y)| *dom.get(x, y) != NO_GAUSSIAN)
                .count()
        })
        .collect();
    let total: usize = counts.iter().sum();
    let probabilities = if total > 0 {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    } else {
        let area = |c: &[usize; 4]| ((c[2] - c[0]) * (c[3] - c[1])) as f64;
        let total_area: f64 = cells.iter().map(area).sum();
        cells.iter().map(|c| area(c) / total_area).collect()
    };
    Ok(DensityHistogram {
        subdivisions: s,
        counts,
        probabilities,
        cells,
    })
}

/// Draws each patch's `count` prompt pixels: a sub-patch from the patch's
/// histogram, then a pixel uniformly inside it, without replacement. When
/// every sub-patch with positive probability is used up, the remaining
/// pixels of the patch are drawn uniformly.
pub fn sample_prompts(plan: &PromptPlan, histograms: &[DensityHistogram], seed: u64) -> Result<PromptPlan> {
    if histograms.len() != plan.patches.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} histograms for {} patches",
            histograms.len(),
            plan.patches.len()
        )));
    }
    let mut out = plan.clone();
    out.points.clear();
    for (patch, hist) in out.patches.iter_mut().zip(histograms) {
        if hist.probabilities.len() != hist.cells.len() {
            return Err(Error::ShapeMismatch("histogram cells and probabilities differ".into()));
        }
        if patch.count > patch.num_pixels() {
            log::warn!(
                "patch {} requests {} prompts but has {} pixels; clamping",
                patch.id,
                patch.count,
                patch.num_pixels()
            );
            patch.count = patch.num_pixels();
        }
        if patch.count == 0 {
            continue;
        }
        let mut rng = seed::rng(seed, &[STREAM_SAMPLING, patch.id as u64]);
        let mut remaining: Vec<Vec<(usize, usize)>> = hist
            .cells
            .iter()
            .map(|&[x0, y0, x1, y1]| (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).collect())
            .collect();
        for _ in 0..patch.count {
            let weights: Vec<f64> = hist
                .probabilities
                .iter()
                .zip(&remaining)
                .map(|(&p, r)| if r.is_empty() { 0.0 } else { p })
                .collect();
            let cell = match WeightedIndex::new(&weights) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => {
                    let sizes: Vec<usize> = remaining.iter().map(Vec::len).collect();
                    WeightedIndex::new(&sizes)
                        .map_err(|e| Error::InvalidArgument(format!("no pixels left in patch {}: {e}", patch.id)))?
                        .sample(&mut rng)
                }
            };
            let pool = &mut remaining[cell];
            let (x, y) = pool.swap_remove(rng.random_range(0..pool.len()));
            out.points.push(PromptPoint { x, y, patch: patch.id });
        }
    }
    Ok(out)
}

/// Budgets, histograms and sampling in one call.
pub fn plan_prompts(
    render: &RenderOutput,
    md: &MinDepthMap,
    params: &BudgetParams,
    subdivisions: usize,
    seed: u64,
) -> Result<PromptPlan> {
    let plan = patch_prompt_counts(&render.depth, md, params, seed)?;
    let hists = plan
        .patches
        .iter()
        .map(|p| visible_gaussian_density(render, p, subdivisions))
        .collect::<Result<Vec<_>>>()?;
    sample_prompts(&plan, &hists, seed)
}

/// Jittered regular grid of `n_total` points over the whole image, as a
/// single-patch plan.
pub fn uniform_prompts(width: usize, height: usize, n_total: usize, seed: u64) -> PromptPlan {
    uniform_prompts_with(width, height, n_total, seed, DEFAULT_JITTER)
}

/// As [`uniform_prompts`] with jitter of up to `jitter · cell size` per axis.
pub fn uniform_prompts_with(width: usize, height: usize, n_total: usize, seed: u64, jitter: f64) -> PromptPlan {
    let mut points = Vec::with_capacity(n_total);
    if n_total > 0 && width > 0 && height > 0 {
        let rows = ((n_total as f64 * height as f64 / width as f64).sqrt().round() as usize).clamp(1, n_total);
        let mut rng = seed::rng(seed, &[STREAM_UNIFORM]);
        let cell_h = height as f64 / rows as f64;
        for r in 0..rows {
            let cols = n_total / rows + usize::from(r < n_total % rows);
            let cell_w = width as f64 / cols as f64;
            for c in 0..cols {
                let mut x = (c as f64 + 0.5) * cell_w;
                let mut y = (r as f64 + 0.5) * cell_h;
                if jitter > 0.0 {
                    x += rng.random_range(-jitter..jitter) * cell_w;
                    y += rng.random_range(-jitter..jitter) * cell_h;
                }
                points.push(PromptPoint {
                    x: (x.floor().max(0.0) as usize).min(width - 1),
                    y: (y.floor().max(0.0) as usize).min(height - 1),
                    patch: 0,
                });
            }
        }
    }
    let size = width.max(height);
    PromptPlan {
        image_width: width,
        image_height: height,
        patch_size: size,
        base_count: n_total,
        patches: vec![Patch {
            id: 0,
            x0: 0,
            y0: 0,
            width,
            height,
            valid_pixels: width * height,
            n_p: n_total as f64,
            count: points.len(),
            partial: width != height,
        }],
        points,
    }
}
