use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{GranularityFeatures, GranularityMasks, Level};

/// Which targets the rendered features are distilled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Granularity-weighted targets with learned weights.
    #[default]
    Gad,
    SingleS,
    SingleP,
    SingleW,
    /// Normalized mean of the available level targets.
    Average,
}

impl DistillMode {
    pub fn single_level(self) -> Option<Level> {
        match self {
            DistillMode::SingleS => Some(Level::Sub),
            DistillMode::SingleP => Some(Level::Part),
            DistillMode::SingleW => Some(Level::Whole),
            _ => None,
        }
    }

    /// Levels whose masks may hold a pixel's loss.
    fn allowed(self) -> [bool; 3] {
        match self.single_level() {
            Some(l) => std::array::from_fn(|k| k == l.index()),
            None => [true; 3],
        }
    }
}

/// Softmax with max subtraction.
pub fn granularity_weights(eta: [f64; 3]) -> [f64; 3] {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = eta.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// `-Σ α log α`, with `0 log 0 = 0`.
pub fn entropy_loss(alpha: [f64; 3]) -> f64 {
    -alpha.iter().filter(|&&a| a > 0.0).map(|&a| a * a.ln()).sum::<f64>()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weights renormalized over the levels that have a target.
fn present_weights(alpha: [f64; 3], present: [bool; 3]) -> Option<[f64; 3]> {
    let s: f64 = (0..3).filter(|&k| present[k]).map(|k| alpha[k]).sum();
    (s > 0.0).then(|| std::array::from_fn(|k| if present[k] { alpha[k] / s } else { 0.0 }))
}

/// `Σ α_n ‖f − f_n‖²` over the levels with a target, α renormalized over
/// them; `None` when no level has a target.
pub fn distill_loss(f_clip: &[f64], targets: [Option<&[f64]>; 3], alpha: [f64; 3]) -> Option<f64> {
    let w = present_weights(alpha, targets.map(|t| t.is_some()))?;
    Some((0..3).filter_map(|k| targets[k].map(|t| w[k] * sq_dist(f_clip, t))).sum())
}

/// Index of the largest weight among `allowed` levels; ties go to the
/// coarser level.
fn select_level(alpha: [f64; 3], allowed: [bool; 3]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in (0..3).rev() {
        if allowed[k] && best.is_none_or(|b| alpha[k] > alpha[b]) {
            best = Some(k);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedRegion {
    pub level: Level,
    /// Region id within its level's mask.
    pub id: u32,
    pub pixels: usize,
}

/// Per-pixel region selection across levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMask {
    /// Fused region (1-based) of each input pixel, 0 if excluded.
    pub region_of: Vec<u32>,
    pub regions: Vec<FusedRegion>,
}

impl FusedMask {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Pixels assigned to some region.
    pub fn covered(&self) -> usize {
        self.regions.iter().map(|r| r.pixels).sum()
    }
}

fn fuse(ids: &[[u32; 3]], alpha: &[[f64; 3]], allowed: [bool; 3]) -> FusedMask {
    let mut key_index: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    let mut regions = Vec::new();
    let region_of = ids
        .iter()
        .zip(alpha)
        .map(|(id, a)| {
            let present: [bool; 3] = std::array::from_fn(|k| allowed[k] && id[k] != 0);
            let Some(level) = select_level(*a, present) else { return 0 };
            let key = (level, id[level]);
            let r = *key_index.entry(key).or_insert_with(|| {
                regions.push(FusedRegion {
                    level: Level::ALL[level],
                    id: id[level],
                    pixels: 0,
                });
                regions.len() as u32
            });
            regions[r as usize - 1].pixels += 1;
            r
        })
        .collect();
    FusedMask { region_of, regions }
}

/// Selects, per pixel, the mask level with the largest weight among the
/// levels that assign the pixel, and groups pixels by (level, region id).
/// `alpha` is per pixel of the mask image; pixels where `include` is false
/// are excluded.
pub fn fuse_masks(masks: &GranularityMasks, alpha: &[[f64; 3]], include: &[bool]) -> Result<FusedMask> {
    let n = masks.width() * masks.height();
    if alpha.len() != n || include.len() != n {
        return Err(Error::ShapeMismatch(format!("{} weights / {} flags for {n} pixels", alpha.len(), include.len())));
    }
    let ids: Vec<[u32; 3]> = (0..n)
        .map(|i| {
            if include[i] {
                Level::ALL.map(|l| masks.level(l).ids.as_slice()[i])
            } else {
                [0; 3]
            }
        })
        .collect();
    Ok(fuse(&ids, alpha, [true; 3]))
}

/// `β = Σ_i S(R_i) / (n_r · S(R))` for the pixel's own region `R`.
pub fn region_factor(fused: &FusedMask, pixel: usize) -> Option<f64> {
    let r = *fused.region_of.get(pixel)?;
    if r == 0 {
        return None;
    }
    let own = fused.regions[r as usize - 1].pixels as f64;
    Some(fused.covered() as f64 / (fused.num_regions() as f64 * own))
}

/// Per-region sum of squared deviations from the region mean, divided by
/// region size, summed over regions. Rows of `f_clip` align with
/// `fused.region_of`.
pub fn consistency_loss(f_clip: ArrayView2<f64>, fused: &FusedMask) -> f64 {
    let means = region_means(f_clip, fused);
    let mut total = 0.0;
    for (p, &r) in fused.region_of.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let k = r as usize - 1;
        let d: f64 = f_clip.row(p).iter().zip(means.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
        total += d / fused.regions[k].pixels as f64;
    }
    total
}

fn region_means(f_clip: ArrayView2<f64>, fused: &FusedMask) -> Array2<f64> {
    let mut means = Array2::zeros((fused.num_regions(), f_clip.ncols()));
    for (p, &r) in fused.region_of.iter().enumerate() {
        if r != 0 {
            let mut row = means.row_mut(r as usize - 1);
            row += &f_clip.row(p);
        }
    }
    for (k, reg) in fused.regions.iter().enumerate() {
        means.row_mut(k).mapv_inplace(|v| v / reg.pixels as f64);
    }
    means
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub entropy: f64,
    pub consistency: f64,
}

/// Scalar terms of one view's loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub r_distill: f64,
    pub entropy: f64,
    pub consistency: f64,
    /// Unweighted mean distillation error.
    pub distill: f64,
    pub alpha_mean: [f64; 3],
    pub pixels: usize,
    pub regions: usize,
}

#[derive(Debug, Clone)]
pub struct ViewLoss {
    pub terms: LossTerms,
    /// Gradient with respect to the rows of `f_clip`.
    pub grad_clip: Array2<f64>,
    pub grad_eta: Array2<f64>,
}

/// Pixels of the image that take part in the loss: covered by the render
/// and assigned at some level usable by `mode`.
pub fn loss_pixels(covered: &[bool], masks: &GranularityMasks, mode: DistillMode) -> Vec<usize> {
    let allowed = mode.allowed();
    (0..covered.len())
        .filter(|&i| covered[i] && Level::ALL.iter().any(|&l| allowed[l.index()] && masks.level(l).ids.as_slice()[i] != 0))
        .collect()
}

/// Loss value and gradients for decoded rows `f_clip`, `eta` taken at
/// image pixels `pixels`.
///
/// The fused mask is rebuilt from the current weights and, like β, held
/// constant under differentiation.
pub fn view_loss(
    f_clip: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    pixels: &[usize],
    masks: &GranularityMasks,
    targets: &GranularityFeatures,
    mode: DistillMode,
    weights: LossWeights,
) -> Result<ViewLoss> {
    let n = pixels.len();
    if n == 0 {
        return Err(Error::MissingData("no covered pixel has a target".into()));
    }
    if f_clip.nrows() != n || eta.nrows() != n || eta.ncols() != 3 {
        return Err(Error::ShapeMismatch("decoded rows do not match pixel list".into()));
    }
    if f_clip.ncols() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "decoder emits {} components, targets have {}",
            f_clip.ncols(),
            targets.dim()
        )));
    }
    if f_clip.iter().chain(eta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("decoder produced non-finite values".into()));
    }
    let c = f_clip.ncols();
    let allowed = mode.allowed();
    let ids: Vec<[u32; 3]> = pixels
        .iter()
        .map(|&p| Level::ALL.map(|l| if allowed[l.index()] { masks.level(l).ids.as_slice()[p] } else { 0 }))
        .collect();
    let alpha: Vec<[f64; 3]> = eta.rows().into_iter().map(|r| granularity_weights([r[0], r[1], r[2]])).collect();
    let fused = match mode {
        DistillMode::Gad => fuse(&ids, &alpha, allowed),
        _ => fuse(&ids, &vec![[1.0 / 3.0; 3]; n], allowed),
    };
    let learned = mode == DistillMode::Gad;

    let mut grad_clip = Array2::zeros((n, c));
    let mut grad_eta = Array2::zeros((n, 3));
    let inv_n = 1.0 / n as f64;
    let mut terms = LossTerms {
        pixels: n,
        regions: fused.num_regions(),
        ..Default::default()
    };
    let target = |k: usize, id: u32| -> Vec<f64> { targets.levels[k].get(id).iter().map(|&v| v as f64).collect() };

    for (row, id) in ids.iter().enumerate() {
        let f = f_clip.row(row);
        let f = f.as_slice().expect("standard layout");
        let beta = region_factor(&fused, row).expect("loss pixel has a region");
        let present: [bool; 3] = std::array::from_fn(|k| id[k] != 0);
        let a = alpha[row];
        for k in 0..3 {
            terms.alpha_mean[k] += a[k] * inv_n;
        }
        let mut g = grad_clip.row_mut(row);
        if learned {
            let w = present_weights(a, present).expect("pixel has a level");
            let mut dists = [0.0; 3];
            let mut ld = 0.0;
            for k in (0..3).filter(|&k| present[k]) {
                let t = target(k, id[k]);
                dists[k] = sq_dist(f, &t);
                ld += w[k] * dists[k];
                for j in 0..c {
                    g[j] += beta * inv_n * 2.0 * w[k] * (f[j] - t[j]);
                }
            }
            terms.distill += ld * inv_n;
            terms.r_distill += beta * ld * inv_n;
            let h = entropy_loss(a);
            terms.entropy += h * inv_n;
            for k in 0..3 {
                let mut ge = 0.0;
                if present[k] {
                    ge += beta * inv_n * w[k] * (dists[k] - ld);
                }
                if a[k] > 0.0 {
                    ge -= weights.entropy * inv_n * a[k] * (a[k].ln() + h);
                }
                grad_eta[(row, k)] = ge;
            }
        } else {
            let t: Vec<f64> = match mode.single_level() {
                Some(l) => target(l.index(), id[l.index()]),
                None => {
                    let mut sum = vec![0.0; c];
                    for k in (0..3).filter(|&k| present[k]) {
                        sum.iter_mut().zip(target(k, id[k])).for_each(|(s, v)| *s += v);
                    }
                    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        sum.iter_mut().for_each(|v| *v /= norm);
                    }
                    sum
                }
            };
            let ld = sq_dist(f, &t);
            terms.distill += ld * inv_n;
            terms.r_distill += beta * ld * inv_n;
            for j in 0..c {
                g[j] += beta * inv_n * 2.0 * (f[j] - t[j]);
            }
        }
    }

    if weights.consistency > 0.0 && fused.num_regions() > 0 {
        let means = region_means(f_clip, &fused);
        let nr = fused.num_regions() as f64;
        let mut cons = 0.0;
        for (row, &r) in fused.region_of.iter().enumerate() {
            let k = r as usize - 1;
            let s = fused.regions[k].pixels as f64;
            let mut g = grad_clip.row_mut(row);
            for j in 0..c {
                let d = f_clip[(row, j)] - means[(k, j)];
                cons += d * d / s;
                g[j] += weights.consistency * 2.0 * d / (s * nr);
            }
        }
        terms.consistency = cons / nr;
    }
    let entropy_weight = if learned { weights.entropy } else { 0.0 };
    terms.total = terms.r_distill + entropy_weight * terms.entropy + weights.consistency * terms.consistency;
    Ok(ViewLoss {
        terms,
        grad_clip,
        grad_eta,
    })
}
