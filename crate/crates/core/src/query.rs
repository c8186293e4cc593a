//! Open-vocabulary query over decoded feature maps: relevancy against
//! canonical phrases, smoothing, localization, thresholded segmentation and
//! the localization / mask metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distill::{DecodedMap, Decoder};
use crate::error::{Error, Result};
use crate::field::{Camera, GaussianField};
use crate::grid::{FeatureMap, Grid};
use crate::oracle::{LabelRender, Level};
use crate::splat::SplatPlan;

pub const DEFAULT_KERNEL: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Spread below which min-max normalization is treated as degenerate.
const DEGENERATE_SPREAD: f64 = 1e-12;

/// `min_i exp(f·t) / (exp(f·c_i) + exp(f·t))`, evaluated as a logistic of
/// the dot product difference.
pub fn relevancy(f_clip: &[f64], f_text: &[f64], canon: &[&[f64]]) -> Result<f64> {
    if canon.is_empty() {
        return Err(Error::InvalidArgument("empty canonical phrase set".into()));
    }
    if f_text.len() != f_clip.len() || canon.iter().any(|c| c.len() != f_clip.len()) {
        return Err(Error::ShapeMismatch("relevancy vectors differ in dimension".into()));
    }
    let t = dot(f_clip, f_text);
    Ok(canon
        .iter()
        .map(|c| 1.0 / (1.0 + (dot(f_clip, c) - t).exp()))
        .fold(f64::INFINITY, f64::min))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_kernel(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("smoothing kernel must be odd, got {k}")));
    }
    Ok(k / 2)
}

/// Mean filter of width `k` averaging valid pixels only. Invalid pixels
/// come out as 0; the window is truncated at the image border.
pub fn smooth(raw: &Grid<f64>, valid: &Grid<bool>, k: usize) -> Result<Grid<f64>> {
    if !raw.same_shape(valid) {
        return Err(Error::ShapeMismatch("relevancy and validity grids differ".into()));
    }
    let map = FeatureMap::from_vec(raw.width(), raw.height(), 1, raw.as_slice().to_vec())?;
    let out = smooth_features(&map, valid, k)?;
    Grid::from_vec(raw.width(), raw.height(), out.as_slice().to_vec())
}

/// Per-channel version of [`smooth`].
pub fn smooth_features(map: &FeatureMap, valid: &Grid<bool>, k: usize) -> Result<FeatureMap> {
    let r = check_kernel(k)?;
    let (w, h, d) = (map.width(), map.height(), map.dim());
    if valid.width() != w || valid.height() != h {
        return Err(Error::ShapeMismatch("feature map and validity grid differ".into()));
    }
    let mut out = FeatureMap::zeros(w, h, d);
    let mut acc = vec![0.0; d];
    for y in 0..h {
        for x in 0..w {
            if !*valid.get(x, y) {
                continue;
            }
            acc.fill(0.0);
            let mut n = 0usize;
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    if *valid.get(xx, yy) {
                        acc.iter_mut().zip(map.at(xx, yy)).for_each(|(a, v)| *a += v);
                        n += 1;
                    }
                }
            }
            let o = out.pixel_mut(y * w + x);
            o.iter_mut().zip(&acc).for_each(|(o, a)| *o = a / n as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryParams {
    pub kernel: usize,
    pub threshold: f64,
    /// Smooth the decoded features (then renormalize) instead of the
    /// relevancy scores.
    pub smooth_features: bool,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_KERNEL,
            threshold: DEFAULT_THRESHOLD,
            smooth_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevancyMap {
    pub raw: Grid<f64>,
    pub smoothed: Grid<f64>,
    pub normalized: Grid<f64>,
    pub valid: Grid<bool>,
    /// No spread over the valid pixels; `normalized` is all zero.
    pub degenerate: bool,
}

impl RelevancyMap {
    /// Builds the smoothed and normalized layers from raw scores.
    pub fn from_raw(raw: Grid<f64>, valid: Grid<bool>, kernel: usize) -> Result<Self> {
        let smoothed = smooth(&raw, &valid, kernel)?;
        Self::from_layers(raw, smoothed, valid)
    }

    fn from_layers(raw: Grid<f64>, smoothed: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        let (normalized, degenerate) = min_max(&smoothed, &valid);
        Ok(Self {
            raw,
            smoothed,
            normalized,
            valid,
            degenerate,
        })
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    /// Normalized scores with invalid pixels as `None`, for heatmaps.
    pub fn normalized_or_none(&self) -> Grid<Option<f64>> {
        let data = self
            .normalized
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .map(|(&v, &ok)| ok.then_some(v))
            .collect();
        Grid::from_vec(self.width(), self.height(), data).expect("same shape")
    }
}

fn min_max(g: &Grid<f64>, valid: &Grid<bool>) -> (Grid<f64>, bool) {
    let vals = g.as_slice().iter().zip(valid.as_slice()).filter(|(_, &ok)| ok).map(|(&v, _)| v);
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(hi - lo > DEGENERATE_SPREAD) {
        log::warn!("relevancy map has no spread over valid pixels; normalized map is zero");
        return (Grid::new(g.width(), g.height(), 0.0), true);
    }
    let data = g
        .as_slice()
        .iter()
        .zip(valid.as_slice())
        .map(|(&v, &ok)| if ok { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    (Grid::from_vec(g.width(), g.height(), data).expect("same shape"), false)
}

fn relevancy_grid(f_clip: &FeatureMap, valid: &[bool], text: &[f64], canon: &[&[f64]]) -> Result<Grid<f64>> {
    let data = (0..f_clip.num_pixels())
        .map(|i| if valid[i] { relevancy(f_clip.pixel(i), text, canon) } else { Ok(0.0) })
        .collect::<Result<Vec<_>>>()?;
    Grid::from_vec(f_clip.width(), f_clip.height(), data)
}

/// Relevancy of every valid decoded pixel to `text`.
pub fn relevancy_map(decoded: &DecodedMap, text: &[f64], canon: &[&[f64]], params: &QueryParams) -> Result<RelevancyMap> {
    let f = &decoded.f_clip;
    if text.len() != f.dim() {
        return Err(Error::ShapeMismatch(format!("text embedding has {} dims, features {}", text.len(), f.dim())));
    }
    let valid = Grid::from_vec(f.width(), f.height(), decoded.valid.clone())?;
    let raw = relevancy_grid(f, &decoded.valid, text, canon)?;
    if !params.smooth_features {
        return RelevancyMap::from_raw(raw, valid, params.kernel);
    }
    let mut sf = smooth_features(f, &valid, params.kernel)?;
    for i in 0..sf.num_pixels() {
        let px = sf.pixel_mut(i);
        let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            px.iter_mut().for_each(|v| *v /= n);
        }
    }
    let smoothed = relevancy_grid(&sf, &decoded.valid, text, canon)?;
    RelevancyMap::from_layers(raw, smoothed, valid)
}

/// Row-major first argmax of the smoothed map over valid pixels.
pub fn localize(map: &RelevancyMap) -> Result<[usize; 2]> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in map.smoothed.as_slice().iter().zip(map.valid.as_slice()).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::MissingData("relevancy map has no valid pixels".into()))?;
    Ok([i % map.width(), i / map.width()])
}

/// Valid pixels whose normalized relevancy reaches `tau`. Degenerate maps
/// give an empty mask.
pub fn segment(map: &RelevancyMap, tau: f64) -> Grid<bool> {
    if map.degenerate {
        return Grid::new(map.width(), map.height(), false);
    }
    let data = map
        .normalized
        .as_slice()
        .iter()
        .zip(map.valid.as_slice())
        .map(|(&v, &ok)| ok && v >= tau)
        .collect();
    Grid::from_vec(map.width(), map.height(), data).expect("same shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub label: String,
    pub view: usize,
    /// `[x, y]`.
    pub pixel: [usize; 2],
    /// Smoothed relevancy at `pixel`.
    pub peak: f64,
    pub mask: Grid<bool>,
}

pub fn run_query(map: &RelevancyMap, label: &str, view: usize, tau: f64) -> Result<QueryResult> {
    let pixel = localize(map)?;
    Ok(QueryResult {
        label: label.to_string(),
        view,
        pixel,
        peak: *map.smoothed.get(pixel[0], pixel[1]),
        mask: segment(map, tau),
    })
}

/// Renders the field from `camera` and decodes every covered pixel.
pub fn decode_view(field: &GaussianField, decoder: &Decoder, camera: &Camera) -> Result<DecodedMap> {
    let render = SplatPlan::new(field, camera)?.render(field)?;
    let covered: Vec<bool> = (0..render.blend_count.len()).map(|i| render.is_covered(i)).collect();
    decoder.decode(&render.features, &covered)
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, p: [usize; 2]) -> bool {
        (self.x0..=self.x1).contains(&p[0]) && (self.y0..=self.y1).contains(&p[1])
    }

    pub fn of_mask(mask: &Grid<bool>) -> Option<Self> {
        let mut b: Option<BBox> = None;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if *mask.get(x, y) {
                    let e = b.get_or_insert(BBox { x0: x, y0: y, x1: x, y1: y });
                    e.x0 = e.x0.min(x);
                    e.x1 = e.x1.max(x);
                    e.y1 = y;
                }
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub bbox: Option<BBox>,
    pub mask: Grid<bool>,
}

impl GroundTruth {
    pub fn from_mask(mask: Grid<bool>) -> Self {
        Self {
            bbox: BBox::of_mask(&mask),
            mask,
        }
    }

    /// Pixels labelled `id` at `level` in a label render.
    pub fn from_labels(labels: &LabelRender, level: Level, id: u32) -> Self {
        Self::from_mask(labels.level(level).map(|&v| v == id))
    }
}

/// `|a ∩ b| / |a ∪ b|`; the second value flags the empty-union case,
/// scored as 1.
pub fn iou(pred: &Grid<bool>, gt: &Grid<bool>) -> Result<(f64, bool)> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch("prediction and ground-truth masks differ in size".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.as_slice().iter().zip(gt.as_slice()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        return Ok((1.0, true));
    }
    Ok((inter as f64 / union as f64, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub label: String,
    pub view: usize,
    pub hit: bool,
    pub iou: f64,
    pub empty_union: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub queries: Vec<QueryEval>,
    pub hits: usize,
    pub m_acc: f64,
    pub m_iou: f64,
}

impl EvalRecord {
    /// Per-label mAcc and mIoU, sorted by label.
    pub fn per_label(&self) -> BTreeMap<String, (f64, f64)> {
        let mut acc: BTreeMap<String, (usize, usize, f64)> = BTreeMap::new();
        for q in &self.queries {
            let e = acc.entry(q.label.clone()).or_default();
            e.0 += 1;
            e.1 += q.hit as usize;
            e.2 += q.iou;
        }
        acc.into_iter()
            .map(|(k, (n, h, s))| (k, (h as f64 / n as f64, s / n as f64)))
            .collect()
    }
}

/// Scores every result against the ground truth of its (label, view).
/// A hit needs a ground-truth box containing the localization pixel.
pub fn eval_metrics(results: &[QueryResult], gt: &BTreeMap<(String, usize), GroundTruth>) -> Result<EvalRecord> {
    if results.is_empty() {
        return Err(Error::MissingData("no query results to evaluate".into()));
    }
    let mut queries = Vec::with_capacity(results.len());
    for r in results {
        let g = gt
            .get(&(r.label.clone(), r.view))
            .ok_or_else(|| Error::MissingData(format!("no ground truth for '{}' in view {}", r.label, r.view)))?;
        let (iou, empty_union) = iou(&r.mask, &g.mask)?;
        if empty_union {
            log::warn!("'{}' view {}: prediction and ground truth both empty, IoU set to 1", r.label, r.view);
        }
        queries.push(QueryEval {
            label: r.label.clone(),
            view: r.view,
            hit: g.bbox.is_some_and(|b| b.contains(r.pixel)),
            iou,
            empty_union,
        });
    }
    let n = queries.len() as f64;
    let hits = queries.iter().filter(|q| q.hit).count();
    let m_iou = queries.iter().map(|q| q.iou).sum::<f64>() / n;
    Ok(EvalRecord {
        queries,
        hits,
        m_acc: hits as f64 / n,
        m_iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dim: usize, k: usize) -> Vec<f64> {
        (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    fn all_valid(w: usize, h: usize) -> Grid<bool> {
        Grid::new(w, h, true)
    }

    fn map_of(values: Vec<f64>, w: usize, h: usize, kernel: usize) -> RelevancyMap {
        RelevancyMap::from_raw(Grid::from_vec(w, h, values).unwrap(), all_valid(w, h), kernel).unwrap()
    }

    #[test]
    fn text_equal_to_canonical_caps_at_half() {
        let canon = [unit(4, 0), unit(4, 1)];
        let refs: Vec<&[f64]> = canon.iter().map(Vec::as_slice).collect();
        let f = [0.6, 0.8, 0.0, 0.0];
        let r = relevancy(&f, &canon[1], &refs).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let r = relevancy(&[0.0, 0.0, 1.0, 0.0], &canon[0], &refs).unwrap();
        assert!(r <= 0.5);
    }

    #[test]
    fn opposite_canon_gives_logistic_of_two() {
        let f = unit(3, 0);
        let neg = [-1.0, 0.0, 0.0];
        let canon: Vec<&[f64]> = vec![&neg; 4];
        let r = relevancy(&f, &f, &canon).unwrap();
        let e = std::f64::consts::E;
        assert!((r - e / (e + 1.0 / e)).abs() < 1e-12);
        assert!((r - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn empty_canon_is_an_error() {
        assert!(matches!(relevancy(&[1.0], &[1.0], &[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(relevancy(&[1.0], &[1.0, 0.0], &[&[1.0]]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn constant_map_is_unchanged_by_smoothing() {
        let g = Grid::new(7, 5, 0.3);
        let s = smooth(&g, &all_valid(7, 5), 5).unwrap();
        assert!(s.as_slice().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn spike_is_spread_over_the_window() {
        let mut g = Grid::new(5, 5, 0.0);
        g.set(2, 2, 9.0);
        let s = smooth(&g, &all_valid(5, 5), 3).unwrap();
        assert!((s.get(2, 2) - 1.0).abs() < 1e-15);
        assert!((s.get(1, 3) - 1.0).abs() < 1e-15);
        assert_eq!(*s.get(0, 0), 0.0);
    }

    #[test]
    fn smoothing_skips_invalid_pixels() {
        let g = Grid::from_vec(3, 1, vec![1.0, 100.0, 3.0]).unwrap();
        let valid = Grid::from_vec(3, 1, vec![true, false, true]).unwrap();
        let s = smooth(&g, &valid, 3).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.0, 3.0]);
        assert!(smooth(&g, &valid, 4).is_err());
    }

    #[test]
    fn localize_single_and_tied_maxima() {
        let m = map_of(vec![0.1, 0.2, 0.9, 0.3, 0.1, 0.0], 3, 2, 1);
        assert_eq!(localize(&m).unwrap(), [2, 0]);
        let m = map_of(vec![0.1, 0.7, 0.2, 0.7, 0.1, 0.0], 3, 2, 1);
        assert_eq!(localize(&m).unwrap(), [1, 0]);
    }

    #[test]
    fn localize_needs_a_valid_pixel() {
        let m = RelevancyMap::from_raw(Grid::new(2, 2, 0.5), Grid::new(2, 2, false), 1).unwrap();
        assert!(matches!(localize(&m), Err(Error::MissingData(_))));
    }

    #[test]
    fn segment_binary_constant_and_zero_threshold() {
        let m = map_of(vec![0.0, 1.0, 1.0, 0.0], 2, 2, 1);
        assert_eq!(segment(&m, DEFAULT_THRESHOLD).as_slice(), &[false, true, true, false]);
        assert_eq!(segment(&m, 0.0).as_slice(), &[true; 4]);

        let c = map_of(vec![0.4; 4], 2, 2, 1);
        assert!(c.degenerate);
        assert!(c.normalized.as_slice().iter().all(|&v| v == 0.0));
        assert!(segment(&c, DEFAULT_THRESHOLD).as_slice().iter().all(|&v| !v));
    }

    #[test]
    fn zero_threshold_excludes_invalid_pixels() {
        let raw = Grid::from_vec(3, 1, vec![0.2, 0.9, 0.5]).unwrap();
        let valid = Grid::from_vec(3, 1, vec![true, true, false]).unwrap();
        let m = RelevancyMap::from_raw(raw, valid, 1).unwrap();
        assert_eq!(segment(&m, 0.0).as_slice(), &[true, true, false]);
        assert_eq!(m.normalized.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn iou_examples() {
        let gt = Grid::from_vec(6, 6, (0..36).map(|i| (1..5).contains(&(i % 6)) && (1..5).contains(&(i / 6))).collect()).unwrap();
        assert_eq!(iou(&gt, &gt).unwrap(), (1.0, false));
        let inv = gt.map(|&v| !v);
        assert_eq!(iou(&inv, &gt).unwrap().0, 0.0);
        let pred = Grid::from_vec(6, 6, (0..36).map(|i| (2..4).contains(&(i % 6)) && (2..4).contains(&(i / 6))).collect()).unwrap();
        assert!((iou(&pred, &gt).unwrap().0 - 0.25).abs() < 1e-15);
        let empty = Grid::new(6, 6, false);
        assert_eq!(iou(&empty, &empty).unwrap(), (1.0, true));
    }

    #[test]
    fn bbox_is_inclusive() {
        let mut m = Grid::new(5, 4, false);
        m.set(1, 1, true);
        m.set(3, 2, true);
        let b = BBox::of_mask(&m).unwrap();
        assert_eq!(b, BBox { x0: 1, y0: 1, x1: 3, y1: 2 });
        assert!(b.contains([3, 2]) && b.contains([1, 1]));
        assert!(!b.contains([4, 2]) && !b.contains([1, 3]));
        assert_eq!(BBox::of_mask(&Grid::new(2, 2, false)), None);
    }

    #[test]
    fn eval_counts_hits_and_requires_ground_truth() {
        let mut gt_mask = Grid::new(4, 4, false);
        gt_mask.set(1, 1, true);
        gt_mask.set(2, 1, true);
        let mut gt = BTreeMap::new();
        gt.insert(("cup".to_string(), 0), GroundTruth::from_mask(gt_mask.clone()));
        gt.insert(("cup".to_string(), 1), GroundTruth::from_mask(Grid::new(4, 4, false)));
        let results = vec![
            QueryResult { label: "cup".into(), view: 0, pixel: [2, 1], peak: 0.7, mask: gt_mask.clone() },
            QueryResult { label: "cup".into(), view: 1, pixel: [0, 0], peak: 0.5, mask: Grid::new(4, 4, false) },
        ];
        let rec = eval_metrics(&results, &gt).unwrap();
        assert_eq!(rec.hits, 1);
        assert_eq!(rec.m_acc, 0.5);
        assert_eq!(rec.m_iou, 1.0);
        assert!(rec.queries[1].empty_union);
        assert_eq!(rec.per_label()["cup"], (0.5, 1.0));

        let missing = vec![QueryResult { view: 7, ..results[0].clone() }];
        assert!(matches!(eval_metrics(&missing, &gt), Err(Error::MissingData(_))));
    }

    #[test]
    fn feature_smoothing_renormalizes() {
        let (w, h) = (3, 3);
        let mut f = FeatureMap::zeros(w, h, 2);
        for i in 0..9 {
            let a = i as f64 * 0.2;
            f.pixel_mut(i).copy_from_slice(&[a.cos(), a.sin()]);
        }
        let decoded = DecodedMap { f_clip: f, eta: FeatureMap::zeros(w, h, 3), valid: vec![true; 9] };
        let text = [1.0, 0.0];
        let canon = [0.0, 1.0];
        let params = QueryParams { smooth_features: true, kernel: 3, ..Default::default() };
        let m = relevancy_map(&decoded, &text, &[&canon], &params).unwrap();
        // centre window averages all nine angles
        let mean = [(0..9).map(|i| (i as f64 * 0.2).cos()).sum::<f64>(), (0..9).map(|i| (i as f64 * 0.2).sin()).sum::<f64>()];
        let n = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();
        let expect = relevancy(&[mean[0] / n, mean[1] / n], &text, &[&canon]).unwrap();
        assert!((m.smoothed.get(1, 1) - expect).abs() < 1e-12);
        assert!((m.raw.get(0, 0) - relevancy(&[1.0, 0.0], &text, &[&canon]).unwrap()).abs() < 1e-15);
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim).prop_filter_map("non-zero", |v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
        })
    }

    proptest! {
        #[test]
        fn relevancy_is_a_proper_fraction(f in unit_vec(6), t in unit_vec(6), c in prop::collection::vec(unit_vec(6), 1..6)) {
            let refs: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
            let r = relevancy(&f, &t, &refs).unwrap();
            prop_assert!(r > 0.0 && r < 1.0);
        }

        #[test]
        fn relevancy_ignores_canon_order(f in unit_vec(5), t in unit_vec(5), c in prop::collection::vec(unit_vec(5), 4), perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
            let a: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
            let b: Vec<&[f64]> = perm.iter().map(|&i| c[i].as_slice()).collect();
            prop_assert_eq!(relevancy(&f, &t, &a).unwrap(), relevancy(&f, &t, &b).unwrap());
        }

        #[test]
        fn localization_survives_increasing_transforms(values in prop::collection::vec(0.0f64..1.0, 48), scale in 0.1f64..5.0, shift in -2.0f64..2.0) {
            let base = map_of(values.clone(), 8, 6, 1);
            let warped = map_of(values.iter().map(|v| (scale * v + shift).exp()).collect(), 8, 6, 1);
            prop_assert_eq!(localize(&base).unwrap(), localize(&warped).unwrap());
        }

        #[test]
        fn lower_threshold_gives_superset(values in prop::collection::vec(0.0f64..1.0, 30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let m = map_of(values, 6, 5, 3);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a = segment(&m, lo);
            let b = segment(&m, hi);
            prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(&x, &y)| x || !y));
        }

        #[test]
        fn smoothing_preserves_interior_mass(values in prop::collection::vec(0.0f64..1.0, 9)) {
            // support sits at least two kernel radii from every border
            let (w, h) = (11, 11);
            let mut g = Grid::new(w, h, 0.0);
            for (i, v) in values.iter().enumerate() {
                g.set(4 + i % 3, 4 + i / 3, *v);
            }
            let s = smooth(&g, &all_valid(w, h), 3).unwrap();
            let before: f64 = g.as_slice().iter().sum();
            let after: f64 = s.as_slice().iter().sum();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn normalized_spans_unit_interval(values in prop::collection::vec(0.0f64..1.0, 20)) {
            let m = map_of(values, 5, 4, 1);
            prop_assume!(!m.degenerate);
            let lo = m.normalized.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = m.normalized.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }
}
