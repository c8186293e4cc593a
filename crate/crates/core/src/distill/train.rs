use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::decoder::{gather, Decoder, DecoderGrads, DEFAULT_HIDDEN};
use super::loss::{loss_pixels, view_loss, DistillMode, LossTerms, LossWeights};
use crate::error::{Error, Result};
use crate::field::{Camera, GaussianField};
use crate::grid::FeatureMap;
use crate::oracle::{GranularityFeatures, GranularityMasks};
use crate::seed;
use crate::splat::SplatPlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_entropy: f64,
    pub lambda_cons: f64,
    pub lr_features: f64,
    pub lr_decoder: f64,
    pub adam: AdamParams,
    pub iterations: usize,
    pub views_per_iteration: usize,
    pub hidden: usize,
    pub mode: DistillMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_entropy: 0.01,
            lambda_cons: 0.1,
            lr_features: 2.5e-3,
            lr_decoder: 1e-3,
            adam: AdamParams::default(),
            iterations: 2000,
            views_per_iteration: 1,
            hidden: DEFAULT_HIDDEN,
            mode: DistillMode::Gad,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_entropy < 0.0 || self.lambda_cons < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.lr_features > 0.0 && self.lr_decoder > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.views_per_iteration == 0 || self.hidden == 0 {
            return Err(Error::Config("views per iteration and hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            entropy: self.lambda_entropy,
            consistency: self.lambda_cons,
        }
    }
}

/// One training view: camera, its masks and the region targets.
#[derive(Debug, Clone)]
pub struct ViewData {
    pub camera: Camera,
    pub masks: GranularityMasks,
    pub targets: GranularityFeatures,
}

/// Loss and gradients of one view.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub terms: LossTerms,
    /// Flat `(gaussians, d)` feature gradient.
    pub features: Vec<f64>,
    pub decoder: DecoderGrads,
}

/// Renders, decodes and differentiates the loss of one view.
pub fn view_gradients(
    field: &GaussianField,
    plan: &SplatPlan,
    decoder: &Decoder,
    view: &ViewData,
    mode: DistillMode,
    weights: LossWeights,
) -> Result<StepGrads> {
    let render = plan.render(field)?;
    let covered: Vec<bool> = (0..render.blend_count.len()).map(|i| render.is_covered(i)).collect();
    let pixels = loss_pixels(&covered, &view.masks, mode);
    let x = gather(&render.features, &pixels);
    let fwd = decoder.forward(x.view())?;
    let loss = view_loss(fwd.f_clip.view(), fwd.eta.view(), &pixels, &view.masks, &view.targets, mode, weights)?;
    let (dgrads, gx) = decoder.backward(x.view(), &fwd, loss.grad_clip.view(), loss.grad_eta.view());
    let mut grad_map = FeatureMap::zeros(render.width(), render.height(), field.feature_dim());
    for (k, &p) in pixels.iter().enumerate() {
        grad_map.pixel_mut(p).iter_mut().zip(gx.row(k)).for_each(|(o, &g)| *o = g);
    }
    let features = plan.backward(field, &grad_map)?;
    Ok(StepGrads {
        terms: loss.terms,
        features,
        decoder: dgrads,
    })
}

/// Per-iteration training record, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: usize,
    pub views: Vec<usize>,
    pub total: f64,
    pub r_distill: f64,
    pub entropy: f64,
    pub consistency: f64,
    pub distill: f64,
    pub alpha_mean: [f64; 3],
}

impl IterLog {
    fn from_terms(iteration: usize, views: Vec<usize>, t: &LossTerms) -> Self {
        Self {
            iteration,
            views,
            total: t.total,
            r_distill: t.r_distill,
            entropy: t.entropy,
            consistency: t.consistency,
            distill: t.distill,
            alpha_mean: t.alpha_mean,
        }
    }
}

pub fn write_jsonl(log: &[IterLog], out: &mut impl Write) -> Result<()> {
    for rec in log {
        serde_json::to_writer(&mut *out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub field: GaussianField,
    pub decoder: Decoder,
    pub log: Vec<IterLog>,
}

fn flat_decoder_grads(g: &DecoderGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..3 {
        out.extend(g.weights[k].iter());
        out.extend(g.biases[k].iter());
    }
    out
}

fn add_grads(acc: &mut DecoderGrads, g: &DecoderGrads) {
    for k in 0..3 {
        acc.weights[k] += &g.weights[k];
        acc.biases[k] += &g.biases[k];
    }
}

fn apply_decoder_update(decoder: &mut Decoder, deltas: &[f64]) {
    let mut it = deltas.iter();
    for k in 0..3 {
        decoder.weights[k].iter_mut().for_each(|w| *w += it.next().expect("delta"));
        decoder.biases[k].iter_mut().for_each(|b| *b += it.next().expect("delta"));
    }
}

fn decoder_param_count(d: &Decoder) -> usize {
    (0..3).map(|k| d.weights[k].len() + d.biases[k].len()).sum()
}

/// Mean loss terms over `views` without updating anything.
pub fn evaluate(field: &GaussianField, decoder: &Decoder, views: &[ViewData], mode: DistillMode, weights: LossWeights) -> Result<LossTerms> {
    let mut acc = LossTerms::default();
    for v in views {
        let plan = SplatPlan::new(field, &v.camera)?;
        let g = view_gradients(field, &plan, decoder, v, mode, weights)?;
        accumulate(&mut acc, &g.terms, 1.0 / views.len() as f64);
    }
    Ok(acc)
}

fn accumulate(acc: &mut LossTerms, t: &LossTerms, w: f64) {
    acc.total += w * t.total;
    acc.r_distill += w * t.r_distill;
    acc.entropy += w * t.entropy;
    acc.consistency += w * t.consistency;
    acc.distill += w * t.distill;
    for k in 0..3 {
        acc.alpha_mean[k] += w * t.alpha_mean[k];
    }
    acc.pixels += t.pixels;
    acc.regions += t.regions;
}

/// Optimizes the field's features and a decoder with Adam. Each iteration
/// draws `views_per_iteration` views from a seeded per-epoch permutation.
/// A fresh decoder is initialized from the seed unless one is given.
pub fn train(
    mut field: GaussianField,
    views: &[ViewData],
    config: &TrainConfig,
    decoder: Option<Decoder>,
) -> Result<Trained> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::MissingData("no training views".into()));
    }
    if field.is_empty() {
        return Err(Error::EmptyField);
    }
    let clip_dim = views[0].targets.dim();
    if views.iter().any(|v| v.targets.dim() != clip_dim) {
        return Err(Error::ShapeMismatch("target dimension differs between views".into()));
    }
    for v in views {
        v.targets.validate(&v.masks)?;
        if v.masks.width() != v.camera.width || v.masks.height() != v.camera.height {
            return Err(Error::ShapeMismatch("mask size differs from camera".into()));
        }
    }
    let mut decoder = match decoder {
        Some(d) if d.input_dim() == field.feature_dim() && d.clip_dim() == clip_dim => d,
        Some(_) => return Err(Error::ShapeMismatch("decoder does not fit field and targets".into())),
        None => Decoder::new(field.feature_dim(), config.hidden, clip_dim, seed::derive(config.seed, &[1]))?,
    };
    let mut log = Vec::with_capacity(config.iterations);
    if config.iterations == 0 {
        return Ok(Trained { field, decoder, log });
    }

    let plans = views
        .iter()
        .map(|v| SplatPlan::new(&field, &v.camera))
        .collect::<Result<Vec<_>>>()?;
    let mut feat_adam = Adam::new(field.features().len(), config.lr_features, config.adam);
    let mut dec_adam = Adam::new(decoder_param_count(&decoder), config.lr_decoder, config.adam);
    let mut rng = seed::rng(config.seed, &[2]);
    let mut order: Vec<usize> = Vec::new();
    let weights = config.weights();

    for it in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.views_per_iteration);
        for _ in 0..config.views_per_iteration {
            if order.is_empty() {
                order = (0..views.len()).rev().collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("non-empty"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut terms = LossTerms::default();
        let mut fgrad = vec![0.0; field.features().len()];
        let mut dgrad = DecoderGrads {
            weights: decoder.weights.clone().map(|w| Array2::zeros(w.raw_dim())),
            biases: decoder.biases.clone().map(|b| ndarray::Array1::zeros(b.len())),
        };
        for &vi in &batch {
            let g = view_gradients(&field, &plans[vi], &decoder, &views[vi], config.mode, weights).map_err(|e| match e {
                Error::Numeric(msg) => {
                    log::error!("iteration {it}, view {vi}: {msg}");
                    Error::Numeric(format!("{msg} at iteration {it} (view {vi})"))
                }
                other => other,
            })?;
            if !g.terms.total.is_finite() {
                log::error!("non-finite loss at iteration {it}, view {vi}: {:?}", g.terms);
                return Err(Error::Numeric(format!(
                    "loss became {} at iteration {it} (view {vi}): r_distill {}, entropy {}, consistency {}",
                    g.terms.total, g.terms.r_distill, g.terms.entropy, g.terms.consistency
                )));
            }
            accumulate(&mut terms, &g.terms, scale);
            fgrad.iter_mut().zip(&g.features).for_each(|(a, b)| *a += scale * b);
            let mut scaled = g.decoder;
            for k in 0..3 {
                scaled.weights[k] *= scale;
                scaled.biases[k] *= scale;
            }
            add_grads(&mut dgrad, &scaled);
        }
        {
            let feats = field.features_mut();
            feat_adam.step(&fgrad, |i, d| feats[i] = (feats[i] as f64 + d) as f32);
        }
        let flat = flat_decoder_grads(&dgrad);
        let mut deltas = vec![0.0; flat.len()];
        dec_adam.step(&flat, |i, d| deltas[i] = d);
        apply_decoder_update(&mut decoder, &deltas);
        log.push(IterLog::from_terms(it, batch, &terms));
    }
    Ok(Trained { field, decoder, log })
}
