use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FeatureMap;
use crate::seed;
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 64;
/// Granularity scores appended to the feature output.
pub const NUM_LEVELS: usize = 3;
const NORM_FLOOR: f64 = 1e-12;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// SiLU derivative from the pre-activation and its sigmoid.
fn silu_grad(z: f64, s: f64) -> f64 {
    s * (1.0 + z * (1.0 - s))
}

/// Pointwise MLP `d → h → h → (C + 3)` with SiLU between layers. The first
/// `C` outputs are L2-normalized into the feature, the last 3 are the
/// granularity scores η.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    /// Row-major `(out, in)` weights.
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    z: [Array2<f64>; 2],
    /// Sigmoid of `z`, kept for the backward pass.
    sig: [Array2<f64>; 2],
    a: [Array2<f64>; 2],
    norms: Array1<f64>,
    /// `(P, C)` unit-norm features.
    pub f_clip: Array2<f64>,
    /// `(P, 3)` granularity scores.
    pub eta: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    schema_version: u32,
    input_dim: usize,
    hidden: usize,
    clip_dim: usize,
    activation: String,
    tensors: Vec<String>,
}

/// `x Wᵀ + b` for a batch of rows.
fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        row += b;
    }
    z
}

impl Decoder {
    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)` for weights
    /// and biases.
    pub fn new(input_dim: usize, hidden: usize, clip_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || clip_dim == 0 {
            return Err(Error::InvalidArgument("decoder sizes must be positive".into()));
        }
        let mut rng = seed::rng(seed, &[0x6465_636f]);
        let sizes = [(hidden, input_dim), (hidden, hidden), (clip_dim + NUM_LEVELS, hidden)];
        let mut init = |(o, i): (usize, usize)| {
            let bound = 1.0 / (i as f64).sqrt();
            let w = Array2::from_shape_fn((o, i), |_| rng.random_range(-bound..bound));
            let b = Array1::from_shape_fn(o, |_| rng.random_range(-bound..bound));
            (w, b)
        };
        let (w0, b0) = init(sizes[0]);
        let (w1, b1) = init(sizes[1]);
        let (w2, b2) = init(sizes[2]);
        Ok(Self {
            weights: [w0, w1, w2],
            biases: [b0, b1, b2],
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize, clip_dim: usize) -> Self {
        Self {
            weights: [
                Array2::zeros((hidden, input_dim)),
                Array2::zeros((hidden, hidden)),
                Array2::zeros((clip_dim + NUM_LEVELS, hidden)),
            ],
            biases: [Array1::zeros(hidden), Array1::zeros(hidden), Array1::zeros(clip_dim + NUM_LEVELS)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn clip_dim(&self) -> usize {
        self.weights[2].nrows() - NUM_LEVELS
    }

    /// Decodes a `(P, d)` batch of rendered features.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let z0 = affine(x, &self.weights[0], &self.biases[0]);
        let s0 = z0.mapv(sigmoid);
        let a0 = &z0 * &s0;
        let z1 = affine(a0.view(), &self.weights[1], &self.biases[1]);
        let s1 = z1.mapv(sigmoid);
        let a1 = &z1 * &s1;
        let out = affine(a1.view(), &self.weights[2], &self.biases[2]);
        let c = self.clip_dim();
        let mut f_clip = out.slice(s![.., ..c]).to_owned();
        let norms = f_clip.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_FLOOR));
        for (mut row, &n) in f_clip.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        let eta = out.slice(s![.., c..]).to_owned();
        Ok(Forward {
            z: [z0, z1],
            sig: [s0, s1],
            a: [a0, a1],
            norms,
            f_clip,
            eta,
        })
    }

    /// Back-propagates loss gradients with respect to the normalized
    /// features and η; returns parameter gradients and `∂L/∂x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        fwd: &Forward,
        grad_clip: ArrayView2<f64>,
        grad_eta: ArrayView2<f64>,
    ) -> (DecoderGrads, Array2<f64>) {
        // through the normalization: (g - f (f·g)) / |raw|
        let fg = (&fwd.f_clip * &grad_clip).sum_axis(Axis(1));
        let mut g_raw = &grad_clip - &(&fwd.f_clip * &fg.view().insert_axis(Axis(1)));
        g_raw /= &fwd.norms.view().insert_axis(Axis(1));
        let mut g_out = Array2::zeros((x.nrows(), self.clip_dim() + NUM_LEVELS));
        g_out.slice_mut(s![.., ..self.clip_dim()]).assign(&g_raw);
        g_out.slice_mut(s![.., self.clip_dim()..]).assign(&grad_eta);

        let gw2 = g_out.t().dot(&fwd.a[1]);
        let gb2 = g_out.sum_axis(Axis(0));
        let mut g1 = g_out.dot(&self.weights[2]);
        ndarray::Zip::from(&mut g1)
            .and(&fwd.z[1])
            .and(&fwd.sig[1])
            .for_each(|g, &z, &s| *g *= silu_grad(z, s));
        let gw1 = g1.t().dot(&fwd.a[0]);
        let gb1 = g1.sum_axis(Axis(0));
        let mut g0 = g1.dot(&self.weights[1]);
        ndarray::Zip::from(&mut g0)
            .and(&fwd.z[0])
            .and(&fwd.sig[0])
            .for_each(|g, &z, &s| *g *= silu_grad(z, s));
        let gw0 = g0.t().dot(&x);
        let gb0 = g0.sum_axis(Axis(0));
        let gx = g0.dot(&self.weights[0]);
        (
            DecoderGrads {
                weights: [gw0, gw1, gw2],
                biases: [gb0, gb1, gb2],
            },
            gx,
        )
    }

    /// Decodes every covered pixel of a rendered feature map.
    pub fn decode(&self, render: &FeatureMap, covered: &[bool]) -> Result<DecodedMap> {
        if covered.len() != render.num_pixels() {
            return Err(Error::ShapeMismatch("coverage mask size differs from feature map".into()));
        }
        let pixels: Vec<usize> = (0..covered.len()).filter(|&i| covered[i]).collect();
        let x = gather(render, &pixels);
        let fwd = self.forward(x.view())?;
        let (w, h) = (render.width(), render.height());
        let mut f_clip = FeatureMap::zeros(w, h, self.clip_dim());
        let mut eta = FeatureMap::zeros(w, h, NUM_LEVELS);
        for (k, &p) in pixels.iter().enumerate() {
            f_clip.pixel_mut(p).iter_mut().zip(fwd.f_clip.row(k)).for_each(|(o, &v)| *o = v);
            eta.pixel_mut(p).iter_mut().zip(fwd.eta.row(k)).for_each(|(o, &v)| *o = v);
        }
        Ok(DecodedMap {
            f_clip,
            eta,
            valid: covered.to_vec(),
        })
    }

    /// Writes `<stem>.json` and one tensor file per parameter next to it.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut names = Vec::new();
        for k in 0..3 {
            for (kind, t) in [
                ("w", Tensor::from_f64(self.weights[k].shape().to_vec(), self.weights[k].as_slice().expect("standard layout"))?),
                ("b", Tensor::from_f64(vec![self.biases[k].len()], self.biases[k].as_slice().expect("standard layout"))?),
            ] {
                let name = format!("{stem}_{kind}{k}.tensor");
                t.write(dir.join(&name))?;
                names.push(name);
            }
        }
        let manifest = CheckpointManifest {
            schema_version: 1,
            input_dim: self.input_dim(),
            hidden: self.hidden(),
            clip_dim: self.clip_dim(),
            activation: "silu".into(),
            tensors: names,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        if m.schema_version != 1 || m.activation != "silu" || m.tensors.len() != 6 {
            return Err(Error::Format(format!("{}: unsupported decoder checkpoint", path.display())));
        }
        let mut dec = Decoder::zeros(m.input_dim, m.hidden, m.clip_dim);
        for k in 0..3 {
            let w = Tensor::read(dir.join(&m.tensors[2 * k]))?;
            let b = Tensor::read(dir.join(&m.tensors[2 * k + 1]))?;
            if w.shape() != dec.weights[k].shape() || b.shape() != dec.biases[k].shape() {
                return Err(Error::Format(format!("{}: layer {k} shape mismatch", path.display())));
            }
            dec.weights[k].iter_mut().zip(w.as_f32()?).for_each(|(o, &v)| *o = v as f64);
            dec.biases[k].iter_mut().zip(b.as_f32()?).for_each(|(o, &v)| *o = v as f64);
        }
        Ok(dec)
    }
}

/// Decoder output over an image.
#[derive(Debug, Clone)]
pub struct DecodedMap {
    pub f_clip: FeatureMap,
    pub eta: FeatureMap,
    pub valid: Vec<bool>,
}

/// Copies the listed pixels of `map` into a `(P, dim)` matrix.
pub fn gather(map: &FeatureMap, pixels: &[usize]) -> Array2<f64> {
    let d = map.dim();
    let mut x = Array2::zeros((pixels.len(), d));
    for (k, &p) in pixels.iter().enumerate() {
        x.row_mut(k).iter_mut().zip(map.pixel(p)).for_each(|(o, &v)| *o = v);
    }
    x
}
