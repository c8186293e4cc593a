//! Acceptance suite. Runs every criterion in order on one thread and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gags_core::distill::*;
use gags_core::field::{Camera, Gaussian, GaussianField};
use gags_core::grid::{FeatureMap, Grid};
use gags_core::oracle::*;
use gags_core::prompt::*;
use gags_core::query::*;
use gags_core::splat::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIGH_NOISE: f64 = 1.0;
const CODEBOOK_RHO: f64 = 0.5;
const TRAIN_PROMPTS: usize = 1024;

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when a failure comes from the machine rather than the code.
    hardware_limited: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            hardware_limited: false,
        }
    }
}

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn load_spec(name: &str) -> SceneSpec {
    let text = std::fs::read_to_string(scenes_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- criterion 1

fn axis_camera(w: usize, h: usize, dist: f64) -> Camera {
    Camera {
        width: w,
        height: h,
        fx: 1.6 * w as f64,
        fy: 1.6 * h as f64,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0, 0.0, dist],
        near: 0.01,
        far: 100.0,
    }
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, d: usize) -> GaussianField {
    let gs = (0..n)
        .map(|_| {
            Gaussian::new(
                [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4)],
                [rng.random_range(0.04..0.2), rng.random_range(0.04..0.2), rng.random_range(0.04..0.2)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0],
                rng.random_range(0.3..0.95),
            )
            .unwrap()
        })
        .collect();
    let feats = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    GaussianField::with_features(gs, d, feats).unwrap()
}

/// Nested random partition: two wholes split at a random column, each
/// split into two parts by a random row, each part into two sub-parts.
fn random_view(rng: &mut ChaCha8Rng, cam: Camera, clip_dim: usize) -> ViewData {
    let (w, h) = (cam.width, cam.height);
    let cx = rng.random_range(w / 4..3 * w / 4);
    let cy = rng.random_range(h / 4..3 * h / 4);
    let qx = rng.random_range(2..w / 4);
    let mut ids = [Grid::new(w, h, 0u32), Grid::new(w, h, 0u32), Grid::new(w, h, 0u32)];
    for y in 0..h {
        for x in 0..w {
            let whole = 1 + u32::from(x >= cx);
            let part = 2 * (whole - 1) + 1 + u32::from(y >= cy);
            let sub = 2 * (part - 1) + 1 + u32::from(x % (2 * qx) >= qx);
            ids[0].set(x, y, sub);
            ids[1].set(x, y, part);
            ids[2].set(x, y, whole);
        }
    }
    let levels = ids.map(|g| LevelMask::from_ids(g).unwrap());
    let masks = GranularityMasks { levels };
    let targets = GranularityFeatures {
        levels: std::array::from_fn(|l| {
            let mut t = RegionFeatures::zeros(masks.levels[l].num_regions(), clip_dim);
            for r in 1..=masks.levels[l].num_regions() as u32 {
                let v: Vec<f64> = (0..clip_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for (o, x) in t.get_mut(r).iter_mut().zip(&v) {
                    *o = (x / n) as f32;
                }
            }
            t
        }),
    };
    ViewData {
        camera: cam,
        masks,
        targets,
    }
}

fn composite_loss(field: &GaussianField, dec: &Decoder, view: &ViewData, mode: DistillMode, w: LossWeights) -> f64 {
    let plan = SplatPlan::new(field, &view.camera).unwrap();
    view_gradients(field, &plan, dec, view, mode, w).unwrap().terms.total
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let (d, hidden, clip) = (4, 16, 8);
    let (mut worst_render, mut worst_dec, mut worst_comp) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_render, mut n_dec, mut n_comp) = (0, 0, 0);
    let scenes = 20;
    for s in 0..scenes {
        let n = rng.random_range(5..=50);
        let size = rng.random_range(16..=32);
        let field = random_field(&mut rng, n, d);
        let cam = axis_camera(size, size, 3.0);

        // render backward against central differences of a random linear loss
        let weights = FeatureMap::from_vec(size, size, d, (0..size * size * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let analytic = render_backward(&field, &cam, &weights).unwrap();
        let lin = |f: &GaussianField| -> f64 {
            let out = render(f, &cam).unwrap();
            out.features.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
        };
        for i in 0..n {
            for k in 0..d {
                let (mut p, mut m) = (field.clone(), field.clone());
                p.feature_mut(i)[k] += 1e-3;
                m.feature_mut(i)[k] -= 1e-3;
                let delta = p.feature(i)[k] as f64 - m.feature(i)[k] as f64;
                let fd = (lin(&p) - lin(&m)) / delta;
                worst_render = worst_render.max(rel_err(analytic[i * d + k], fd, 1e-6));
                n_render += 1;
            }
        }

        // decoder: parameters and inputs under a random linear loss on its outputs
        let dec = Decoder::new(d, hidden, clip, s as u64).unwrap();
        let x = ndarray::Array2::from_shape_fn((3, d), |_| rng.random_range(-1.0..1.0));
        let gc = ndarray::Array2::from_shape_fn((3, clip), |_| rng.random_range(-1.0..1.0));
        let ge = ndarray::Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let dl = |dec: &Decoder, x: &ndarray::Array2<f64>| -> f64 {
            let f = dec.forward(x.view()).unwrap();
            (&f.f_clip * &gc).sum() + (&f.eta * &ge).sum()
        };
        let fwd = dec.forward(x.view()).unwrap();
        let (g, gx) = dec.backward(x.view(), &fwd, gc.view(), ge.view());
        let h = 1e-6;
        for layer in 0..3 {
            for idx in 0..dec.weights[layer].len() {
                let (mut p, mut m) = (dec.clone(), dec.clone());
                p.weights[layer].as_slice_mut().unwrap()[idx] += h;
                m.weights[layer].as_slice_mut().unwrap()[idx] -= h;
                let fd = (dl(&p, &x) - dl(&m, &x)) / (2.0 * h);
                worst_dec = worst_dec.max(rel_err(g.weights[layer].as_slice().unwrap()[idx], fd, 1e-6));
                n_dec += 1;
            }
            for idx in 0..dec.biases[layer].len() {
                let (mut p, mut m) = (dec.clone(), dec.clone());
                p.biases[layer][idx] += h;
                m.biases[layer][idx] -= h;
                let fd = (dl(&p, &x) - dl(&m, &x)) / (2.0 * h);
                worst_dec = worst_dec.max(rel_err(g.biases[layer][idx], fd, 1e-6));
                n_dec += 1;
            }
        }
        for idx in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_slice_mut().unwrap()[idx] += h;
            m.as_slice_mut().unwrap()[idx] -= h;
            let fd = (dl(&dec, &p) - dl(&dec, &m)) / (2.0 * h);
            worst_dec = worst_dec.max(rel_err(gx.as_slice().unwrap()[idx], fd, 1e-6));
            n_dec += 1;
        }

        // composite loss with respect to Gaussian features and decoder weights
        let view = random_view(&mut rng, cam.clone(), clip);
        let lw = LossWeights {
            entropy: 0.05,
            consistency: 0.3,
        };
        for mode in [DistillMode::Gad, DistillMode::Average] {
            let plan = SplatPlan::new(&field, &cam).unwrap();
            let g = view_gradients(&field, &plan, &dec, &view, mode, lw).unwrap();
            for _ in 0..12 {
                let i = rng.random_range(0..n);
                let k = rng.random_range(0..d);
                let (mut p, mut m) = (field.clone(), field.clone());
                p.feature_mut(i)[k] += 1e-3;
                m.feature_mut(i)[k] -= 1e-3;
                let delta = p.feature(i)[k] as f64 - m.feature(i)[k] as f64;
                let fd = (composite_loss(&p, &dec, &view, mode, lw) - composite_loss(&m, &dec, &view, mode, lw)) / delta;
                worst_comp = worst_comp.max(rel_err(g.features[i * d + k], fd, 1e-5));
                n_comp += 1;
            }
            for _ in 0..6 {
                let layer = rng.random_range(0..3);
                let idx = rng.random_range(0..dec.weights[layer].len());
                let (mut p, mut m) = (dec.clone(), dec.clone());
                p.weights[layer].as_slice_mut().unwrap()[idx] += h;
                m.weights[layer].as_slice_mut().unwrap()[idx] -= h;
                let fd = (composite_loss(&field, &p, &view, mode, lw) - composite_loss(&field, &m, &view, mode, lw)) / (2.0 * h);
                worst_comp = worst_comp.max(rel_err(g.decoder.weights[layer].as_slice().unwrap()[idx], fd, 1e-5));
                n_comp += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_render <= 1e-4 && worst_dec <= 1e-4 && worst_comp <= 1e-3 && secs < 120.0;
    Outcome::new(
        pass,
        format!(
            "{scenes} scenes; max rel err render {worst_render:.2e} ({n_render}), decoder {worst_dec:.2e} ({n_dec}), \
             composite {worst_comp:.2e} ({n_comp}); {secs:.1}s"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn close(&mut self, name: &str, got: f64, want: f64) {
        self.count += 1;
        if !((got - want).abs() <= 1e-6) {
            self.failed.push(format!("{name}: {got} vs {want}"));
        }
    }

    fn holds(&mut self, name: &str, ok: bool) {
        self.count += 1;
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn const_grid(w: usize, h: usize, v: f64) -> Grid<f64> {
    Grid::new(w, h, v)
}

fn budget(depth: &Grid<f64>, md: &Grid<f64>, n: usize, cap: f64) -> PromptPlan {
    let map = MinDepthMap {
        md: md.clone(),
        valid: Grid::new(md.width(), md.height(), true),
    };
    let p = BudgetParams {
        patch_size: depth.width(),
        base_count: n,
        ratio_cap: cap,
    };
    patch_prompt_counts(depth, &map, &p, 0).unwrap()
}

fn unit(c: usize, k: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; c];
    v[k] = sign;
    v
}

fn fused(sizes: &[usize]) -> FusedMask {
    let mut region_of = Vec::new();
    let mut regions = Vec::new();
    for (k, &s) in sizes.iter().enumerate() {
        region_of.extend(std::iter::repeat_n(k as u32 + 1, s));
        regions.push(FusedRegion {
            level: Level::Part,
            id: k as u32 + 1,
            pixels: s,
        });
    }
    FusedMask { region_of, regions }
}

fn criterion_2() -> Outcome {
    let mut c = Checks {
        failed: Vec::new(),
        count: 0,
    };
    // depth-aware budget
    let md = const_grid(8, 8, 1.5);
    c.close("budget D=MD", budget(&md, &md, 4, 25.0).patches[0].n_p, 4.0);
    c.close("budget D=2MD", budget(&const_grid(8, 8, 3.0), &md, 4, 25.0).patches[0].n_p, 16.0);
    let half = Grid::from_vec(8, 8, (0..64).map(|i| if i < 32 { 1.5 } else { 3.0 }).collect()).unwrap();
    c.close("budget half and half", budget(&half, &md, 4, 25.0).patches[0].n_p, 10.0);

    // granularity weights
    let a = granularity_weights([0.0; 3]);
    for k in 0..3 {
        c.close("softmax uniform", a[k], 1.0 / 3.0);
    }
    c.holds("softmax saturation", granularity_weights([10.0, 0.0, 0.0])[0] > 0.999);
    let a = granularity_weights([1.0, 2.0, 3.0]);
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (k, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
        c.close("softmax (1,2,3)", a[k], v.exp() / z);
    }
    c.close("softmax (1,2,3) rounded s", (a[0] * 1e4).round() / 1e4, 0.0900);
    c.close("softmax (1,2,3) rounded p", (a[1] * 1e4).round() / 1e4, 0.2447);
    c.close("softmax (1,2,3) rounded w", (a[2] * 1e4).round() / 1e4, 0.6652);

    // weighted distillation
    let e = |k| unit(4, k, 1.0);
    let (e0, e1, e2, e3) = (e(0), e(1), e(2), e(3));
    c.close("distill exact part", distill_loss(&e1, [Some(&e0), Some(&e1), Some(&e2)], [0.0, 1.0, 0.0]).unwrap(), 0.0);
    c.close(
        "distill orthogonal",
        distill_loss(&e3, [Some(&e0), Some(&e1), Some(&e2)], [0.2, 0.5, 0.3]).unwrap(),
        2.0,
    );
    // targets at squared distances 0.1, 0.4, 0.2 from f = e0
    let at = |d2: f64| {
        let cos = 1.0 - d2 / 2.0;
        vec![cos, (1.0 - cos * cos).sqrt(), 0.0, 0.0]
    };
    let (t1, t2, t3) = (at(0.1), at(0.4), at(0.2));
    c.close("distill weighted", distill_loss(&e0, [Some(&t1), Some(&t2), Some(&t3)], [0.2, 0.3, 0.5]).unwrap(), 0.24);

    // entropy
    c.close("entropy uniform", entropy_loss([1.0 / 3.0; 3]), 3f64.ln());
    c.close("entropy one-hot", entropy_loss([0.0, 1.0, 0.0]), 0.0);
    c.close("entropy half", entropy_loss([0.5, 0.5, 0.0]), 2f64.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut in_range = true;
    for _ in 0..10_000 {
        let eta = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        let h = entropy_loss(granularity_weights(eta));
        in_range &= (0.0..=3f64.ln() + 1e-12).contains(&h);
    }
    c.holds("entropy within [0, ln 3]", in_range);

    // region factor
    let one = fused(&[400]);
    c.close("beta single region", region_factor(&one, 17).unwrap(), 1.0);
    let two = fused(&[100, 300]);
    c.close("beta small region", region_factor(&two, 0).unwrap(), 2.0);
    c.close("beta large region", region_factor(&two, 399).unwrap(), 2.0 / 3.0);
    let eq = fused(&[50, 50, 50]);
    c.close("beta equal areas", region_factor(&eq, 120).unwrap(), 1.0);
    let mut mean_ok = true;
    for _ in 0..200 {
        let sizes: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(1..60)).collect();
        let f = fused(&sizes);
        let total: usize = sizes.iter().sum();
        let mean = (0..total).map(|p| region_factor(&f, p).unwrap()).sum::<f64>() / total as f64;
        mean_ok &= (mean - 1.0).abs() < 1e-9;
    }
    c.holds("beta pixel-weighted mean is 1", mean_ok);

    // consistency
    let f = ndarray::Array2::from_shape_vec((3, 2), vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8]).unwrap();
    c.close("consistency shared feature", consistency_loss(f.view(), &fused(&[3])), 0.0);
    let f = ndarray::Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    // each pixel is ‖(e1 − e2)/2‖² = 0.5 from the mean, divided by the region size 2
    c.close("consistency e1/e2", consistency_loss(f.view(), &fused(&[2])), 0.5);
    let f4 = ndarray::Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64).sin());
    let a = fused(&[2, 3]);
    let mut b = a.clone();
    for r in &mut b.region_of {
        *r = 3 - *r;
    }
    b.regions.swap(0, 1);
    c.close("consistency id permutation", consistency_loss(f4.view(), &a), consistency_loss(f4.view(), &b));

    // relevancy
    let cn: Vec<Vec<f64>> = (0..4).map(|k| unit(6, k + 1, 1.0)).collect();
    let canon: Vec<&[f64]> = cn.iter().map(Vec::as_slice).collect();
    let fc = [0.3, 0.5, 0.1, 0.2, 0.7, 0.3];
    let r = relevancy(&fc, &cn[2], &canon).unwrap();
    c.holds("relevancy text = canonical ≤ 0.5", r <= 0.5 + 1e-12);
    let f = unit(6, 0, 1.0);
    let neg = unit(6, 0, -1.0);
    let canon_neg: Vec<&[f64]> = vec![&neg; 4];
    let e = std::f64::consts::E;
    c.close("relevancy e/(e+1/e)", relevancy(&f, &f, &canon_neg).unwrap(), e / (e + 1.0 / e));
    let mut bounded = true;
    for _ in 0..1000 {
        // decoder outputs and text embeddings are unit vectors
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (nv, nt) = (v.iter().map(|x| x * x).sum::<f64>().sqrt(), t.iter().map(|x| x * x).sum::<f64>().sqrt());
        let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let t: Vec<f64> = t.iter().map(|x| x / nt).collect();
        let r = relevancy(&v, &t, &canon).unwrap();
        bounded &= r > 0.0 && r < 1.0;
    }
    c.holds("relevancy in (0, 1)", bounded);

    // smoothing, localization, thresholding
    let valid = Grid::new(7, 7, true);
    let flat = smooth(&const_grid(7, 7, 0.3), &valid, 5).unwrap();
    c.holds("smooth constant", flat.as_slice().iter().all(|v| (v - 0.3).abs() < 1e-12));
    let mut spike = const_grid(7, 7, 0.0);
    spike.set(3, 3, 9.0);
    c.close("smooth spike", *smooth(&spike, &valid, 3).unwrap().get(3, 3), 1.0);
    let mut two_max = const_grid(5, 5, 0.1);
    two_max.set(3, 1, 0.9);
    two_max.set(1, 3, 0.9);
    let map = RelevancyMap::from_raw(two_max, Grid::new(5, 5, true), 1).unwrap();
    c.holds("localize row-major tie", localize(&map).unwrap() == [3, 1]);
    let binary = Grid::from_vec(4, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let map = RelevancyMap::from_raw(binary, Grid::new(4, 1, true), 1).unwrap();
    c.holds("segment {0,1}", segment(&map, 0.4).as_slice() == [false, true, false, true]);
    let map = RelevancyMap::from_raw(const_grid(4, 4, 0.7), Grid::new(4, 4, true), 1).unwrap();
    c.holds("segment constant map is empty", segment(&map, 0.4).as_slice().iter().all(|b| !b));
    let mut monotone = true;
    for _ in 0..100 {
        let raw = Grid::from_vec(9, 9, (0..81).map(|_| rng.random::<f64>()).collect()).unwrap();
        let valid = Grid::from_vec(9, 9, (0..81).map(|_| rng.random::<f64>() < 0.8).collect()).unwrap();
        let map = RelevancyMap::from_raw(raw, valid.clone(), 3).unwrap();
        let t1 = rng.random::<f64>();
        let t2 = t1 + rng.random::<f64>() * (1.0 - t1);
        let (m1, m2) = (segment(&map, t1), segment(&map, t2));
        monotone &= m2.as_slice().iter().zip(m1.as_slice()).all(|(b, a)| !b || *a);
        if !map.degenerate {
            monotone &= segment(&map, 0.0).as_slice() == valid.as_slice();
        }
    }
    c.holds("segment threshold monotone, τ = 0 gives valid set", monotone);

    // evaluation set arithmetic
    let gt = Grid::from_vec(6, 6, (0..36).map(|i| (1..5).contains(&(i % 6)) && (1..5).contains(&(i / 6))).collect()).unwrap();
    let inner = Grid::from_vec(6, 6, (0..36).map(|i| (2..4).contains(&(i % 6)) && (2..4).contains(&(i / 6))).collect()).unwrap();
    c.close("iou identical", iou(&gt, &gt).unwrap().0, 1.0);
    c.close("iou 2x2 in 4x4", iou(&inner, &gt).unwrap().0, 0.25);
    let far = Grid::from_vec(6, 6, (0..36).map(|i| i == 0).collect()).unwrap();
    c.close("iou disjoint", iou(&far, &gt).unwrap().0, 0.0);

    Outcome::new(
        c.failed.is_empty(),
        if c.failed.is_empty() {
            format!("{} checks", c.count)
        } else {
            format!("{} of {} checks failed: {}", c.failed.len(), c.count, c.failed.join("; "))
        },
    )
}

// ---------------------------------------------------------- shared experiments

struct Experiment {
    scene: Scene,
    codebook: Codebook,
    gts: Vec<LabelRender>,
    views: Vec<ViewData>,
}

/// Oracle views with prompts on a uniform grid, the noise-free segmenter and
/// the embedder at `level_noise`.
fn experiment(spec: &SceneSpec, level_noise: [f64; 3], seed: u64) -> Experiment {
    let scene = gen_scene(spec).unwrap();
    let codebook = Codebook::for_nodes(
        &scene.nodes,
        DEFAULT_CODEBOOK_DIM,
        1,
        CodebookParams {
            parent_correlation: CODEBOOK_RHO,
            ..Default::default()
        },
    )
    .unwrap();
    let labels = scene.node_labels();
    let mut gts = Vec::new();
    let mut views = Vec::new();
    for (k, cam) in scene.cameras.iter().enumerate() {
        let gt = render_labels(&scene.field, &scene.labels, cam, 0.0).unwrap();
        let s = gags_core::seed::derive(seed, &[k as u64]);
        let prompts = uniform_prompts(cam.width, cam.height, TRAIN_PROMPTS, s);
        let masks = synth_segment(&gt, &labels, &prompts.points, &SegmentNoise::default(), s).unwrap();
        let targets = synth_embed(&masks, &codebook, level_noise, s).unwrap();
        views.push(ViewData {
            camera: cam.clone(),
            masks,
            targets,
        });
        gts.push(gt);
    }
    Experiment {
        scene,
        codebook,
        gts,
        views,
    }
}

fn run_training(exp: &Experiment, mode: DistillMode, seed: u64) -> Trained {
    let cfg = TrainConfig {
        iterations: 2000,
        mode,
        seed,
        ..Default::default()
    };
    train(exp.scene.field.clone(), &exp.views, &cfg, None).unwrap()
}

/// Queries every label in every view; pairs whose ground truth is empty are
/// left out.
fn evaluate(exp: &Experiment, trained: &Trained, queries: &[&str]) -> (EvalRecord, usize) {
    let canon = exp.codebook.canonical();
    let params = QueryParams::default();
    let mut results = Vec::new();
    let mut gt = BTreeMap::new();
    let mut excluded = 0;
    for (v, cam) in exp.scene.cameras.iter().enumerate() {
        let decoded = decode_view(&trained.field, &trained.decoder, cam).unwrap();
        for q in queries {
            let node = exp.scene.nodes.iter().find(|n| n.label == *q).unwrap();
            let g = GroundTruth::from_labels(&exp.gts[v], node.level, node.id);
            if g.bbox.is_none() {
                excluded += 1;
                continue;
            }
            let map = relevancy_map(&decoded, exp.codebook.query(q).unwrap(), &canon, &params).unwrap();
            results.push(run_query(&map, q, v, params.threshold).unwrap());
            gt.insert((q.to_string(), v), g);
        }
    }
    (eval_metrics(&results, &gt).unwrap(), excluded)
}

/// Mean granularity weights over covered object pixels (floor excluded).
fn object_alpha(exp: &Experiment, trained: &Trained) -> [f64; 3] {
    let floor = exp.scene.nodes.iter().find(|n| n.label == "floor").map(|n| n.id);
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (v, cam) in exp.scene.cameras.iter().enumerate() {
        let decoded = decode_view(&trained.field, &trained.decoder, cam).unwrap();
        let whole = exp.gts[v].level(Level::Whole);
        for i in 0..decoded.valid.len() {
            let id = whole.as_slice()[i];
            if !decoded.valid[i] || id == 0 || Some(id) == floor {
                continue;
            }
            let e = decoded.eta.pixel(i);
            let a = granularity_weights([e[0], e[1], e[2]]);
            for k in 0..3 {
                sum[k] += a[k];
            }
            n += 1;
        }
    }
    sum.map(|s| s / n as f64)
}

fn part_queries(scene: &Scene) -> Vec<&str> {
    scene.nodes.iter().filter(|n| n.level == Level::Part && n.label != "floor").map(|n| n.label.as_str()).collect()
}

// ------------------------------------------------------------ criteria 3 and 4

fn criteria_3_and_4() -> (Outcome, Outcome) {
    let spec = load_spec("scene_b.json");
    let noise = [HIGH_NOISE, 0.0, HIGH_NOISE];
    let mut gad = Vec::new();
    let mut avg = Vec::new();
    let mut c3 = None;
    for seed in 0..3u64 {
        let exp = experiment(&spec, noise, seed);
        let queries = part_queries(&exp.scene);
        assert_eq!(queries.len(), 10, "scene B should have 10 part labels");
        let t0 = Instant::now();
        let trained = run_training(&exp, DistillMode::Gad, seed);
        if seed == 0 {
            let a = object_alpha(&exp, &trained);
            let secs = t0.elapsed().as_secs_f64();
            let pass = a[1] > 0.8 && a[1] - a[0] >= 0.5 && a[1] - a[2] >= 0.5 && secs < 300.0;
            c3 = Some(Outcome::new(
                pass,
                format!(
                    "{} gaussians, mean alpha over object pixels (s, p, w) = ({:.3}, {:.3}, {:.3}); {secs:.0}s",
                    exp.scene.field.len(),
                    a[0],
                    a[1],
                    a[2]
                ),
            ));
        }
        let (g, _) = evaluate(&exp, &trained, &queries);
        let trained = run_training(&exp, DistillMode::Average, seed);
        let (a, _) = evaluate(&exp, &trained, &queries);
        println!(
            "    seed {seed}: GaD mAcc {:.4} mIoU {:.4} | average mAcc {:.4} mIoU {:.4}",
            g.m_acc, g.m_iou, a.m_acc, a.m_iou
        );
        gad.push((g.m_acc, g.m_iou));
        avg.push((a.m_acc, a.m_iou));
    }
    let mean = |v: &[(f64, f64)]| {
        let n = v.len() as f64;
        (v.iter().map(|x| x.0).sum::<f64>() / n, v.iter().map(|x| x.1).sum::<f64>() / n)
    };
    let (ga, gi) = mean(&gad);
    let (aa, ai) = mean(&avg);
    let c4 = Outcome::new(
        ga > aa && gi > ai,
        format!("over 3 seeds GaD mAcc {ga:.4} mIoU {gi:.4} vs average mAcc {aa:.4} mIoU {ai:.4}"),
    );
    (c3.unwrap(), c4)
}

// ---------------------------------------------------------------- criterion 5

fn cov(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    if m > 0.0 {
        v.sqrt() / m
    } else {
        0.0
    }
}

/// Mean over objects of the cross-view coefficient of variation of the
/// number of sub-part regions the segmenter returns for the object.
fn region_count_cov(scene: &Scene, gts: &[LabelRender], plans: &[PromptPlan], noise: &SegmentNoise, seed: u64) -> f64 {
    let labels = scene.node_labels();
    let object_of: BTreeMap<&str, u32> = scene.nodes.iter().map(|n| (n.label.as_str(), n.object)).collect();
    let masks: Vec<GranularityMasks> = gts
        .iter()
        .zip(plans)
        .enumerate()
        .map(|(v, (gt, p))| synth_segment(gt, &labels, &p.points, noise, gags_core::seed::derive(seed, &[v as u64])).unwrap())
        .collect();
    let mut covs = Vec::new();
    for o in scene.nodes.iter().filter(|n| n.level == Level::Whole && n.label != "floor") {
        let counts: Vec<f64> = gts
            .iter()
            .zip(&masks)
            .filter(|(gt, _)| gt.level(Level::Whole).as_slice().contains(&o.id))
            .map(|(_, m)| {
                m.level(Level::Sub)
                    .regions
                    .iter()
                    .filter(|r| r.label.as_deref().and_then(|l| object_of.get(l)) == Some(&o.id))
                    .count() as f64
            })
            .collect();
        if counts.len() > 1 {
            covs.push(cov(&counts));
        }
    }
    covs.iter().sum::<f64>() / covs.len() as f64
}

fn criterion_5() -> Outcome {
    // scene A's objects seen from a ring spanning near and far views
    let mut spec = load_spec("scene_a.json");
    spec.cameras.radius_min = 2.5;
    spec.cameras.radius_max = 6.0;
    let mut scene = gen_scene(&spec).unwrap();
    compute_min_depth(&mut scene.field, &scene.cameras, DEFAULT_VISIBILITY_THRESHOLD).unwrap();
    let renders: Vec<RenderOutput> =
        scene.cameras.iter().map(|c| SplatPlan::new(&scene.field, c).unwrap().render(&scene.field).unwrap()).collect();
    let gts: Vec<LabelRender> =
        scene.cameras.iter().map(|c| render_labels(&scene.field, &scene.labels, c, 0.0).unwrap()).collect();
    let noise = SegmentNoise {
        p_drop: [0.0; 3],
        p_merge: [0.8; 3],
        merge_below: 3,
    };
    let params = BudgetParams {
        patch_size: 32,
        base_count: 16,
        ratio_cap: DEFAULT_RATIO_CAP,
    };
    let mut reductions = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let gas: Vec<PromptPlan> = renders
            .iter()
            .enumerate()
            .map(|(v, r)| {
                let md = min_depth_map(r, &scene.field, DEFAULT_VISIBILITY_THRESHOLD).unwrap();
                plan_prompts(r, &md, &params, DEFAULT_SUBPATCHES, gags_core::seed::derive(seed, &[1, v as u64])).unwrap()
            })
            .collect();
        let total: usize = gas.iter().map(|p| p.points.len()).sum();
        // equal total budget, spread evenly over the views
        let n = scene.cameras.len();
        let uni: Vec<PromptPlan> = scene
            .cameras
            .iter()
            .enumerate()
            .map(|(v, c)| {
                let share = total / n + usize::from(v < total % n);
                uniform_prompts(c.width, c.height, share, gags_core::seed::derive(seed, &[2, v as u64]))
            })
            .collect();
        let cg = region_count_cov(&scene, &gts, &gas, &noise, gags_core::seed::derive(seed, &[3]));
        let cu = region_count_cov(&scene, &gts, &uni, &noise, gags_core::seed::derive(seed, &[3]));
        let red = 1.0 - cg / cu;
        lines.push(format!("seed {seed}: {total} points, CoV {cg:.3} vs {cu:.3} ({:.0}%)", 100.0 * red));
        reductions.push(red);
    }
    let pass = reductions.iter().all(|&r| r >= 0.3);
    Outcome::new(pass, lines.join("; "))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let spec = load_spec("scene_a.json");
    let exp = experiment(&spec, [0.0; 3], 0);
    let queries: Vec<&str> =
        exp.scene.nodes.iter().filter(|n| n.level == Level::Whole && n.label != "floor").map(|n| n.label.as_str()).collect();
    let t0 = Instant::now();
    let trained = run_training(&exp, DistillMode::Gad, 0);
    let secs = t0.elapsed().as_secs_f64();
    let (rec, excluded) = evaluate(&exp, &trained, &queries);
    Outcome::new(
        queries.len() == 10 && rec.m_acc >= 0.95 && rec.m_iou >= 0.80,
        format!(
            "{} queries x {} views ({} pairs, {excluded} without ground truth): hit rate {:.4}, mIoU {:.4}; training {secs:.0}s",
            queries.len(),
            exp.scene.cameras.len(),
            rec.queries.len(),
            rec.m_acc,
            rec.m_iou
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let spec = load_spec("scene_a.json");
    let mut scene = gen_scene(&spec).unwrap();
    compute_min_depth(&mut scene.field, &scene.cameras, DEFAULT_VISIBILITY_THRESHOLD).unwrap();
    let mut worst_equal = 0.0f64;
    let mut worst_double = 0.0f64;
    let mut exact_counts = true;
    let mut patches = 0;
    for cam in scene.cameras.iter().take(5) {
        let r = SplatPlan::new(&scene.field, cam).unwrap().render(&scene.field).unwrap();
        let md = min_depth_map(&r, &scene.field, DEFAULT_VISIBILITY_THRESHOLD).unwrap();
        let depth = r.depth.clone();
        // the nearest view: every valid pixel sits at its minimum depth
        let nearest = MinDepthMap {
            md: depth.clone(),
            valid: md.valid.clone(),
        };
        let params = BudgetParams {
            patch_size: 32,
            base_count: 4,
            ratio_cap: 1e9,
        };
        let eq = patch_prompt_counts(&depth, &nearest, &params, 0).unwrap();
        let base = patch_prompt_counts(&depth, &md, &params, 0).unwrap();
        let doubled = depth.map(|d| 2.0 * d);
        let dbl = patch_prompt_counts(&doubled, &md, &params, 0).unwrap();
        for ((e, b), d) in eq.patches.iter().zip(&base.patches).zip(&dbl.patches) {
            if e.valid_pixels == 0 {
                continue;
            }
            patches += 1;
            worst_equal = worst_equal.max((e.n_p - 4.0).abs() / 4.0);
            exact_counts &= e.count == 4;
            // every ratio is at least 1 before doubling, so the floor never binds
            worst_double = worst_double.max((d.n_p - 4.0 * b.n_p).abs() / (4.0 * b.n_p));
        }
    }
    Outcome::new(
        worst_equal == 0.0 && exact_counts && worst_double <= 1e-6,
        format!("{patches} patches over 5 views; D = MD rel err {worst_equal:.1e}, doubled depth rel err {worst_double:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn write_json(path: &Path, v: serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn pipeline_once(dir: &Path) -> Vec<u8> {
    use serde_json::json;
    let spec = scenes_dir().join("scene_a.json");
    write_json(
        &dir.join("gen.json"),
        json!({ "schema_version": 1, "scene_spec": spec, "seed": 1, "codebook": { "parent_correlation": CODEBOOK_RHO }, "out_dir": "scene" }),
    );
    write_json(&dir.join("prompt.json"), json!({ "schema_version": 1, "scene_dir": "scene", "seed": 2, "out_dir": "prompts" }));
    write_json(
        &dir.join("segment.json"),
        json!({ "schema_version": 1, "scene_dir": "scene", "seed": 3, "source": { "kind": "oracle", "prompt_dir": "prompts" }, "out_dir": "segments" }),
    );
    write_json(
        &dir.join("distill.json"),
        json!({ "schema_version": 1, "scene_dir": "scene", "segment_dir": "segments", "seed": 4, "train": { "iterations": 200 }, "out_dir": "distill" }),
    );
    write_json(
        &dir.join("query.json"),
        json!({ "schema_version": 1, "scene_dir": "scene", "distill_dir": "distill",
                "queries": ["apple", "crate", "lamp", "ball", "mug", "plate", "vase", "book", "plant", "cube"], "out_dir": "query" }),
    );
    write_json(
        &dir.join("eval.json"),
        json!({ "schema_version": 1, "query_dir": "query", "ground_truth": { "kind": "scene", "dir": "scene" }, "out_dir": "eval" }),
    );
    for cmd in ["gen-scene", "prompt", "segment", "distill", "query", "eval"] {
        let cfg = dir.join(format!("{}.json", if cmd == "gen-scene" { "gen" } else { cmd }));
        let out = Command::new(env!("CARGO_BIN_EXE_gags")).arg(cmd).arg("--config").arg(&cfg).output().unwrap();
        assert!(out.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    std::fs::read(dir.join("eval/metrics.json")).unwrap()
}

fn criterion_8() -> Outcome {
    let t0 = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = pipeline_once(a.path());
    let mb = pipeline_once(b.path());
    let m: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    Outcome::new(
        ma == mb,
        format!(
            "metrics.json {} bytes, identical: {} (mAcc {}, mIoU {:.4}); {:.0}s",
            ma.len(),
            ma == mb,
            m["m_acc"],
            m["m_iou"].as_f64().unwrap_or(f64::NAN),
            t0.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 16;
    let gs: Vec<Gaussian> = (0..10_000)
        .map(|_| {
            Gaussian::new(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                [rng.random_range(0.005..0.03), rng.random_range(0.005..0.03), rng.random_range(0.005..0.03)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0],
                rng.random_range(0.2..0.9),
            )
            .unwrap()
        })
        .collect();
    let feats = (0..10_000 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let field = GaussianField::with_features(gs, d, feats).unwrap();
    let cam = Camera {
        fx: 280.0,
        fy: 280.0,
        ..axis_camera(256, 256, 4.0)
    };
    let timed = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let _ = render(&field, &cam).unwrap();
            let mut best = f64::INFINITY;
            let mut out = None;
            for _ in 0..5 {
                let t = Instant::now();
                let o = render(&field, &cam).unwrap();
                best = best.min(t.elapsed().as_secs_f64());
                out = Some(o);
            }
            (best, out.unwrap())
        })
    };
    let (t1, o1) = timed(1);
    let (t8, o8) = timed(8);
    let identical = o1.features.as_slice() == o8.features.as_slice()
        && o1.transmittance.as_slice() == o8.transmittance.as_slice()
        && o1.depth.as_slice() == o8.depth.as_slice();
    let speedup = t1 / t8;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let single_ok = t1 < 0.5;
    let scaling_ok = speedup >= 3.0;
    Outcome {
        pass: single_ok && scaling_ok && identical,
        detail: format!(
            "1 thread {:.0} ms, 8 threads {:.0} ms, speedup {speedup:.2}x on {cores} core(s), identical pixels: {identical}",
            1e3 * t1,
            1e3 * t8
        ),
        hardware_limited: single_ok && identical && !scaling_ok && cores < 8,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAGS_LOG", "error")).is_test(true).init();
    let only: Option<Vec<usize>> = std::env::var("GAGS_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().map_or(true, |o| o.contains(&k));
    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {k} [{name}]: {} - {}{}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            if o.hardware_limited { " (needs 8 cores)" } else { "" }
        );
        outcomes.push((k, name, o));
    };
    if wanted(1) {
        report(1, "gradients", criterion_1());
    }
    if wanted(2) {
        report(2, "formulas", criterion_2());
    }
    if wanted(3) || wanted(4) {
        let (c3, c4) = criteria_3_and_4();
        report(3, "granularity selection", c3);
        report(4, "GaD vs average", c4);
    }
    if wanted(5) {
        report(5, "prompt consistency", criterion_5());
    }
    if wanted(6) {
        report(6, "query accuracy", criterion_6());
    }
    if wanted(7) {
        report(7, "prompt budget", criterion_7());
    }
    if wanted(8) {
        report(8, "determinism", criterion_8());
    }
    if wanted(9) {
        report(9, "performance", criterion_9());
    }
    let failed: Vec<usize> = outcomes.iter().filter(|(_, _, o)| !o.pass && !o.hardware_limited).map(|(k, _, _)| *k).collect();
    let passed = outcomes.iter().filter(|(_, _, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
