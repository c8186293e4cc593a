use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bundle::{read_json, SceneBundle};
use super::config::*;
use super::manifest::Manifest;
use super::with_threads;
use crate::distill::{train, write_jsonl, Decoder, LossTerms, ViewData};
use crate::error::{Error, Result};
use crate::field::{load_field, save_field, GaussianField};
use crate::grid::Grid;
use crate::imageio::{heatmap_rgb, quantize_u16, read_pgm, write_pgm16, write_png_rgb};
use crate::oracle::{
    export, feature_path, gen_scene, ingest, mask_path, render_labels, synth_embed, synth_segment, Codebook, Level,
    SceneSpec, CANONICAL_PHRASES,
};
use crate::prompt::{plan_prompts, uniform_prompts, PromptPlan};
use crate::query::{decode_view, eval_metrics, relevancy_map, run_query, BBox, GroundTruth, QueryEval, QueryResult};
use crate::seed;
use crate::splat::{compute_min_depth, min_depth_map, SplatPlan};
use crate::tensor::Tensor;

const STREAM_CODEBOOK: u64 = 0x636f_6465;
const STREAM_PROMPT: u64 = 0x7072_6f6d;
const STREAM_SEGMENT: u64 = 0x7365_676d;
const STREAM_EMBED: u64 = 0x656d_6264;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn prompt_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view:03}.json"))
}

/// File stem for query `index` in `view`.
pub fn query_stem(view: usize, index: usize) -> String {
    format!("view_{view:03}_q{index:02}")
}

pub fn gt_file_name(view: usize, index: usize) -> String {
    format!("gt_{}.pgm", query_stem(view, index))
}

fn bundle_inputs(manifest: &mut Manifest, scene_dir: &Path) -> Result<()> {
    for f in SceneBundle::files(scene_dir) {
        manifest.input(&f)?;
    }
    Ok(())
}

pub fn cmd_gen_scene(cfg: &GenSceneConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let mut spec: SceneSpec = read_json(&cfg.scene_spec).map_err(|e| match e {
            Error::Format(m) => Error::Config(m),
            other => other,
        })?;
        spec.seed = cfg.seed;
        let scene = gen_scene(&spec)?;
        let cb = &cfg.codebook;
        let codebook = Codebook::for_nodes(&scene.nodes, cb.dim, seed::derive(cfg.seed, &[STREAM_CODEBOOK]), cb.params())?;
        log::info!("{} gaussians, {} nodes, {} cameras", scene.field.len(), scene.nodes.len(), scene.cameras.len());
        let bundle = SceneBundle::from_scene(scene, codebook);
        bundle.save(&cfg.out_dir)?;
        write_json(&cfg.out_dir.join("scene.json"), &spec)?;
        let mut m = Manifest::new("gen-scene", cfg)?;
        m.input(&cfg.scene_spec)?;
        m.write(&cfg.out_dir)
    })
}

/// Copy of `field` whose features are the Gaussians' colors.
fn color_field(field: &GaussianField) -> Result<GaussianField> {
    let colors: Vec<f32> = field.gaussians().iter().flat_map(|g| g.color.unwrap_or([0.5; 3])).collect();
    GaussianField::with_features(field.gaussians().to_vec(), 3, colors)
}

fn color_image(field: &GaussianField, camera: &crate::field::Camera) -> Result<Vec<u8>> {
    let out = SplatPlan::new(field, camera)?.render(field)?;
    Ok(out.features.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

#[derive(Debug, Serialize)]
struct DepthRange {
    view: usize,
    min: Option<f64>,
    max: Option<f64>,
}

pub fn cmd_render(cfg: &RenderConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let bundle = SceneBundle::load(&cfg.scene_dir)?;
        let field = match &cfg.field {
            Some(p) => load_field(p)?,
            None => bundle.field.clone(),
        };
        let colors = color_field(&field)?;
        create_dir(&cfg.out_dir)?;
        let mut ranges = Vec::new();
        for v in bundle.views(&cfg.views)? {
            let cam = &bundle.cameras[v];
            let out = SplatPlan::new(&field, cam)?.render(&field)?;
            let (w, h) = (out.width(), out.height());
            let feats: Vec<f32> = out.features.as_slice().iter().map(|&x| x as f32).collect();
            Tensor::from_f32(vec![h, w, field.feature_dim()], feats)?
                .write(cfg.out_dir.join(format!("view_{v:03}_features.tensor")))?;
            let depth = Grid::from_vec(w, h, (0..w * h).map(|i| out.depth_at(i)).collect())?;
            let valid: Vec<f64> = depth.as_slice().iter().flatten().copied().collect();
            let lo = valid.iter().copied().reduce(f64::min);
            let hi = valid.iter().copied().reduce(f64::max);
            write_pgm16(
                cfg.out_dir.join(format!("view_{v:03}_depth.pgm")),
                &quantize_u16(&depth, lo.unwrap_or(0.0), hi.unwrap_or(1.0)),
            )?;
            let trans = out.transmittance.map(|&t| Some(t));
            write_pgm16(cfg.out_dir.join(format!("view_{v:03}_transmittance.pgm")), &quantize_u16(&trans, 0.0, 1.0))?;
            write_png_rgb(cfg.out_dir.join(format!("view_{v:03}_color.png")), w, h, &color_image(&colors, cam)?)?;
            ranges.push(DepthRange { view: v, min: lo, max: hi });
        }
        write_json(&cfg.out_dir.join("depth_ranges.json"), &ranges)?;
        let mut m = Manifest::new("render", cfg)?;
        bundle_inputs(&mut m, &cfg.scene_dir)?;
        if let Some(p) = &cfg.field {
            m.input(p)?;
        }
        m.write(&cfg.out_dir)
    })
}

#[derive(Debug, Serialize)]
struct PromptSummary {
    view: usize,
    points: usize,
}

pub fn cmd_prompt(cfg: &PromptRunConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let bundle = SceneBundle::load(&cfg.scene_dir)?;
        let views = bundle.views(&cfg.views)?;
        let mut field = bundle.field.clone();
        if cfg.gas {
            compute_min_depth(&mut field, &bundle.cameras, cfg.visibility_threshold)?;
        }
        let colors = color_field(&field)?;
        create_dir(&cfg.out_dir)?;
        let mut summary = Vec::new();
        for v in views {
            let cam = &bundle.cameras[v];
            let view_seed = seed::derive(cfg.seed, &[STREAM_PROMPT, v as u64]);
            let plan = if cfg.gas {
                let render = SplatPlan::new(&field, cam)?.render(&field)?;
                let md = min_depth_map(&render, &field, cfg.visibility_threshold)?;
                plan_prompts(&render, &md, &cfg.budget, cfg.subdivisions, view_seed)?
            } else {
                let ps = cfg.budget.patch_size.max(1);
                let patches = cam.width.div_ceil(ps) * cam.height.div_ceil(ps);
                let total = cfg.uniform_total.unwrap_or(cfg.budget.base_count * patches);
                uniform_prompts(cam.width, cam.height, total, view_seed)
            };
            write_json(&prompt_path(&cfg.out_dir, v), &plan)?;
            let mut rgb = color_image(&colors, cam)?;
            plan.overlay_rgb(&mut rgb);
            write_png_rgb(cfg.out_dir.join(format!("view_{v:03}.png")), cam.width, cam.height, &rgb)?;
            summary.push(PromptSummary { view: v, points: plan.points.len() });
        }
        write_json(&cfg.out_dir.join("prompts.json"), &summary)?;
        let mut m = Manifest::new("prompt", cfg)?;
        bundle_inputs(&mut m, &cfg.scene_dir)?;
        m.write(&cfg.out_dir)
    })
}

#[derive(Debug, Serialize)]
struct SegmentSummary {
    view: usize,
    regions: [usize; 3],
}

pub fn cmd_segment(cfg: &SegmentRunConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let bundle = SceneBundle::load(&cfg.scene_dir)?;
        let views = bundle.views(&cfg.views)?;
        create_dir(&cfg.out_dir)?;
        let mut m = Manifest::new("segment", cfg)?;
        bundle_inputs(&mut m, &cfg.scene_dir)?;
        let labels = bundle.node_labels();
        let mut summary = Vec::new();
        for v in views {
            let cam = &bundle.cameras[v];
            let (masks, feats) = match &cfg.source {
                SegmentSource::Oracle {
                    prompt_dir,
                    noise,
                    level_noise,
                    min_coverage,
                } => {
                    let path = prompt_path(prompt_dir, v);
                    let plan: PromptPlan = read_json(&path)?;
                    m.input(&path)?;
                    if plan.image_width != cam.width || plan.image_height != cam.height {
                        return Err(Error::ShapeMismatch(format!("prompt plan for view {v} has the wrong image size")));
                    }
                    let gt = render_labels(&bundle.field, &bundle.labels, cam, *min_coverage)?;
                    let masks = synth_segment(&gt, &labels, &plan.points, noise, seed::derive(cfg.seed, &[STREAM_SEGMENT, v as u64]))?;
                    let feats = synth_embed(&masks, &bundle.codebook, *level_noise, seed::derive(cfg.seed, &[STREAM_EMBED, v as u64]))?;
                    (masks, feats)
                }
                SegmentSource::Ingest { dir } => {
                    let mp = Level::ALL.map(|l| mask_path(dir, v, l));
                    let fp = Level::ALL.map(|l| feature_path(dir, v, l));
                    for p in mp.iter().chain(&fp) {
                        m.input(p)?;
                    }
                    let (masks, feats) = ingest(mp.each_ref().map(PathBuf::as_path), fp.each_ref().map(PathBuf::as_path))?;
                    if masks.width() != cam.width || masks.height() != cam.height {
                        return Err(Error::ShapeMismatch(format!("masks of view {v} do not match the camera")));
                    }
                    (masks, feats)
                }
            };
            if feats.dim() != bundle.codebook.dim {
                log::warn!("view {v}: feature dimension {} differs from the codebook's {}", feats.dim(), bundle.codebook.dim);
            }
            export(&cfg.out_dir, v, &masks, &feats)?;
            summary.push(SegmentSummary {
                view: v,
                regions: Level::ALL.map(|l| masks.level(l).num_regions()),
            });
        }
        write_json(&cfg.out_dir.join("segments.json"), &summary)?;
        m.write(&cfg.out_dir)
    })
}

#[derive(Debug, Serialize)]
struct DistillSummary {
    iterations: usize,
    views: Vec<usize>,
    final_terms: Option<LossTerms>,
}

pub fn cmd_distill(cfg: &DistillRunConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let bundle = SceneBundle::load(&cfg.scene_dir)?;
        let views = bundle.views(&cfg.views)?;
        let mut m = Manifest::new("distill", cfg)?;
        bundle_inputs(&mut m, &cfg.scene_dir)?;
        let field = match &cfg.field {
            Some(p) => {
                m.input(p)?;
                load_field(p)?
            }
            None => bundle.field.clone(),
        };
        let mut data = Vec::with_capacity(views.len());
        for &v in &views {
            let mp = Level::ALL.map(|l| mask_path(&cfg.segment_dir, v, l));
            let fp = Level::ALL.map(|l| feature_path(&cfg.segment_dir, v, l));
            for p in mp.iter().chain(&fp) {
                m.input(p)?;
            }
            let (masks, targets) = ingest(mp.each_ref().map(PathBuf::as_path), fp.each_ref().map(PathBuf::as_path))?;
            data.push(ViewData {
                camera: bundle.cameras[v].clone(),
                masks,
                targets,
            });
        }
        let mut tc = cfg.train;
        tc.seed = cfg.seed;
        let trained = train(field, &data, &tc, None)?;
        create_dir(&cfg.out_dir)?;
        save_field(&trained.field, cfg.out_dir.join("field.ply"))?;
        trained.decoder.save(&cfg.out_dir, "decoder")?;
        let log_path = cfg.out_dir.join("log.jsonl");
        let mut buf = Vec::new();
        write_jsonl(&trained.log, &mut buf)?;
        std::fs::write(&log_path, buf).map_err(|e| Error::io(&log_path, e))?;
        let final_terms = trained.log.last().map(|l| LossTerms {
            total: l.total,
            r_distill: l.r_distill,
            entropy: l.entropy,
            consistency: l.consistency,
            distill: l.distill,
            alpha_mean: l.alpha_mean,
            ..Default::default()
        });
        write_json(
            &cfg.out_dir.join("summary.json"),
            &DistillSummary {
                iterations: tc.iterations,
                views,
                final_terms,
            },
        )?;
        m.write(&cfg.out_dir)
    })
}

/// One (query, view) result as listed in `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub label: String,
    pub index: usize,
    pub view: usize,
    pub x: usize,
    pub y: usize,
    pub peak: f64,
    pub degenerate: bool,
    pub mask: String,
    pub heatmap: String,
}

struct TextTable {
    queries: BTreeMap<String, Vec<f64>>,
    canon: Vec<Vec<f64>>,
}

fn text_table(cfg: &QueryRunConfig, codebook: &Codebook) -> Result<TextTable> {
    let Some(te) = &cfg.text_embeddings else {
        let mut queries = BTreeMap::new();
        for q in &cfg.queries {
            let v = codebook
                .query(q)
                .ok_or_else(|| Error::MissingData(format!("no text embedding for query '{q}'")))?;
            queries.insert(q.clone(), v.to_vec());
        }
        return Ok(TextTable {
            queries,
            canon: codebook.canonical().into_iter().map(<[f64]>::to_vec).collect(),
        });
    };
    let t = Tensor::read(&te.tensor)?;
    let rows = match t.shape() {
        [n, _] if *n == te.labels.len() => t.as_f32()?.chunks_exact(t.shape()[1]).map(|r| r.iter().map(|&x| x as f64).collect::<Vec<f64>>()),
        s => return Err(Error::ShapeMismatch(format!("text embeddings of shape {s:?} for {} labels", te.labels.len()))),
    };
    let table: BTreeMap<String, Vec<f64>> = te.labels.iter().cloned().zip(rows).collect();
    let canon = CANONICAL_PHRASES
        .iter()
        .map(|p| table.get(*p).cloned().ok_or_else(|| Error::MissingData(format!("text embeddings lack '{p}'"))))
        .collect::<Result<Vec<_>>>()?;
    let mut queries = BTreeMap::new();
    for q in &cfg.queries {
        let v = table.get(q).ok_or_else(|| Error::MissingData(format!("no text embedding for query '{q}'")))?;
        queries.insert(q.clone(), v.clone());
    }
    Ok(TextTable { queries, canon })
}

fn mask_to_pgm(mask: &Grid<bool>) -> Grid<u16> {
    mask.map(|&b| b as u16)
}

fn pgm_to_mask(g: &Grid<u16>) -> Grid<bool> {
    g.map(|&v| v != 0)
}

pub fn cmd_query(cfg: &QueryRunConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        if cfg.queries.is_empty() {
            return Err(Error::Config("no queries given".into()));
        }
        let bundle = SceneBundle::load(&cfg.scene_dir)?;
        let views = bundle.views(&cfg.views)?;
        let field_path = cfg.distill_dir.join("field.ply");
        let field = load_field(&field_path)?;
        let decoder = Decoder::load(&cfg.distill_dir, "decoder")?;
        let text = text_table(cfg, &bundle.codebook)?;
        let canon: Vec<&[f64]> = text.canon.iter().map(Vec::as_slice).collect();
        create_dir(&cfg.out_dir)?;
        let mut records = Vec::new();
        for v in views {
            let decoded = decode_view(&field, &decoder, &bundle.cameras[v])?;
            for (qi, q) in cfg.queries.iter().enumerate() {
                let map = relevancy_map(&decoded, &text.queries[q], &canon, &cfg.params)?;
                let r = run_query(&map, q, v, cfg.params.threshold)?;
                let stem = query_stem(v, qi);
                let mask = format!("{stem}_mask.pgm");
                let heatmap = format!("{stem}_heat.png");
                write_pgm16(cfg.out_dir.join(&mask), &mask_to_pgm(&r.mask))?;
                write_png_rgb(cfg.out_dir.join(&heatmap), map.width(), map.height(), &heatmap_rgb(&map.normalized_or_none()))?;
                records.push(QueryRecord {
                    label: q.clone(),
                    index: qi,
                    view: v,
                    x: r.pixel[0],
                    y: r.pixel[1],
                    peak: r.peak,
                    degenerate: map.degenerate,
                    mask,
                    heatmap,
                });
            }
        }
        write_json(&cfg.out_dir.join("results.json"), &records)?;
        let mut m = Manifest::new("query", cfg)?;
        bundle_inputs(&mut m, &cfg.scene_dir)?;
        m.input(&field_path)?;
        m.input(&cfg.distill_dir.join("decoder.json"))?;
        if let Some(te) = &cfg.text_embeddings {
            m.input(&te.tensor)?;
        }
        m.write(&cfg.out_dir)
    })
}

/// Ground truth of one (query, view) pair in `ground_truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtEntry {
    pub label: String,
    pub view: usize,
    pub bbox: Option<BBox>,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub evaluated: usize,
    pub m_acc: f64,
    pub m_iou: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub evaluated: usize,
    pub excluded: usize,
    pub hits: usize,
    pub m_acc: f64,
    pub m_iou: f64,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub queries: Vec<QueryEval>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub manifest: PathBuf,
    pub metrics: MetricsFile,
    pub table: String,
}

fn scene_ground_truth(
    records: &[QueryRecord],
    dir: &Path,
    min_coverage: f64,
    gt_dir: &Path,
    m: &mut Manifest,
) -> Result<BTreeMap<(String, usize), GroundTruth>> {
    let bundle = SceneBundle::load(dir)?;
    bundle_inputs(m, dir)?;
    create_dir(gt_dir)?;
    let mut renders = BTreeMap::new();
    let mut out = BTreeMap::new();
    let mut index = Vec::new();
    for r in records {
        let cam = bundle
            .cameras
            .get(r.view)
            .ok_or_else(|| Error::MissingData(format!("scene has no view {}", r.view)))?;
        if !renders.contains_key(&r.view) {
            renders.insert(r.view, render_labels(&bundle.field, &bundle.labels, cam, min_coverage)?);
        }
        let node = bundle
            .node_by_label(&r.label)
            .ok_or_else(|| Error::MissingData(format!("scene has no node labelled '{}'", r.label)))?;
        let gt = GroundTruth::from_labels(&renders[&r.view], node.level, node.id);
        let name = gt_file_name(r.view, r.index);
        write_pgm16(gt_dir.join(&name), &mask_to_pgm(&gt.mask))?;
        index.push(GtEntry {
            label: r.label.clone(),
            view: r.view,
            bbox: gt.bbox,
            mask: name,
        });
        out.insert((r.label.clone(), r.view), gt);
    }
    write_json(&gt_dir.join("ground_truth.json"), &index)?;
    Ok(out)
}

fn dir_ground_truth(dir: &Path, m: &mut Manifest) -> Result<BTreeMap<(String, usize), GroundTruth>> {
    let index_path = dir.join("ground_truth.json");
    m.input(&index_path)?;
    let entries: Vec<GtEntry> = read_json(&index_path)?;
    let mut out = BTreeMap::new();
    for e in entries {
        let p = dir.join(&e.mask);
        m.input(&p)?;
        let mask = pgm_to_mask(&read_pgm(&p)?);
        let bbox = e.bbox.or_else(|| BBox::of_mask(&mask));
        out.insert((e.label, e.view), GroundTruth { bbox, mask });
    }
    Ok(out)
}

fn summary_table(metrics: &MetricsFile) -> String {
    let mut s = format!("{:<24} {:>6} {:>8} {:>8}\n", "label", "n", "mAcc", "mIoU");
    for (label, lm) in &metrics.per_label {
        s += &format!("{:<24} {:>6} {:>7.2}% {:>7.2}%\n", label, lm.evaluated, 100.0 * lm.m_acc, 100.0 * lm.m_iou);
    }
    s += &format!(
        "{:<24} {:>6} {:>7.2}% {:>7.2}%\n",
        "overall",
        metrics.evaluated,
        100.0 * metrics.m_acc,
        100.0 * metrics.m_iou
    );
    if metrics.excluded > 0 {
        s += &format!("({} pairs without ground truth excluded)\n", metrics.excluded);
    }
    s
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<EvalSummary> {
    with_threads(cfg.threads, || {
        let results_path = cfg.query_dir.join("results.json");
        let records: Vec<QueryRecord> = read_json(&results_path)?;
        let mut m = Manifest::new("eval", cfg)?;
        m.input(&results_path)?;
        create_dir(&cfg.out_dir)?;
        let gt = match &cfg.ground_truth {
            GroundTruthSource::Scene { dir, min_coverage } => {
                scene_ground_truth(&records, dir, *min_coverage, &cfg.out_dir.join("gt"), &mut m)?
            }
            GroundTruthSource::Dir { dir } => dir_ground_truth(dir, &mut m)?,
        };
        let mut results = Vec::new();
        let mut excluded = 0;
        for r in &records {
            let g = gt
                .get(&(r.label.clone(), r.view))
                .ok_or_else(|| Error::MissingData(format!("no ground truth for '{}' in view {}", r.label, r.view)))?;
            if g.mask.as_slice().iter().filter(|&&b| b).count() < cfg.min_gt_pixels {
                excluded += 1;
                continue;
            }
            let p = cfg.query_dir.join(&r.mask);
            m.input(&p)?;
            results.push(QueryResult {
                label: r.label.clone(),
                view: r.view,
                pixel: [r.x, r.y],
                peak: r.peak,
                mask: pgm_to_mask(&read_pgm(&p)?),
            });
        }
        if results.is_empty() {
            return Err(Error::MissingData("every query lacks ground truth".into()));
        }
        let rec = eval_metrics(&results, &gt)?;
        let mut per_label = BTreeMap::new();
        for (label, (acc, iou)) in rec.per_label() {
            let n = rec.queries.iter().filter(|q| q.label == label).count();
            per_label.insert(label, LabelMetrics { evaluated: n, m_acc: acc, m_iou: iou });
        }
        let metrics = MetricsFile {
            evaluated: rec.queries.len(),
            excluded,
            hits: rec.hits,
            m_acc: rec.m_acc,
            m_iou: rec.m_iou,
            per_label,
            queries: rec.queries,
        };
        write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
        let table = summary_table(&metrics);
        let tp = cfg.out_dir.join("summary.txt");
        std::fs::write(&tp, &table).map_err(|e| Error::io(&tp, e))?;
        let manifest = m.write(&cfg.out_dir)?;
        Ok(EvalSummary { manifest, metrics, table })
    })
}
