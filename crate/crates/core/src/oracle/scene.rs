use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Level;
use crate::error::{Error, Result};
use crate::field::{quaternion_from_z_to, quaternion_to_matrix, Camera, Gaussian, GaussianField, DEFAULT_FEATURE_DIM};
use crate::grid::Grid;
use crate::seed;
use crate::splat::{SplatPlan, NO_GAUSSIAN};

fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}

fn default_opacity() -> f32 {
    0.9
}

fn default_scale_factor() -> f64 {
    0.8
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default = "identity_quaternion")]
        rotation: [f64; 4],
    },
    Disk {
        center: [f64; 3],
        normal: [f64; 3],
        radius: f64,
    },
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Sphere { radius, .. } | Primitive::Disk { radius, .. } => *radius > 0.0,
            Primitive::Box { half_extents, .. } => half_extents.iter().all(|&e| e > 0.0),
        };
        if !ok {
            return Err(Error::Config(format!("degenerate primitive {self:?}")));
        }
        if let Primitive::Disk { normal, .. } = self {
            if normal.iter().map(|c| c * c).sum::<f64>() < 1e-24 {
                return Err(Error::Config("disk normal is zero".into()));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Box { half_extents: [a, b, c], .. } => 8.0 * (a * b + b * c + c * a),
            Primitive::Disk { radius, .. } => PI * radius * radius,
        }
    }

    /// Uniform surface point and its outward normal.
    fn sample(&self, rng: &mut impl Rng) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Sphere { center, radius } => {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let n = normalize(v);
                (std::array::from_fn(|k| center[k] + radius * n[k]), n)
            }
            Primitive::Box {
                center,
                half_extents: e,
                rotation,
            } => {
                let faces = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let total = faces.iter().sum::<f64>();
                let mut u = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, &a) in faces.iter().enumerate() {
                    if u < a {
                        axis = k;
                        break;
                    }
                    u -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut local = [0.0; 3];
                let mut normal = [0.0; 3];
                for k in 0..3 {
                    local[k] = if k == axis { sign * e[k] } else { rng.random_range(-e[k]..e[k]) };
                }
                normal[axis] = sign;
                let r = quaternion_to_matrix(rotation.map(|c| c as f32));
                let p = mat_vec(&r, local);
                (std::array::from_fn(|k| center[k] + p[k]), mat_vec(&r, normal))
            }
            Primitive::Disk { center, normal, radius } => {
                let n = normalize(normal);
                let (t1, t2) = tangent_basis(n);
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * 2.0 * PI;
                let (c, s) = (r * a.cos(), r * a.sin());
                (std::array::from_fn(|k| center[k] + c * t1[k] + s * t2[k]), n)
            }
        }
    }
}

/// Node of an object hierarchy: whole, part, sub-part. Only leaves carry
/// geometry. A leaf above the sub-part level also stands for the missing
/// finer levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneNode {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Primitive>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SceneNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRing {
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Height of the ring above the target.
    #[serde(default)]
    pub elevation: f64,
    #[serde(default)]
    pub target: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl CameraRing {
    /// Radii grow linearly with the camera index while azimuths follow a
    /// golden-ratio sequence, so near and far views are spread around the
    /// ring.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.count == 0 || self.radius_min <= 0.0 || self.radius_max < self.radius_min {
            return Err(Error::Config("camera ring needs count > 0 and 0 < radius_min <= radius_max".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!("field of view {} out of range", self.fov_deg)));
        }
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        (0..self.count)
            .map(|k| {
                let t = if self.count == 1 { 0.0 } else { k as f64 / (self.count - 1) as f64 };
                let r = self.radius_min + (self.radius_max - self.radius_min) * t;
                let a = 2.0 * PI * (k as f64 * golden).fract();
                let eye = [
                    self.target[0] + r * a.cos(),
                    self.target[1] + self.elevation,
                    self.target[2] + r * a.sin(),
                ];
                Camera::look_at(eye, self.target, [0.0, 1.0, 0.0], self.width, self.height, self.fov_deg.to_radians())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub objects: Vec<SceneNode>,
    pub cameras: CameraRing,
    pub gaussians_per_unit_area: f64,
    pub seed: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_opacity")]
    pub opacity: f32,
    /// Tangential Gaussian scale relative to the mean sample spacing.
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: u32,
    pub label: String,
    pub level: Level,
    pub parent: Option<u32>,
    /// Id of the whole-level ancestor (itself for wholes).
    pub object: u32,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub field: GaussianField,
    pub cameras: Vec<Camera>,
    /// Per Gaussian, node ids at the sub-part, part and whole level.
    pub labels: Vec<[u32; 3]>,
    /// Node table; node `id` sits at index `id - 1`.
    pub nodes: Vec<NodeInfo>,
}

impl Scene {
    pub fn node(&self, id: u32) -> Option<&NodeInfo> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i as usize))
    }

    /// Node labels indexed by id, with an empty entry for id 0.
    pub fn node_labels(&self) -> Vec<String> {
        std::iter::once(String::new()).chain(self.nodes.iter().map(|n| n.label.clone())).collect()
    }
}

struct Builder<'a> {
    spec: &'a SceneSpec,
    nodes: Vec<NodeInfo>,
    gaussians: Vec<Gaussian>,
    labels: Vec<[u32; 3]>,
    colors_seed: u64,
}

impl Builder<'_> {
    fn visit(&mut self, node: &SceneNode, depth: usize, parent: Option<u32>, path: [u32; 3], object: u32) -> Result<()> {
        if depth > 2 {
            return Err(Error::Config(format!("node '{}' nested deeper than sub-part", node.label)));
        }
        if node.label.is_empty() {
            return Err(Error::Config("node label is empty".into()));
        }
        let level = Level::ALL[2 - depth];
        let id = self.nodes.len() as u32 + 1;
        let object = if depth == 0 { id } else { object };
        self.nodes.push(NodeInfo {
            id,
            label: node.label.clone(),
            level,
            parent,
            object,
        });
        let mut path = path;
        for l in 0..=level.index() {
            path[l] = id;
        }
        match (&node.shape, node.children.is_empty()) {
            (Some(shape), true) => self.sample_leaf(shape, path, id),
            (None, false) => {
                for child in &node.children {
                    self.visit(child, depth + 1, Some(id), path, object)?;
                }
                Ok(())
            }
            (Some(_), false) => Err(Error::Config(format!("interior node '{}' carries a shape", node.label))),
            (None, true) => Err(Error::Config(format!("leaf '{}' has no shape", node.label))),
        }
    }

    fn sample_leaf(&mut self, shape: &Primitive, path: [u32; 3], id: u32) -> Result<()> {
        shape.validate()?;
        let density = self.spec.gaussians_per_unit_area;
        let count = ((shape.area() * density).round() as usize).max(1);
        let spacing = 1.0 / density.sqrt();
        let s = (self.spec.scale_factor * spacing) as f32;
        let mut rng = seed::rng(self.spec.seed, &[0x6765_6f6d, id as u64]);
        let mut crng = seed::rng(self.colors_seed, &[path[2] as u64]);
        let base: [f32; 3] = std::array::from_fn(|_| crng.random_range(0.2..0.9));
        for _ in 0..count {
            let (p, n) = shape.sample(&mut rng);
            let g = Gaussian::new(
                p.map(|c| c as f32),
                [s, s, 0.2 * s],
                quaternion_from_z_to(n),
                self.spec.opacity,
            )?
            .with_color(base);
            self.gaussians.push(g);
            self.labels.push(path);
        }
        Ok(())
    }
}

/// Samples Gaussians on every leaf surface and places the camera ring.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.objects.is_empty() {
        return Err(Error::Config("scene has no objects".into()));
    }
    if !(spec.gaussians_per_unit_area > 0.0) || !(spec.scale_factor > 0.0) {
        return Err(Error::Config("density and scale factor must be positive".into()));
    }
    if !(spec.opacity > 0.0 && spec.opacity < 1.0) {
        return Err(Error::Config(format!("opacity {} outside (0, 1)", spec.opacity)));
    }
    let mut b = Builder {
        spec,
        nodes: Vec::new(),
        gaussians: Vec::new(),
        labels: Vec::new(),
        colors_seed: seed::derive(spec.seed, &[0x636f_6c6f]),
    };
    for obj in &spec.objects {
        b.visit(obj, 0, None, [0; 3], 0)?;
    }
    let field = GaussianField::new(b.gaussians, spec.feature_dim)?;
    Ok(Scene {
        field,
        cameras: spec.cameras.cameras()?,
        labels: b.labels,
        nodes: b.nodes,
    })
}

/// Ground-truth node ids per pixel and level (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRender {
    pub levels: [Grid<u32>; 3],
}

impl LabelRender {
    pub fn level(&self, level: Level) -> &Grid<u32> {
        &self.levels[level.index()]
    }

    pub fn width(&self) -> usize {
        self.levels[0].width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].height()
    }
}

/// Labels of the dominant Gaussian wherever accumulated opacity reaches
/// `min_coverage`.
pub fn render_labels(field: &GaussianField, labels: &[[u32; 3]], camera: &Camera, min_coverage: f64) -> Result<LabelRender> {
    if labels.len() != field.len() {
        return Err(Error::ShapeMismatch(format!("{} label rows for {} gaussians", labels.len(), field.len())));
    }
    let out = SplatPlan::new(field, camera)?.render(field)?;
    let (w, h) = (camera.width, camera.height);
    let mut levels = [Grid::new(w, h, 0u32), Grid::new(w, h, 0u32), Grid::new(w, h, 0u32)];
    for i in 0..w * h {
        let dom = out.dominant_index.as_slice()[i];
        if dom == NO_GAUSSIAN || out.coverage(i) < min_coverage {
            continue;
        }
        for (l, grid) in levels.iter_mut().enumerate() {
            grid.as_mut_slice()[i] = labels[dom as usize][l];
        }
    }
    Ok(LabelRender { levels })
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn tangent_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t1 = normalize([n[1] * a[2] - n[2] * a[1], n[2] * a[0] - n[0] * a[2], n[0] * a[1] - n[1] * a[0]]);
    let t2 = [n[1] * t1[2] - n[2] * t1[1], n[2] * t1[0] - n[0] * t1[2], n[0] * t1[1] - n[1] * t1[0]];
    (t1, t2)
}
