//! Scene data model: Gaussians with frozen geometry and trainable features,
//! pinhole cameras, and PLY import/export.

mod camera;
mod ply;

pub use camera::Camera;
pub use ply::{load_field, load_field_with, save_field, LoadOptions};

use crate::error::{Error, Result};

/// Feature dimension used when nothing else is specified.
pub const DEFAULT_FEATURE_DIM: usize = 16;

pub const OPACITY_MIN: f32 = 1e-4;
pub const OPACITY_MAX: f32 = 1.0 - 1e-4;

const QUAT_TOLERANCE: f64 = 1e-7;

/// Geometry of a single 3D Gaussian. Features live in [`GaussianField`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    /// Positive axis lengths in world units.
    pub scale: [f32; 3],
    /// Unit quaternion, `w, x, y, z`.
    pub rotation: [f32; 4],
    /// Probability in `(OPACITY_MIN, OPACITY_MAX)`.
    pub opacity: f32,
    pub color: Option<[f32; 3]>,
    /// Minimum visible camera depth across views, filled by
    /// [`crate::splat::compute_min_depth`].
    pub min_depth: Option<f64>,
}

impl Gaussian {
    pub fn new(position: [f32; 3], scale: [f32; 3], rotation: [f32; 4], opacity: f32) -> Result<Self> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "gaussian scale must be positive, got {scale:?}"
            )));
        }
        if position.iter().any(|p| !p.is_finite()) || !opacity.is_finite() {
            return Err(Error::InvalidArgument("non-finite gaussian parameter".into()));
        }
        Ok(Self {
            position,
            scale,
            rotation: normalize_quaternion(rotation)?,
            opacity: opacity.clamp(OPACITY_MIN, OPACITY_MAX),
            color: None,
            min_depth: None,
        })
    }

    pub fn with_color(mut self, color: [f32; 3]) -> Self {
        self.color = Some(color);
        self
    }

    /// Rotation matrix of the (unit) quaternion.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        quaternion_to_matrix(self.rotation)
    }

    /// World-space covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = self.rotation_matrix();
        let s2 = self.scale.map(|s| (s as f64) * (s as f64));
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
            }
        }
        cov
    }
}

/// Normalizes a quaternion unless it is already unit length within
/// `QUAT_TOLERANCE`, which keeps normalization idempotent bit-for-bit.
pub fn normalize_quaternion(q: [f32; 4]) -> Result<[f32; 4]> {
    let norm = q.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::InvalidArgument(format!("degenerate quaternion {q:?}")));
    }
    if (norm - 1.0).abs() <= QUAT_TOLERANCE {
        return Ok(q);
    }
    Ok(q.map(|c| (c as f64 / norm) as f32))
}

pub fn quaternion_to_matrix(q: [f32; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q.map(|c| c as f64);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Quaternion (`w, x, y, z`) rotating the unit z axis onto `normal`.
pub fn quaternion_from_z_to(normal: [f64; 3]) -> [f32; 4] {
    let len = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
    let n = normal.map(|c| c / len);
    let dot = n[2];
    if dot < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    // axis = z × n, half-angle construction
    let (ax, ay, az) = (-n[1], n[0], 0.0);
    let w = 1.0 + dot;
    let norm = (w * w + ax * ax + ay * ay + az * az).sqrt();
    [w / norm, ax / norm, ay / norm, az / norm].map(|c| c as f32)
}

/// Geometry-frozen Gaussians carrying a trainable `feature_dim`-vector each.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    gaussians: Vec<Gaussian>,
    feature_dim: usize,
    features: Vec<f32>,
}

impl GaussianField {
    /// Builds a field with zero-initialized features.
    pub fn new(gaussians: Vec<Gaussian>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        let features = vec![0.0; gaussians.len() * feature_dim];
        Ok(Self {
            gaussians,
            feature_dim,
            features,
        })
    }

    pub fn with_features(gaussians: Vec<Gaussian>, feature_dim: usize, features: Vec<f32>) -> Result<Self> {
        let mut field = Self::new(gaussians, feature_dim)?;
        field.set_features(features)?;
        Ok(field)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn gaussian(&self, index: usize) -> &Gaussian {
        &self.gaussians[index]
    }

    pub(crate) fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    pub fn feature_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    /// All features, `len() × feature_dim()` row-major.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f32] {
        &mut self.features
    }

    pub fn set_features(&mut self, features: Vec<f32>) -> Result<()> {
        if features.len() != self.gaussians.len() * self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} feature values, got {}",
                self.gaussians.len() * self.feature_dim,
                features.len()
            )));
        }
        self.features = features;
        Ok(())
    }

    /// Axis-aligned bounds of the Gaussian centers.
    pub fn bounds(&self) -> Option<([f32; 3], [f32; 3])> {
        let first = self.gaussians.first()?;
        let mut lo = first.position;
        let mut hi = first.position;
        for g in &self.gaussians {
            for k in 0..3 {
                lo[k] = lo[k].min(g.position[k]);
                hi[k] = hi[k].max(g.position[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn clear_min_depth(&mut self) {
        for g in &mut self.gaussians {
            g.min_depth = None;
        }
    }
}
