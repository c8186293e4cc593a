use rand::Rng;
use rand_distr::StandardNormal;

use super::codebook::Codebook;
use super::segment::{GranularityMasks, LevelMask};
use super::Level;
use crate::error::{Error, Result};
use crate::grid::FeatureMap;
use crate::seed;

/// Feature table of one level: row `r` holds region `r`, row 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl RegionFeatures {
    pub fn zeros(num_regions: usize, dim: usize) -> Self {
        Self {
            dim,
            rows: vec![0.0; (num_regions + 1) * dim],
        }
    }

    pub fn num_regions(&self) -> usize {
        (self.rows.len() / self.dim).saturating_sub(1)
    }

    pub fn get(&self, id: u32) -> &[f32] {
        let i = id as usize * self.dim;
        &self.rows[i..i + self.dim]
    }

    pub fn get_mut(&mut self, id: u32) -> &mut [f32] {
        let i = id as usize * self.dim;
        &mut self.rows[i..i + self.dim]
    }
}

/// Region-constant target features for the three levels of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularityFeatures {
    pub levels: [RegionFeatures; 3],
}

impl GranularityFeatures {
    pub fn dim(&self) -> usize {
        self.levels[0].dim
    }

    pub fn level(&self, level: Level) -> &RegionFeatures {
        &self.levels[level.index()]
    }

    /// Per-pixel target map of one level, zero where unassigned.
    pub fn dense(&self, level: Level, masks: &GranularityMasks) -> FeatureMap {
        let ids = &masks.level(level).ids;
        let table = self.level(level);
        let mut map = FeatureMap::zeros(ids.width(), ids.height(), table.dim);
        for (i, &id) in ids.as_slice().iter().enumerate() {
            if id != 0 {
                for (o, &v) in map.pixel_mut(i).iter_mut().zip(table.get(id)) {
                    *o = v as f64;
                }
            }
        }
        map
    }

    /// Every region of every level has a unit-norm feature.
    pub fn validate(&self, masks: &GranularityMasks) -> Result<()> {
        for l in Level::ALL {
            let (table, mask) = (self.level(l), masks.level(l));
            if table.dim != self.dim() {
                return Err(Error::ShapeMismatch("feature levels differ in dimension".into()));
            }
            if table.num_regions() < mask.num_regions() {
                return Err(Error::MissingData(format!(
                    "{} level: {} regions but {} feature rows",
                    l.name(),
                    mask.num_regions(),
                    table.num_regions()
                )));
            }
            for r in &mask.regions {
                let n = table.get(r.id).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Numeric(format!("{} region {} has norm {n}", l.name(), r.id)));
                }
            }
        }
        Ok(())
    }
}

/// `cos θ · v + sin θ · u` with `u` a random unit vector orthogonal to `v`.
fn rotate(v: &[f64], theta: f64, rng: &mut impl Rng) -> Vec<f64> {
    if theta == 0.0 {
        return v.to_vec();
    }
    let u = loop {
        let mut u: Vec<f64> = (0..v.len()).map(|_| rng.sample(StandardNormal)).collect();
        let c: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
        let n = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            u.iter_mut().for_each(|a| *a /= n);
            break u;
        }
    };
    let mut out: Vec<f64> = v.iter().zip(&u).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect();
    let n = out.iter().map(|a| a * a).sum::<f64>().sqrt();
    out.iter_mut().for_each(|a| *a /= n);
    out
}

fn embed_level(mask: &LevelMask, codebook: &Codebook, theta: f64, level: Level, seed: u64) -> Result<RegionFeatures> {
    let mut table = RegionFeatures::zeros(mask.num_regions(), codebook.dim);
    for r in &mask.regions {
        let label = r
            .label
            .as_deref()
            .ok_or_else(|| Error::MissingData(format!("{} region {} has no label; ingest instead", level.name(), r.id)))?;
        let v = codebook
            .get(label)
            .ok_or_else(|| Error::MissingData(format!("label '{label}' not in codebook")))?;
        let mut rng = seed::rng(seed, &[level as u64, r.id as u64]);
        for (o, x) in table.get_mut(r.id).iter_mut().zip(rotate(v, theta, &mut rng)) {
            *o = x as f32;
        }
    }
    Ok(table)
}

/// Codebook vector of each region's label, turned by exactly
/// `level_noise[level]` radians in a random direction drawn per region.
pub fn synth_embed(masks: &GranularityMasks, codebook: &Codebook, level_noise: [f64; 3], seed: u64) -> Result<GranularityFeatures> {
    if level_noise.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("level noise must be finite".into()));
    }
    let mut levels = Vec::with_capacity(3);
    for l in Level::ALL {
        levels.push(embed_level(masks.level(l), codebook, level_noise[l.index()], l, seed)?);
    }
    let levels: [RegionFeatures; 3] = levels.try_into().expect("three levels");
    Ok(GranularityFeatures { levels })
}
