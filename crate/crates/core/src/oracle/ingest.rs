use std::path::{Path, PathBuf};

use super::embed::{GranularityFeatures, RegionFeatures};
use super::segment::{GranularityMasks, LevelMask};
use super::Level;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imageio::{read_mask_image, write_pgm16};
use crate::tensor::Tensor;

const DRIFT_WARN: f64 = 1e-3;
const DRIFT_FIX: f64 = 1e-6;

pub fn mask_path(dir: &Path, view: usize, level: Level) -> PathBuf {
    dir.join(format!("view_{view:03}_{}.pgm", level.name()))
}

pub fn feature_path(dir: &Path, view: usize, level: Level) -> PathBuf {
    dir.join(format!("view_{view:03}_{}.tensor", level.name()))
}

/// Writes one view's masks as 16-bit PGM and features as tensor files.
pub fn export(dir: &Path, view: usize, masks: &GranularityMasks, features: &GranularityFeatures) -> Result<()> {
    for l in Level::ALL {
        let mask = masks.level(l);
        let ids = mask
            .ids
            .as_slice()
            .iter()
            .map(|&i| u16::try_from(i).map_err(|_| Error::InvalidArgument(format!("region id {i} exceeds 16 bits"))))
            .collect::<Result<Vec<u16>>>()?;
        write_pgm16(mask_path(dir, view, l), &Grid::from_vec(mask.ids.width(), mask.ids.height(), ids)?)?;
        let table = features.level(l);
        Tensor::from_f32(vec![table.num_regions() + 1, table.dim], table.rows.clone())?.write(feature_path(dir, view, l))?;
    }
    Ok(())
}

/// Reads externally produced masks and region features for one view.
/// Region ids are compacted to a contiguous range, keeping their order.
pub fn ingest(mask_paths: [&Path; 3], feature_paths: [&Path; 3]) -> Result<(GranularityMasks, GranularityFeatures)> {
    let mut masks = Vec::with_capacity(3);
    let mut feats = Vec::with_capacity(3);
    for k in 0..3 {
        let raw = read_mask_image(mask_paths[k])?;
        let tensor = Tensor::read(feature_paths[k])?;
        let (mask, table) = ingest_level(raw, &tensor, feature_paths[k])?;
        masks.push(mask);
        feats.push(table);
    }
    let dim = feats[0].dim;
    if feats.iter().any(|f| f.dim != dim) {
        return Err(Error::ShapeMismatch("feature dimensions differ across levels".into()));
    }
    if masks.iter().any(|m: &LevelMask| !m.ids.same_shape(&masks[0].ids)) {
        return Err(Error::ShapeMismatch("mask sizes differ across levels".into()));
    }
    let masks = GranularityMasks {
        levels: masks.try_into().expect("three levels"),
    };
    let feats = GranularityFeatures {
        levels: feats.try_into().expect("three levels"),
    };
    Ok((masks, feats))
}

fn ingest_level(raw: Grid<u16>, tensor: &Tensor, path: &Path) -> Result<(LevelMask, RegionFeatures)> {
    let shape = tensor.shape();
    if shape.len() != 2 || shape[1] == 0 {
        return Err(Error::Format(format!("{}: expected a (regions + 1, C) table", path.display())));
    }
    let (rows, dim) = (shape[0], shape[1]);
    let data = tensor.as_f32()?;
    let max = raw.as_slice().iter().copied().max().unwrap_or(0) as usize;
    if max >= rows {
        return Err(Error::MissingData(format!(
            "{}: mask references region {max} but table has rows 0..{}",
            path.display(),
            rows.saturating_sub(1)
        )));
    }
    let mut present = vec![false; max + 1];
    for &id in raw.as_slice() {
        present[id as usize] = true;
    }
    let mut remap = vec![0u32; max + 1];
    let mut next = 0u32;
    for id in 1..=max {
        if present[id] {
            next += 1;
            remap[id] = next;
        }
    }
    if (next as usize) < max {
        log::debug!("{}: compacting {max} region ids to {next}", path.display());
    }
    let ids = raw.map(|&v| remap[v as usize]);
    let mask = LevelMask::from_ids(ids)?;
    let mut table = RegionFeatures::zeros(mask.num_regions(), dim);
    for old in 1..=max {
        if !present[old] {
            continue;
        }
        let src = &data[old * dim..(old + 1) * dim];
        let norm = src.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric(format!("{}: region {old} has a degenerate feature", path.display())));
        }
        let dst = table.get_mut(remap[old]);
        if (norm - 1.0).abs() > DRIFT_FIX {
            if (norm - 1.0).abs() > DRIFT_WARN {
                log::warn!("{}: region {old} feature norm {norm:.4}, renormalizing", path.display());
            }
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = (x as f64 / norm) as f32;
            }
        } else {
            dst.copy_from_slice(src);
        }
    }
    Ok((mask, table))
}
