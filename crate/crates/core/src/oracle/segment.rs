use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::LabelRender;
use super::Level;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::prompt::PromptPoint;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub pixels: usize,
    /// Codebook label, known only for oracle output.
    pub label: Option<String>,
}

/// Region-id map of one level; ids run contiguously from 1, 0 = unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMask {
    pub ids: Grid<u32>,
    /// `regions[k]` describes id `k + 1`.
    pub regions: Vec<Region>,
}

impl LevelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            ids: Grid::new(width, height, 0),
            regions: Vec::new(),
        }
    }

    /// Builds the region table from an id map; ids must be contiguous.
    pub fn from_ids(ids: Grid<u32>) -> Result<Self> {
        let max = ids.as_slice().iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0usize; max + 1];
        for &id in ids.as_slice() {
            counts[id as usize] += 1;
        }
        if let Some(missing) = (1..=max).find(|&k| counts[k] == 0) {
            return Err(Error::Format(format!("region ids not contiguous: id {missing} absent, max {max}")));
        }
        let regions = (1..=max)
            .map(|k| Region {
                id: k as u32,
                pixels: counts[k],
                label: None,
            })
            .collect();
        Ok(Self { ids, regions })
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region(&self, id: u32) -> Option<&Region> {
        id.checked_sub(1).and_then(|k| self.regions.get(k as usize))
    }

    pub fn validate(&self) -> Result<()> {
        let mut counts = vec![0usize; self.regions.len() + 1];
        for &id in self.ids.as_slice() {
            *counts
                .get_mut(id as usize)
                .ok_or_else(|| Error::Format(format!("region id {id} missing from table")))? += 1;
        }
        for (k, r) in self.regions.iter().enumerate() {
            if r.id as usize != k + 1 || r.pixels != counts[k + 1] || r.pixels == 0 {
                return Err(Error::Format(format!("region table entry {} inconsistent with map", r.id)));
            }
        }
        Ok(())
    }
}

/// Sub-part, part and whole masks of one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularityMasks {
    pub levels: [LevelMask; 3],
}

impl GranularityMasks {
    pub fn level(&self, level: Level) -> &LevelMask {
        &self.levels[level.index()]
    }

    pub fn width(&self) -> usize {
        self.levels[0].ids.width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].ids.height()
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.levels {
            if !m.ids.same_shape(&self.levels[0].ids) {
                return Err(Error::ShapeMismatch("mask levels differ in size".into()));
            }
            m.validate()?;
        }
        Ok(())
    }
}

fn default_merge_below() -> usize {
    2
}

/// Failure modes of the synthetic segmenter, per level (sub, part, whole).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentNoise {
    #[serde(default)]
    pub p_drop: [f64; 3],
    #[serde(default)]
    pub p_merge: [f64; 3],
    /// Regions hit by fewer prompts than this may merge into a neighbor.
    #[serde(default = "default_merge_below")]
    pub merge_below: usize,
}

impl Default for SegmentNoise {
    fn default() -> Self {
        Self {
            p_drop: [0.0; 3],
            p_merge: [0.0; 3],
            merge_below: default_merge_below(),
        }
    }
}

impl SegmentNoise {
    fn validate(&self) -> Result<()> {
        if self.p_drop.iter().chain(&self.p_merge).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("segmenter probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

struct UnionFind(BTreeMap<u32, u32>);

impl UnionFind {
    fn find(&mut self, x: u32) -> u32 {
        let p = self.0[&x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0.insert(x, r);
        r
    }
}

fn boundaries(gt: &Grid<u32>) -> BTreeMap<(u32, u32), usize> {
    let mut b = BTreeMap::new();
    let (w, h) = (gt.width(), gt.height());
    for y in 0..h {
        for x in 0..w {
            let a = *gt.get(x, y);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let c = *gt.get(nx, ny);
                if a != 0 && c != 0 && a != c {
                    *b.entry((a.min(c), a.max(c))).or_insert(0) += 1;
                }
            }
        }
    }
    b
}

fn segment_level(
    gt: &Grid<u32>,
    node_labels: &[String],
    prompts: &[PromptPoint],
    level: Level,
    noise: &SegmentNoise,
    seed: u64,
) -> LevelMask {
    let mut hits: BTreeMap<u32, usize> = BTreeMap::new();
    for p in prompts {
        let id = *gt.get(p.x, p.y);
        if id != 0 {
            *hits.entry(id).or_insert(0) += 1;
        }
    }
    let mut rng = seed::rng(seed, &[level as u64]);
    let l = level.index();
    hits.retain(|_, _| !(noise.p_drop[l] > 0.0 && rng.random::<f64>() < noise.p_drop[l]));

    let mut area: BTreeMap<u32, usize> = hits.keys().map(|&k| (k, 0)).collect();
    for id in gt.as_slice() {
        if let Some(a) = area.get_mut(id) {
            *a += 1;
        }
    }
    let mut uf = UnionFind(hits.keys().map(|&k| (k, k)).collect());
    if noise.p_merge[l] > 0.0 {
        let bounds = boundaries(gt);
        for (&id, &count) in &hits {
            if count >= noise.merge_below || rng.random::<f64>() >= noise.p_merge[l] {
                continue;
            }
            let neighbor = bounds
                .iter()
                .filter_map(|(&(a, b), &len)| match (a == id, b == id) {
                    (true, _) => Some((b, len)),
                    (_, true) => Some((a, len)),
                    _ => None,
                })
                .filter(|(n, _)| hits.contains_key(n))
                .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)));
            if let Some((n, _)) = neighbor {
                let (ra, rb) = (uf.find(id), uf.find(n));
                if ra != rb {
                    uf.0.insert(ra.max(rb), ra.min(rb));
                }
            }
        }
    }
    // Largest member (smallest id on ties) names each merged region.
    let mut winner: BTreeMap<u32, u32> = BTreeMap::new();
    for &id in hits.keys() {
        let r = uf.find(id);
        let w = winner.entry(r).or_insert(id);
        if area[&id] > area[w] {
            *w = id;
        }
    }
    let roots: BTreeMap<u32, u32> = hits.keys().map(|&id| (id, uf.find(id))).collect();

    let mut out = Grid::new(gt.width(), gt.height(), 0u32);
    let mut new_id: BTreeMap<u32, u32> = BTreeMap::new();
    let mut regions: Vec<Region> = Vec::new();
    for (o, &id) in out.as_mut_slice().iter_mut().zip(gt.as_slice()) {
        let Some(&root) = roots.get(&id) else { continue };
        let k = *new_id.entry(root).or_insert_with(|| {
            regions.push(Region {
                id: regions.len() as u32 + 1,
                pixels: 0,
                label: node_labels.get(winner[&root] as usize).cloned(),
            });
            regions.len() as u32
        });
        regions[k as usize - 1].pixels += 1;
        *o = k;
    }
    LevelMask { ids: out, regions }
}

/// Emits, per level, the ground-truth regions hit by at least one prompt,
/// subject to the configured drop and merge failures.
pub fn synth_segment(
    gt: &LabelRender,
    node_labels: &[String],
    prompts: &[PromptPoint],
    noise: &SegmentNoise,
    seed: u64,
) -> Result<GranularityMasks> {
    noise.validate()?;
    let (w, h) = (gt.width(), gt.height());
    if let Some(p) = prompts.iter().find(|p| p.x >= w || p.y >= h) {
        return Err(Error::InvalidArgument(format!("prompt ({}, {}) outside {w}x{h} image", p.x, p.y)));
    }
    if prompts.is_empty() {
        log::warn!("no prompt points; masks are empty");
    }
    let levels = Level::ALL.map(|l| segment_level(gt.level(l), node_labels, prompts, l, noise, seed));
    Ok(GranularityMasks { levels })
}
