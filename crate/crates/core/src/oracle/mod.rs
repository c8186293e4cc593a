//! Synthetic segmenter and embedder standing in for external models, plus
//! ingestion of precomputed masks and region features.

mod codebook;
mod embed;
mod ingest;
mod scene;
mod segment;

use serde::{Deserialize, Serialize};

pub use codebook::{Codebook, CodebookParams, CANONICAL_PHRASES, DEFAULT_CODEBOOK_DIM};
pub use embed::{synth_embed, GranularityFeatures, RegionFeatures};
pub use ingest::{export, ingest, mask_path, feature_path};
pub use scene::{gen_scene, render_labels, CameraRing, LabelRender, NodeInfo, Primitive, Scene, SceneNode, SceneSpec};
pub use segment::{synth_segment, GranularityMasks, LevelMask, Region, SegmentNoise};

/// Segmentation granularity, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Sub = 0,
    Part = 1,
    Whole = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Sub, Level::Part, Level::Whole];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Sub => "sub",
            Level::Part => "part",
            Level::Whole => "whole",
        }
    }
}
