use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::distill::TrainConfig;
use crate::error::{Error, Result};
use crate::oracle::{CodebookParams, SegmentNoise, DEFAULT_CODEBOOK_DIM};
use crate::prompt::{BudgetParams, DEFAULT_SUBPATCHES};
use crate::query::QueryParams;
use crate::splat::DEFAULT_VISIBILITY_THRESHOLD;

pub const SCHEMA_VERSION: u32 = 1;

/// Values given on the command line that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Configs whose relative paths are taken relative to the config file.
pub trait Resolve {
    fn resolve(&mut self, base: &Path);
    fn schema_version(&self) -> u32;
    /// Whether the config carries a seed.
    fn stochastic() -> bool;
    fn set_out_dir(&mut self, out: PathBuf);
}

fn join(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Reads a JSON config, applies `overrides`, rejects unknown keys and
/// resolves relative paths against the config's directory.
pub fn load_config<C: DeserializeOwned + Resolve>(path: &Path, overrides: &Overrides) -> Result<C> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{}: config must be a JSON object", path.display())))?;
    if let Some(out) = &overrides.out_dir {
        obj.insert("out_dir".into(), serde_json::json!(out));
    }
    if let Some(seed) = overrides.seed {
        if !C::stochastic() {
            return Err(Error::Config("this command takes no seed".into()));
        }
        obj.insert("seed".into(), seed.into());
    }
    if let Some(t) = overrides.threads {
        obj.insert("threads".into(), t.into());
    }
    let mut cfg: C = serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "{}: schema_version {} (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version()
        )));
    }
    // an overridden out_dir is relative to the working directory
    let out = overrides.out_dir.clone();
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    if let Some(o) = out {
        cfg.set_out_dir(o);
    }
    Ok(cfg)
}

macro_rules! config_common {
    ($t:ty, $stochastic:expr, [$($p:ident),*], [$($o:ident),*]) => {
        impl Resolve for $t {
            fn resolve(&mut self, base: &Path) {
                join(base, &mut self.out_dir);
                $(join(base, &mut self.$p);)*
                $(if let Some(p) = self.$o.as_mut() { join(base, p); })*
            }
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
            fn stochastic() -> bool {
                $stochastic
            }
            fn set_out_dir(&mut self, out: PathBuf) {
                self.out_dir = out;
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookSettings {
    pub dim: usize,
    pub parent_correlation: f64,
    pub text_angle: f64,
}

impl Default for CodebookSettings {
    fn default() -> Self {
        let p = CodebookParams::default();
        Self {
            dim: DEFAULT_CODEBOOK_DIM,
            parent_correlation: p.parent_correlation,
            text_angle: p.text_angle,
        }
    }
}

impl CodebookSettings {
    pub fn params(&self) -> CodebookParams {
        CodebookParams {
            parent_correlation: self.parent_correlation,
            text_angle: self.text_angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSceneConfig {
    pub schema_version: u32,
    /// Scene description; its own seed is replaced by `seed`.
    pub scene_spec: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub codebook: CodebookSettings,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}
config_common!(GenSceneConfig, true, [scene_spec], []);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub schema_version: u32,
    pub scene_dir: PathBuf,
    /// Field to render instead of the scene's own.
    #[serde(default)]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}
config_common!(RenderConfig, false, [scene_dir], [field]);

fn default_true() -> bool {
    true
}

fn default_subdivisions() -> usize {
    DEFAULT_SUBPATCHES
}

fn default_visibility() -> f64 {
    DEFAULT_VISIBILITY_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRunConfig {
    pub schema_version: u32,
    pub scene_dir: PathBuf,
    pub seed: u64,
    /// Depth-aware budgets and density-guided sampling; off gives a
    /// jittered uniform grid.
    #[serde(default = "default_true")]
    pub gas: bool,
    #[serde(default)]
    pub budget: BudgetParams,
    #[serde(default = "default_subdivisions")]
    pub subdivisions: usize,
    /// Total points per view for uniform prompting; defaults to the base
    /// count times the number of patches.
    #[serde(default)]
    pub uniform_total: Option<usize>,
    #[serde(default = "default_visibility")]
    pub visibility_threshold: f64,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}
config_common!(PromptRunConfig, true, [scene_dir], []);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum SegmentSource {
    /// Synthetic segmenter and embedder driven by the prompt plans.
    Oracle {
        prompt_dir: PathBuf,
        #[serde(default)]
        noise: SegmentNoise,
        #[serde(default)]
        level_noise: [f64; 3],
        /// Accumulated opacity a pixel needs to receive a label.
        #[serde(default)]
        min_coverage: f64,
    },
    /// Externally produced masks and features, checked and normalized.
    Ingest { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRunConfig {
    pub schema_version: u32,
    pub scene_dir: PathBuf,
    pub seed: u64,
    pub source: SegmentSource,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Resolve for SegmentRunConfig {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.out_dir);
        join(base, &mut self.scene_dir);
        match &mut self.source {
            SegmentSource::Oracle { prompt_dir, .. } => join(base, prompt_dir),
            SegmentSource::Ingest { dir } => join(base, dir),
        }
    }
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn stochastic() -> bool {
        true
    }
    fn set_out_dir(&mut self, out: PathBuf) {
        self.out_dir = out;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillRunConfig {
    pub schema_version: u32,
    pub scene_dir: PathBuf,
    pub segment_dir: PathBuf,
    /// Starting field; defaults to the scene's.
    #[serde(default)]
    pub field: Option<PathBuf>,
    pub seed: u64,
    /// Training settings; `train.seed` is replaced by `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}
config_common!(DistillRunConfig, true, [scene_dir, segment_dir], [field]);

/// Text embeddings from outside: a `(n, C)` tensor and its row labels,
/// which must include the canonical phrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEmbeddings {
    pub tensor: PathBuf,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRunConfig {
    pub schema_version: u32,
    pub scene_dir: PathBuf,
    pub distill_dir: PathBuf,
    pub queries: Vec<String>,
    #[serde(default)]
    pub params: QueryParams,
    #[serde(default)]
    pub text_embeddings: Option<TextEmbeddings>,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Resolve for QueryRunConfig {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.out_dir);
        join(base, &mut self.scene_dir);
        join(base, &mut self.distill_dir);
        if let Some(t) = self.text_embeddings.as_mut() {
            join(base, &mut t.tensor);
        }
    }
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn stochastic() -> bool {
        false
    }
    fn set_out_dir(&mut self, out: PathBuf) {
        self.out_dir = out;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum GroundTruthSource {
    /// Label renders of a generated scene.
    Scene {
        dir: PathBuf,
        #[serde(default)]
        min_coverage: f64,
    },
    /// A `ground_truth.json` index with PGM masks next to it.
    Dir { dir: PathBuf },
}

fn default_min_gt_pixels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub schema_version: u32,
    pub query_dir: PathBuf,
    pub ground_truth: GroundTruthSource,
    /// (query, view) pairs whose ground truth has fewer pixels are left
    /// out and counted as excluded.
    #[serde(default = "default_min_gt_pixels")]
    pub min_gt_pixels: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Resolve for EvalConfig {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.out_dir);
        join(base, &mut self.query_dir);
        match &mut self.ground_truth {
            GroundTruthSource::Scene { dir, .. } | GroundTruthSource::Dir { dir } => join(base, dir),
        }
    }
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn stochastic() -> bool {
        false
    }
    fn set_out_dir(&mut self, out: PathBuf) {
        self.out_dir = out;
    }
}
