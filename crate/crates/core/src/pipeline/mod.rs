//! File-based pipeline behind the `gags` command line: JSON configs, the
//! on-disk scene bundle, per-command outputs and their manifests.

mod bundle;
mod commands;
mod config;
mod manifest;

pub use bundle::SceneBundle;
pub use commands::{
    cmd_distill, cmd_eval, cmd_gen_scene, cmd_prompt, cmd_query, cmd_render, cmd_segment, gt_file_name, query_stem,
    EvalSummary, GtEntry, MetricsFile, QueryRecord,
};
pub use config::{
    load_config, CodebookSettings, DistillRunConfig, EvalConfig, GenSceneConfig, GroundTruthSource, Overrides,
    PromptRunConfig, QueryRunConfig, RenderConfig, SegmentRunConfig, SegmentSource, TextEmbeddings, SCHEMA_VERSION,
};
pub use manifest::{sha256_file, Manifest};

use crate::error::{Error, Result};

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config("threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}
