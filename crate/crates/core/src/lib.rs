//! Granularity-aware distillation of region-level semantic features into a
//! 3D Gaussian field, with depth-aware prompt planning and open-vocabulary
//! query over rendered feature maps.

pub mod distill;
pub mod error;
pub mod field;
pub mod grid;
pub mod imageio;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
pub mod query;
pub mod seed;
pub mod splat;
pub mod tensor;

pub use error::{Error, Result};
