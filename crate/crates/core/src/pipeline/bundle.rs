use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{load_field, save_field, Camera, GaussianField};
use crate::oracle::{Codebook, NodeInfo, Scene};
use crate::tensor::Tensor;

const FIELD: &str = "field.ply";
const CAMERAS: &str = "cameras.json";
const NODES: &str = "nodes.json";
const LABELS: &str = "labels.tensor";
const CODEBOOK: &str = "codebook.json";

/// A generated scene on disk: field, cameras, node table, per-Gaussian
/// labels and the codebook.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub field: GaussianField,
    pub cameras: Vec<Camera>,
    pub nodes: Vec<NodeInfo>,
    pub labels: Vec<[u32; 3]>,
    pub codebook: Codebook,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub(super) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl SceneBundle {
    pub fn from_scene(scene: Scene, codebook: Codebook) -> Self {
        Self {
            field: scene.field,
            cameras: scene.cameras,
            nodes: scene.nodes,
            labels: scene.labels,
            codebook,
        }
    }

    pub fn field_path(dir: &Path) -> PathBuf {
        dir.join(FIELD)
    }

    /// Files a command reading the bundle depends on.
    pub fn files(dir: &Path) -> Vec<PathBuf> {
        [FIELD, CAMERAS, NODES, LABELS, CODEBOOK].iter().map(|f| dir.join(f)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_field(&self.field, dir.join(FIELD))?;
        write_json(&dir.join(CAMERAS), &self.cameras)?;
        write_json(&dir.join(NODES), &self.nodes)?;
        let flat: Vec<u32> = self.labels.iter().flatten().copied().collect();
        Tensor::from_u32(vec![self.labels.len(), 3], flat)?.write(dir.join(LABELS))?;
        self.codebook.save(dir.join(CODEBOOK))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let field = load_field(dir.join(FIELD))?;
        let cameras: Vec<Camera> = read_json(&dir.join(CAMERAS))?;
        for c in &cameras {
            c.validate()?;
        }
        let nodes: Vec<NodeInfo> = read_json(&dir.join(NODES))?;
        let t = Tensor::read(dir.join(LABELS))?;
        if t.shape() != [field.len(), 3] {
            return Err(Error::Format(format!("label table shape {:?} for {} gaussians", t.shape(), field.len())));
        }
        let labels: Vec<[u32; 3]> = t.as_u32()?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        if labels.iter().flatten().any(|&id| id as usize > nodes.len()) {
            return Err(Error::Format("label table refers to unknown nodes".into()));
        }
        let codebook = Codebook::load(dir.join(CODEBOOK))?;
        Ok(Self {
            field,
            cameras,
            nodes,
            labels,
            codebook,
        })
    }

    /// Node labels indexed by id, with an empty entry for id 0.
    pub fn node_labels(&self) -> Vec<String> {
        std::iter::once(String::new()).chain(self.nodes.iter().map(|n| n.label.clone())).collect()
    }

    pub fn node_by_label(&self, label: &str) -> Option<&NodeInfo> {
        self.nodes.iter().find(|n| n.label == label)
    }

    /// The selected view indices, or all of them.
    pub fn views(&self, selection: &Option<Vec<usize>>) -> Result<Vec<usize>> {
        match selection {
            None => Ok((0..self.cameras.len()).collect()),
            Some(v) => {
                if let Some(bad) = v.iter().find(|&&i| i >= self.cameras.len()) {
                    return Err(Error::Config(format!("view {bad} out of range ({} cameras)", self.cameras.len())));
                }
                Ok(v.clone())
            }
        }
    }
}
