use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scene::NodeInfo;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_CODEBOOK_DIM: usize = 32;
/// Phrases every relevancy score is contrasted against.
pub const CANONICAL_PHRASES: [&str; 4] = ["object", "things", "stuff", "texture"];

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookParams {
    /// Cosine between a child label and its parent label.
    pub parent_correlation: f64,
    /// Angle in radians between a label's text embedding and its region
    /// embedding.
    pub text_angle: f64,
}

impl Default for CodebookParams {
    fn default() -> Self {
        Self {
            parent_correlation: 0.0,
            text_angle: 0.2,
        }
    }
}

/// Label embeddings (`entries`) and text-query embeddings (`queries`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Codebook {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<f64>>,
    pub queries: BTreeMap<String, Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut impl Rng, dim: usize, orthogonal_to: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in orthogonal_to {
            let c = dot(&v, u);
            v.iter_mut().zip(u.iter()).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

impl Codebook {
    /// Codebook for a flat label list.
    pub fn from_labels(labels: &[&str], dim: usize, seed: u64, params: CodebookParams) -> Result<Self> {
        let parents: Vec<(String, Option<String>)> = labels.iter().map(|l| (l.to_string(), None)).collect();
        Self::build(&parents, dim, seed, params)
    }

    /// Codebook for a scene hierarchy; with `parent_correlation` ρ a child
    /// label is `ρ·parent + √(1-ρ²)·e` with `e` orthogonal to all others.
    pub fn for_nodes(nodes: &[NodeInfo], dim: usize, seed: u64, params: CodebookParams) -> Result<Self> {
        let label_of = |id: u32| nodes.get(id as usize - 1).map(|n| n.label.clone());
        let parents: Vec<(String, Option<String>)> =
            nodes.iter().map(|n| (n.label.clone(), n.parent.and_then(label_of))).collect();
        Self::build(&parents, dim, seed, params)
    }

    fn build(labels: &[(String, Option<String>)], dim: usize, seed: u64, params: CodebookParams) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("codebook dimension must be at least 2".into()));
        }
        let rho = params.parent_correlation;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("parent correlation {rho} outside [0, 1)")));
        }
        for (l, _) in labels {
            if CANONICAL_PHRASES.contains(&l.as_str()) {
                return Err(Error::Config(format!("label '{l}' is reserved")));
            }
        }
        let mut order: Vec<(String, Option<String>)> =
            CANONICAL_PHRASES.iter().map(|c| (c.to_string(), None)).collect();
        for (l, p) in labels {
            if !order.iter().any(|(o, _)| o == l) {
                order.push((l.clone(), p.clone()));
            }
        }
        let mut rng = seed::rng(seed, &[0x636f_6465]);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(order.len());
        for _ in 0..order.len() {
            let refs: Vec<&[f64]> = if basis.len() < dim { basis.iter().map(Vec::as_slice).collect() } else { vec![] };
            basis.push(random_unit(&mut rng, dim, &refs));
        }
        let mut entries: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for ((label, parent), e) in order.iter().zip(&basis) {
            let v = match parent.as_ref().and_then(|p| entries.get(p)) {
                Some(pv) if rho > 0.0 => {
                    let s = (1.0 - rho * rho).sqrt();
                    let mut v: Vec<f64> = pv.iter().zip(e).map(|(a, b)| rho * a + s * b).collect();
                    let n = norm(&v);
                    v.iter_mut().for_each(|x| *x /= n);
                    v
                }
                _ => e.clone(),
            };
            entries.insert(label.clone(), v);
        }
        let mut queries = BTreeMap::new();
        for (k, (label, _)) in order.iter().enumerate().skip(CANONICAL_PHRASES.len()) {
            let v = &entries[label];
            let mut qrng = seed::rng(seed, &[0x7465_7874, k as u64]);
            let u = random_unit(&mut qrng, dim, &[v]);
            let (c, s) = (params.text_angle.cos(), params.text_angle.sin());
            queries.insert(label.clone(), v.iter().zip(&u).map(|(a, b)| c * a + s * b).collect());
        }
        let cb = Codebook { dim, entries, queries };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        for phrase in CANONICAL_PHRASES {
            if !self.entries.contains_key(phrase) {
                return Err(Error::Format(format!("codebook lacks canonical phrase '{phrase}'")));
            }
        }
        for (label, v) in self.entries.iter().chain(&self.queries) {
            if v.len() != self.dim {
                return Err(Error::Format(format!("'{label}' has {} components, expected {}", v.len(), self.dim)));
            }
            if (norm(v) - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Format(format!("'{label}' is not unit norm")));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&[f64]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    /// Text embedding for a query label.
    pub fn query(&self, label: &str) -> Option<&[f64]> {
        self.queries.get(label).map(Vec::as_slice)
    }

    pub fn canonical(&self) -> Vec<&[f64]> {
        CANONICAL_PHRASES.iter().map(|p| self.entries[*p].as_slice()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cb: Codebook = serde_json::from_str(&text)?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
