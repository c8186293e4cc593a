//! Binary little-endian PLY in the 3DGS layout, plus `feat_*` properties.
//!
//! Scale is stored as log-scale, opacity as a logit and color as the
//! degree-0 SH coefficient. Those transformed properties are written as
//! `double` so that `load ∘ save` reproduces in-memory `f32` values exactly;
//! the reader accepts any scalar type for every property.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Gaussian, GaussianField, DEFAULT_FEATURE_DIM, OPACITY_MAX, OPACITY_MIN};
use crate::error::{Error, Result};

const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY scalar type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
    has_list: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Feature dimension when the file carries no `feat_*` properties.
    pub feature_dim_if_absent: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            feature_dim_if_absent: DEFAULT_FEATURE_DIM,
        }
    }
}

pub fn load_field(path: impl AsRef<Path>) -> Result<GaussianField> {
    load_field_with(path, LoadOptions::default())
}

pub fn load_field_with(path: impl AsRef<Path>, options: LoadOptions) -> Result<GaussianField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_field(&bytes, options)
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize)> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("PLY header is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing PLY magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!("unsupported PLY format {fmt}")));
                }
                saw_format = true;
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count {count}")))?,
                properties: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?
                    .has_list = true;
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                element.properties.push((name.to_string(), Scalar::parse(ty)?));
            }
            _ => return Err(Error::Format(format!("unrecognized PLY header line: {line}"))),
        }
    }
    if !saw_format {
        return Err(Error::Format("PLY header lacks a format line".into()));
    }
    Ok((elements, end + END.len()))
}

fn parse_field(bytes: &[u8], options: LoadOptions) -> Result<GaussianField> {
    let (elements, mut offset) = parse_header(bytes)?;
    let mut vertex = None;
    for element in &elements {
        if element.name == "vertex" {
            vertex = Some(element);
            break;
        }
        if element.has_list {
            return Err(Error::Format(format!(
                "cannot skip list element {} preceding vertices",
                element.name
            )));
        }
        let stride: usize = element.properties.iter().map(|(_, t)| t.size()).sum();
        offset += stride * element.count;
    }
    let vertex = vertex.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    if vertex.has_list {
        return Err(Error::Format("vertex element must not contain list properties".into()));
    }
    if vertex.count == 0 {
        return Err(Error::EmptyField);
    }

    let mut layout: HashMap<&str, (usize, Scalar)> = HashMap::new();
    let mut stride = 0;
    for (name, ty) in &vertex.properties {
        layout.insert(name.as_str(), (stride, *ty));
        stride += ty.size();
    }
    let required = |name: &str| {
        layout
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("PLY vertex lacks required property `{name}`")))
    };
    let pos = [required("x")?, required("y")?, required("z")?];
    let scale = [required("scale_0")?, required("scale_1")?, required("scale_2")?];
    let rot = [
        required("rot_0")?,
        required("rot_1")?,
        required("rot_2")?,
        required("rot_3")?,
    ];
    let opacity = required("opacity")?;
    let dc = match (layout.get("f_dc_0"), layout.get("f_dc_1"), layout.get("f_dc_2")) {
        (Some(&a), Some(&b), Some(&c)) => Some([a, b, c]),
        _ => None,
    };
    let mut feat = Vec::new();
    while let Some(&slot) = layout.get(format!("feat_{}", feat.len()).as_str()) {
        feat.push(slot);
    }
    let feature_dim = if feat.is_empty() {
        options.feature_dim_if_absent
    } else {
        feat.len()
    };

    let body = &bytes[offset..];
    if body.len() < stride * vertex.count {
        return Err(Error::Format(format!(
            "PLY body holds {} bytes, {} vertices need {}",
            body.len(),
            vertex.count,
            stride * vertex.count
        )));
    }

    let mut gaussians = Vec::with_capacity(vertex.count);
    let mut features = vec![0.0f32; vertex.count * feature_dim];
    for (i, row) in body.chunks_exact(stride).take(vertex.count).enumerate() {
        let get = |(off, ty): (usize, Scalar)| ty.read(&row[off..off + ty.size()]);
        let logit = get(opacity);
        let prob = (1.0 / (1.0 + (-logit).exp())) as f32;
        let mut g = Gaussian::new(
            pos.map(|s| get(s) as f32),
            scale.map(|s| get(s).exp() as f32),
            rot.map(|s| get(s) as f32),
            prob.clamp(OPACITY_MIN, OPACITY_MAX),
        )
        .map_err(|e| Error::Format(format!("vertex {i}: {e}")))?;
        if let Some(dc) = dc {
            g.color = Some(dc.map(|s| (0.5 + SH_C0 * get(s)) as f32));
        }
        for (k, &slot) in feat.iter().enumerate() {
            features[i * feature_dim + k] = get(slot) as f32;
        }
        gaussians.push(g);
    }
    GaussianField::with_features(gaussians, feature_dim, features)
}

/// Serializes a field to PLY bytes.
pub fn field_to_bytes(field: &GaussianField) -> Vec<u8> {
    let with_color = !field.is_empty() && field.gaussians().iter().any(|g| g.color.is_some());
    let d = field.feature_dim();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", field.len()));
    for name in ["x", "y", "z"] {
        header.push_str(&format!("property float {name}\n"));
    }
    if with_color {
        for k in 0..3 {
            header.push_str(&format!("property double f_dc_{k}\n"));
        }
    }
    header.push_str("property double opacity\n");
    for k in 0..3 {
        header.push_str(&format!("property double scale_{k}\n"));
    }
    for k in 0..4 {
        header.push_str(&format!("property float rot_{k}\n"));
    }
    for k in 0..d {
        header.push_str(&format!("property float feat_{k}\n"));
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for (i, g) in field.gaussians().iter().enumerate() {
        for p in g.position {
            out.extend_from_slice(&p.to_le_bytes());
        }
        if with_color {
            let c = g.color.unwrap_or([0.5; 3]);
            for v in c {
                out.extend_from_slice(&((v as f64 - 0.5) / SH_C0).to_le_bytes());
            }
        }
        let o = g.opacity as f64;
        out.extend_from_slice(&(o / (1.0 - o)).ln().to_le_bytes());
        for s in g.scale {
            out.extend_from_slice(&(s as f64).ln().to_le_bytes());
        }
        for q in g.rotation {
            out.extend_from_slice(&q.to_le_bytes());
        }
        for f in field.feature(i) {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

pub fn save_field(field: &GaussianField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field_to_bytes(field)).map_err(|e| Error::io(path, e))
}
