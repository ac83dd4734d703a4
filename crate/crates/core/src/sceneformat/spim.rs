//! Spectral image container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 0..4             | magic `SPIM`                              |
//! | 4..8             | `u32` header length `H`                   |
//! | 8..8+H           | UTF-8 JSON header ([`SpimHeader`])        |
//! | 8+H..            | payload: `f32` planes at header offsets   |
//!
//! Plane offsets are relative to the payload start. The irradiance plane
//! holds `width·height·n_bands` floats, band-major then row-major; metadata
//! planes (`depth`, `class_id`, `instance_id`) hold `width·height` floats each,
//! ids stored as exactly representable integers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{MetadataPlanes, SpectralImage, WavelengthGrid};

pub const SPIM_MAGIC: &[u8; 4] = b"SPIM";
pub const SPIM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpimError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a spectral image container (bad magic)")]
    BadMagic,
    #[error("truncated header: need {need} bytes, have {have}")]
    TruncatedHeader { need: usize, have: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unknown container version {0} (this build reads {SPIM_VERSION})")]
    UnknownVersion(u32),
    #[error("truncated payload: header declares {declared} bytes, file has {actual}")]
    TruncatedPayload { declared: usize, actual: usize },
    #[error("header/payload size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid image content: {0}")]
    Content(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpimPlane {
    pub name: String,
    pub offset: usize,
    pub count: usize,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpimHeader {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub grid: WavelengthGrid,
    pub band_centers_nm: Vec<f64>,
    pub plane_order: String,
    pub planes: Vec<SpimPlane>,
    pub payload_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview_tone_scale: Option<f64>,
}

const PLANE_ORDER: &str = "irradiance[band][row][col], then metadata[row][col]";

fn header_for(img: &SpectralImage, tone: Option<f64>) -> SpimHeader {
    let n = img.width() * img.height();
    let bands = img.grid().n_bands();
    let mut planes = vec![SpimPlane {
        name: "irradiance".into(),
        offset: 0,
        count: n * bands,
        units: "W m^-2 nm^-1".into(),
    }];
    if img.metadata().is_some() {
        let mut off = n * bands * 4;
        for (name, units) in [("depth", "m"), ("class_id", "id"), ("instance_id", "id")] {
            planes.push(SpimPlane {
                name: name.into(),
                offset: off,
                count: n,
                units: units.into(),
            });
            off += n * 4;
        }
    }
    let payload_bytes = planes.iter().map(|p| p.count * 4).sum();
    SpimHeader {
        version: SPIM_VERSION,
        width: img.width(),
        height: img.height(),
        grid: *img.grid(),
        band_centers_nm: img.grid().centers(),
        plane_order: PLANE_ORDER.into(),
        planes,
        payload_bytes,
        preview_tone_scale: tone,
    }
}

pub fn spectral_image_to_bytes(img: &SpectralImage, preview_tone_scale: Option<f64>) -> Vec<u8> {
    let header = header_for(img, preview_tone_scale);
    let json = serde_json::to_vec_pretty(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + header.payload_bytes);
    out.extend_from_slice(SPIM_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(m) = img.metadata() {
        for v in &m.depth {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in m.class_id.iter().chain(&m.instance_id) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn floats(payload: &[u8], plane: &SpimPlane) -> Vec<f32> {
    payload[plane.offset..plane.offset + plane.count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn ids(payload: &[u8], plane: &SpimPlane) -> Result<Vec<u32>, SpimError> {
    floats(payload, plane)
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                Ok(v as u32)
            } else {
                Err(SpimError::Content(format!("{} plane holds non-id value {v}", plane.name)))
            }
        })
        .collect()
}

/// Returns the image and the header it was stored with.
pub fn spectral_image_from_bytes(bytes: &[u8]) -> Result<(SpectralImage, SpimHeader), SpimError> {
    if bytes.len() < 4 || &bytes[..4] != SPIM_MAGIC {
        return Err(SpimError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(SpimError::TruncatedHeader {
            need: 8,
            have: bytes.len(),
        });
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let need = 8usize.saturating_add(hlen);
    if bytes.len() < need {
        return Err(SpimError::TruncatedHeader {
            need,
            have: bytes.len(),
        });
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[8..need]).map_err(|e| SpimError::Header(e.to_string()))?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != SPIM_VERSION as u64 {
            return Err(SpimError::UnknownVersion(v as u32));
        }
    }
    let header: SpimHeader = serde_json::from_value(raw).map_err(|e| SpimError::Header(e.to_string()))?;
    let payload = &bytes[need..];
    if payload.len() < header.payload_bytes {
        return Err(SpimError::TruncatedPayload {
            declared: header.payload_bytes,
            actual: payload.len(),
        });
    }
    if payload.len() > header.payload_bytes {
        return Err(SpimError::SizeMismatch(format!(
            "{} trailing bytes after declared payload",
            payload.len() - header.payload_bytes
        )));
    }
    let n = header
        .width
        .checked_mul(header.height)
        .ok_or_else(|| SpimError::SizeMismatch("dimensions overflow".into()))?;
    for p in &header.planes {
        let end = p
            .count
            .checked_mul(4)
            .and_then(|b| b.checked_add(p.offset))
            .ok_or_else(|| SpimError::SizeMismatch(format!("plane {} overflows", p.name)))?;
        if end > header.payload_bytes {
            return Err(SpimError::SizeMismatch(format!(
                "plane {} ends at byte {end}, payload is {}",
                p.name, header.payload_bytes
            )));
        }
    }
    let plane = |name: &str| header.planes.iter().find(|p| p.name == name);
    let irr = plane("irradiance").ok_or_else(|| SpimError::Header("no irradiance plane".into()))?;
    let expected = n
        .checked_mul(header.grid.n_bands())
        .ok_or_else(|| SpimError::SizeMismatch("dimensions overflow".into()))?;
    if irr.count != expected {
        return Err(SpimError::SizeMismatch(format!(
            "irradiance plane has {} floats, {}x{}x{} needs {expected}",
            irr.count,
            header.width,
            header.height,
            header.grid.n_bands()
        )));
    }
    let img = SpectralImage::new(header.width, header.height, header.grid, floats(payload, irr))
        .map_err(|e| SpimError::Content(e.to_string()))?;
    let meta_planes = (plane("depth"), plane("class_id"), plane("instance_id"));
    let img = match meta_planes {
        (None, None, None) => img,
        (Some(d), Some(c), Some(i)) => {
            for p in [d, c, i] {
                if p.count != n {
                    return Err(SpimError::SizeMismatch(format!(
                        "metadata plane {} has {} values, expected {n}",
                        p.name, p.count
                    )));
                }
            }
            img.with_metadata(MetadataPlanes {
                depth: floats(payload, d),
                class_id: ids(payload, c)?,
                instance_id: ids(payload, i)?,
            })
            .map_err(|e| SpimError::Content(e.to_string()))?
        }
        _ => return Err(SpimError::Header("metadata planes must come as a complete set".into())),
    };
    Ok((img, header))
}

pub fn write_spectral_image(
    img: &SpectralImage,
    path: impl AsRef<Path>,
    preview_tone_scale: Option<f64>,
) -> Result<(), SpimError> {
    let path = path.as_ref();
    std::fs::write(path, spectral_image_to_bytes(img, preview_tone_scale)).map_err(|source| SpimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_spectral_image(path: impl AsRef<Path>) -> Result<SpectralImage, SpimError> {
    read_spectral_image_with_header(path).map(|(img, _)| img)
}

pub fn read_spectral_image_with_header(path: impl AsRef<Path>) -> Result<(SpectralImage, SpimHeader), SpimError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| SpimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    spectral_image_from_bytes(&bytes)
}
