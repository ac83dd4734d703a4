//! Sensor images on disk: binary 16-bit PGM (maxval 65535, big-endian
//! samples holding raw DN) with a JSON sidecar carrying the CFA layout and
//! provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Filter, Provenance, SensorError, SensorImage};

pub const SIDECAR_FORMAT: &str = "camsim-sensor-image";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSidecar {
    pub format: String,
    pub version: u32,
    pub pgm: String,
    pub rows: usize,
    pub cols: usize,
    pub adc_bits: u32,
    pub cfa_tile: [[Filter; 2]; 2],
    pub provenance: Provenance,
}

fn file_err(path: &Path, msg: impl ToString) -> SensorError {
    SensorError::File {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

pub fn pgm_bytes(cols: usize, rows: usize, dn: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    out.reserve(dn.len() * 2);
    for v in dn {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, cols: usize, rows: usize, dn: &[u16]) -> Result<(), SensorError> {
    let path = path.as_ref();
    std::fs::write(path, pgm_bytes(cols, rows, dn)).map_err(|e| file_err(path, e))
}

/// Reads a binary PGM; returns `(cols, rows, samples)`. Accepts 8- and
/// 16-bit maxvals and `#` comments in the header.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>), SensorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    parse_pgm(&bytes).map_err(|m| file_err(path, m))
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), String> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if fields[0] != "P5" {
        return Err(format!("expected binary PGM (P5), found {:?}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field {s:?}"));
    let (cols, rows, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let wide = maxval > 255;
    let need = cols * rows * if wide { 2 } else { 1 };
    let data = bytes.get(i..).unwrap_or_default();
    if data.len() < need {
        return Err(format!("expected {need} sample bytes, found {}", data.len()));
    }
    let samples = if wide {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data[..need].iter().map(|&v| u16::from(v)).collect()
    };
    Ok((cols, rows, samples))
}

fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Writes `<path>` (PGM) and the sidecar next to it with a `.json`
/// extension. Returns the sidecar path.
pub fn write_sensor_image(path: impl AsRef<Path>, img: &SensorImage) -> Result<PathBuf, SensorError> {
    let path = path.as_ref();
    write_pgm(path, img.cols, img.rows, &img.dn)?;
    let sidecar = SensorSidecar {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        pgm: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        rows: img.rows,
        cols: img.cols,
        adc_bits: img.adc_bits,
        cfa_tile: img.cfa_tile,
        provenance: img.provenance.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    std::fs::write(&side, text + "\n").map_err(|e| file_err(&side, e))?;
    Ok(side)
}

pub fn read_sensor_image(path: impl AsRef<Path>) -> Result<SensorImage, SensorError> {
    let path = path.as_ref();
    let (cols, rows, dn) = read_pgm(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| file_err(&side, e))?;
    let meta: SensorSidecar = serde_json::from_str(&text).map_err(|e| file_err(&side, e))?;
    if meta.format != SIDECAR_FORMAT || meta.version != SIDECAR_VERSION {
        return Err(file_err(&side, format!("unsupported sidecar {} v{}", meta.format, meta.version)));
    }
    if meta.rows != rows || meta.cols != cols {
        return Err(file_err(&side, "sidecar dimensions disagree with the PGM"));
    }
    let max = (1u32 << meta.adc_bits) - 1;
    if let Some(v) = dn.iter().find(|&&v| u32::from(v) > max) {
        return Err(file_err(path, format!("DN {v} exceeds {}-bit range", meta.adc_bits)));
    }
    Ok(SensorImage {
        rows,
        cols,
        adc_bits: meta.adc_bits,
        dn,
        cfa_tile: meta.cfa_tile,
        provenance: meta.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_samples() {
        let b = pgm_bytes(2, 1, &[1, 0x1234]);
        assert_eq!(&b[..15], b"P5\n2 1\n65535\n\x00\x01");
        assert_eq!(&b[15..], &[0x12, 0x34]);
        assert_eq!(parse_pgm(&b).unwrap(), (2, 1, vec![1, 0x1234]));
    }

    #[test]
    fn pgm_comments_and_eight_bit() {
        let mut b = b"P5 # c\n# x\n3 1 255\n".to_vec();
        b.extend_from_slice(&[0, 7, 255]);
        assert_eq!(parse_pgm(&b).unwrap(), (3, 1, vec![0, 7, 255]));
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}
