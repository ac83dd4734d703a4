//! Asset description grammar: a strict subset of the PBRT scene language.
//!
//! ```text
//! file       = { statement } ;
//! statement  = "Asset" string string                 (* id, class label *)
//!            | "Axes" array3 array3                  (* up, forward *)
//!            | "MakeNamedMaterial" string { param }
//!            | "NamedMaterial" string
//!            | "AttributeBegin" | "AttributeEnd"
//!            | "Identity"
//!            | "Translate" num num num
//!            | "Scale" num num num
//!            | "Rotate" num num num num              (* degrees, axis *)
//!            | "Transform" array16                   (* column-major, as PBRT *)
//!            | "ConcatTransform" array16
//!            | "Shape" "\"trianglemesh\"" { param } ;
//! param      = "\"<type> <name>\"" ( array | num | string ) ;
//! array      = "[" { num | string } "]" ;
//! ```
//!
//! Comments run from `#` to end of line. Transforms are baked into the mesh
//! vertices at parse time, so a parsed asset is always in its own local frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ClassLabel;
use crate::geometry::{Aabb, Quat, Vec3};
use crate::spectral::SpectralCurve;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssetError {
    #[error("line {line}, column {col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}, column {col}: unknown material reference {name:?}")]
    UnknownMaterial { line: usize, col: usize, name: String },
    #[error("line {line}, column {col}: index out of range: {index} with {count} vertices")]
    IndexOutOfRange {
        line: usize,
        col: usize,
        index: i64,
        count: usize,
    },
    #[error("line {line}, column {col}: degenerate triangle {triangle} (repeated vertex index)")]
    DegenerateTriangle { line: usize, col: usize, triangle: usize },
    #[error("line {line}, column {col}: {msg}")]
    Invalid { line: usize, col: usize, msg: String },
    #[error("input is not valid UTF-8 (byte {0})")]
    NotUtf8(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterialKind {
    Diffuse,
    Retroreflective {
        /// Probability of scattering into the retro lobe.
        retro_fraction: f64,
        /// Lobe width (standard deviation per tangent axis), degrees.
        retro_sigma_deg: f64,
    },
    Emissive,
}

/// Surface description. `spectrum` is a reflectance for diffuse and
/// retroreflective kinds and an emitted radiance (W·m⁻²·sr⁻¹·nm⁻¹) for
/// emissive ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub kind: MaterialKind,
    pub spectrum: SpectralCurve,
}

impl MaterialSpec {
    pub fn diffuse(reflectance: impl Into<SpectralCurve>) -> Self {
        Self {
            kind: MaterialKind::Diffuse,
            spectrum: reflectance.into(),
        }
    }

    pub fn emissive(radiance: impl Into<SpectralCurve>) -> Self {
        Self {
            kind: MaterialKind::Emissive,
            spectrum: radiance.into(),
        }
    }

    pub fn retroreflective(reflectance: impl Into<SpectralCurve>, fraction: f64, sigma_deg: f64) -> Self {
        Self {
            kind: MaterialKind::Retroreflective {
                retro_fraction: fraction,
                retro_sigma_deg: sigma_deg,
            },
            spectrum: reflectance.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.spectrum.validate().map_err(|e| e.to_string())?;
        match self.kind {
            MaterialKind::Emissive => {}
            MaterialKind::Diffuse => {
                if self.spectrum.max_value() > 1.0 {
                    return Err("reflectance must lie in [0, 1]".into());
                }
            }
            MaterialKind::Retroreflective {
                retro_fraction,
                retro_sigma_deg,
            } => {
                if self.spectrum.max_value() > 1.0 {
                    return Err("reflectance must lie in [0, 1]".into());
                }
                if !(0.0..=1.0).contains(&retro_fraction) {
                    return Err(format!("retro_fraction {retro_fraction} outside [0, 1]"));
                }
                if !(retro_sigma_deg.is_finite() && retro_sigma_deg > 0.0) {
                    return Err(format!("retro_sigma {retro_sigma_deg} must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshPart {
    pub mesh: TriangleMesh,
    pub material: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetDescription {
    pub asset_id: String,
    pub class_label: ClassLabel,
    pub meshes: Vec<MeshPart>,
    pub materials: BTreeMap<String, MaterialSpec>,
    /// Metres, local frame.
    pub bounds: Aabb,
    pub up_axis: Vec3,
    pub forward_axis: Vec3,
}

impl AssetDescription {
    pub fn triangle_count(&self) -> usize {
        self.meshes.iter().map(|m| m.mesh.triangles.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Open,
    Close,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, AssetError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let bump = |line: &mut usize, col: &mut usize, c: char| {
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        if c.is_whitespace() {
            chars.next();
            bump(&mut line, &mut col, c);
        } else if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
        } else if c == '[' || c == ']' {
            chars.next();
            col += 1;
            out.push(Token {
                tok: if c == '[' { Tok::Open } else { Tok::Close },
                line: tl,
                col: tc,
            });
        } else if c == '"' {
            chars.next();
            col += 1;
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => {
                        col += 1;
                        break;
                    }
                    Some('\n') | None => {
                        return Err(AssetError::Syntax {
                            line: tl,
                            col: tc,
                            msg: "unterminated string".into(),
                        })
                    }
                    Some(ch) => {
                        col += 1;
                        s.push(ch);
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
        } else if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_ascii_alphanumeric() || matches!(ch, '.' | '-' | '+') {
                    s.push(ch);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let v: f64 = s.parse().map_err(|_| AssetError::Syntax {
                line: tl,
                col: tc,
                msg: format!("malformed number {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(AssetError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("non-finite number {s:?}"),
                });
            }
            out.push(Token {
                tok: Tok::Num(v),
                line: tl,
                col: tc,
            });
        } else if c.is_ascii_alphabetic() {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_ascii_alphanumeric() || ch == '_' {
                    s.push(ch);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                col: tc,
            });
        } else {
            return Err(AssetError::Syntax {
                line: tl,
                col: tc,
                msg: format!("unexpected character {c:?}"),
            });
        }
    }
    Ok(out)
}

type Mat4 = [[f64; 4]; 4];

const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn transform_point(m: &Mat4, p: Vec3) -> Vec3 {
    let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3];
    let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3];
    let z = m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3];
    let w = m[3][0] * p.x + m[3][1] * p.y + m[3][2] * p.z + m[3][3];
    if w == 1.0 {
        Vec3::new(x, y, z)
    } else {
        Vec3::new(x / w, y / w, z / w)
    }
}

/// Normals go through the inverse transpose of the linear part; the cofactor
/// matrix is proportional to it, which is enough since we renormalise.
fn transform_normal(m: &Mat4, n: Vec3) -> Vec3 {
    let a = |i: usize, j: usize| m[i][j];
    let cof = [
        [
            a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1),
            a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2),
            a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0),
        ],
        [
            a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2),
            a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0),
            a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1),
        ],
        [
            a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1),
            a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2),
            a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
        ],
    ];
    let det = a(0, 0) * cof[0][0] + a(0, 1) * cof[0][1] + a(0, 2) * cof[0][2];
    let v = Vec3::new(
        cof[0][0] * n.x + cof[0][1] * n.y + cof[0][2] * n.z,
        cof[1][0] * n.x + cof[1][1] * n.y + cof[1][2] * n.z,
        cof[2][0] * n.x + cof[2][1] * n.y + cof[2][2] * n.z,
    );
    let v = if det < 0.0 { -v } else { v };
    v.normalize()
}

#[derive(Debug)]
enum ParamValues {
    Nums(Vec<f64>),
    Strs(Vec<String>),
}

#[derive(Debug)]
struct Param {
    ty: String,
    name: String,
    values: ParamValues,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eof_err(&self, what: &str) -> AssetError {
        AssetError::Syntax {
            line: self.eof_line,
            col: 1,
            msg: format!("unexpected end of input, expected {what}"),
        }
    }

    fn expect_str(&mut self, what: &str) -> Result<(String, usize, usize), AssetError> {
        match self.next() {
            Some(Token {
                tok: Tok::Str(s),
                line,
                col,
            }) => Ok((s, line, col)),
            Some(t) => Err(AssetError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected {what} (quoted string)"),
            }),
            None => Err(self.eof_err(what)),
        }
    }

    fn expect_num(&mut self, what: &str) -> Result<f64, AssetError> {
        match self.next() {
            Some(Token { tok: Tok::Num(v), .. }) => Ok(v),
            Some(t) => Err(AssetError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected {what} (number)"),
            }),
            None => Err(self.eof_err(what)),
        }
    }

    fn expect_nums(&mut self, n: usize, what: &str) -> Result<Vec<f64>, AssetError> {
        (0..n).map(|_| self.expect_num(what)).collect()
    }

    fn bracketed_nums(&mut self, n: usize, what: &str) -> Result<Vec<f64>, AssetError> {
        let (line, col) = match self.next() {
            Some(Token { tok: Tok::Open, line, col }) => (line, col),
            Some(t) => {
                return Err(AssetError::Syntax {
                    line: t.line,
                    col: t.col,
                    msg: format!("expected '[' starting {what}"),
                })
            }
            None => return Err(self.eof_err(what)),
        };
        let mut v = Vec::new();
        loop {
            match self.next() {
                Some(Token { tok: Tok::Num(x), .. }) => v.push(x),
                Some(Token { tok: Tok::Close, .. }) => break,
                Some(t) => {
                    return Err(AssetError::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: format!("expected number or ']' in {what}"),
                    })
                }
                None => return Err(self.eof_err("']'")),
            }
        }
        if v.len() != n {
            return Err(AssetError::Invalid {
                line,
                col,
                msg: format!("{what} needs {n} numbers, got {}", v.len()),
            });
        }
        Ok(v)
    }

    fn params(&mut self) -> Result<Vec<Param>, AssetError> {
        let mut out = Vec::new();
        while let Some(Token { tok: Tok::Str(_), .. }) = self.peek() {
            let (decl, line, col) = self.expect_str("parameter declaration")?;
            let mut parts = decl.split_whitespace();
            let (ty, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(n), None) => (t.to_string(), n.to_string()),
                _ => {
                    return Err(AssetError::Syntax {
                        line,
                        col,
                        msg: format!("parameter declaration {decl:?} must be \"<type> <name>\""),
                    })
                }
            };
            let values = match self.next() {
                Some(Token { tok: Tok::Num(v), .. }) => ParamValues::Nums(vec![v]),
                Some(Token { tok: Tok::Str(s), .. }) => ParamValues::Strs(vec![s]),
                Some(Token { tok: Tok::Open, .. }) => {
                    let mut nums = Vec::new();
                    let mut strs = Vec::new();
                    loop {
                        match self.next() {
                            Some(Token { tok: Tok::Num(v), .. }) => nums.push(v),
                            Some(Token { tok: Tok::Str(s), .. }) => strs.push(s),
                            Some(Token { tok: Tok::Close, .. }) => break,
                            Some(t) => {
                                return Err(AssetError::Syntax {
                                    line: t.line,
                                    col: t.col,
                                    msg: "expected value or ']' in parameter list".into(),
                                })
                            }
                            None => return Err(self.eof_err("']'")),
                        }
                    }
                    if !nums.is_empty() && !strs.is_empty() {
                        return Err(AssetError::Syntax {
                            line,
                            col,
                            msg: format!("parameter {name:?} mixes numbers and strings"),
                        });
                    }
                    if strs.is_empty() {
                        ParamValues::Nums(nums)
                    } else {
                        ParamValues::Strs(strs)
                    }
                }
                Some(t) => {
                    return Err(AssetError::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: format!("expected value for parameter {name:?}"),
                    })
                }
                None => return Err(self.eof_err("parameter value")),
            };
            out.push(Param {
                ty,
                name,
                values,
                line,
                col,
            });
        }
        Ok(out)
    }
}

fn invalid(p: &Param, msg: impl Into<String>) -> AssetError {
    AssetError::Invalid {
        line: p.line,
        col: p.col,
        msg: msg.into(),
    }
}

fn single_num(p: &Param) -> Result<f64, AssetError> {
    match &p.values {
        ParamValues::Nums(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(invalid(p, format!("parameter {:?} expects one number", p.name))),
    }
}

fn spectral_param(p: &Param) -> Result<SpectralCurve, AssetError> {
    let curve = match (p.ty.as_str(), &p.values) {
        ("float", _) => SpectralCurve::Constant(single_num(p)?),
        ("spectrum", ParamValues::Nums(v)) if !v.is_empty() && v.len() % 2 == 0 => SpectralCurve::Sampled {
            wavelengths_nm: v.iter().step_by(2).copied().collect(),
            values: v.iter().skip(1).step_by(2).copied().collect(),
        },
        _ => {
            return Err(invalid(
                p,
                format!(
                    "parameter {:?} must be \"float\" or \"spectrum\" with wavelength/value pairs",
                    p.name
                ),
            ))
        }
    };
    curve.validate().map_err(|e| invalid(p, e.to_string()))?;
    Ok(curve)
}

fn parse_material(
    name: &str,
    params: &[Param],
    line: usize,
    col: usize,
) -> Result<MaterialSpec, AssetError> {
    let mut kind_name = None;
    let mut spectrum = None;
    let mut fraction = None;
    let mut sigma = None;
    for p in params {
        match (p.ty.as_str(), p.name.as_str()) {
            ("string", "type") => match &p.values {
                ParamValues::Strs(s) if s.len() == 1 => kind_name = Some(s[0].clone()),
                _ => return Err(invalid(p, "material type must be a single string")),
            },
            (_, "reflectance") | (_, "L") => spectrum = Some((p.name.clone(), spectral_param(p)?)),
            ("float", "retro_fraction") => fraction = Some(single_num(p)?),
            ("float", "retro_sigma") => sigma = Some(single_num(p)?),
            _ => {
                return Err(invalid(
                    p,
                    format!("unrecognized material parameter \"{} {}\"", p.ty, p.name),
                ))
            }
        }
    }
    let err = |msg: String| AssetError::Invalid { line, col, msg };
    let kind_name = kind_name.ok_or_else(|| err(format!("material {name:?} lacks \"string type\"")))?;
    let (kind, want) = match kind_name.as_str() {
        "diffuse" => (MaterialKind::Diffuse, "reflectance"),
        "retroreflective" => (
            MaterialKind::Retroreflective {
                retro_fraction: fraction
                    .ok_or_else(|| err(format!("material {name:?} lacks \"float retro_fraction\"")))?,
                retro_sigma_deg: sigma
                    .ok_or_else(|| err(format!("material {name:?} lacks \"float retro_sigma\"")))?,
            },
            "reflectance",
        ),
        "emissive" => (MaterialKind::Emissive, "L"),
        other => return Err(err(format!("unknown material type {other:?}"))),
    };
    if !matches!(kind, MaterialKind::Retroreflective { .. }) && (fraction.is_some() || sigma.is_some()) {
        return Err(err(format!("retro parameters only apply to retroreflective materials ({name:?})")));
    }
    let spectrum = match spectrum {
        Some((pname, s)) if pname == want => s,
        Some((pname, _)) => return Err(err(format!("{kind_name} material takes {want:?}, not {pname:?}"))),
        None if want == "reflectance" => SpectralCurve::Constant(0.5),
        None => return Err(err(format!("emissive material {name:?} lacks \"L\""))),
    };
    let m = MaterialSpec { kind, spectrum };
    m.validate().map_err(|msg| err(format!("material {name:?}: {msg}")))?;
    Ok(m)
}

fn parse_shape(ctm: &Mat4, params: &[Param], line: usize, col: usize) -> Result<TriangleMesh, AssetError> {
    let mut indices: Option<(&Param, &Vec<f64>)> = None;
    let mut points = None;
    let mut normals = None;
    for p in params {
        let nums = match &p.values {
            ParamValues::Nums(v) => v,
            ParamValues::Strs(_) => return Err(invalid(p, format!("parameter {:?} expects numbers", p.name))),
        };
        match (p.ty.as_str(), p.name.as_str()) {
            ("integer", "indices") => indices = Some((p, nums)),
            ("point", "P") | ("point3", "P") => points = Some((p, nums)),
            ("normal", "N") | ("normal3", "N") => normals = Some((p, nums)),
            _ => {
                return Err(invalid(
                    p,
                    format!("unrecognized trianglemesh parameter \"{} {}\"", p.ty, p.name),
                ))
            }
        }
    }
    let err = |msg: &str| AssetError::Invalid {
        line,
        col,
        msg: msg.into(),
    };
    let (pp, pts) = points.ok_or_else(|| err("trianglemesh lacks \"point P\""))?;
    let (ip, idx) = indices.ok_or_else(|| err("trianglemesh lacks \"integer indices\""))?;
    if pts.is_empty() || pts.len() % 3 != 0 {
        return Err(invalid(pp, "\"point P\" needs a non-empty multiple of 3 values"));
    }
    if idx.is_empty() || idx.len() % 3 != 0 {
        return Err(invalid(ip, "\"integer indices\" needs a non-empty multiple of 3 values"));
    }
    let count = pts.len() / 3;
    let mut tris = Vec::with_capacity(idx.len() / 3);
    for (t, chunk) in idx.chunks(3).enumerate() {
        let mut tri = [0u32; 3];
        for (k, &v) in chunk.iter().enumerate() {
            if v.fract() != 0.0 {
                return Err(invalid(ip, format!("index {v} is not an integer")));
            }
            if v < 0.0 || v >= count as f64 {
                return Err(AssetError::IndexOutOfRange {
                    line: ip.line,
                    col: ip.col,
                    index: v as i64,
                    count,
                });
            }
            tri[k] = v as u32;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(AssetError::DegenerateTriangle {
                line: ip.line,
                col: ip.col,
                triangle: t,
            });
        }
        tris.push(tri);
    }
    let vertices = pts
        .chunks(3)
        .map(|c| transform_point(ctm, Vec3::new(c[0], c[1], c[2])))
        .collect();
    let normals = match normals {
        None => None,
        Some((np, n)) => {
            if n.len() != pts.len() {
                return Err(invalid(np, "\"normal N\" must have one normal per vertex"));
            }
            let mut out = Vec::with_capacity(count);
            for c in n.chunks(3) {
                let v = Vec3::new(c[0], c[1], c[2]);
                if v.length() == 0.0 {
                    return Err(invalid(np, "zero-length normal"));
                }
                out.push(transform_normal(ctm, v));
            }
            Some(out)
        }
    };
    Ok(TriangleMesh {
        vertices,
        triangles: tris,
        normals,
    })
}

/// Parses raw bytes; invalid UTF-8 is reported rather than replaced.
pub fn parse_asset_bytes(bytes: &[u8]) -> Result<AssetDescription, AssetError> {
    let text = std::str::from_utf8(bytes).map_err(|e| AssetError::NotUtf8(e.valid_up_to()))?;
    parse_asset(text)
}

pub fn parse_asset(text: &str) -> Result<AssetDescription, AssetError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        eof_line: text.lines().count().max(1),
    };
    let mut header: Option<(String, ClassLabel)> = None;
    let mut axes = (Vec3::Z, Vec3::X);
    let mut materials: BTreeMap<String, MaterialSpec> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut ctm = IDENTITY;
    let mut stack: Vec<(Mat4, Option<String>)> = Vec::new();
    let mut meshes = Vec::new();

    while let Some(t) = p.next() {
        let (line, col) = (t.line, t.col);
        let word = match t.tok {
            Tok::Ident(w) => w,
            _ => {
                return Err(AssetError::Syntax {
                    line,
                    col,
                    msg: "expected a directive".into(),
                })
            }
        };
        match word.as_str() {
            "Asset" => {
                if header.is_some() {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: "duplicate Asset header".into(),
                    });
                }
                let (id, ..) = p.expect_str("asset id")?;
                let (class, cl, cc) = p.expect_str("class label")?;
                let class = class.parse::<ClassLabel>().map_err(|msg| AssetError::Invalid {
                    line: cl,
                    col: cc,
                    msg,
                })?;
                if id.is_empty() {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: "empty asset id".into(),
                    });
                }
                header = Some((id, class));
            }
            "Axes" => {
                let up = p.bracketed_nums(3, "up axis")?;
                let fwd = p.bracketed_nums(3, "forward axis")?;
                let (up, fwd) = (Vec3::new(up[0], up[1], up[2]), Vec3::new(fwd[0], fwd[1], fwd[2]));
                if up.length() == 0.0 || fwd.length() == 0.0 || up.cross(fwd).length() == 0.0 {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: "axes must be non-zero and not parallel".into(),
                    });
                }
                axes = (up, fwd);
            }
            "MakeNamedMaterial" => {
                let (name, ..) = p.expect_str("material name")?;
                let params = p.params()?;
                if materials.contains_key(&name) {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: format!("material {name:?} defined twice"),
                    });
                }
                let m = parse_material(&name, &params, line, col)?;
                materials.insert(name, m);
            }
            "NamedMaterial" => {
                let (name, nl, nc) = p.expect_str("material name")?;
                if !materials.contains_key(&name) {
                    return Err(AssetError::UnknownMaterial {
                        line: nl,
                        col: nc,
                        name,
                    });
                }
                current = Some(name);
            }
            "AttributeBegin" => stack.push((ctm, current.clone())),
            "AttributeEnd" => {
                let (m, c) = stack.pop().ok_or(AssetError::Syntax {
                    line,
                    col,
                    msg: "AttributeEnd without AttributeBegin".into(),
                })?;
                ctm = m;
                current = c;
            }
            "Identity" => ctm = IDENTITY,
            "Translate" => {
                let v = p.expect_nums(3, "translation component")?;
                let mut t = IDENTITY;
                t[0][3] = v[0];
                t[1][3] = v[1];
                t[2][3] = v[2];
                ctm = mat_mul(&ctm, &t);
            }
            "Scale" => {
                let v = p.expect_nums(3, "scale component")?;
                if v.contains(&0.0) {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: "zero scale".into(),
                    });
                }
                let mut s = IDENTITY;
                s[0][0] = v[0];
                s[1][1] = v[1];
                s[2][2] = v[2];
                ctm = mat_mul(&ctm, &s);
            }
            "Rotate" => {
                let v = p.expect_nums(4, "rotation angle/axis")?;
                let axis = Vec3::new(v[1], v[2], v[3]);
                if axis.length() == 0.0 {
                    return Err(AssetError::Invalid {
                        line,
                        col,
                        msg: "rotation axis is zero".into(),
                    });
                }
                let r = Quat::from_axis_angle(axis, v[0].to_radians()).to_matrix();
                let mut m = IDENTITY;
                for i in 0..3 {
                    m[i][..3].copy_from_slice(&r[i]);
                }
                ctm = mat_mul(&ctm, &m);
            }
            "Transform" | "ConcatTransform" => {
                let v = p.bracketed_nums(16, "4x4 matrix")?;
                let mut m = [[0.0; 4]; 4];
                for (k, x) in v.iter().enumerate() {
                    // column-major input
                    m[k % 4][k / 4] = *x;
                }
                ctm = if word == "Transform" { m } else { mat_mul(&ctm, &m) };
            }
            "Shape" => {
                let (ty, tl, tc) = p.expect_str("shape type")?;
                if ty != "trianglemesh" {
                    return Err(AssetError::Invalid {
                        line: tl,
                        col: tc,
                        msg: format!("unsupported shape type {ty:?}"),
                    });
                }
                let params = p.params()?;
                let material = current.clone().ok_or(AssetError::Invalid {
                    line,
                    col,
                    msg: "Shape has no material; declare NamedMaterial first".into(),
                })?;
                let mesh = parse_shape(&ctm, &params, line, col)?;
                meshes.push(MeshPart { mesh, material });
            }
            other => {
                return Err(AssetError::Syntax {
                    line,
                    col,
                    msg: format!("unrecognized directive {other:?}"),
                })
            }
        }
    }
    if !stack.is_empty() {
        return Err(AssetError::Syntax {
            line: p.eof_line,
            col: 1,
            msg: "unclosed AttributeBegin".into(),
        });
    }
    let (asset_id, class_label) = header.ok_or(AssetError::Invalid {
        line: 1,
        col: 1,
        msg: "missing Asset header".into(),
    })?;
    if meshes.is_empty() {
        return Err(AssetError::Invalid {
            line: p.eof_line,
            col: 1,
            msg: "asset has no shapes".into(),
        });
    }
    let bounds = meshes
        .iter()
        .fold(Aabb::EMPTY, |b, m: &MeshPart| b.union(m.mesh.bounds()));
    Ok(AssetDescription {
        asset_id,
        class_label,
        meshes,
        materials,
        bounds,
        up_axis: axes.0,
        forward_axis: axes.1,
    })
}

fn write_curve(out: &mut String, name: &str, c: &SpectralCurve) {
    match c {
        SpectralCurve::Constant(v) => {
            let _ = write!(out, " \"float {name}\" {v}");
        }
        SpectralCurve::Sampled {
            wavelengths_nm,
            values,
        } => {
            let _ = write!(out, " \"spectrum {name}\" [");
            for (l, v) in wavelengths_nm.iter().zip(values) {
                let _ = write!(out, " {l} {v}");
            }
            out.push_str(" ]");
        }
    }
}

fn write_vec3s(out: &mut String, decl: &str, vs: &[Vec3]) {
    let _ = write!(out, "\n    \"{decl}\" [");
    for v in vs {
        let _ = write!(out, " {} {} {}", v.x, v.y, v.z);
    }
    out.push_str(" ]");
}

/// Serialises an asset with its transforms baked in. Reparsing the output
/// yields a structurally identical description.
pub fn write_asset(asset: &AssetDescription) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Asset \"{}\" \"{}\"", asset.asset_id, asset.class_label);
    let (u, f) = (asset.up_axis, asset.forward_axis);
    let _ = writeln!(out, "Axes [ {} {} {} ] [ {} {} {} ]", u.x, u.y, u.z, f.x, f.y, f.z);
    for (name, m) in &asset.materials {
        let _ = write!(out, "MakeNamedMaterial \"{name}\"");
        match &m.kind {
            MaterialKind::Diffuse => {
                out.push_str(" \"string type\" \"diffuse\"");
                write_curve(&mut out, "reflectance", &m.spectrum);
            }
            MaterialKind::Retroreflective {
                retro_fraction,
                retro_sigma_deg,
            } => {
                out.push_str(" \"string type\" \"retroreflective\"");
                write_curve(&mut out, "reflectance", &m.spectrum);
                let _ = write!(
                    out,
                    " \"float retro_fraction\" {retro_fraction} \"float retro_sigma\" {retro_sigma_deg}"
                );
            }
            MaterialKind::Emissive => {
                out.push_str(" \"string type\" \"emissive\"");
                write_curve(&mut out, "L", &m.spectrum);
            }
        }
        out.push('\n');
    }
    for part in &asset.meshes {
        out.push_str("AttributeBegin\n");
        let _ = writeln!(out, "  NamedMaterial \"{}\"", part.material);
        out.push_str("  Shape \"trianglemesh\"");
        out.push_str("\n    \"integer indices\" [");
        for t in &part.mesh.triangles {
            let _ = write!(out, " {} {} {}", t[0], t[1], t[2]);
        }
        out.push_str(" ]");
        write_vec3s(&mut out, "point3 P", &part.mesh.vertices);
        if let Some(n) = &part.mesh.normals {
            write_vec3s(&mut out, "normal N", n);
        }
        out.push_str("\nAttributeEnd\n");
    }
    out
}
