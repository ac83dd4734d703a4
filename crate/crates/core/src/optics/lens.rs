//! Lens prescriptions and their text format.
//!
//! The lens frame is in millimetres with the film at z = 0 and the optical
//! axis along +z. Surfaces are listed from the film side (rear) to the scene
//! side (front); the rear vertex sits at `film_distance` and each surface's
//! `thickness` is the axial gap to the next one. A positive curvature puts
//! the centre of curvature on the +z side of the vertex.
//!
//! ```text
//! # thin-ish biconvex, f ≈ 100 mm
//! focal_length = 100
//! film_distance = 99.3
//! spherical radius=100 thickness=2 semi_aperture=10 n=1.5
//! spherical radius=-100 thickness=0 semi_aperture=10 n=air
//! stop semi_aperture=8
//! ```
//!
//! Surface lines start with `spherical`, `aspheric`, `biconic` or `stop`,
//! followed by `key=value` fields. The medium given by `n=` (a constant or
//! `air`) or `cauchy=A,B` (B in nm²) fills the space after the surface; a
//! stop keeps the medium in front of it.

use thiserror::Error;

use crate::spectral::{Spectrum, WavelengthGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LensError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("lens has no aperture stop")]
    NoStop,
    #[error("lens has two aperture stops (lines {first} and {second})")]
    DuplicateStop { first: usize, second: usize },
    #[error("line {line}: sag is not real within the semi-aperture ({detail})")]
    NonRealSag { line: usize, detail: String },
    #[error("line {line}: refractive index must be >= 1 on every band")]
    IndexBelowOne { line: usize },
    #[error("film_distance is missing or not positive")]
    FilmDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceShape {
    /// Sphere or plane (c = 0).
    Spherical { c: f64 },
    /// Conic plus even polynomial terms.
    Aspheric { c: f64, k: f64, a4: f64, a6: f64, a8: f64 },
    Biconic { cx: f64, cy: f64, kx: f64, ky: f64 },
    ApertureStop,
}

/// Index of refraction model; realized on a grid by [`IndexModel::spectrum`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexModel {
    Constant(f64),
    /// n(λ) = A + B/λ², λ in nm.
    Cauchy { a: f64, b: f64 },
}

impl IndexModel {
    pub fn at(&self, lambda_nm: f64) -> f64 {
        match *self {
            IndexModel::Constant(n) => n,
            IndexModel::Cauchy { a, b } => a + b / (lambda_nm * lambda_nm),
        }
    }

    pub fn spectrum(&self, grid: &WavelengthGrid) -> Spectrum {
        Spectrum::new(*grid, grid.centers().iter().map(|&l| self.at(l)).collect())
            .expect("index samples are finite")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensSurface {
    pub shape: SurfaceShape,
    pub thickness: f64,
    pub semi_aperture: f64,
    /// Medium after the surface; `None` for a stop.
    pub medium: Option<IndexModel>,
    /// `medium` realized on the session grid.
    pub index: Option<Spectrum>,
    /// Source line, for diagnostics.
    pub line: usize,
}

impl LensSurface {
    pub fn is_stop(&self) -> bool {
        matches!(self.shape, SurfaceShape::ApertureStop)
    }

    /// Axial sag z(x, y) relative to the vertex, or `None` outside the
    /// real domain of the surface.
    pub fn sag(&self, x: f64, y: f64) -> Option<f64> {
        let r2 = x * x + y * y;
        match self.shape {
            SurfaceShape::ApertureStop => Some(0.0),
            SurfaceShape::Spherical { c } => conic_sag(c, 0.0, r2),
            SurfaceShape::Aspheric { c, k, a4, a6, a8 } => {
                conic_sag(c, k, r2).map(|z| z + r2 * r2 * (a4 + r2 * (a6 + r2 * a8)))
            }
            SurfaceShape::Biconic { cx, cy, kx, ky } => {
                let arg = 1.0 - (1.0 + kx) * cx * cx * x * x - (1.0 + ky) * cy * cy * y * y;
                (arg >= 0.0).then(|| (cx * x * x + cy * y * y) / (1.0 + arg.sqrt()))
            }
        }
    }

    /// Partial derivatives of the sag.
    pub fn sag_gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let r2 = x * x + y * y;
        let conic_d = |c: f64, k: f64| -> Option<f64> {
            // d(sag)/d(r²) for the conic term: c / (2·sqrt(1 − (1+k)c²r²)).
            let arg = 1.0 - (1.0 + k) * c * c * r2;
            (arg > 0.0).then(|| c / (2.0 * arg.sqrt()))
        };
        match self.shape {
            SurfaceShape::ApertureStop => Some((0.0, 0.0)),
            SurfaceShape::Spherical { c } => conic_d(c, 0.0).map(|g| (2.0 * x * g, 2.0 * y * g)),
            SurfaceShape::Aspheric { c, k, a4, a6, a8 } => conic_d(c, k).map(|g| {
                let g = g + 2.0 * a4 * r2 + 3.0 * a6 * r2 * r2 + 4.0 * a8 * r2 * r2 * r2;
                (2.0 * x * g, 2.0 * y * g)
            }),
            SurfaceShape::Biconic { cx, cy, kx, ky } => {
                let arg = 1.0 - (1.0 + kx) * cx * cx * x * x - (1.0 + ky) * cy * cy * y * y;
                if arg <= 0.0 {
                    return None;
                }
                let s = arg.sqrt();
                let num = cx * x * x + cy * y * y;
                let den = 1.0 + s;
                let d = |ci: f64, ki: f64, u: f64| {
                    let dnum = 2.0 * ci * u;
                    let ds = -(1.0 + ki) * ci * ci * u / s;
                    (dnum * den - num * ds) / (den * den)
                };
                Some((d(cx, kx, x), d(cy, ky, y)))
            }
        }
    }

    /// Curvature used to seed intersection searches and for paraxial work
    /// (x meridian for biconics).
    pub fn base_curvature(&self) -> f64 {
        match self.shape {
            SurfaceShape::Spherical { c } | SurfaceShape::Aspheric { c, .. } => c,
            SurfaceShape::Biconic { cx, .. } => cx,
            SurfaceShape::ApertureStop => 0.0,
        }
    }
}

fn conic_sag(c: f64, k: f64, r2: f64) -> Option<f64> {
    let arg = 1.0 - (1.0 + k) * c * c * r2;
    (arg >= 0.0).then(|| c * r2 / (1.0 + arg.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensPrescription {
    pub surfaces: Vec<LensSurface>,
    /// Film to rear vertex, mm.
    pub film_distance: f64,
    /// Informational, mm.
    pub focal_length: Option<f64>,
    stop: usize,
}

impl LensPrescription {
    pub fn stop_index(&self) -> usize {
        self.stop
    }

    pub fn stop(&self) -> &LensSurface {
        &self.surfaces[self.stop]
    }

    pub fn rear(&self) -> &LensSurface {
        &self.surfaces[0]
    }

    /// Axial position of every surface vertex.
    pub fn vertex_z(&self) -> Vec<f64> {
        let mut z = self.film_distance;
        self.surfaces
            .iter()
            .map(|s| {
                let here = z;
                z += s.thickness;
                here
            })
            .collect()
    }

    /// Index in front of the film side of surface `i` and behind it, for a
    /// ray travelling toward the scene.
    pub fn media(&self, i: usize, lambda_nm: f64) -> (f64, f64) {
        let before = self.surfaces[..i]
            .iter()
            .rev()
            .find_map(|s| s.medium)
            .map_or(1.0, |m| m.at(lambda_nm));
        let after = self.surfaces[i].medium.map_or(before, |m| m.at(lambda_nm));
        (before, after)
    }

    /// A lone stop of radius `radius_mm` at `film_distance` from the film.
    pub fn pinhole(film_distance: f64, radius_mm: f64) -> Self {
        Self {
            surfaces: vec![LensSurface {
                shape: SurfaceShape::ApertureStop,
                thickness: 0.0,
                semi_aperture: radius_mm,
                medium: None,
                index: None,
                line: 0,
            }],
            film_distance,
            focal_length: Some(film_distance),
            stop: 0,
        }
    }
}

/// Prescriptions shipped with the crate, by name.
pub const BUNDLED_LENSES: [(&str, &str); 3] = [
    ("pinhole", include_str!("../../data/lenses/pinhole.lens")),
    ("thin_biconvex", include_str!("../../data/lenses/thin_biconvex.lens")),
    ("wide_angle_112", include_str!("../../data/lenses/wide_angle_112.lens")),
];

pub fn bundled_lens(name: &str) -> Option<&'static str> {
    BUNDLED_LENSES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn parse_number(line: usize, key: &str, v: &str) -> Result<f64, LensError> {
    let x = match v {
        "inf" | "infinity" => f64::INFINITY,
        _ => v.parse::<f64>().map_err(|_| LensError::Malformed {
            line,
            msg: format!("{key}: cannot parse {v:?} as a number"),
        })?,
    };
    if x.is_nan() {
        return Err(LensError::Malformed {
            line,
            msg: format!("{key} is NaN"),
        });
    }
    Ok(x)
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
    used: Vec<bool>,
}

impl<'a> Fields<'a> {
    fn get(&mut self, key: &str) -> Option<&'a str> {
        let i = self.pairs.iter().position(|(k, _)| *k == key)?;
        self.used[i] = true;
        Some(self.pairs[i].1)
    }

    fn num(&mut self, key: &str) -> Result<Option<f64>, LensError> {
        self.get(key).map(|v| parse_number(self.line, key, v)).transpose()
    }

    fn num_or(&mut self, key: &str, default: f64) -> Result<f64, LensError> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn finite(&mut self, key: &str, default: f64) -> Result<f64, LensError> {
        let v = self.num_or(key, default)?;
        if !v.is_finite() {
            return Err(self.err(format!("{key} must be finite")));
        }
        Ok(v)
    }

    /// Curvature from `ckey` or the reciprocal of `rkey`.
    fn curvature(&mut self, ckey: &str, rkey: &str) -> Result<f64, LensError> {
        match (self.num(ckey)?, self.num(rkey)?) {
            (Some(_), Some(_)) => Err(self.err(format!("give either {ckey} or {rkey}, not both"))),
            (Some(c), None) if c.is_finite() => Ok(c),
            (None, Some(r)) if r != 0.0 => Ok(if r.is_infinite() { 0.0 } else { 1.0 / r }),
            (None, None) => Err(self.err(format!("missing {ckey} (or {rkey})"))),
            _ => Err(self.err(format!("invalid {ckey}/{rkey}"))),
        }
    }

    fn err(&self, msg: String) -> LensError {
        LensError::Malformed { line: self.line, msg }
    }

    fn finish(&self) -> Result<(), LensError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(self.err(format!("unknown field {:?}", self.pairs[i].0))),
            None => Ok(()),
        }
    }
}

/// Parses a lens file, realizing media on `grid`.
pub fn parse_lens(text: &str, grid: &WavelengthGrid) -> Result<LensPrescription, LensError> {
    let mut surfaces = Vec::new();
    let mut film_distance = None;
    let mut focal_length = None;
    let mut stop_lines: Vec<(usize, usize)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some((k, v)) = content.split_once('=') {
            let (k, v) = (k.trim(), v.trim());
            if !k.contains(char::is_whitespace) && !v.contains(char::is_whitespace) {
                let x = parse_number(line, k, v)?;
                match k {
                    "film_distance" => film_distance = Some(x),
                    "focal_length" => focal_length = Some(x),
                    _ => {
                        return Err(LensError::Malformed {
                            line,
                            msg: format!("unknown setting {k:?}"),
                        })
                    }
                }
                continue;
            }
        }
        let mut tokens = content.split_whitespace();
        let kind = tokens.next().unwrap_or_default();
        let mut pairs = Vec::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| LensError::Malformed {
                line,
                msg: format!("expected key=value, found {t:?}"),
            })?;
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(LensError::Malformed {
                    line,
                    msg: format!("field {k:?} given twice"),
                });
            }
            pairs.push((k, v));
        }
        let mut f = Fields {
            line,
            used: vec![false; pairs.len()],
            pairs,
        };
        let shape = match kind {
            "spherical" => SurfaceShape::Spherical {
                c: f.curvature("curvature", "radius")?,
            },
            "aspheric" => SurfaceShape::Aspheric {
                c: f.curvature("curvature", "radius")?,
                k: f.finite("conic", 0.0)?,
                a4: f.finite("a4", 0.0)?,
                a6: f.finite("a6", 0.0)?,
                a8: f.finite("a8", 0.0)?,
            },
            "biconic" => SurfaceShape::Biconic {
                cx: f.curvature("cx", "rx")?,
                cy: f.curvature("cy", "ry")?,
                kx: f.finite("kx", 0.0)?,
                ky: f.finite("ky", 0.0)?,
            },
            "stop" => SurfaceShape::ApertureStop,
            other => {
                return Err(LensError::Malformed {
                    line,
                    msg: format!("unknown surface kind {other:?}"),
                })
            }
        };
        let thickness = f.finite("thickness", 0.0)?;
        if thickness < 0.0 {
            return Err(f.err("thickness must be >= 0".into()));
        }
        let semi_aperture = f
            .num("semi_aperture")?
            .ok_or_else(|| f.err("missing semi_aperture".into()))?;
        if !(semi_aperture.is_finite() && semi_aperture > 0.0) {
            return Err(f.err("semi_aperture must be > 0".into()));
        }
        let medium = if matches!(shape, SurfaceShape::ApertureStop) {
            None
        } else {
            Some(match (f.get("n"), f.get("cauchy")) {
                (Some(_), Some(_)) => return Err(f.err("give either n or cauchy, not both".into())),
                (Some("air"), None) => IndexModel::Constant(1.0),
                (Some(v), None) => IndexModel::Constant(parse_number(line, "n", v)?),
                (None, Some(v)) => {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| f.err("cauchy expects A,B".into()))?;
                    IndexModel::Cauchy {
                        a: parse_number(line, "cauchy A", a)?,
                        b: parse_number(line, "cauchy B", b)?,
                    }
                }
                (None, None) => return Err(f.err("refracting surface needs n= or cauchy=".into())),
            })
        };
        f.finish()?;

        let index = medium.map(|m| m.spectrum(grid));
        if let (Some(m), Some(ix)) = (medium, &index) {
            let probe = [grid.lambda_min(), grid.lambda_max()];
            if ix.values().iter().chain(probe.map(|l| m.at(l)).iter()).any(|&n| !(n >= 1.0 && n.is_finite())) {
                return Err(LensError::IndexBelowOne { line });
            }
        }
        let s = LensSurface {
            shape,
            thickness,
            semi_aperture,
            medium,
            index,
            line,
        };
        check_sag(&s)?;
        if s.is_stop() {
            stop_lines.push((surfaces.len(), line));
        }
        surfaces.push(s);
    }

    let stop = match stop_lines.as_slice() {
        [] => return Err(LensError::NoStop),
        [(i, _)] => *i,
        [(_, first), (_, second), ..] => {
            return Err(LensError::DuplicateStop {
                first: *first,
                second: *second,
            })
        }
    };
    let film_distance = film_distance.filter(|d| d.is_finite() && *d > 0.0).ok_or(LensError::FilmDistance)?;
    Ok(LensPrescription {
        surfaces,
        film_distance,
        focal_length,
        stop,
    })
}

fn check_sag(s: &LensSurface) -> Result<(), LensError> {
    let a2 = s.semi_aperture * s.semi_aperture;
    let worst = match s.shape {
        SurfaceShape::ApertureStop => return Ok(()),
        SurfaceShape::Spherical { c } => c * c * a2,
        SurfaceShape::Aspheric { c, k, .. } => (1.0 + k) * c * c * a2,
        SurfaceShape::Biconic { cx, cy, kx, ky } => ((1.0 + kx) * cx * cx).max((1.0 + ky) * cy * cy) * a2,
    };
    if worst >= 1.0 {
        return Err(LensError::NonRealSag {
            line: s.line,
            detail: format!("(1+k)c²r² = {worst:.4} at r = {}", s.semi_aperture),
        });
    }
    Ok(())
}

/// Serializes a prescription back to the text format.
pub fn write_lens(lens: &LensPrescription) -> String {
    let mut out = String::new();
    if let Some(f) = lens.focal_length {
        out.push_str(&format!("focal_length = {f}\n"));
    }
    out.push_str(&format!("film_distance = {}\n", lens.film_distance));
    for s in &lens.surfaces {
        let head = match s.shape {
            SurfaceShape::Spherical { c } => format!("spherical curvature={c}"),
            SurfaceShape::Aspheric { c, k, a4, a6, a8 } => {
                format!("aspheric curvature={c} conic={k} a4={a4} a6={a6} a8={a8}")
            }
            SurfaceShape::Biconic { cx, cy, kx, ky } => format!("biconic cx={cx} cy={cy} kx={kx} ky={ky}"),
            SurfaceShape::ApertureStop => "stop".to_string(),
        };
        let medium = match s.medium {
            None => String::new(),
            Some(IndexModel::Constant(n)) => format!(" n={n}"),
            Some(IndexModel::Cauchy { a, b }) => format!(" cauchy={a},{b}"),
        };
        out.push_str(&format!(
            "{head} thickness={} semi_aperture={}{medium}\n",
            s.thickness, s.semi_aperture
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> WavelengthGrid {
        WavelengthGrid::visible()
    }

    #[test]
    fn single_stop_is_valid() {
        let l = parse_lens("film_distance = 50\nstop semi_aperture=0.5\n", &grid()).unwrap();
        assert_eq!(l.surfaces.len(), 1);
        assert!(l.stop().is_stop());
        assert_eq!(l.stop().semi_aperture, 0.5);
    }

    #[test]
    fn two_stops_name_both_lines() {
        let text = "film_distance = 50\nstop semi_aperture=1\n# gap\nstop semi_aperture=2\n";
        let err = parse_lens(text, &grid()).unwrap_err();
        assert_eq!(err, LensError::DuplicateStop { first: 2, second: 4 });
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('4'), "{msg}");
        assert_eq!(parse_lens("film_distance = 5\n", &grid()), Err(LensError::NoStop));
    }

    #[test]
    fn thin_biconvex_parses_as_two_spheres() {
        let text = "film_distance = 100\n\
                    spherical radius=100 thickness=0 semi_aperture=10 n=1.5\n\
                    spherical radius=-100 thickness=0 semi_aperture=10 n=air\n\
                    stop semi_aperture=10\n";
        let l = parse_lens(text, &grid()).unwrap();
        assert_eq!(l.surfaces[0].shape, SurfaceShape::Spherical { c: 0.01 });
        assert_eq!(l.surfaces[1].shape, SurfaceShape::Spherical { c: -0.01 });
        assert_eq!(l.media(1, 550.0), (1.5, 1.0));
        assert_eq!(l.media(2, 550.0), (1.0, 1.0));
    }

    #[test]
    fn cauchy_realized_on_grid() {
        let text = "film_distance = 10\nspherical curvature=0 semi_aperture=5 cauchy=1.5,4200\nstop semi_aperture=4\n";
        let l = parse_lens(text, &grid()).unwrap();
        let ix = l.surfaces[0].index.as_ref().unwrap();
        let b450 = (450.0 - grid().lambda_min()) / grid().band_width();
        assert!((ix.values()[b450 as usize] - (1.5 + 4200.0 / 450.0f64.powi(2))).abs() < 1e-12);
        assert!(ix.eval(450.0) > ix.eval(650.0));
    }

    #[test]
    fn rejects_bad_lines() {
        let g = grid();
        let cases = [
            ("film_distance = 10\nstop semi_aperture=1\nspherical radius=5 semi_aperture=6 n=1.5\n", 3),
            ("film_distance = 10\nstop semi_aperture=1\nmirror radius=5\n", 3),
            ("film_distance = 10\nstop semi_aperture=1 bogus=3\n", 2),
            ("film_distance = 10\n\nspherical radius=50 semi_aperture=5\nstop semi_aperture=1\n", 3),
            ("film_distance = 10\nstop semi_aperture=x\n", 2),
            ("film_distance = 10\nspherical radius=50 semi_aperture=5 n=0.9\nstop semi_aperture=1\n", 2),
        ];
        for (text, want) in cases {
            let line = match parse_lens(text, &g).unwrap_err() {
                LensError::Malformed { line, .. } | LensError::NonRealSag { line, .. } | LensError::IndexBelowOne { line } => line,
                e => panic!("unexpected {e:?}"),
            };
            assert_eq!(line, want, "{text}");
        }
        assert_eq!(parse_lens("stop semi_aperture=1\n", &g), Err(LensError::FilmDistance));
    }

    #[test]
    fn write_then_parse() {
        let text = "focal_length = 6\nfilm_distance = 7.5\n\
                    aspheric radius=20 conic=-1.2 a4=1e-5 thickness=3 semi_aperture=4 cauchy=1.6,5000\n\
                    stop semi_aperture=2 thickness=1\n\
                    biconic rx=-30 ry=-35 kx=0.1 thickness=1 semi_aperture=5 n=air\n";
        let l = parse_lens(text, &grid()).unwrap();
        assert_eq!(parse_lens(&write_lens(&l), &grid()).map(|p| p.surfaces.iter().map(|s| s.shape).collect::<Vec<_>>()),
            Ok(l.surfaces.iter().map(|s| s.shape).collect()));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let shapes = [
            SurfaceShape::Spherical { c: 0.02 },
            SurfaceShape::Aspheric { c: -0.03, k: -0.5, a4: 2e-4, a6: -1e-6, a8: 1e-8 },
            SurfaceShape::Biconic { cx: 0.02, cy: -0.01, kx: 0.3, ky: -0.7 },
        ];
        for shape in shapes {
            let s = LensSurface {
                shape,
                thickness: 0.0,
                semi_aperture: 10.0,
                medium: Some(IndexModel::Constant(1.5)),
                index: None,
                line: 1,
            };
            let (x, y, h) = (3.1, -2.2, 1e-6);
            let (gx, gy) = s.sag_gradient(x, y).unwrap();
            let fx = (s.sag(x + h, y).unwrap() - s.sag(x - h, y).unwrap()) / (2.0 * h);
            let fy = (s.sag(x, y + h).unwrap() - s.sag(x, y - h).unwrap()) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-7 && (gy - fy).abs() < 1e-7, "{shape:?}");
        }
    }
}
