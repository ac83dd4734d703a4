//! Wavelength grids, sampled spectra and the radiometric conversions shared by
//! the optics, renderer and sensor stages.
//!
//! All wavelengths are in nanometres. Spectra live on a [`WavelengthGrid`] of
//! uniform bands; integration over wavelength is a rectangle rule using band
//! centres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant times the speed of light, J·m.
pub const PLANCK_TIMES_C: f64 = 1.98645e-25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("spectrum has {got} samples but grid has {expected} bands")]
    LengthMismatch { expected: usize, got: usize },
    #[error("spectrum sample {index} is {value}; samples must be finite and non-negative")]
    InvalidSample { index: usize, value: f64 },
    #[error("spectra are on different wavelength grids; resample first")]
    GridMismatch,
    #[error("invalid spectral curve: {0}")]
    InvalidCurve(String),
    #[error("image data has {got} samples, expected {expected}")]
    ImageSize { expected: usize, got: usize },
}

/// Uniform partition of `[lambda_min, lambda_max]` into `n_bands` bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct WavelengthGrid {
    lambda_min: f64,
    lambda_max: f64,
    n_bands: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    lambda_min: f64,
    lambda_max: f64,
    n_bands: usize,
}

impl TryFrom<RawGrid> for WavelengthGrid {
    type Error = SpectralError;
    fn try_from(raw: RawGrid) -> Result<Self, Self::Error> {
        WavelengthGrid::new(raw.lambda_min, raw.lambda_max, raw.n_bands)
    }
}

impl From<WavelengthGrid> for RawGrid {
    fn from(g: WavelengthGrid) -> Self {
        RawGrid {
            lambda_min: g.lambda_min,
            lambda_max: g.lambda_max,
            n_bands: g.n_bands,
        }
    }
}

impl WavelengthGrid {
    pub fn new(lambda_min: f64, lambda_max: f64, n_bands: usize) -> Result<Self, SpectralError> {
        if !(lambda_min.is_finite() && lambda_max.is_finite()) || lambda_min <= 0.0 {
            return Err(SpectralError::InvalidGrid(format!(
                "bounds must be finite and positive, got {lambda_min}..{lambda_max}"
            )));
        }
        if lambda_min >= lambda_max {
            return Err(SpectralError::InvalidGrid(format!(
                "lambda_min {lambda_min} must be below lambda_max {lambda_max}"
            )));
        }
        if n_bands == 0 {
            return Err(SpectralError::InvalidGrid("n_bands must be at least 1".into()));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            n_bands,
        })
    }

    /// 31 bands of 10 nm whose centres fall on 400, 410, …, 700 nm.
    pub fn visible() -> Self {
        Self {
            lambda_min: 395.0,
            lambda_max: 705.0,
            n_bands: 31,
        }
    }

    /// Grid of `n_bands` bands spanning 400–700 nm exactly.
    pub fn visible_bands(n_bands: usize) -> Result<Self, SpectralError> {
        Self::new(400.0, 700.0, n_bands)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn band_width(&self) -> f64 {
        (self.lambda_max - self.lambda_min) / self.n_bands as f64
    }

    pub fn center(&self, band: usize) -> f64 {
        self.lambda_min + (band as f64 + 0.5) * self.band_width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bands).map(|b| self.center(b)).collect()
    }

    /// Grids equal to within floating-point noise on the bounds.
    pub fn matches(&self, other: &WavelengthGrid) -> bool {
        let tol = 1e-9 * self.lambda_max.abs().max(1.0);
        self.n_bands == other.n_bands
            && (self.lambda_min - other.lambda_min).abs() <= tol
            && (self.lambda_max - other.lambda_max).abs() <= tol
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self::visible()
    }
}

/// Piecewise-linear interpolation through `(xs, ys)` knots, clamping outside.
fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&k| k < x);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Non-negative samples at the band centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != grid.n_bands() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.n_bands(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(SpectralError::InvalidSample { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: WavelengthGrid, value: f64) -> Self {
        assert!(value.is_finite() && value >= 0.0, "constant spectrum must be finite and >= 0");
        Self {
            grid,
            values: vec![value; grid.n_bands()],
        }
    }

    pub fn zero(grid: WavelengthGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Result<Self, SpectralError> {
        Self::new(grid, grid.centers().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear interpolation between band centres, clamped to the end values.
    pub fn eval(&self, lambda_nm: f64) -> f64 {
        interp_clamped(&self.grid.centers(), &self.values, lambda_nm)
    }

    pub fn resample(&self, target: &WavelengthGrid) -> Spectrum {
        if self.grid.matches(target) {
            return Spectrum {
                grid: *target,
                values: self.values.clone(),
            };
        }
        let xs = self.grid.centers();
        let values = target
            .centers()
            .into_iter()
            .map(|l| interp_clamped(&xs, &self.values, l))
            .collect();
        Spectrum {
            grid: *target,
            values,
        }
    }

    pub fn scaled(&self, k: f64) -> Spectrum {
        assert!(k.is_finite() && k >= 0.0);
        Spectrum {
            grid: self.grid,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// True when every sample lies in `[0, 1]` (reflectance, QE, transmittance).
    pub fn is_unit_bounded(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// On-disk spectral description: a scalar for flat spectra, or knots that are
/// linearly interpolated (and clamped) onto whatever grid the consumer uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectralCurve {
    Constant(f64),
    Sampled {
        wavelengths_nm: Vec<f64>,
        values: Vec<f64>,
    },
}

impl SpectralCurve {
    pub fn validate(&self) -> Result<(), SpectralError> {
        match self {
            SpectralCurve::Constant(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(SpectralError::InvalidCurve(format!("constant {v} must be finite and >= 0")));
                }
            }
            SpectralCurve::Sampled {
                wavelengths_nm,
                values,
            } => {
                if wavelengths_nm.is_empty() || wavelengths_nm.len() != values.len() {
                    return Err(SpectralError::InvalidCurve(format!(
                        "{} wavelengths vs {} values",
                        wavelengths_nm.len(),
                        values.len()
                    )));
                }
                if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(SpectralError::InvalidCurve("wavelengths must be strictly increasing".into()));
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(SpectralError::InvalidCurve(format!("sample {v} must be finite and >= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn to_spectrum(&self, grid: &WavelengthGrid) -> Result<Spectrum, SpectralError> {
        self.validate()?;
        match self {
            SpectralCurve::Constant(v) => Ok(Spectrum::constant(*grid, *v)),
            SpectralCurve::Sampled {
                wavelengths_nm,
                values,
            } => Spectrum::new(
                *grid,
                grid.centers()
                    .into_iter()
                    .map(|l| interp_clamped(wavelengths_nm, values, l))
                    .collect(),
            ),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            SpectralCurve::Constant(v) => *v,
            SpectralCurve::Sampled { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

impl From<f64> for SpectralCurve {
    fn from(v: f64) -> Self {
        SpectralCurve::Constant(v)
    }
}

/// Per-band factors turning band irradiance (W·m⁻²·nm⁻¹) into mean
/// photoelectrons: `Δλ · A · T · λ/(hc) · qe(λ) · t(λ)`.
pub fn electrons_per_band(
    pixel_area_m2: f64,
    exposure_s: f64,
    qe: &Spectrum,
    cfa_transmittance: &Spectrum,
) -> Result<Vec<f64>, SpectralError> {
    let grid = qe.grid();
    if !grid.matches(cfa_transmittance.grid()) {
        return Err(SpectralError::GridMismatch);
    }
    let dl = grid.band_width();
    Ok(grid
        .centers()
        .into_iter()
        .zip(qe.values().iter().zip(cfa_transmittance.values()))
        .map(|(l, (q, t))| dl * pixel_area_m2 * exposure_s * (l * 1e-9 / PLANCK_TIMES_C) * q * t)
        .collect())
}

/// Expected photoelectron count for one pixel.
pub fn mean_photoelectrons(
    irradiance: &Spectrum,
    pixel_area_m2: f64,
    exposure_s: f64,
    qe: &Spectrum,
    cfa_transmittance: &Spectrum,
) -> Result<f64, SpectralError> {
    if !irradiance.grid().matches(qe.grid()) {
        return Err(SpectralError::GridMismatch);
    }
    let w = electrons_per_band(pixel_area_m2, exposure_s, qe, cfa_transmittance)?;
    Ok(irradiance.values().iter().zip(&w).map(|(e, k)| e * k).sum())
}

// Preview weight tables sampled at 400, 410, …, 700 nm. Smooth bell curves
// standing in for colour matching functions; not colorimetric.
const PREVIEW_R: [f64; 31] = [
    0.0000, 0.0000, 0.0000, 0.0001, 0.0002, 0.0005, 0.0014, 0.0034, 0.0076, 0.0160, 0.0319, 0.0596,
    0.1046, 0.1724, 0.2671, 0.3886, 0.5311, 0.6819, 0.8226, 0.9321, 0.9922, 0.9922, 0.9321, 0.8226,
    0.6819, 0.5311, 0.3886, 0.2671, 0.1724, 0.1046, 0.0596,
];
const PREVIEW_G: [f64; 31] = [
    0.0014, 0.0034, 0.0076, 0.0160, 0.0319, 0.0596, 0.1046, 0.1724, 0.2671, 0.3886, 0.5311, 0.6819,
    0.8226, 0.9321, 0.9922, 0.9922, 0.9321, 0.8226, 0.6819, 0.5311, 0.3886, 0.2671, 0.1724, 0.1046,
    0.0596, 0.0319, 0.0160, 0.0076, 0.0034, 0.0014, 0.0005,
];
const PREVIEW_B: [f64; 31] = [
    0.2494, 0.4111, 0.6065, 0.8007, 0.9460, 1.0000, 0.9460, 0.8007, 0.6065, 0.4111, 0.2494, 0.1353,
    0.0657, 0.0286, 0.0111, 0.0039, 0.0012, 0.0003, 0.0001, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000,
    0.0000, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000,
];

/// Per-band preview weights on `grid`, each channel normalised to sum to one.
pub fn preview_weights(grid: &WavelengthGrid) -> [Vec<f64>; 3] {
    let table_grid = WavelengthGrid::visible();
    [&PREVIEW_R, &PREVIEW_G, &PREVIEW_B].map(|table| {
        let s = Spectrum {
            grid: table_grid,
            values: table.to_vec(),
        }
        .resample(grid);
        let sum: f64 = s.values().iter().sum();
        s.values()
            .iter()
            .map(|v| if sum > 0.0 { v / sum } else { 0.0 })
            .collect()
    })
}

/// Display-only RGB for a spectrum: an equal-energy spectrum of value `v` maps
/// to gray `(v, v, v)`; the result is clipped to `[0, 1]`.
pub fn spectrum_to_preview_rgb(s: &Spectrum) -> [f64; 3] {
    let w = preview_weights(s.grid());
    w.map(|ch| {
        ch.iter()
            .zip(s.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    })
}

/// Per-pixel ground truth aligned with a [`SpectralImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataPlanes {
    /// Distance along the primary ray in metres, 0 where the ray escaped.
    pub depth: Vec<f32>,
    pub class_id: Vec<u32>,
    pub instance_id: Vec<u32>,
}

impl MetadataPlanes {
    pub fn empty(n_pixels: usize) -> Self {
        Self {
            depth: vec![0.0; n_pixels],
            class_id: vec![0; n_pixels],
            instance_id: vec![0; n_pixels],
        }
    }
}

/// Sensor-plane spectral irradiance (W·m⁻²·nm⁻¹), stored as one row-major
/// plane per band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    width: usize,
    height: usize,
    grid: WavelengthGrid,
    data: Vec<f32>,
    metadata: Option<MetadataPlanes>,
}

impl SpectralImage {
    pub fn new(
        width: usize,
        height: usize,
        grid: WavelengthGrid,
        data: Vec<f32>,
    ) -> Result<Self, SpectralError> {
        let expected = width * height * grid.n_bands();
        if data.len() != expected {
            return Err(SpectralError::ImageSize {
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(SpectralError::InvalidSample {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            width,
            height,
            grid,
            data,
            metadata: None,
        })
    }

    pub fn zeros(width: usize, height: usize, grid: WavelengthGrid) -> Self {
        Self {
            width,
            height,
            grid,
            data: vec![0.0; width * height * grid.n_bands()],
            metadata: None,
        }
    }

    /// Image whose every pixel carries the same spectrum.
    pub fn uniform(width: usize, height: usize, spectrum: &Spectrum) -> Self {
        let n = width * height;
        let mut data = Vec::with_capacity(n * spectrum.grid().n_bands());
        for &v in spectrum.values() {
            data.extend(std::iter::repeat_n(v as f32, n));
        }
        Self {
            width,
            height,
            grid: *spectrum.grid(),
            data,
            metadata: None,
        }
    }

    pub fn with_metadata(mut self, metadata: MetadataPlanes) -> Result<Self, SpectralError> {
        let n = self.width * self.height;
        for len in [
            metadata.depth.len(),
            metadata.class_id.len(),
            metadata.instance_id.len(),
        ] {
            if len != n {
                return Err(SpectralError::ImageSize { expected: n, got: len });
            }
        }
        self.metadata = Some(metadata);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn metadata(&self) -> Option<&MetadataPlanes> {
        self.metadata.as_ref()
    }

    pub fn band_plane(&self, band: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, band: usize) -> f32 {
        self.data[band * self.width * self.height + y * self.width + x]
    }

    pub fn pixel_values(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.grid.n_bands())
            .map(|b| self.get(x, y, b) as f64)
            .collect()
    }

    pub fn pixel_spectrum(&self, x: usize, y: usize) -> Spectrum {
        Spectrum {
            grid: self.grid,
            values: self.pixel_values(x, y),
        }
    }
}
