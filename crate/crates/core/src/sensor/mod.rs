//! Image sensor model: spectral irradiance to digital numbers.
//!
//! The signal chain per pixel is photoelectrons (shot noise), dark
//! electrons, fixed-pattern gain (PRNU), conversion to volts with
//! saturation, fixed-pattern offset (DSNU) and read noise, then ADC
//! quantization.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use io::{read_pgm, read_sensor_image, write_pgm, write_sensor_image, SensorSidecar};

use crate::rng;
use crate::spectral::{electrons_per_band, SpectralCurve, SpectralImage, Spectrum, WavelengthGrid};

/// Allowed relative mismatch between `pixel_pitch × count` and the declared
/// active imager size.
pub const ACTIVE_SIZE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid sensor spec: {0}")]
    Spec(String),
    #[error("image {img_w}x{img_h} cannot be binned to {cols}x{rows}")]
    Binning {
        img_w: usize,
        img_h: usize,
        cols: usize,
        rows: usize,
    },
    #[error("spectral grid mismatch: {0}")]
    Grid(String),
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Filter {
    R,
    G,
    B,
    /// Clear.
    C,
    /// White.
    W,
    /// Monochrome.
    M,
}

impl Filter {
    pub fn name(self) -> &'static str {
        match self {
            Filter::R => "R",
            Filter::G => "G",
            Filter::B => "B",
            Filter::C => "C",
            Filter::W => "W",
            Filter::M => "M",
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "R" => Filter::R,
            "G" => Filter::G,
            "B" => Filter::B,
            "C" => Filter::C,
            "W" => Filter::W,
            "M" => Filter::M,
            _ => return Err(format!("unknown filter {s:?}")),
        })
    }
}

fn bundled_curve(text: &str) -> SpectralCurve {
    serde_json::from_str(text).expect("bundled curve is valid")
}

static BUNDLED_FILTERS: LazyLock<[SpectralCurve; 3]> = LazyLock::new(|| {
    [
        bundled_curve(include_str!("../../data/filters/R.json")),
        bundled_curve(include_str!("../../data/filters/G.json")),
        bundled_curve(include_str!("../../data/filters/B.json")),
    ]
});

static BUNDLED_QE: LazyLock<SpectralCurve> = LazyLock::new(|| bundled_curve(include_str!("../../data/qe_silicon.json")));

/// Default transmittance: bundled smooth curves for R, G, B and unity for
/// the unfiltered kinds.
pub fn default_transmittance(f: Filter) -> SpectralCurve {
    match f {
        Filter::R => BUNDLED_FILTERS[0].clone(),
        Filter::G => BUNDLED_FILTERS[1].clone(),
        Filter::B => BUNDLED_FILTERS[2].clone(),
        Filter::C | Filter::W | Filter::M => SpectralCurve::Constant(1.0),
    }
}

pub fn default_qe() -> SpectralCurve {
    BUNDLED_QE.clone()
}

/// 2×2 colour filter array tile with optional transmittance overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfaPattern {
    /// `tile[y][x]`.
    pub tile: [[Filter; 2]; 2],
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub transmittance: BTreeMap<Filter, SpectralCurve>,
}

impl CfaPattern {
    pub fn from_tile(tile: [[Filter; 2]; 2]) -> Self {
        Self {
            tile,
            transmittance: BTreeMap::new(),
        }
    }

    pub fn bayer_rggb() -> Self {
        Self::from_tile([[Filter::R, Filter::G], [Filter::G, Filter::B]])
    }

    pub fn rccc() -> Self {
        Self::from_tile([[Filter::R, Filter::C], [Filter::C, Filter::C]])
    }

    pub fn rgbw() -> Self {
        Self::from_tile([[Filter::R, Filter::G], [Filter::B, Filter::W]])
    }

    pub fn mono() -> Self {
        Self::from_tile([[Filter::M; 2]; 2])
    }

    pub fn filter_at(&self, x: usize, y: usize) -> Filter {
        self.tile[y % 2][x % 2]
    }

    pub fn transmittance_of(&self, f: Filter) -> SpectralCurve {
        self.transmittance.get(&f).cloned().unwrap_or_else(|| default_transmittance(f))
    }
}

pub fn cfa_filter_at(cfa: &CfaPattern, x: usize, y: usize) -> Filter {
    cfa.filter_at(x, y)
}

fn default_qe_field() -> SpectralCurve {
    default_qe()
}

fn default_conversion_gain() -> f64 {
    100.0
}

fn default_swing() -> f64 {
    1000.0
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Sensor description. Voltages are in mV except `conversion_gain_uv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(default)]
    pub name: String,
    pub pixel_pitch_um: f64,
    pub rows: usize,
    pub cols: usize,
    /// Declared active imager size, checked against pitch × pixel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_width_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_height_mm: Option<f64>,
    pub exposure_s: f64,
    #[serde(default = "default_qe_field")]
    pub qe: SpectralCurve,
    pub cfa: CfaPattern,
    #[serde(default = "default_conversion_gain")]
    pub conversion_gain_uv: f64,
    #[serde(default = "default_swing")]
    pub voltage_swing_mv: f64,
    #[serde(default)]
    pub dark_rate_mv_per_s: f64,
    #[serde(default)]
    pub read_noise_mv: f64,
    #[serde(default)]
    pub prnu_sigma: f64,
    #[serde(default)]
    pub dsnu_sigma_mv: f64,
    pub adc_bits: u32,
    #[serde(default = "one")]
    pub analog_gain: f64,
    #[serde(default = "yes")]
    pub shot_noise: bool,
    #[serde(default)]
    pub noise_seed: u64,
    /// Recorded only; frames are simulated independently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate_fps: Option<f64>,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: String| Err(SensorError::Spec(m));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be positive".into());
        }
        if !(self.pixel_pitch_um > 0.0) {
            return bad(format!("pixel_pitch_um {} must be positive", self.pixel_pitch_um));
        }
        for (name, declared, count) in [
            ("active_width_mm", self.active_width_mm, self.cols),
            ("active_height_mm", self.active_height_mm, self.rows),
        ] {
            if let Some(d) = declared {
                let actual = self.pixel_pitch_um * count as f64 * 1e-3;
                if (actual - d).abs() > ACTIVE_SIZE_TOLERANCE * d {
                    return bad(format!("{name} {d} disagrees with pitch × pixels = {actual:.4} mm"));
                }
            }
        }
        if !(8..=16).contains(&self.adc_bits) {
            return bad(format!("adc_bits {} outside 8..=16", self.adc_bits));
        }
        for (name, v) in [
            ("exposure_s", self.exposure_s),
            ("dark_rate_mv_per_s", self.dark_rate_mv_per_s),
            ("read_noise_mv", self.read_noise_mv),
            ("prnu_sigma", self.prnu_sigma),
            ("dsnu_sigma_mv", self.dsnu_sigma_mv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("conversion_gain_uv", self.conversion_gain_uv),
            ("voltage_swing_mv", self.voltage_swing_mv),
            ("analog_gain", self.analog_gain),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be positive"));
            }
        }
        self.qe.validate().map_err(|e| SensorError::Spec(format!("qe: {e}")))?;
        if self.qe.max_value() > 1.0 {
            return bad("qe exceeds 1".into());
        }
        for f in self.cfa.tile.iter().flatten() {
            let t = self.cfa.transmittance_of(*f);
            t.validate().map_err(|e| SensorError::Spec(format!("filter {f}: {e}")))?;
            if t.max_value() > 1.0 {
                return bad(format!("filter {f} transmittance exceeds 1"));
            }
        }
        Ok(())
    }

    pub fn pixel_area_m2(&self) -> f64 {
        (self.pixel_pitch_um * 1e-6).powi(2)
    }

    pub fn max_dn(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }

    pub fn conversion_gain_mv(&self) -> f64 {
        self.conversion_gain_uv * 1e-3
    }

    /// Mean dark electrons per pixel over the exposure.
    pub fn mean_dark_electrons(&self) -> f64 {
        self.dark_rate_mv_per_s * self.exposure_s / self.conversion_gain_mv()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn sha256(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("spec serialises"))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_sensor_spec(text: &str) -> Result<SensorSpec, SensorError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: SensorSpec = serde_path_to_error::deserialize(de).map_err(|e| SensorError::Spec(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_sensor_spec(path: impl AsRef<Path>) -> Result<SensorSpec, SensorError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SensorError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_sensor_spec(&text).map_err(|e| SensorError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Bundled fixtures: the two 1/3-inch sensors compared in the pixel-size
/// study (`sensorA`: 752×480 at 6 µm, `sensorB`: 1504×960 at 3 µm).
pub const BUNDLED_SENSORS: [(&str, &str); 2] = [
    ("sensorA", include_str!("../../data/sensors/sensorA.json")),
    ("sensorB", include_str!("../../data/sensors/sensorB.json")),
];

pub fn bundled_sensor(name: &str) -> Option<SensorSpec> {
    BUNDLED_SENSORS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| parse_sensor_spec(t).expect("bundled sensor is valid"))
}

/// Area-averages `img` onto the sensor grid. Both dimensions must be integer
/// multiples of the sensor's; equal sizes pass through unchanged.
pub fn bin_irradiance(img: &SpectralImage, spec: &SensorSpec) -> Result<SpectralImage, SensorError> {
    let (w, h) = (img.width(), img.height());
    let err = SensorError::Binning {
        img_w: w,
        img_h: h,
        cols: spec.cols,
        rows: spec.rows,
    };
    if w < spec.cols || h < spec.rows || w % spec.cols != 0 || h % spec.rows != 0 {
        return Err(err);
    }
    if w == spec.cols && h == spec.rows {
        return Ok(img.clone());
    }
    let (kx, ky) = (w / spec.cols, h / spec.rows);
    let nb = img.grid().n_bands();
    let n = spec.cols * spec.rows;
    let mut data = vec![0f32; n * nb];
    let norm = 1.0 / (kx * ky) as f64;
    for b in 0..nb {
        let plane = img.band_plane(b);
        for y in 0..spec.rows {
            for x in 0..spec.cols {
                let mut sum = 0.0;
                for dy in 0..ky {
                    let row = (y * ky + dy) * w;
                    for dx in 0..kx {
                        sum += f64::from(plane[row + x * kx + dx]);
                    }
                }
                data[b * n + y * spec.cols + x] = (sum * norm) as f32;
            }
        }
    }
    Ok(SpectralImage::new(spec.cols, spec.rows, *img.grid(), data).expect("averages stay valid"))
}

/// Fixed-pattern maps drawn from `noise_seed`: PRNU gain ~ N(1, prnu_sigma)
/// and DSNU offset ~ N(0, dsnu_sigma) mV, row-major.
pub fn make_pixel_maps(spec: &SensorSpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.rows * spec.cols;
    let draw = |name: &str, mean: f64, sigma: f64| -> Vec<f64> {
        if sigma == 0.0 {
            return vec![mean; n];
        }
        let d = Normal::new(mean, sigma).expect("sigma validated");
        let mut r = rng::stream(spec.noise_seed, &[rng::key(name)]);
        (0..n).map(|_| d.sample(&mut r)).collect()
    };
    (
        draw("sensor/prnu", 1.0, spec.prnu_sigma),
        draw("sensor/dsnu", 0.0, spec.dsnu_sigma_mv),
    )
}

/// Per-filter band weights turning irradiance into mean photoelectrons on
/// `grid`. Fails when a sampled QE or filter curve does not cover the grid.
pub fn electron_weights(spec: &SensorSpec, grid: &WavelengthGrid) -> Result<BTreeMap<Filter, Vec<f64>>, SensorError> {
    let covers = |name: &str, c: &SpectralCurve| match c {
        SpectralCurve::Constant(_) => Ok(()),
        SpectralCurve::Sampled { wavelengths_nm, .. } => {
            let (lo, hi) = (wavelengths_nm[0], wavelengths_nm[wavelengths_nm.len() - 1]);
            let centers = grid.centers();
            if centers[0] < lo - 1e-9 || centers[centers.len() - 1] > hi + 1e-9 {
                Err(SensorError::Grid(format!(
                    "{name} spans {lo}–{hi} nm but the image has bands {}–{} nm",
                    centers[0],
                    centers[centers.len() - 1]
                )))
            } else {
                Ok(())
            }
        }
    };
    covers("qe", &spec.qe)?;
    let realize = |c: &SpectralCurve| -> Result<Spectrum, SensorError> {
        c.to_spectrum(grid).map_err(|e| SensorError::Spec(e.to_string()))
    };
    let qe = realize(&spec.qe)?;
    let mut out = BTreeMap::new();
    for f in spec.cfa.tile.iter().flatten() {
        if out.contains_key(f) {
            continue;
        }
        let t = spec.cfa.transmittance_of(*f);
        covers(f.name(), &t)?;
        let w = electrons_per_band(spec.pixel_area_m2(), spec.exposure_s, &qe, &realize(&t)?)
            .map_err(|e| SensorError::Grid(e.to_string()))?;
        out.insert(*f, w);
    }
    Ok(out)
}

/// Expected photoelectrons per pixel (no noise), row-major.
pub fn mean_electrons(binned: &SpectralImage, spec: &SensorSpec) -> Result<Vec<f64>, SensorError> {
    if binned.width() != spec.cols || binned.height() != spec.rows {
        return Err(SensorError::Binning {
            img_w: binned.width(),
            img_h: binned.height(),
            cols: spec.cols,
            rows: spec.rows,
        });
    }
    let weights = electron_weights(spec, binned.grid())?;
    let n = spec.rows * spec.cols;
    let nb = binned.grid().n_bands();
    let data = binned.data();
    Ok((0..n)
        .map(|i| {
            let (x, y) = (i % spec.cols, i / spec.cols);
            let w = &weights[&spec.cfa.filter_at(x, y)];
            (0..nb).map(|b| f64::from(data[b * n + i]) * w[b]).sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_name: String,
    pub spec_sha256: String,
    pub source_sha256: String,
    pub noise_seed: u64,
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorImage {
    pub rows: usize,
    pub cols: usize,
    pub adc_bits: u32,
    /// Row-major digital numbers.
    pub dn: Vec<u16>,
    pub cfa_tile: [[Filter; 2]; 2],
    pub provenance: Provenance,
}

impl SensorImage {
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.dn[y * self.cols + x]
    }

    pub fn filter_at(&self, x: usize, y: usize) -> Filter {
        self.cfa_tile[y % 2][x % 2]
    }

    pub fn filter_map(&self) -> Vec<Filter> {
        (0..self.rows * self.cols)
            .map(|i| self.filter_at(i % self.cols, i / self.cols))
            .collect()
    }
}

/// Intermediate signals kept for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSignals {
    pub mean_electrons: Vec<f64>,
    /// Photo plus dark electrons after PRNU.
    pub electrons: Vec<f64>,
    /// Final analog signal before quantization, mV.
    pub voltage_mv: Vec<f64>,
}

/// SHA-256 over dimensions, band centres and irradiance samples.
pub fn image_sha256(img: &SpectralImage) -> String {
    let mut bytes = Vec::with_capacity(img.data().len() * 4 + 64);
    bytes.extend_from_slice(&(img.width() as u64).to_le_bytes());
    bytes.extend_from_slice(&(img.height() as u64).to_le_bytes());
    for c in img.grid().centers() {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    for v in img.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex_digest(&bytes)
}

fn poisson(mean: f64, r: &mut rng::Rng) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean).expect("mean is positive and finite").sample(r)
    }
}

/// Simulates frame `frame` of the sensor viewing `binned` (already on the
/// sensor grid). Fixed-pattern maps depend only on `noise_seed`; temporal
/// noise also depends on `frame`.
pub fn simulate_frame(binned: &SpectralImage, spec: &SensorSpec, frame: u64) -> Result<(SensorImage, SensorSignals), SensorError> {
    spec.validate()?;
    let mean = mean_electrons(binned, spec)?;
    let (gain, offset) = make_pixel_maps(spec);
    let dark = spec.mean_dark_electrons();
    let read = (spec.read_noise_mv > 0.0).then(|| Normal::new(0.0, spec.read_noise_mv).expect("validated"));
    let cg = spec.conversion_gain_mv() * spec.analog_gain;
    let max_dn = f64::from(spec.max_dn());
    let pixel_key = rng::key("sensor/pixel");
    let per_pixel: Vec<(f64, f64, u16)> = mean
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut r = rng::stream(spec.noise_seed, &[pixel_key, frame, i as u64]);
            let photo = if spec.shot_noise { poisson(m, &mut r) } else { m };
            let e = (photo + poisson(dark, &mut r)) * gain[i];
            let mut v = (e * cg).min(spec.voltage_swing_mv) + offset[i];
            if let Some(d) = &read {
                v += d.sample(&mut r);
            }
            let dn = (v / spec.voltage_swing_mv * max_dn).round().clamp(0.0, max_dn) as u16;
            (e, v, dn)
        })
        .collect();
    let image = SensorImage {
        rows: spec.rows,
        cols: spec.cols,
        adc_bits: spec.adc_bits,
        dn: per_pixel.iter().map(|p| p.2).collect(),
        cfa_tile: spec.cfa.tile,
        provenance: Provenance {
            spec_name: spec.name.clone(),
            spec_sha256: spec.sha256(),
            source_sha256: image_sha256(binned),
            noise_seed: spec.noise_seed,
            frame,
        },
    };
    let signals = SensorSignals {
        electrons: per_pixel.iter().map(|p| p.0).collect(),
        voltage_mv: per_pixel.iter().map(|p| p.1).collect(),
        mean_electrons: mean,
    };
    Ok((image, signals))
}

/// Bins `img` to the sensor grid and simulates frame 0.
pub fn simulate(img: &SpectralImage, spec: &SensorSpec) -> Result<SensorImage, SensorError> {
    let binned = bin_irradiance(img, spec)?;
    let (mut image, _) = simulate_frame(&binned, spec, 0)?;
    image.provenance.source_sha256 = image_sha256(img);
    Ok(image)
}
