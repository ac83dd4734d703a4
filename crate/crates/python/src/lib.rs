//! Python module `pycamsim`.
//!
//! Structured results (render statistics, ground truth, AP tables, stage
//! reports) are returned as plain dicts and lists. Spectral planes come back
//! as little-endian `float32` bytes so callers can wrap them with
//! `numpy.frombuffer` without a copy through Python lists.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use camsim::cli::{self, CliError, Command, Inputs};
use camsim::eval::{self, Detection, GroundTruthObject};
use camsim::optics::{paraxial_focus, LensPrescription};
use camsim::render::{load_lens, render_recipe, RenderConfig};
use camsim::sceneformat::{read_recipe, read_spectral_image, write_spectral_image, AssetStore};
use camsim::sensor;
use camsim::spectral;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Converts any serialisable value to Python objects via `json.loads`.
fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, module = "pycamsim")]
struct WavelengthGrid {
    inner: spectral::WavelengthGrid,
}

#[pymethods]
impl WavelengthGrid {
    #[new]
    #[pyo3(signature = (lambda_min=400.0, lambda_max=700.0, n_bands=31))]
    fn new(lambda_min: f64, lambda_max: f64, n_bands: usize) -> PyResult<Self> {
        let inner = spectral::WavelengthGrid::new(lambda_min, lambda_max, n_bands).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_bands(&self) -> usize {
        self.inner.n_bands()
    }

    /// Band centres in nm.
    #[getter]
    fn centers(&self) -> Vec<f64> {
        self.inner.centers()
    }

    fn __repr__(&self) -> String {
        let c = self.inner.centers();
        format!(
            "WavelengthGrid(n_bands={}, centers={:.1}..{:.1} nm)",
            c.len(),
            c.first().copied().unwrap_or(0.0),
            c.last().copied().unwrap_or(0.0)
        )
    }
}

/// Per-pixel spectral irradiance with optional depth, class and instance
/// planes.
#[pyclass(frozen, module = "pycamsim")]
struct SpectralImage {
    inner: spectral::SpectralImage,
}

fn f32_bytes<'py>(py: Python<'py>, v: &[f32]) -> Bound<'py, PyBytes> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    PyBytes::new(py, &bytes)
}

#[pymethods]
impl SpectralImage {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_spectral_image(&path).map_err(value_err)?,
        })
    }

    #[pyo3(signature = (path, preview_tone_scale=None))]
    fn write(&self, path: PathBuf, preview_tone_scale: Option<f64>) -> PyResult<()> {
        write_spectral_image(&self.inner, &path, preview_tone_scale).map_err(runtime_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn grid(&self) -> WavelengthGrid {
        WavelengthGrid { inner: *self.inner.grid() }
    }

    /// `(n_bands, height, width)`, matching the layout of [`data`].
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.grid().n_bands(), self.inner.height(), self.inner.width())
    }

    /// All irradiance samples as `float32` bytes, band-major.
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        f32_bytes(py, self.inner.data())
    }

    fn band<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        if index >= self.inner.grid().n_bands() {
            return Err(value_err(format!("band {index} out of range")));
        }
        Ok(f32_bytes(py, self.inner.band_plane(index)))
    }

    /// Spectrum at pixel `(x, y)`.
    fn pixel(&self, x: usize, y: usize) -> PyResult<Vec<f32>> {
        let (w, h) = (self.inner.width(), self.inner.height());
        if x >= w || y >= h {
            return Err(value_err(format!("pixel ({x}, {y}) outside {w}x{h}")));
        }
        let n = w * h;
        let i = y * w + x;
        Ok(self.inner.data().iter().skip(i).step_by(n).copied().collect())
    }

    #[getter]
    fn has_metadata(&self) -> bool {
        self.inner.metadata().is_some()
    }

    /// `{"depth": [...], "class_id": [...], "instance_id": [...]}`, row-major,
    /// or `None`.
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        let Some(m) = self.inner.metadata() else {
            return Ok(None);
        };
        let d = pyo3::types::PyDict::new(py);
        d.set_item("depth", m.depth.clone())?;
        d.set_item("class_id", m.class_id.clone())?;
        d.set_item("instance_id", m.instance_id.clone())?;
        Ok(Some(d.into_any()))
    }

    fn __repr__(&self) -> String {
        let (b, h, w) = self.shape();
        format!("SpectralImage({w}x{h}, {b} bands, metadata={})", self.has_metadata())
    }
}

/// A lens prescription realised on a wavelength grid.
#[pyclass(frozen, module = "pycamsim")]
struct Lens {
    inner: LensPrescription,
}

#[pymethods]
impl Lens {
    /// Loads a lens file, or a bundled prescription as `builtin:<name>`.
    #[staticmethod]
    #[pyo3(signature = (path, grid=None))]
    fn load(path: &str, grid: Option<&WavelengthGrid>) -> PyResult<Self> {
        let grid = match grid {
            Some(g) => g.inner,
            None => spectral::WavelengthGrid::default(),
        };
        let inner = load_lens(path, Path::new("."), &grid).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_surfaces(&self) -> usize {
        self.inner.surfaces.len()
    }

    /// Film to rear vertex, mm.
    #[getter]
    fn film_distance(&self) -> f64 {
        self.inner.film_distance
    }

    /// `(effective focal length, back focal distance)` in mm at `lambda_nm`.
    #[pyo3(signature = (lambda_nm=550.0))]
    fn paraxial_focus(&self, lambda_nm: f64) -> PyResult<(f64, f64)> {
        let f = paraxial_focus(&self.inner, lambda_nm).map_err(|v| runtime_err(format!("paraxial ray vignetted: {v:?}")))?;
        Ok((f.efl, f.back_focal_distance))
    }
}

#[pyclass(frozen, module = "pycamsim")]
struct SensorSpec {
    inner: sensor::SensorSpec,
}

#[pymethods]
impl SensorSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: sensor::parse_sensor_spec(text).map_err(value_err)?,
        })
    }

    /// Reads a spec file, or a bundled spec as `builtin:<name>`.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: cli::load_spec(spec).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn bundled_names() -> Vec<&'static str> {
        sensor::BUNDLED_SENSORS.iter().map(|(n, _)| *n).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn pixel_pitch_um(&self) -> f64 {
        self.inner.pixel_pitch_um
    }

    #[getter]
    fn adc_bits(&self) -> u32 {
        self.inner.adc_bits
    }

    /// Copy with a different fixed-pattern noise seed.
    fn with_noise_seed(&self, seed: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.noise_seed = seed;
        Self { inner }
    }

    fn __repr__(&self) -> String {
        format!(
            "SensorSpec({:?}, {}x{} at {} um)",
            self.inner.name, self.inner.cols, self.inner.rows, self.inner.pixel_pitch_um
        )
    }
}

#[pyclass(frozen, module = "pycamsim")]
struct SensorImage {
    inner: sensor::SensorImage,
}

#[pymethods]
impl SensorImage {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: sensor::read_sensor_image(&path).map_err(value_err)?,
        })
    }

    /// Writes the PGM and its JSON sidecar.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        sensor::write_sensor_image(&path, &self.inner).map(|_| ()).map_err(runtime_err)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn adc_bits(&self) -> u32 {
        self.inner.adc_bits
    }

    /// Row-major digital numbers.
    #[getter]
    fn dn(&self) -> Vec<u16> {
        self.inner.dn.clone()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<u16> {
        if x >= self.inner.cols || y >= self.inner.rows {
            return Err(value_err(format!("pixel ({x}, {y}) outside {}x{}", self.inner.cols, self.inner.rows)));
        }
        Ok(self.inner.get(x, y))
    }

    /// Filter name per pixel, row-major.
    fn filter_map(&self) -> Vec<String> {
        self.inner.filter_map().iter().map(|f| f.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("SensorImage({}x{}, {} bit)", self.inner.cols, self.inner.rows, self.inner.adc_bits)
    }
}

/// Renders a recipe file. Returns `(image, stats)`; `stats` is a dict of
/// camera-sample and vignetting counts.
#[pyfunction]
#[pyo3(signature = (recipe, asset_store=None, spp=16, max_depth=4, seed=0, grid=None, metadata=true))]
#[allow(clippy::too_many_arguments)]
fn render<'py>(
    py: Python<'py>,
    recipe: PathBuf,
    asset_store: Option<PathBuf>,
    spp: u32,
    max_depth: u32,
    seed: u64,
    grid: Option<&WavelengthGrid>,
    metadata: bool,
) -> PyResult<(SpectralImage, Bound<'py, PyAny>)> {
    let grid = grid.map_or_else(spectral::WavelengthGrid::default, |g| g.inner);
    let r = read_recipe(&recipe).map_err(value_err)?;
    let base = recipe.parent().unwrap_or(Path::new(".")).to_path_buf();
    let store_path = asset_store.unwrap_or_else(|| base.join(&r.asset_store_path));
    let store = AssetStore::open(&store_path).map_err(value_err)?;
    let cfg = RenderConfig {
        spp,
        max_depth,
        seed,
        metadata,
    };
    let (img, stats) = py
        .detach(|| render_recipe(&r, &store, &grid, &base, &cfg))
        .map_err(runtime_err)?;
    Ok((SpectralImage { inner: img }, to_py(py, &stats)?))
}

/// Bins `image` onto the sensor grid and simulates one frame.
#[pyfunction]
#[pyo3(signature = (image, spec, frame=0))]
fn simulate_sensor(py: Python<'_>, image: &SpectralImage, spec: &SensorSpec, frame: u64) -> PyResult<SensorImage> {
    let img = &image.inner;
    let spec = &spec.inner;
    let out = py
        .detach(|| -> Result<_, sensor::SensorError> {
            let binned = sensor::bin_irradiance(img, spec)?;
            let (mut out, _) = sensor::simulate_frame(&binned, spec, frame)?;
            out.provenance.source_sha256 = sensor::image_sha256(img);
            Ok(out)
        })
        .map_err(value_err)?;
    Ok(SensorImage { inner: out })
}

/// Ground-truth boxes from an image's metadata planes, as a list of dicts.
#[pyfunction]
#[pyo3(signature = (image, image_id, min_pixels=eval::MIN_INSTANCE_PIXELS))]
fn ground_truth<'py>(py: Python<'py>, image: &SpectralImage, image_id: &str, min_pixels: usize) -> PyResult<Bound<'py, PyAny>> {
    let m = image
        .inner
        .metadata()
        .ok_or_else(|| value_err("image has no metadata planes"))?;
    let set = eval::extract_ground_truth(image_id, m, image.inner.width(), min_pixels).map_err(value_err)?;
    to_py(py, &set.objects)
}

/// AP per class and distance bin. `detections` and `ground_truth` are the
/// text formats (one object per line).
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, bin_edges=None, iou_threshold=eval::DEFAULT_IOU_THRESHOLD))]
fn ap_by_distance<'py>(
    py: Python<'py>,
    detections: &str,
    ground_truth: &str,
    bin_edges: Option<Vec<f64>>,
    iou_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let dets: Vec<Detection> = eval::parse_detections(detections).map_err(value_err)?;
    let gts: Vec<GroundTruthObject> = eval::parse_ground_truth(ground_truth).map_err(value_err)?;
    let edges = bin_edges.unwrap_or_else(eval::default_bin_edges);
    let ap = eval::ap_by_distance(&dets, &gts, &edges, iou_threshold).map_err(value_err)?;
    to_py(py, &ap)
}

#[derive(Serialize)]
struct ReportOut {
    stage: &'static str,
    ok: bool,
    outputs: Vec<PathBuf>,
    failures: BTreeMap<String, String>,
    log: Vec<String>,
}

/// Runs a pipeline stage (`assemble`, `render`, `sensor`, `evaluate` or
/// `all`) from a config file, like the `camsim` command. Returns one report
/// dict per stage. Configuration errors raise `ValueError`.
#[pyfunction]
#[pyo3(signature = (config, command="all", seed=None, out=None, jobs=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: PathBuf,
    command: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let command = match command {
        "assemble" => Command::Assemble,
        "render" => Command::Render,
        "sensor" => Command::Sensor,
        "evaluate" => Command::Evaluate,
        "all" => Command::All,
        other => return Err(value_err(format!("unknown command {other:?}"))),
    };
    let cli_err = |e: CliError| match e {
        CliError::Config(_) => value_err(e),
        CliError::Io(_) => runtime_err(e),
    };
    let mut cfg = cli::load_config(&config).map_err(cli_err)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(value_err("jobs must be at least 1"));
    }
    let reports = py
        .detach(|| cli::run(command, &cfg, &Inputs::default(), jobs))
        .map_err(cli_err)?;
    let out: Vec<ReportOut> = reports
        .into_iter()
        .map(|r| ReportOut {
            stage: r.stage,
            ok: r.ok(),
            outputs: r.outputs,
            failures: r.failures.into_iter().collect(),
            log: r.log,
        })
        .collect();
    to_py(py, &out)
}

#[pymodule]
fn pycamsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<WavelengthGrid>()?;
    m.add_class::<SpectralImage>()?;
    m.add_class::<Lens>()?;
    m.add_class::<SensorSpec>()?;
    m.add_class::<SensorImage>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sensor, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(ap_by_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
