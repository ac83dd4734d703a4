//! Batch pipeline: assemble → render → sensor → evaluate.
//!
//! Stages communicate only through files under one output directory:
//!
//! ```text
//! recipes/scene_NNNN.json   recipes/manifest.json
//! render/<id>.spim          render/<id>.png        render/stats.json   render/timing.log
//! sensor/<id>__<spec>.pgm   sensor/<id>__<spec>.json                   sensor/manifest.json
//! eval/ground_truth.txt     eval/<run>_ap.json     eval/<run>_ap.csv
//! ```
//!
//! Configuration is JSON ([`PipelineConfig`]); relative paths in it are
//! resolved against the directory holding the config file. Every stage seed
//! comes from the master seed through [`derive_seed`]:
//!
//! | stage    | seed                                                        |
//! |----------|-------------------------------------------------------------|
//! | assemble | scene `i`: `derive_seed(master, "assemble", i)`              |
//! | render   | recipe with seed `s`: `derive_seed(master, "render", s)`     |
//! | sensor   | spec `n`: `noise_seed = derive_seed(master, "sensor/" + n, 0)`; the frame index is `rng::key(image stem)` |
//!
//! `render/timing.log` is the only artifact that varies between runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble_recipe, CameraSetup, RoadNetwork, TrafficConfig};
use crate::eval::{
    ap_by_distance, ap_csv, default_bin_edges, extract_ground_truth, read_detections, read_ground_truth, write_ground_truth,
    ApByDistance, GroundTruthObject, DEFAULT_IOU_THRESHOLD, MIN_INSTANCE_PIXELS,
};
use crate::render::{render_recipe, write_preview_png, auto_tone_scale, RenderConfig, RenderStats, BUILTIN_PREFIX};
use crate::rng::{derive_seed, key};
use crate::sceneformat::{
    read_recipe, read_spectral_image, recipe_to_string, validate_recipe, write_spectral_image, AssetStore, LightingConfig,
    Projection, Shutter,
};
use crate::sensor::{bin_irradiance, bundled_sensor, image_sha256, read_sensor_spec, simulate_frame, write_sensor_image, SensorSpec};
use crate::spectral::WavelengthGrid;

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Exit code 1.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub assemble: bool,
    #[serde(default = "yes")]
    pub render: bool,
    #[serde(default = "yes")]
    pub sensor: bool,
    #[serde(default = "yes")]
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            assemble: true,
            render: true,
            sensor: true,
            evaluate: true,
        }
    }
}

fn default_shutter() -> Shutter {
    Shutter { open: 0.0, close: 1.0 / 60.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleConfig {
    pub count: usize,
    pub road: RoadNetwork,
    pub traffic: TrafficConfig,
    pub camera: CameraSetup,
    #[serde(default)]
    pub lighting: LightingConfig,
    #[serde(default = "default_shutter")]
    pub shutter: Shutter,
}

fn default_spp() -> u32 {
    16
}
fn default_depth() -> u32 {
    4
}
fn default_lambda_min() -> f64 {
    400.0
}
fn default_lambda_max() -> f64 {
    700.0
}
fn default_bands() -> usize {
    31
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderStageConfig {
    #[serde(default = "default_spp")]
    pub spp: u32,
    #[serde(default = "default_depth")]
    pub max_depth: u32,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_bands")]
    pub n_bands: usize,
    #[serde(default = "yes")]
    pub metadata: bool,
    #[serde(default = "yes")]
    pub preview: bool,
}

impl Default for RenderStageConfig {
    fn default() -> Self {
        Self {
            spp: default_spp(),
            max_depth: default_depth(),
            lambda_min: default_lambda_min(),
            lambda_max: default_lambda_max(),
            n_bands: default_bands(),
            metadata: true,
            preview: true,
        }
    }
}

impl RenderStageConfig {
    pub fn grid(&self) -> Result<WavelengthGrid, CliError> {
        WavelengthGrid::new(self.lambda_min, self.lambda_max, self.n_bands).map_err(|e| CliError::Config(format!("render grid: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorStageConfig {
    /// Spec files, or `builtin:<name>` for a bundled spec.
    #[serde(default)]
    pub specs: Vec<String>,
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}
fn default_min_pixels() -> usize {
    MIN_INSTANCE_PIXELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalStageConfig {
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub bin_edges: Option<Vec<f64>>,
    #[serde(default = "default_min_pixels")]
    pub min_instance_pixels: usize,
    /// Detection files keyed by run name (for example one per sensor).
    #[serde(default)]
    pub detections: BTreeMap<String, PathBuf>,
    /// Ground-truth text file; when absent, ground truth is extracted from
    /// the metadata planes of the rendered images.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        Self {
            iou_threshold: default_iou(),
            bin_edges: None,
            min_instance_pixels: default_min_pixels(),
            detections: BTreeMap::new(),
            ground_truth: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub asset_store: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub assemble: Option<AssembleConfig>,
    #[serde(default)]
    pub render: RenderStageConfig,
    #[serde(default)]
    pub sensor: SensorStageConfig,
    #[serde(default)]
    pub evaluate: EvalStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            asset_store: None,
            output_dir: default_out(),
            stages: StageToggles::default(),
            assemble: None,
            render: RenderStageConfig::default(),
            sensor: SensorStageConfig::default(),
            evaluate: EvalStageConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_str(base: &Path, s: &mut String) {
    if !s.starts_with(BUILTIN_PREFIX) && Path::new(s.as_str()).is_relative() {
        *s = base.join(&*s).display().to_string();
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.asset_store {
            rebase(base, p);
        }
        rebase(base, &mut self.output_dir);
        for s in &mut self.sensor.specs {
            rebase_str(base, s);
        }
        for p in self.evaluate.detections.values_mut() {
            rebase(base, p);
        }
        if let Some(p) = &mut self.evaluate.ground_truth {
            rebase(base, p);
        }
        if let Some(a) = &mut self.assemble {
            if let Projection::Lens { file, .. } = &mut a.camera.projection {
                rebase_str(base, file);
            }
            if let Some(m) = &mut a.lighting.sky_map {
                rebase_str(base, m);
            }
        }
    }

    /// Checks stage settings and that every referenced input exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let exists = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(p) = &self.asset_store {
            exists("asset store", p)?;
        }
        if let Some(a) = &self.assemble {
            a.traffic.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if let Projection::Lens { file, .. } = &a.camera.projection {
                if !file.starts_with(BUILTIN_PREFIX) {
                    exists("lens file", Path::new(file))?;
                }
            }
            if let Some(m) = &a.lighting.sky_map {
                exists("sky map", Path::new(m))?;
            }
        }
        self.render.grid()?;
        if self.render.spp == 0 || self.render.max_depth == 0 {
            return bad("render.spp and render.max_depth must be at least 1".into());
        }
        for s in &self.sensor.specs {
            load_spec(s)?;
        }
        if !(self.evaluate.iou_threshold > 0.0 && self.evaluate.iou_threshold <= 1.0) {
            return bad(format!("evaluate.iou_threshold {} outside (0, 1]", self.evaluate.iou_threshold));
        }
        if let Some(e) = &self.evaluate.bin_edges {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return bad("evaluate.bin_edges must be strictly increasing with at least two edges".into());
            }
        }
        for p in self.evaluate.detections.values() {
            exists("detection file", p)?;
        }
        if let Some(p) = &self.evaluate.ground_truth {
            exists("ground-truth file", p)?;
        }
        Ok(())
    }
}

/// Reads, resolves and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, CliError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = PipelineConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a spec file or `builtin:<name>`.
pub fn load_spec(s: &str) -> Result<SensorSpec, CliError> {
    match s.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => bundled_sensor(name).ok_or_else(|| CliError::Config(format!("no bundled sensor named {name:?}"))),
        None => read_sensor_spec(s).map_err(|e| CliError::Config(e.to_string())),
    }
}

/// Outcome of one stage: successful outputs and per-item failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub stage: &'static str,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<(String, String)>,
    /// Progress lines for stderr.
    pub log: Vec<String>,
    /// Human-readable result tables for stdout.
    pub summary: String,
}

impl StageReport {
    fn new(stage: &'static str) -> Self {
        Self {
            stage,
            ..Self::default()
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Per-item outcome; the error is `(item, message)`.
type ItemResult<T> = Result<T, (String, String)>;

fn mkdir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(p, bytes).map_err(|e| io_err(p, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
    pub sha256: String,
}

/// Recipe manifest; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub master_seed: u64,
    pub recipes: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Recipe paths listed by the manifest in `dir`.
pub fn manifest_recipes(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    Ok(read_manifest(&dir.join(MANIFEST))?.recipes.into_iter().map(|r| dir.join(r.path)).collect())
}

/// Writes `count` recipes and a manifest into `out/recipes`. Recipes
/// record the asset store relative to that directory.
pub fn cmd_assemble(cfg: &PipelineConfig, out: &Path, jobs: usize) -> Result<StageReport, CliError> {
    let a = cfg
        .assemble
        .as_ref()
        .ok_or_else(|| CliError::Config("the assemble stage needs an `assemble` section".into()))?;
    let store_path = cfg
        .asset_store
        .as_ref()
        .ok_or_else(|| CliError::Config("the assemble stage needs `asset_store`".into()))?;
    let store = AssetStore::open(store_path).map_err(|e| CliError::Config(e.to_string()))?;
    if store.is_empty() {
        return Err(CliError::Config(format!("asset store {} holds no assets", store_path.display())));
    }
    let dir = out.join("recipes");
    mkdir(&dir)?;
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let store_abs = abs(store_path);
    let store_str = pathdiff::diff_paths(&store_abs, abs(&dir)).unwrap_or(store_abs).display().to_string();

    let results: Vec<ItemResult<(ManifestEntry, Vec<String>)>> = pool(jobs)?.install(|| {
        (0..a.count)
            .into_par_iter()
            .map(|i| {
                let name = format!("scene_{i:04}");
                let fail = |m: String| (name.clone(), m);
                let mut traffic = a.traffic.clone();
                traffic.seed = derive_seed(cfg.master_seed, "assemble", i as u64);
                let (recipe, log) = assemble_recipe(&a.road, &traffic, &store, &a.camera, &a.lighting, a.shutter, &store_str)
                    .map_err(|e| fail(e.to_string()))?;
                let text = recipe_to_string(&recipe);
                let file = format!("{name}.json");
                write(&dir.join(&file), &text).map_err(|e| fail(e.to_string()))?;
                let entry = ManifestEntry {
                    path: file,
                    seed: recipe.seed,
                    sha256: crate::sensor::hex_digest(text.as_bytes()),
                };
                Ok((entry, log.into_iter().map(|l| format!("assemble {name}: {l}")).collect()))
            })
            .collect()
    });

    let mut report = StageReport::new("assemble");
    let mut manifest = Manifest {
        master_seed: cfg.master_seed,
        recipes: Vec::new(),
    };
    for r in results {
        match r {
            Ok((e, log)) => {
                report.outputs.push(dir.join(&e.path));
                report.log.extend(log);
                manifest.recipes.push(e);
            }
            Err(f) => report.failures.push(f),
        }
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    write(&dir.join(MANIFEST), text)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RenderLogEntry {
    recipe: String,
    seed: u64,
    #[serde(flatten)]
    stats: RenderStats,
    vignetted_fraction: f64,
}

/// Renders each recipe to `out/render/<stem>.spim` plus a preview PNG.
/// The asset store is `cfg.asset_store` when set, otherwise the recipe's
/// own `asset_store_path`. Lens files and sky maps resolve against the
/// recipe's directory.
pub fn cmd_render(cfg: &PipelineConfig, recipes: &[PathBuf], out: &Path, jobs: usize) -> Result<StageReport, CliError> {
    let grid = cfg.render.grid()?;
    let dir = out.join("render");
    mkdir(&dir)?;
    let stores: std::sync::Mutex<BTreeMap<PathBuf, Arc<AssetStore>>> = Default::default();
    let open_store = |p: &Path| -> Result<Arc<AssetStore>, String> {
        if let Some(s) = stores.lock().expect("store cache").get(p) {
            return Ok(s.clone());
        }
        let s = Arc::new(AssetStore::open(p).map_err(|e| e.to_string())?);
        stores.lock().expect("store cache").insert(p.to_path_buf(), s.clone());
        Ok(s)
    };

    let results: Vec<ItemResult<(PathBuf, RenderLogEntry, f64)>> = pool(jobs)?.install(|| {
        recipes
            .par_iter()
            .map(|path| {
                let name = stem(path);
                let fail = |m: String| (path.display().to_string(), m);
                let start = Instant::now();
                let recipe = read_recipe(path).map_err(|e| fail(e.to_string()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let store_path = match &cfg.asset_store {
                    Some(p) => p.clone(),
                    None => base.join(&recipe.asset_store_path),
                };
                let store = open_store(&store_path).map_err(fail)?;
                validate_recipe(&recipe, &store).map_err(|e| fail(e.to_string()))?;
                let rc = RenderConfig {
                    spp: cfg.render.spp,
                    max_depth: cfg.render.max_depth,
                    seed: derive_seed(cfg.master_seed, "render", recipe.seed),
                    metadata: cfg.render.metadata,
                };
                let (img, stats) = render_recipe(&recipe, &store, &grid, base, &rc).map_err(|e| fail(e.to_string()))?;
                let tone = auto_tone_scale(&img);
                let spim = dir.join(format!("{name}.spim"));
                write_spectral_image(&img, &spim, Some(tone)).map_err(|e| fail(e.to_string()))?;
                if cfg.render.preview {
                    write_preview_png(dir.join(format!("{name}.png")), &img, tone).map_err(|e| fail(e.to_string()))?;
                }
                let entry = RenderLogEntry {
                    recipe: name,
                    seed: rc.seed,
                    stats,
                    vignetted_fraction: if stats.camera_samples == 0 {
                        0.0
                    } else {
                        stats.vignetted() as f64 / stats.camera_samples as f64
                    },
                };
                Ok((spim, entry, start.elapsed().as_secs_f64()))
            })
            .collect()
    });

    let mut report = StageReport::new("render");
    let mut log = Vec::new();
    let mut timing = String::new();
    for r in results {
        match r {
            Ok((p, entry, secs)) => {
                report.log.push(format!(
                    "render {}: {:.1}% vignetted, {secs:.2} s",
                    entry.recipe,
                    100.0 * entry.vignetted_fraction
                ));
                writeln!(timing, "{} {secs:.3}", entry.recipe).expect("string write");
                report.outputs.push(p);
                log.push(entry);
            }
            Err(f) => report.failures.push(f),
        }
    }
    write(&dir.join("stats.json"), serde_json::to_string_pretty(&log).expect("stats serialise") + "\n")?;
    write(&dir.join("timing.log"), timing)?;
    Ok(report)
}

/// Spectral images in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "spim"))
        .collect();
    v.sort();
    Ok(v)
}

/// Simulates every image × spec pair into `out/sensor`.
pub fn cmd_sensor(cfg: &PipelineConfig, images: &[PathBuf], specs: &[SensorSpec], out: &Path, jobs: usize) -> Result<StageReport, CliError> {
    let dir = out.join("sensor");
    mkdir(&dir)?;
    let specs: Vec<SensorSpec> = specs
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.noise_seed = derive_seed(cfg.master_seed, &format!("sensor/{}", s.name), 0);
            s
        })
        .collect();
    let pairs: Vec<(&PathBuf, &SensorSpec)> = images.iter().flat_map(|i| specs.iter().map(move |s| (i, s))).collect();

    let results: Vec<Result<PathBuf, (String, String)>> = pool(jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|(path, spec)| {
                let fail = |m: String| (format!("{} × {}", path.display(), spec.name), m);
                let img = read_spectral_image(path).map_err(|e| fail(e.to_string()))?;
                let binned = bin_irradiance(&img, spec).map_err(|e| fail(e.to_string()))?;
                let name = stem(path);
                let (mut si, _) = simulate_frame(&binned, spec, key(&name)).map_err(|e| fail(e.to_string()))?;
                si.provenance.source_sha256 = image_sha256(&img);
                let target = dir.join(format!("{name}__{}.pgm", spec.name));
                write_sensor_image(&target, &si).map_err(|e| fail(e.to_string()))?;
                Ok(target)
            })
            .collect()
    });

    let mut report = StageReport::new("sensor");
    for r in results {
        match r {
            Ok(p) => report.outputs.push(p),
            Err(f) => report.failures.push(f),
        }
    }
    let listing: Vec<String> = report
        .outputs
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    write(&dir.join(MANIFEST), serde_json::to_string_pretty(&listing).expect("listing serialises") + "\n")?;
    Ok(report)
}

/// Ground truth from the metadata planes of `images`; the image id is the
/// file stem.
pub fn ground_truth_from_images(images: &[PathBuf], min_pixels: usize) -> (Vec<GroundTruthObject>, Vec<(String, String)>) {
    let mut objects = Vec::new();
    let mut failures = Vec::new();
    for p in images {
        let r = read_spectral_image(p).map_err(|e| e.to_string()).and_then(|img| {
            let m = img.metadata().ok_or_else(|| "image has no metadata planes".to_string())?;
            extract_ground_truth(&stem(p), m, img.width(), min_pixels).map_err(|e| e.to_string())
        });
        match r {
            Ok(set) => objects.extend(set.objects),
            Err(e) => failures.push((p.display().to_string(), e)),
        }
    }
    (objects, failures)
}

pub fn summary_table(name: &str, r: &ApByDistance) -> String {
    let mut s = format!("{name}: AP by distance (IoU ≥ {})\n", r.iou_threshold);
    let _ = write!(s, "{:>8}", "bin");
    for c in r.classes.keys() {
        let _ = write!(s, " {:>14}", c.to_string());
    }
    s.push('\n');
    for (i, center) in r.bin_centers().iter().enumerate() {
        let _ = write!(s, "{center:>8}");
        for bins in r.classes.values() {
            let b = &bins[i];
            let cell = match b.ap {
                Some(ap) => format!("{ap:.3} ({})", b.n_gt),
                None => "-".to_string(),
            };
            let _ = write!(s, " {cell:>14}");
        }
        s.push('\n');
    }
    s
}

/// Scores each detection set against the ground truth and writes the AP
/// JSON and CSV per run into `out/eval`. Ground truth comes from
/// `gt_file` when given, otherwise from `images`.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    detections: &BTreeMap<String, PathBuf>,
    gt_file: Option<&Path>,
    images: &[PathBuf],
    out: &Path,
) -> Result<StageReport, CliError> {
    let dir = out.join("eval");
    mkdir(&dir)?;
    let mut report = StageReport::new("evaluate");
    let gts = match gt_file {
        Some(p) => read_ground_truth(p).map_err(|e| CliError::Io(e.to_string()))?,
        None => {
            let (gts, failures) = ground_truth_from_images(images, cfg.evaluate.min_instance_pixels);
            report.failures.extend(failures);
            let p = dir.join("ground_truth.txt");
            write_ground_truth(&p, &gts).map_err(|e| CliError::Io(e.to_string()))?;
            report.outputs.push(p);
            gts
        }
    };
    if detections.is_empty() {
        report.log.push("evaluate: no detection files configured; wrote ground truth only".into());
    }
    let edges = cfg.evaluate.bin_edges.clone().unwrap_or_else(default_bin_edges);
    for (name, path) in detections {
        let r = read_detections(path)
            .and_then(|dets| ap_by_distance(&dets, &gts, &edges, cfg.evaluate.iou_threshold))
            .map_err(|e| e.to_string());
        match r {
            Ok(ap) => {
                let json = dir.join(format!("{name}_ap.json"));
                let csv = dir.join(format!("{name}_ap.csv"));
                write(&json, serde_json::to_string_pretty(&ap).expect("ap serialises") + "\n")?;
                write(&csv, ap_csv(&ap))?;
                report.summary.push_str(&summary_table(name, &ap));
                report.outputs.extend([json, csv]);
            }
            Err(e) => report.failures.push((path.display().to_string(), e)),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Assemble,
    Render,
    Sensor,
    Evaluate,
    All,
}

/// Explicit stage inputs; empty lists fall back to the previous stage's
/// outputs under the output directory, and to the config for specs and
/// detections.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub recipes: Vec<PathBuf>,
    pub images: Vec<PathBuf>,
    pub specs: Vec<String>,
    pub detections: BTreeMap<String, PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

/// Runs `command` and returns one report per stage executed. A
/// [`CliError`] aborts the run; per-item failures are in the reports.
pub fn run(command: Command, cfg: &PipelineConfig, inputs: &Inputs, jobs: usize) -> Result<Vec<StageReport>, CliError> {
    let out = cfg.output_dir.as_path();
    let all = command == Command::All;
    let mut reports = Vec::new();

    if command == Command::Assemble || (all && cfg.stages.assemble) {
        reports.push(cmd_assemble(cfg, out, jobs)?);
    }
    if command == Command::Render || (all && cfg.stages.render) {
        let recipes = if inputs.recipes.is_empty() {
            manifest_recipes(&out.join("recipes"))?
        } else {
            inputs.recipes.clone()
        };
        reports.push(cmd_render(cfg, &recipes, out, jobs)?);
    }
    let images = || -> Result<Vec<PathBuf>, CliError> {
        if inputs.images.is_empty() {
            let d = out.join("render");
            if d.is_dir() {
                list_images(&d)
            } else {
                Ok(Vec::new())
            }
        } else {
            Ok(inputs.images.clone())
        }
    };
    if command == Command::Sensor || (all && cfg.stages.sensor) {
        let names = if inputs.specs.is_empty() { &cfg.sensor.specs } else { &inputs.specs };
        let specs = names.iter().map(|s| load_spec(s)).collect::<Result<Vec<_>, _>>()?;
        reports.push(cmd_sensor(cfg, &images()?, &specs, out, jobs)?);
    }
    if command == Command::Evaluate || (all && cfg.stages.evaluate) {
        let dets = if inputs.detections.is_empty() { &cfg.evaluate.detections } else { &inputs.detections };
        let gt = inputs.ground_truth.as_deref().or(cfg.evaluate.ground_truth.as_deref());
        let imgs = if gt.is_some() { Vec::new() } else { images()? };
        reports.push(cmd_evaluate(cfg, dets, gt, &imgs, out)?);
    }
    Ok(reports)
}
