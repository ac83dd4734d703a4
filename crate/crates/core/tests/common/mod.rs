#![allow(dead_code)]

use std::path::{Path, PathBuf};

use camsim::cli::PipelineConfig;
use camsim::geometry::Vec3;
use camsim::sceneformat::{
    AssetStore, CameraConfig, ClassLabel, LightingConfig, PlacedObject, Projection, SceneRecipe, Shutter, TransformSpec, RECIPE_VERSION,
};
use camsim::spectral::SpectralCurve;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn sample_assets() -> PathBuf {
    repo_root().join("assets")
}

/// `w` × `h` rectangle in the local plane x = 0, centred on the origin.
pub fn rect_yz(id: &str, class: &str, w: f64, h: f64, material: &str) -> String {
    let (a, b) = (w / 2.0, h / 2.0);
    format!(
        "Asset \"{id}\" \"{class}\"\nMakeNamedMaterial \"m\" \"string type\" {material}\nNamedMaterial \"m\"\n\
         Shape \"trianglemesh\" \"integer indices\" [0 1 2 0 2 3]\n\
         \"point P\" [0 {} {}  0 {a} {}  0 {a} {b}  0 {} {b}]\n",
        -a, -b, -b, -a
    )
}

/// `w` × `d` rectangle in the local plane z = 0, centred on the origin.
pub fn rect_xy(id: &str, class: &str, w: f64, d: f64, material: &str) -> String {
    let (a, b) = (w / 2.0, d / 2.0);
    format!(
        "Asset \"{id}\" \"{class}\"\nMakeNamedMaterial \"m\" \"string type\" {material}\nNamedMaterial \"m\"\n\
         Shape \"trianglemesh\" \"integer indices\" [0 1 2 0 2 3]\n\
         \"point P\" [{} {} 0  {a} {} 0  {a} {b} 0  {} {b} 0]\n",
        -a, -b, -b, -a
    )
}

pub const GREY: &str = "\"diffuse\" \"float reflectance\" 0.5";

pub fn emissive(l: f64) -> String {
    format!("\"emissive\" \"float L\" {l}")
}

pub fn store(texts: &[String]) -> AssetStore {
    AssetStore::from_texts(texts.iter().map(String::as_str)).unwrap()
}

/// Pinhole camera at the origin looking along +X with Z up.
pub fn pinhole(w: usize, h: usize, fov_deg: f64) -> CameraConfig {
    CameraConfig {
        position: Vec3::ZERO,
        look_at: Vec3::X,
        up: Vec3::Z,
        projection: Projection::Pinhole { fov_deg },
        film_width_px: w,
        film_height_px: h,
        exposure_s: 0.01,
        f_number: 2.0,
    }
}

pub fn placed(asset: &str, class: ClassLabel, id: u32, start: Vec3, end: Vec3) -> PlacedObject {
    PlacedObject {
        asset_id: asset.into(),
        class_label: class,
        instance_id: id,
        transform_start: TransformSpec::translation(start),
        transform_end: TransformSpec::translation(end),
        speed: 0.0,
    }
}

pub fn recipe(camera: CameraConfig, sky: f64, shutter: Shutter, objects: Vec<PlacedObject>) -> SceneRecipe {
    SceneRecipe {
        recipe_version: RECIPE_VERSION.into(),
        seed: 1,
        asset_store_path: String::new(),
        camera,
        lighting: LightingConfig {
            sky_map: None,
            sky_radiance: SpectralCurve::Constant(sky),
            sky_scale: 1.0,
        },
        shutter,
        objects,
    }
}

/// The sample pipeline config at 64 × 64, 8 bands, 16 spp, writing to
/// `out`, with an optional detection file.
pub fn small_pipeline(out: &Path, count: usize, detections: Option<&Path>) -> PipelineConfig {
    let path = repo_root().join("configs/pipeline.json");
    let mut cfg = camsim::cli::load_config(&path).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.assemble.as_mut().unwrap().count = count;
    cfg.render.n_bands = 8;
    cfg.render.spp = 16;
    if let Some(d) = detections {
        cfg.evaluate.detections.insert("fine".into(), d.to_path_buf());
    }
    cfg
}

/// Every file below `dir` as (relative path, bytes), sorted, skipping
/// names in `skip`.
pub fn snapshot(dir: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, skip: &[&str], out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, skip, out);
            } else if !skip.iter().any(|s| p.file_name().is_some_and(|n| n == *s)) {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, skip, &mut out);
    out.sort();
    out
}
