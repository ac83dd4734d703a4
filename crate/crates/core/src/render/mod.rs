//! Spectral Monte Carlo renderer.

pub mod bvh;
pub mod camera;
pub mod integrator;
pub mod material;
pub mod scene;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use camera::{CameraModel, CameraRay, RenderCamera};
pub use integrator::{auto_tone_scale, preview_rgb8, render, write_preview_png, RenderConfig, RenderStats};
pub use material::{scatter, Lobe, Scatter};
pub use scene::{Environment, Hit, Material, RenderScene, SceneError, SceneObject};

use crate::optics::{bundled_lens, parse_lens, LensError, LensPrescription};
use crate::sceneformat::{read_spectral_image, AssetStore, Projection, SceneRecipe, SpimError};
use crate::spectral::{SpectralImage, WavelengthGrid};

/// Prefix selecting a prescription from [`crate::optics::BUNDLED_LENSES`].
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("lens {path}: {source}")]
    Lens { path: String, source: LensError },
    #[error("lens {path}: {msg}")]
    LensFile { path: String, msg: String },
    #[error("sky map: {0}")]
    SkyMap(#[from] SpimError),
    #[error("camera: {0}")]
    Camera(String),
    #[error("render config: {0}")]
    Config(String),
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a lens file, or a bundled prescription named `builtin:<name>`.
pub fn load_lens(file: &str, base: &Path, grid: &WavelengthGrid) -> Result<LensPrescription, RenderError> {
    let text = match file.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => bundled_lens(name)
            .ok_or_else(|| RenderError::LensFile {
                path: file.into(),
                msg: "no bundled lens with that name".into(),
            })?
            .to_string(),
        None => std::fs::read_to_string(resolve(base, file)).map_err(|e| RenderError::LensFile {
            path: file.into(),
            msg: e.to_string(),
        })?,
    };
    parse_lens(&text, grid).map_err(|source| RenderError::Lens {
        path: file.into(),
        source,
    })
}

/// Equirectangular sky map resampled onto `grid`.
pub fn load_environment(path: &Path, scale: f64, grid: &WavelengthGrid) -> Result<Environment, RenderError> {
    let img = read_spectral_image(path)?;
    let image = if img.grid().matches(grid) {
        img
    } else {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0f32; w * h * grid.n_bands()];
        for y in 0..h {
            for x in 0..w {
                let s = img.pixel_spectrum(x, y).resample(grid);
                for (b, v) in s.values().iter().enumerate() {
                    data[b * w * h + y * w + x] = *v as f32;
                }
            }
        }
        SpectralImage::new(w, h, *grid, data).map_err(|e| SpimError::Content(e.to_string()))?
    };
    Ok(Environment::Map { image, scale })
}

/// Builds the render scene and camera for `recipe`, resolving lens files
/// and sky maps relative to `base`.
pub fn prepare(
    recipe: &SceneRecipe,
    store: &AssetStore,
    grid: &WavelengthGrid,
    base: &Path,
) -> Result<(RenderScene, RenderCamera), RenderError> {
    let lens = match &recipe.camera.projection {
        Projection::Lens { file, .. } => Some(load_lens(file, base, grid)?),
        _ => None,
    };
    let environment = match &recipe.lighting.sky_map {
        Some(map) => Some(load_environment(&resolve(base, map), recipe.lighting.sky_scale, grid)?),
        None => None,
    };
    let scene = RenderScene::build(recipe, store, grid, environment)?;
    let camera = RenderCamera::from_config(&recipe.camera, lens).map_err(RenderError::Camera)?;
    Ok((scene, camera))
}

/// Convenience wrapper: [`prepare`] followed by [`render`].
pub fn render_recipe(
    recipe: &SceneRecipe,
    store: &AssetStore,
    grid: &WavelengthGrid,
    base: &Path,
    cfg: &RenderConfig,
) -> Result<(SpectralImage, RenderStats), RenderError> {
    cfg.validate().map_err(RenderError::Config)?;
    let (scene, camera) = prepare(recipe, store, grid, base)?;
    Ok(render(&scene, &camera, cfg))
}
