//! Monte Carlo spectral path tracer producing film irradiance and
//! per-pixel metadata.

use std::path::Path;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::RenderCamera;
use super::material::{cosine_hemisphere, scatter, Lobe};
use super::scene::{Material, RenderScene};
use crate::geometry::Vec3;
use crate::optics::Vignette;
use crate::rng;
use crate::spectral::{preview_weights, MetadataPlanes, SpectralImage};

const T_MIN: f64 = 1e-7;

fn default_spp() -> u32 {
    16
}

fn default_depth() -> u32 {
    4
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default = "default_spp")]
    pub spp: u32,
    /// Maximum number of surface interactions per path.
    #[serde(default = "default_depth")]
    pub max_depth: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub metadata: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            spp: default_spp(),
            max_depth: default_depth(),
            seed: 0,
            metadata: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.spp == 0 {
            return Err("spp must be at least 1".into());
        }
        if self.max_depth == 0 {
            return Err("max_depth must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RenderStats {
    pub camera_samples: u64,
    pub vignetted_aperture: u64,
    pub vignetted_tir: u64,
    pub vignetted_no_convergence: u64,
    pub vignetted_missed: u64,
}

impl RenderStats {
    pub fn vignetted(&self) -> u64 {
        self.vignetted_aperture + self.vignetted_tir + self.vignetted_no_convergence + self.vignetted_missed
    }

    /// Every camera sample was vignetted, so the image is identically zero.
    pub fn zero_weight(&self) -> bool {
        self.camera_samples > 0 && self.vignetted() == self.camera_samples
    }

    fn record(&mut self, v: Vignette) {
        match v {
            Vignette::Aperture => self.vignetted_aperture += 1,
            Vignette::TotalInternalReflection => self.vignetted_tir += 1,
            Vignette::NoConvergence => self.vignetted_no_convergence += 1,
            Vignette::Missed => self.vignetted_missed += 1,
        }
    }

    fn merge(mut self, o: &RenderStats) -> Self {
        self.camera_samples += o.camera_samples;
        self.vignetted_aperture += o.vignetted_aperture;
        self.vignetted_tir += o.vignetted_tir;
        self.vignetted_no_convergence += o.vignetted_no_convergence;
        self.vignetted_missed += o.vignetted_missed;
        self
    }
}

fn offset_point(p: Vec3, n: Vec3) -> Vec3 {
    p + n * (1e-9 * (1.0 + p.length()) + 1e-7)
}

/// Adds the radiance arriving along the ray into `out`, scaled per band by
/// the path throughput.
fn trace_path(
    scene: &RenderScene,
    mut origin: Vec3,
    mut dir: Vec3,
    u: f64,
    max_depth: u32,
    rng: &mut rng::Rng,
    out: &mut [f64],
) {
    let nb = out.len();
    let mut beta = vec![1.0; nb];
    let mut env = vec![0.0; nb];
    let mut count_env = true;
    for _ in 0..max_depth {
        let Some(hit) = scene.intersect(origin, dir, u, T_MIN, f64::INFINITY) else {
            if count_env {
                scene.environment.radiance_into(dir, &mut env);
                for b in 0..nb {
                    out[b] += beta[b] * env[b];
                }
            }
            return;
        };
        let material = scene.material(&hit);
        let (reflectance, lambert) = match material {
            Material::Emissive { radiance } => {
                for b in 0..nb {
                    out[b] += beta[b] * radiance[b];
                }
                return;
            }
            Material::Diffuse { reflectance } => (reflectance, 1.0),
            Material::Retroreflective { reflectance, fraction, .. } => (reflectance, 1.0 - fraction),
        };
        let n = if hit.normal.dot(dir) > 0.0 { -hit.normal } else { hit.normal };
        let p = offset_point(hit.point, n);
        if lambert > 0.0 {
            let wl = cosine_hemisphere(n, rng);
            if !scene.occluded(p, wl, u, T_MIN) {
                scene.environment.radiance_into(wl, &mut env);
                for b in 0..nb {
                    out[b] += beta[b] * lambert * reflectance[b] * env[b];
                }
            }
        }
        let Some(s) = scatter(material, dir, hit.normal, rng) else {
            return;
        };
        count_env = s.lobe == Lobe::Retro;
        for b in 0..nb {
            beta[b] *= reflectance[b];
        }
        if beta.iter().all(|&v| v == 0.0) {
            return;
        }
        origin = p;
        dir = s.direction;
    }
}

struct Row {
    irradiance: Vec<f64>,
    depth: Vec<f32>,
    class_id: Vec<u32>,
    instance_id: Vec<u32>,
    stats: RenderStats,
}

fn render_row(scene: &RenderScene, camera: &RenderCamera, cfg: &RenderConfig, y: usize) -> Row {
    let (w, nb) = (camera.width, scene.grid.n_bands());
    let is_lens = matches!(camera.model, super::camera::CameraModel::Lens { .. });
    let centers = scene.grid.centers();
    let mid_lambda = (scene.grid.lambda_min() + scene.grid.lambda_max()) / 2.0;
    let mut row = Row {
        irradiance: vec![0.0; w * nb],
        depth: vec![0.0; w],
        class_id: vec![0; w],
        instance_id: vec![0; w],
        stats: RenderStats::default(),
    };
    let mut radiance = vec![0.0; nb];
    let mut acc = vec![0.0; nb];
    for x in 0..w {
        let pixel = (y * w + x) as u64;
        acc.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..cfg.spp {
            let mut r = rng::stream(cfg.seed, &[pixel, u64::from(s)]);
            let u: f64 = r.random();
            let (jx, jy): (f64, f64) = (r.random(), r.random());
            let band = if is_lens { Some(r.random_range(0..nb)) } else { None };
            let lambda = band.map_or(mid_lambda, |b| centers[b]);
            row.stats.camera_samples += 1;
            let ray = match camera.generate(x as f64 + jx, y as f64 + jy, lambda, &mut r) {
                Ok(ray) => ray,
                Err(v) => {
                    row.stats.record(v);
                    continue;
                }
            };
            radiance.iter_mut().for_each(|v| *v = 0.0);
            trace_path(scene, ray.origin, ray.direction, u, cfg.max_depth, &mut r, &mut radiance);
            match band {
                Some(b) => acc[b] += ray.weight * nb as f64 * radiance[b],
                None => {
                    for b in 0..nb {
                        acc[b] += ray.weight * radiance[b];
                    }
                }
            }
        }
        for b in 0..nb {
            row.irradiance[b * w + x] = acc[b] / f64::from(cfg.spp);
        }
        if cfg.metadata {
            if let Some((o, d)) = camera.center_ray(x, y, mid_lambda) {
                if let Some(hit) = scene.intersect(o, d, 0.0, T_MIN, f64::INFINITY) {
                    let obj = &scene.objects[hit.object];
                    row.depth[x] = (hit.point - camera.pose.position).length() as f32;
                    row.class_id[x] = obj.class_id;
                    row.instance_id[x] = obj.instance_id;
                }
            }
        }
    }
    row
}

/// Renders film irradiance (W·m⁻²·nm⁻¹ up to the camera's geometric
/// factor) with metadata planes when enabled.
pub fn render(scene: &RenderScene, camera: &RenderCamera, cfg: &RenderConfig) -> (SpectralImage, RenderStats) {
    let (w, h, nb) = (camera.width, camera.height, scene.grid.n_bands());
    let rows: Vec<Row> = (0..h).into_par_iter().map(|y| render_row(scene, camera, cfg, y)).collect();
    let mut data = vec![0f32; w * h * nb];
    let mut meta = MetadataPlanes::empty(w * h);
    let mut stats = RenderStats::default();
    for (y, row) in rows.iter().enumerate() {
        for b in 0..nb {
            for x in 0..w {
                data[b * w * h + y * w + x] = row.irradiance[b * w + x] as f32;
            }
        }
        meta.depth[y * w..(y + 1) * w].copy_from_slice(&row.depth);
        meta.class_id[y * w..(y + 1) * w].copy_from_slice(&row.class_id);
        meta.instance_id[y * w..(y + 1) * w].copy_from_slice(&row.instance_id);
        stats = stats.merge(&row.stats);
    }
    let img = SpectralImage::new(w, h, scene.grid, data).expect("irradiance is finite and non-negative");
    let img = if cfg.metadata {
        img.with_metadata(meta).expect("planes match the image size")
    } else {
        img
    };
    (img, stats)
}

/// Tone scale mapping the mean preview value to 0.5.
pub fn auto_tone_scale(img: &SpectralImage) -> f64 {
    let mean = img.data().iter().map(|&v| f64::from(v)).sum::<f64>() / img.data().len().max(1) as f64;
    if mean > 0.0 {
        0.5 / mean
    } else {
        1.0
    }
}

/// 8-bit sRGB-ish preview (gamma 1/2.2) of `img` scaled by `tone`.
pub fn preview_rgb8(img: &SpectralImage, tone: f64) -> Vec<u8> {
    let weights = preview_weights(img.grid());
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in &weights {
                let v: f64 = ch.iter().enumerate().map(|(b, k)| k * f64::from(img.get(x, y, b))).sum();
                let v = (v * tone).clamp(0.0, 1.0).powf(1.0 / 2.2);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn write_preview_png(path: impl AsRef<Path>, img: &SpectralImage, tone: f64) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(std::io::Error::other)?;
    writer
        .write_image_data(&preview_rgb8(img, tone))
        .map_err(std::io::Error::other)?;
    writer.finish().map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::geometry::{Quat, Similarity};
    use crate::render::scene::{Environment, MeshData, SceneObject};
    use crate::sceneformat::{
        parse_asset, AssetStore, CameraConfig, LightingConfig, PlacedObject, Projection, SceneRecipe, Shutter,
        TransformSpec, RECIPE_VERSION,
    };
    use crate::spectral::WavelengthGrid;

    /// Rectangle in the plane x = 0 spanning `w` along y and `h` along z.
    fn rect_asset(id: &str, class: &str, w: f64, h: f64, material: &str) -> String {
        let (a, b) = (w / 2.0, h / 2.0);
        format!(
            "Asset \"{id}\" \"{class}\"\nMakeNamedMaterial \"m\" {material}\nNamedMaterial \"m\"\n\
             Shape \"trianglemesh\" \"integer indices\" [0 1 2 0 2 3] \
             \"point3 P\" [0 {} {}  0 {a} {}  0 {a} {b}  0 {} {b}]\n",
            -a, -b, -b, -a
        )
    }

    fn mesh(text: &str, grid: &WavelengthGrid) -> Arc<MeshData> {
        Arc::new(MeshData::from_asset(&parse_asset(text).unwrap(), grid).unwrap())
    }

    fn pinhole(w: usize, h: usize, fov_deg: f64) -> CameraConfig {
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

    fn camera(cfg: &CameraConfig) -> RenderCamera {
        RenderCamera::from_config(cfg, None).unwrap()
    }

    fn grid() -> WavelengthGrid {
        WavelengthGrid::visible_bands(4).unwrap()
    }

    fn cfg(spp: u32, seed: u64) -> RenderConfig {
        RenderConfig {
            spp,
            max_depth: 3,
            seed,
            metadata: true,
        }
    }

    #[test]
    fn uniform_sky_gives_flat_irradiance() {
        let g = grid();
        let scene = RenderScene::from_objects(g, vec![], Environment::Uniform(vec![2.0; 4]));
        let (img, stats) = render(&scene, &camera(&pinhole(16, 12, 70.0)), &cfg(4, 1));
        let expected = (PI / 16.0 * 2.0) as f32;
        assert!(img.data().iter().all(|&v| (v - expected).abs() <= 1e-6 * expected));
        assert_eq!(stats.vignetted(), 0);
        let m = img.metadata().unwrap();
        assert!(m.depth.iter().all(|&d| d == 0.0));
        assert!(m.class_id.iter().chain(&m.instance_id).all(|&i| i == 0));
    }

    #[test]
    fn depth_plane_matches_ray_distance() {
        let g = grid();
        let plane = mesh(&rect_asset("wall", "building", 200.0, 200.0, "\"string type\" \"diffuse\" \"float reflectance\" 0.5"), &g);
        let xf = Similarity::translation(Vec3::new(10.0, 0.0, 0.0));
        let scene = RenderScene::from_objects(g, vec![SceneObject::new(plane, xf, xf, 5, 42)], Environment::Uniform(vec![1.0; 4]));
        let (w, h, fov) = (32usize, 24usize, 80f64);
        let (img, _) = render(&scene, &camera(&pinhole(w, h, fov)), &cfg(1, 0));
        let m = img.metadata().unwrap();
        let f = (w as f64 / 2.0) / (fov.to_radians() / 2.0).tan();
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5 - w as f64 / 2.0, h as f64 / 2.0 - y as f64 - 0.5);
                let cos = f / (f * f + px * px + py * py).sqrt();
                let d = f64::from(m.depth[y * w + x]);
                assert!((d - 10.0 / cos).abs() / (10.0 / cos) < 1e-3, "{x},{y}: {d}");
                assert_eq!(m.class_id[y * w + x], 5);
                assert_eq!(m.instance_id[y * w + x], 42);
            }
        }
    }

    fn random_scene(seed: u64) -> RenderScene {
        use crate::rng;
        let g = grid();
        let mut r = rng::stream(seed, &[]);
        let mut text = String::from("Asset \"soup\" \"other\"\nMakeNamedMaterial \"m\" \"string type\" \"diffuse\" \"float reflectance\" 0.5\nNamedMaterial \"m\"\nShape \"trianglemesh\" \"integer indices\" [");
        let n = 40;
        for i in 0..n * 3 {
            text.push_str(&format!("{i} "));
        }
        text.push_str("] \"point3 P\" [");
        for _ in 0..n * 9 {
            text.push_str(&format!("{} ", r.random_range(-1.0..1.0)));
        }
        text.push_str("]\n");
        let soup = mesh(&text, &g);
        let objects = (0..30)
            .map(|k| {
                let p = Vec3::new(r.random_range(-8.0..8.0), r.random_range(-8.0..8.0), r.random_range(-8.0..8.0));
                let t0 = Similarity {
                    translation: p,
                    rotation: Quat::yaw(r.random_range(0.0..6.0)),
                    scale: r.random_range(0.5..2.0),
                };
                let t1 = if k % 3 == 0 {
                    Similarity {
                        translation: p + Vec3::new(2.0, -1.0, 0.5),
                        rotation: Quat::yaw(r.random_range(0.0..6.0)),
                        ..t0
                    }
                } else {
                    t0
                };
                SceneObject::new(soup.clone(), t0, t1, 1, k + 1)
            })
            .collect();
        RenderScene::from_objects(g, objects, Environment::Uniform(vec![1.0; 4]))
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        use crate::rng;
        let scene = random_scene(9);
        let mut r = rng::stream(10, &[]);
        let mut hits = 0;
        for _ in 0..10_000 {
            let o = Vec3::new(r.random_range(-12.0..12.0), r.random_range(-12.0..12.0), r.random_range(-12.0..12.0));
            let d = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize();
            let u: f64 = r.random();
            let fast = scene.intersect(o, d, u, T_MIN, f64::INFINITY);
            let slow = scene.intersect_brute_force(o, d, u, T_MIN, f64::INFINITY);
            assert_eq!(fast.map(|h| (h.t, h.object)), slow.map(|h| (h.t, h.object)));
            assert_eq!(scene.occluded(o, d, u, T_MIN), slow.is_some());
            hits += usize::from(slow.is_some());
        }
        assert!(hits > 1000, "{hits}");
    }

    #[test]
    fn output_independent_of_thread_count() {
        let scene = random_scene(3);
        let mut cam_cfg = pinhole(24, 16, 90.0);
        cam_cfg.position = Vec3::new(-14.0, 0.0, 0.0);
        cam_cfg.look_at = Vec3::ZERO;
        let cam = camera(&cam_cfg);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render(&scene, &cam, &cfg(8, 77)).0)
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert!(a.data().iter().any(|&v| v > 0.0));
        assert!(a.metadata().unwrap().instance_id.iter().any(|&i| i > 0));
    }

    /// Full width at half maximum of a trapezoidal column profile.
    fn fwhm(profile: &[f64]) -> f64 {
        let mut sorted = profile.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lit: Vec<f64> = sorted.into_iter().filter(|&v| v > 0.0).collect();
        let plateau = lit[lit.len() / 2];
        let half = plateau / 2.0;
        let first = profile.iter().position(|&v| v >= half).unwrap();
        let last = profile.iter().rposition(|&v| v >= half).unwrap();
        let left = first as f64 - (profile[first] - half) / (profile[first] - profile[first - 1]);
        let right = last as f64 + (profile[last] - half) / (profile[last] - profile[last + 1]);
        right - left
    }

    #[test]
    fn moving_bar_streaks_by_projected_motion() {
        let g = grid();
        let (w, h, fov) = (64usize, 32usize, 60f64);
        let f = (w as f64 / 2.0) / (fov.to_radians() / 2.0).tan();
        let px = 10.0 / f;
        let bar = mesh(&rect_asset("bar", "other", px, 8.0 * px, "\"string type\" \"emissive\" \"float L\" 1"), &g);
        // Start one column left of centre, aligned to pixel edges; image
        // right is world −y.
        let t0 = Similarity::translation(Vec3::new(10.0, 10.5 * px, 0.0));
        let t1 = Similarity::translation(Vec3::new(10.0, -9.5 * px, 0.0));
        let scene = RenderScene::from_objects(g, vec![SceneObject::new(bar, t0, t1, 1, 1)], Environment::Uniform(vec![0.0; 4]));
        let (img, _) = render(&scene, &camera(&pinhole(w, h, fov)), &cfg(64, 5));
        let profile: Vec<f64> = (0..w)
            .map(|x| (h / 2 - 2..h / 2 + 2).map(|y| f64::from(img.get(x, y, 0))).sum())
            .collect();
        let streak = fwhm(&profile);
        assert!((streak - 20.0).abs() <= 1.0, "{streak}");
    }

    fn recipe(shutter: Shutter) -> (SceneRecipe, AssetStore) {
        let text = rect_asset("panel", "car", 4.0, 3.0, "\"string type\" \"diffuse\" \"float reflectance\" 0.6");
        let store = AssetStore::from_texts([text.as_str()]).unwrap();
        let xf = TransformSpec::translation(Vec3::new(8.0, 0.5, 0.0));
        let recipe = SceneRecipe {
            recipe_version: RECIPE_VERSION.into(),
            seed: 1,
            asset_store_path: ".".into(),
            camera: pinhole(20, 14, 60.0),
            lighting: LightingConfig::default(),
            shutter,
            objects: vec![PlacedObject {
                asset_id: "panel".into(),
                class_label: crate::sceneformat::ClassLabel::Car,
                instance_id: 1,
                transform_start: xf.clone(),
                transform_end: xf,
                speed: 0.0,
            }],
        };
        (recipe, store)
    }

    #[test]
    fn static_scene_ignores_shutter_length() {
        let g = grid();
        let render_with = |close| {
            let (r, store) = recipe(Shutter { open: 0.0, close });
            crate::render::render_recipe(&r, &store, &g, Path::new("."), &cfg(8, 4)).unwrap().0
        };
        let a = render_with(1e-3);
        assert_eq!(a, render_with(0.5));
        assert!(a.metadata().unwrap().class_id.contains(&1));
    }

    #[test]
    fn lens_camera_renders_sky() {
        let g = grid();
        let mut cam_cfg = pinhole(12, 8, 60.0);
        cam_cfg.projection = Projection::Lens {
            file: "builtin:wide_angle_112".into(),
            film_width_mm: 10.05,
        };
        let lens = crate::render::load_lens("builtin:wide_angle_112", Path::new("."), &g).unwrap();
        let cam = RenderCamera::from_config(&cam_cfg, Some(lens)).unwrap();
        let scene = RenderScene::from_objects(g, vec![], Environment::Uniform(vec![1.0; 4]));
        let (img, stats) = render(&scene, &cam, &cfg(16, 2));
        assert!(!stats.zero_weight());
        let centre: f64 = (0..4).map(|b| f64::from(img.get(6, 4, b))).sum();
        let corner: f64 = (0..4).map(|b| f64::from(img.get(0, 0, b))).sum();
        assert!(centre > 0.0 && corner < centre, "{centre} {corner}");
    }

    #[test]
    fn preview_is_rgb8() {
        let g = grid();
        let scene = RenderScene::from_objects(g, vec![], Environment::Uniform(vec![1.0; 4]));
        let (img, _) = render(&scene, &camera(&pinhole(4, 3, 60.0)), &cfg(1, 0));
        let tone = auto_tone_scale(&img);
        let rgb = preview_rgb8(&img, tone);
        assert_eq!(rgb.len(), 4 * 3 * 3);
        let expected = (0.5f64.powf(1.0 / 2.2) * 255.0).round() as u8;
        assert!(rgb.iter().all(|&v| v.abs_diff(expected) <= 1), "{rgb:?}");
    }
}
