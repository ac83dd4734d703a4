//! Camera ray generation for the renderer.

use std::f64::consts::PI;

use rand::RngExt;

use crate::geometry::Vec3;
use crate::optics::{trace_through_lens, AnalyticCamera, AnalyticModel, CameraPose, LensPrescription, Vignette};
use crate::rng::Rng;
use crate::sceneformat::{CameraConfig, Projection};

const PUPIL_LAMBDA_NM: f64 = 550.0;

#[derive(Debug, Clone)]
pub enum CameraModel {
    /// Film units are pixels; irradiance = `factor` × radiance.
    Analytic { camera: AnalyticCamera, factor: f64 },
    Lens {
        lens: LensPrescription,
        film_width_mm: f64,
        film_height_mm: f64,
        /// Rear-plane sampling bounds; `None` samples the whole rear disk.
        pupil: Option<ExitPupil>,
    },
}

/// Bounds on the rear vertex plane of rays that clear every aperture,
/// tabulated over film radius for film points on the +x axis. A film point
/// at angle θ uses the bounds rotated by θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitPupil {
    max_radius: f64,
    /// `[x0, y0, x1, y1]` per radial sample; `None` when nothing passes.
    bounds: Vec<Option<[f64; 4]>>,
}

impl ExitPupil {
    pub const RADIAL_SAMPLES: usize = 64;
    const GRID: usize = 96;

    /// Tabulates bounds for film radii in `[0, max_radius]` at `lambda_nm`.
    pub fn compute(lens: &LensPrescription, max_radius: f64, lambda_nm: f64) -> Self {
        let r_rear = lens.rear().semi_aperture;
        let z = lens.film_distance;
        let cell = 2.0 * r_rear / Self::GRID as f64;
        let bounds = (0..Self::RADIAL_SAMPLES)
            .map(|k| {
                let rf = max_radius * k as f64 / (Self::RADIAL_SAMPLES - 1) as f64;
                let film = Vec3::new(rf, 0.0, 0.0);
                let mut b: Option<[f64; 4]> = None;
                for i in 0..Self::GRID {
                    for j in 0..Self::GRID {
                        let x = -r_rear + (i as f64 + 0.5) * cell;
                        let y = -r_rear + (j as f64 + 0.5) * cell;
                        if x * x + y * y > r_rear * r_rear {
                            continue;
                        }
                        if trace_through_lens(film, Vec3::new(x, y, z), lambda_nm, lens, None).is_ok() {
                            let e = b.get_or_insert([x, y, x, y]);
                            *e = [e[0].min(x), e[1].min(y), e[2].max(x), e[3].max(y)];
                        }
                    }
                }
                // Grow by two cells to cover rays that pass between samples,
                // other wavelengths and diffraction.
                b.map(|[x0, y0, x1, y1]| {
                    let m = 2.0 * cell;
                    [(x0 - m).max(-r_rear), (y0 - m).max(-r_rear), (x1 + m).min(r_rear), (y1 + m).min(r_rear)]
                })
            })
            .collect();
        Self { max_radius, bounds }
    }

    /// Union of the two tabulated bounds bracketing film radius `r`.
    pub fn bounds_at(&self, r: f64) -> Option<[f64; 4]> {
        let t = (r / self.max_radius).clamp(0.0, 1.0) * (Self::RADIAL_SAMPLES - 1) as f64;
        let i = (t.floor() as usize).min(Self::RADIAL_SAMPLES - 2);
        match (self.bounds[i], self.bounds[i + 1]) {
            (Some(a), Some(b)) => Some([a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderCamera {
    pub pose: CameraPose,
    pub model: CameraModel,
    pub width: usize,
    pub height: usize,
}

/// One camera ray with its irradiance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRay {
    pub origin: Vec3,
    pub direction: Vec3,
    pub weight: f64,
}

impl RenderCamera {
    /// `lens` must be supplied for [`Projection::Lens`] cameras.
    pub fn from_config(cfg: &CameraConfig, lens: Option<LensPrescription>) -> Result<Self, String> {
        let pose = CameraPose::look_at(cfg.position, cfg.look_at, cfg.up).ok_or("degenerate camera orientation")?;
        let (w, h) = (cfg.film_width_px as f64, cfg.film_height_px as f64);
        let factor = PI / (4.0 * cfg.f_number * cfg.f_number);
        let analytic = |model, fov_deg: f64| CameraModel::Analytic {
            camera: AnalyticCamera {
                model,
                fov_rad: fov_deg.to_radians(),
                film_width: w,
                film_height: h,
            },
            factor,
        };
        let model = match &cfg.projection {
            Projection::Pinhole { fov_deg } => analytic(AnalyticModel::Pinhole, *fov_deg),
            Projection::Fisheye { fov_deg } => analytic(AnalyticModel::Fisheye, *fov_deg),
            Projection::Lens { film_width_mm, .. } => {
                let lens = lens.ok_or("lens camera without a prescription")?;
                let film_height_mm = film_width_mm * h / w;
                let diag = 0.5 * film_width_mm.hypot(film_height_mm);
                let pupil = ExitPupil::compute(&lens, diag, PUPIL_LAMBDA_NM);
                CameraModel::Lens {
                    lens,
                    film_width_mm: *film_width_mm,
                    film_height_mm,
                    pupil: Some(pupil),
                }
            }
        };
        Ok(Self {
            pose,
            model,
            width: cfg.film_width_px,
            height: cfg.film_height_px,
        })
    }

    /// Film position in pixel units relative to the centre, y up.
    pub fn film_xy(&self, fx: f64, fy: f64) -> (f64, f64) {
        (fx - self.width as f64 / 2.0, self.height as f64 / 2.0 - fy)
    }

    fn lens_film_point(&self, fx: f64, fy: f64, film_width_mm: f64) -> Vec3 {
        let (x, y) = self.film_xy(fx, fy);
        let pitch = film_width_mm / self.width as f64;
        // The lens inverts the image.
        Vec3::new(-x * pitch, -y * pitch, 0.0)
    }

    fn to_world(&self, origin_mm: Vec3, dir: Vec3) -> (Vec3, Vec3) {
        (
            self.pose.position + self.pose.dir_to_world(origin_mm * 1e-3),
            self.pose.dir_to_world(dir).normalize(),
        )
    }

    /// Rear-plane sampling rectangle for a film point, in the film point's
    /// rotated frame. Whole-disk sampling uses the bounding square and
    /// rejects points outside the disk.
    fn rear_bounds(lens: &LensPrescription, pupil: &Option<ExitPupil>, film_r: f64) -> Option<[f64; 4]> {
        let r = lens.rear().semi_aperture;
        match pupil {
            Some(p) => p.bounds_at(film_r),
            None => Some([-r, -r, r, r]),
        }
    }

    /// Ray through film position (`fx`, `fy`) in pixel coordinates. Lens
    /// cameras sample the exit-pupil bounds uniformly and trace at
    /// `lambda_nm`.
    pub fn generate(&self, fx: f64, fy: f64, lambda_nm: f64, rng: &mut Rng) -> Result<CameraRay, Vignette> {
        match &self.model {
            CameraModel::Analytic { camera, factor } => {
                let (x, y) = self.film_xy(fx, fy);
                let d = camera.ray_dir(x, y).ok_or(Vignette::Missed)?;
                Ok(CameraRay {
                    origin: self.pose.position,
                    direction: self.pose.dir_to_world(d),
                    weight: *factor,
                })
            }
            CameraModel::Lens {
                lens,
                film_width_mm,
                pupil,
                ..
            } => {
                let film = self.lens_film_point(fx, fy, *film_width_mm);
                let film_r = film.x.hypot(film.y);
                let [x0, y0, x1, y1] = Self::rear_bounds(lens, pupil, film_r).ok_or(Vignette::Aperture)?;
                let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
                let (px, py) = (x0 + u * (x1 - x0), y0 + v * (y1 - y0));
                let r_rear = lens.rear().semi_aperture;
                if px * px + py * py > r_rear * r_rear {
                    return Err(Vignette::Aperture);
                }
                let (s, c) = film.y.atan2(film.x).sin_cos();
                let z = lens.film_distance;
                let rear = Vec3::new(px * c - py * s, px * s + py * c, z);
                let cos = (rear - film).normalize().z;
                let ray = trace_through_lens(film, rear, lambda_nm, lens, Some(rng))?;
                let (origin, direction) = self.to_world(ray.origin, ray.direction);
                let area = (x1 - x0) * (y1 - y0);
                Ok(CameraRay {
                    origin,
                    direction,
                    weight: ray.weight * cos.powi(4) * area / (z * z),
                })
            }
        }
    }

    /// Noise-free ray through the centre of pixel (`px`, `py`), used for
    /// metadata. Lens cameras aim at the centre of the exit-pupil bounds.
    pub fn center_ray(&self, px: usize, py: usize, lambda_nm: f64) -> Option<(Vec3, Vec3)> {
        let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
        match &self.model {
            CameraModel::Analytic { camera, .. } => {
                let (x, y) = self.film_xy(fx, fy);
                let d = camera.ray_dir(x, y)?;
                Some((self.pose.position, self.pose.dir_to_world(d)))
            }
            CameraModel::Lens {
                lens,
                film_width_mm,
                pupil,
                ..
            } => {
                let film = self.lens_film_point(fx, fy, *film_width_mm);
                let [x0, y0, x1, y1] = Self::rear_bounds(lens, pupil, film.x.hypot(film.y))?;
                let (px, py) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
                let (s, c) = film.y.atan2(film.x).sin_cos();
                let rear = Vec3::new(px * c - py * s, px * s + py * c, lens.film_distance);
                let ray = trace_through_lens(film, rear, lambda_nm, lens, None).ok()?;
                Some(self.to_world(ray.origin, ray.direction))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{bundled_lens, parse_lens};
    use crate::rng::stream;
    use crate::spectral::WavelengthGrid;

    fn lens_camera(pupil: bool) -> RenderCamera {
        let g = WavelengthGrid::visible_bands(4).unwrap();
        let lens = parse_lens(bundled_lens("wide_angle_112").unwrap(), &g).unwrap();
        let cfg = CameraConfig {
            position: Vec3::ZERO,
            look_at: Vec3::X,
            up: Vec3::Z,
            projection: Projection::Lens {
                file: "builtin:wide_angle_112".into(),
                film_width_mm: 8.0,
            },
            film_width_px: 40,
            film_height_px: 30,
            exposure_s: 0.01,
            f_number: 2.0,
        };
        let mut cam = RenderCamera::from_config(&cfg, Some(lens)).unwrap();
        if !pupil {
            if let CameraModel::Lens { pupil, .. } = &mut cam.model {
                *pupil = None;
            }
        }
        cam
    }

    /// Mean weight (relative illumination under a uniform unit sky), its
    /// standard error, and the fraction of vignetted samples.
    fn estimate(cam: &RenderCamera, fx: f64, fy: f64, n: usize) -> (f64, f64, f64) {
        let mut rng = stream(9, &[fx.to_bits(), fy.to_bits()]);
        let (mut s, mut s2, mut lost) = (0.0, 0.0, 0usize);
        for _ in 0..n {
            match cam.generate(fx, fy, 550.0, &mut rng) {
                Ok(r) => {
                    s += r.weight;
                    s2 += r.weight * r.weight;
                }
                Err(_) => lost += 1,
            }
        }
        let m = s / n as f64;
        (m, ((s2 / n as f64 - m * m) / n as f64).sqrt(), lost as f64 / n as f64)
    }

    #[test]
    fn pupil_sampling_is_unbiased_and_efficient() {
        let (with, without) = (lens_camera(true), lens_camera(false));
        for (fx, fy) in [(20.0, 15.0), (30.0, 10.0), (39.5, 0.5)] {
            let (a, sa, lost_a) = estimate(&with, fx, fy, 40_000);
            let (b, sb, lost_b) = estimate(&without, fx, fy, 40_000);
            assert!(a > 0.0);
            assert!((a - b).abs() < 4.0 * sa.hypot(sb), "({fx}, {fy}): {a} ± {sa} vs {b} ± {sb}");
            assert!(lost_a < lost_b, "{lost_a} vs {lost_b}");
        }
    }

    #[test]
    fn centre_ray_passes_off_axis() {
        let cam = lens_camera(true);
        for (px, py) in [(20, 15), (0, 0), (39, 29)] {
            assert!(cam.center_ray(px, py, 550.0).is_some(), "({px}, {py})");
        }
    }
}
