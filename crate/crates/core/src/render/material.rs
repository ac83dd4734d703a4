//! Direction sampling for the supported surface models.

use std::f64::consts::PI;

use rand::RngExt;
use rand_distr::{Distribution, Normal};

use super::scene::Material;
use crate::geometry::Vec3;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lobe {
    Lambertian,
    Retro,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatter {
    pub direction: Vec3,
    pub lobe: Lobe,
}

/// Cosine-weighted direction about the unit normal `n`.
pub fn cosine_hemisphere(n: Vec3, rng: &mut Rng) -> Vec3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    let (t, b) = n.orthonormal_basis();
    (t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - u1).max(0.0).sqrt()).normalize()
}

/// Gaussian lobe about `axis` with per-axis angular σ, folded into the
/// hemisphere of `n` by mirroring.
pub fn retro_lobe(axis: Vec3, n: Vec3, sigma_rad: f64, rng: &mut Rng) -> Vec3 {
    let g = Normal::new(0.0, sigma_rad).expect("sigma is finite");
    let (e1, e2) = axis.orthonormal_basis();
    let a: f64 = g.sample(rng);
    let b: f64 = g.sample(rng);
    let d = (axis + e1 * a.tan() + e2 * b.tan()).normalize();
    let c = d.dot(n);
    if c > 0.0 {
        d
    } else {
        (d - n * (2.0 * c)).normalize()
    }
}

/// Samples an outgoing direction for a ray travelling along `w_in` that
/// hit a surface with normal `n` (either orientation). The band throughput
/// is the material reflectance; emissive surfaces do not scatter.
pub fn scatter(material: &Material, w_in: Vec3, n: Vec3, rng: &mut Rng) -> Option<Scatter> {
    let n = if n.dot(w_in) > 0.0 { -n } else { n };
    match material {
        Material::Emissive { .. } => None,
        Material::Diffuse { .. } => Some(Scatter {
            direction: cosine_hemisphere(n, rng),
            lobe: Lobe::Lambertian,
        }),
        Material::Retroreflective { fraction, sigma_rad, .. } => {
            if rng.random::<f64>() < *fraction {
                Some(Scatter {
                    direction: retro_lobe(-w_in, n, *sigma_rad, rng),
                    lobe: Lobe::Retro,
                })
            } else {
                Some(Scatter {
                    direction: cosine_hemisphere(n, rng),
                    lobe: Lobe::Lambertian,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_reflectance_gives_zero_throughput() {
        let m = Material::Diffuse { reflectance: vec![0.0; 3] };
        let Material::Diffuse { reflectance } = &m else { unreachable!() };
        let s = scatter(&m, -Vec3::Z, Vec3::Z, &mut rng::stream(0, &[])).unwrap();
        assert!(s.direction.z > 0.0);
        assert!(reflectance.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn cosine_mean_direction() {
        // Mean of a cosine-weighted hemisphere is (0, 0, 2/3).
        let n = Vec3::new(0.3, -0.5, 0.8).normalize();
        let mut r = rng::stream(11, &[]);
        let m = Material::Diffuse { reflectance: vec![1.0] };
        let k = 100_000;
        let mut sum = Vec3::ZERO;
        for _ in 0..k {
            sum += scatter(&m, -n, n, &mut r).unwrap().direction;
        }
        let mean = sum / k as f64;
        let along = mean.dot(n);
        assert!((along - 2.0 / 3.0).abs() / (2.0 / 3.0) < 0.01);
        assert!((mean - n * along).length() < 0.01);
    }

    #[test]
    fn retro_concentrates_near_reverse() {
        let m = Material::Retroreflective {
            reflectance: vec![1.0],
            fraction: 0.9,
            sigma_rad: 2f64.to_radians(),
        };
        let w_in = Vec3::new(0.4, 0.1, -1.0).normalize();
        let mut r = rng::stream(2, &[]);
        let k = 100_000;
        let near = (0..k)
            .filter(|_| {
                let d = scatter(&m, w_in, Vec3::Z, &mut r).unwrap().direction;
                d.dot(-w_in).clamp(-1.0, 1.0).acos() < 5f64.to_radians()
            })
            .count();
        assert!(near as f64 / k as f64 >= 0.85, "{near}");
    }

    #[test]
    fn lobe_stays_in_hemisphere() {
        let mut r = rng::stream(3, &[]);
        let grazing = Vec3::new(1.0, 0.0, -0.01).normalize();
        for _ in 0..10_000 {
            assert!(retro_lobe(-grazing, Vec3::Z, 0.2, &mut r).z >= 0.0);
        }
    }
}
