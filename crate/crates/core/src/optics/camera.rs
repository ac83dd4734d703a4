//! Analytic camera models: perspective pinhole and equidistant fisheye.
//!
//! Camera space has x to the right, y up and z along the view direction.
//! Film coordinates share the x/y orientation with the origin at the film
//! centre, in whatever unit `film_width` is given (pixels in the renderer).

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl CameraPose {
    /// `None` when `target` coincides with `position` or `up` is parallel
    /// to the view direction.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3) -> Option<Self> {
        let f = target - position;
        let r = f.cross(up);
        if f.length() == 0.0 || r.length() < 1e-12 * f.length() * up.length() {
            return None;
        }
        let forward = f.normalize();
        let right = r.normalize();
        Some(Self {
            position,
            right,
            up: right.cross(forward),
            forward,
        })
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.position;
        Vec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.forward))
    }

    pub fn dir_to_world(&self, v: Vec3) -> Vec3 {
        self.right * v.x + self.up * v.y + self.forward * v.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticModel {
    Pinhole,
    Fisheye,
}

/// `fov` spans the film width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticCamera {
    pub model: AnalyticModel,
    pub fov_rad: f64,
    pub film_width: f64,
    pub film_height: f64,
}

impl AnalyticCamera {
    pub fn focal(&self) -> f64 {
        let half = self.film_width / 2.0;
        match self.model {
            AnalyticModel::Pinhole => half / (self.fov_rad / 2.0).tan(),
            AnalyticModel::Fisheye => half / (self.fov_rad / 2.0),
        }
    }

    /// Film position of a camera-space direction.
    pub fn project_dir(&self, v: Vec3) -> Option<(f64, f64)> {
        let f = self.focal();
        match self.model {
            AnalyticModel::Pinhole => (v.z > 0.0).then(|| (f * v.x / v.z, f * v.y / v.z)),
            AnalyticModel::Fisheye => {
                let len = v.length();
                if len == 0.0 {
                    return None;
                }
                let rho = v.x.hypot(v.y);
                let theta = rho.atan2(v.z);
                if rho == 0.0 {
                    return (v.z > 0.0).then_some((0.0, 0.0));
                }
                let r = f * theta;
                Some((r * v.x / rho, r * v.y / rho))
            }
        }
    }

    /// Unit camera-space direction through a film position; `None` outside
    /// the fisheye image circle of radius f·π.
    pub fn ray_dir(&self, x: f64, y: f64) -> Option<Vec3> {
        let f = self.focal();
        match self.model {
            AnalyticModel::Pinhole => Some(Vec3::new(x, y, f).normalize()),
            AnalyticModel::Fisheye => {
                let r = x.hypot(y);
                let theta = r / f;
                if theta > std::f64::consts::PI {
                    return None;
                }
                if r == 0.0 {
                    return Some(Vec3::Z);
                }
                let s = theta.sin();
                Some(Vec3::new(s * x / r, s * y / r, theta.cos()))
            }
        }
    }
}

/// Perspective projection of a world point; `None` behind the camera.
pub fn pinhole_project(point: Vec3, pose: &CameraPose, fov_rad: f64, film_width: f64) -> Option<(f64, f64)> {
    let cam = AnalyticCamera {
        model: AnalyticModel::Pinhole,
        fov_rad,
        film_width,
        film_height: film_width,
    };
    cam.project_dir(pose.to_camera(point))
}

/// Equidistant fisheye projection, radius = f·θ.
pub fn fisheye_project(point: Vec3, pose: &CameraPose, fov_rad: f64, film_width: f64) -> Option<(f64, f64)> {
    let cam = AnalyticCamera {
        model: AnalyticModel::Fisheye,
        fov_rad,
        film_width,
        film_height: film_width,
    };
    cam.project_dir(pose.to_camera(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pose() -> CameraPose {
        CameraPose::look_at(Vec3::new(0.0, 0.0, 1.5), Vec3::new(10.0, 0.0, 1.5), Vec3::Z).unwrap()
    }

    #[test]
    fn on_axis_maps_to_centre() {
        let p = Vec3::new(25.0, 0.0, 1.5);
        assert_eq!(pinhole_project(p, &pose(), 1.0, 640.0), Some((0.0, 0.0)));
        assert_eq!(fisheye_project(p, &pose(), 3.0, 640.0), Some((0.0, 0.0)));
    }

    #[test]
    fn fov_edge_lands_on_film_edge() {
        let w = 752.0;
        let fov = 112f64.to_radians();
        let a = 56f64.to_radians();
        // World +y is camera left.
        let left = Vec3::new(a.cos(), a.sin(), 0.0) * 30.0 + pose().position;
        let right = Vec3::new(a.cos(), -a.sin(), 0.0) * 30.0 + pose().position;
        let (xl, yl) = pinhole_project(left, &pose(), fov, w).unwrap();
        let (xr, _) = pinhole_project(right, &pose(), fov, w).unwrap();
        assert!((xl + w / 2.0).abs() < 1e-9 && yl.abs() < 1e-9);
        assert!((xr - w / 2.0).abs() < 1e-9);
    }

    #[test]
    fn fisheye_ninety_degrees() {
        let cam = AnalyticCamera {
            model: AnalyticModel::Fisheye,
            fov_rad: PI,
            film_width: 100.0,
            film_height: 100.0,
        };
        let (x, y) = cam.project_dir(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((x - cam.focal() * PI / 2.0).abs() < 1e-12 && y == 0.0);
        assert!((x - 50.0).abs() < 1e-12);
    }

    #[test]
    fn behind_pinhole_is_none() {
        let p = Vec3::new(-5.0, 0.0, 1.5);
        assert_eq!(pinhole_project(p, &pose(), 1.0, 100.0), None);
        let (x, _) = fisheye_project(Vec3::new(-5.0, -1.0, 1.5), &pose(), 6.0, 100.0).unwrap();
        assert!(x > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ray_dir_inverts_projection(x in -300.0f64..300.0, y in -200.0f64..200.0, fish in any::<bool>()) {
                let cam = AnalyticCamera {
                    model: if fish { AnalyticModel::Fisheye } else { AnalyticModel::Pinhole },
                    fov_rad: 2.0,
                    film_width: 640.0,
                    film_height: 480.0,
                };
                let d = cam.ray_dir(x, y).unwrap();
                let (px, py) = cam.project_dir(d).unwrap();
                prop_assert!((px - x).abs() < 1e-7 && (py - y).abs() < 1e-7);
            }
        }
    }
}
