//! Sequential ray tracing through a [`LensPrescription`].

use rand_distr::{Distribution, Normal};

use super::lens::{LensPrescription, LensSurface, SurfaceShape};
use crate::geometry::Vec3;
use crate::rng::Rng;

/// Newton tolerance on the ray parameter, mm.
pub const NEWTON_TOLERANCE: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 20;
/// Smallest edge distance used by the diffraction perturbation, mm.
pub const HURB_MIN_DISTANCE: f64 = 1e-6;

const T_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalRay {
    /// mm, lens frame.
    pub origin: Vec3,
    pub direction: Vec3,
    pub wavelength_nm: f64,
    pub weight: f64,
    pub time: f64,
}

/// Why a ray did not make it through the lens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vignette {
    Aperture,
    TotalInternalReflection,
    NoConvergence,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Local frame, vertex at the origin.
    pub point: Vec3,
    /// Unit normal, oriented toward −z.
    pub normal: Vec3,
}

/// Vector form of Snell's law. The normal may face either way. Returns
/// `None` on total internal reflection.
pub fn refract(dir: Vec3, normal: Vec3, n1: f64, n2: f64) -> Option<Vec3> {
    let n = if dir.dot(normal) > 0.0 { -normal } else { normal };
    let eta = n1 / n2;
    let cos_i = -dir.dot(n);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return None;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Some((dir * eta + n * (eta * cos_i - cos_t)).normalize())
}

/// Nearest intersection of c(x²+y²+z²) − 2z = 0 on the vertex branch,
/// which is the plane z = 0 when c = 0.
fn sphere_t(o: Vec3, d: Vec3, c: f64) -> Option<f64> {
    let a = c * d.length_squared();
    let b = 2.0 * (c * o.dot(d) - d.z);
    let cc = c * o.length_squared() - 2.0 * o.z;
    let mut roots = [f64::NAN; 2];
    if a == 0.0 {
        if b != 0.0 {
            roots[0] = -cc / b;
        }
    } else {
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        roots = [q / a, if q != 0.0 { cc / q } else { f64::NAN }];
    }
    roots
        .into_iter()
        .filter(|&t| t > -T_EPS && (o.z + t * d.z) * c < 1.0)
        .min_by(f64::total_cmp)
}

fn normal_at(s: &LensSurface, p: Vec3) -> Option<Vec3> {
    let (gx, gy) = s.sag_gradient(p.x, p.y)?;
    Some(Vec3::new(gx, gy, -1.0).normalize())
}

/// Intersects a ray given in the surface's local frame. Points beyond the
/// semi-aperture are reported as [`Vignette::Aperture`].
pub fn intersect_surface(origin: Vec3, dir: Vec3, s: &LensSurface) -> Result<SurfaceHit, Vignette> {
    let t = match s.shape {
        SurfaceShape::ApertureStop => sphere_t(origin, dir, 0.0).ok_or(Vignette::Missed)?,
        SurfaceShape::Spherical { c } => sphere_t(origin, dir, c).ok_or(Vignette::Missed)?,
        SurfaceShape::Aspheric { .. } | SurfaceShape::Biconic { .. } => {
            let mut t = sphere_t(origin, dir, s.base_curvature())
                .or_else(|| sphere_t(origin, dir, 0.0))
                .ok_or(Vignette::Missed)?;
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITER {
                let p = origin + dir * t;
                let (Some(z), Some((gx, gy))) = (s.sag(p.x, p.y), s.sag_gradient(p.x, p.y)) else {
                    return Err(Vignette::NoConvergence);
                };
                let f = z - p.z;
                let df = gx * dir.x + gy * dir.y - dir.z;
                if df == 0.0 {
                    return Err(Vignette::NoConvergence);
                }
                let step = f / df;
                t -= step;
                if step.abs() < NEWTON_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            if !converged || t <= T_EPS {
                return Err(Vignette::NoConvergence);
            }
            t
        }
    };
    let p = origin + dir * t;
    if p.x * p.x + p.y * p.y > s.semi_aperture * s.semi_aperture {
        return Err(Vignette::Aperture);
    }
    let normal = normal_at(s, p).ok_or(Vignette::NoConvergence)?;
    Ok(SurfaceHit { point: p, normal })
}

/// Standard deviation of the diffraction tilt per tangent axis, radians.
pub fn hurb_sigma(lambda_nm: f64, edge_distance_mm: f64) -> f64 {
    let d = edge_distance_mm.max(HURB_MIN_DISTANCE);
    lambda_nm * 1e-6 / (2.0 * std::f64::consts::PI * d)
}

/// Tilts `dir` by independent Gaussian angles about two orthogonal tangent
/// axes, each with σ = λ/(2πd).
pub fn hurb_perturb(dir: Vec3, edge_distance_mm: f64, lambda_nm: f64, rng: &mut Rng) -> Vec3 {
    let sigma = hurb_sigma(lambda_nm, edge_distance_mm);
    if sigma == 0.0 {
        return dir;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite");
    let (e1, e2) = dir.orthonormal_basis();
    let a1: f64 = normal.sample(rng);
    let a2: f64 = normal.sample(rng);
    (dir + e1 * a1.tan() + e2 * a2.tan()).normalize()
}

fn propagate(
    lens: &LensPrescription,
    mut origin: Vec3,
    mut dir: Vec3,
    lambda_nm: f64,
    reverse: bool,
    mut rng: Option<&mut Rng>,
) -> Result<(Vec3, Vec3), Vignette> {
    let z = lens.vertex_z();
    let n = lens.surfaces.len();
    for step in 0..n {
        let i = if reverse { n - 1 - step } else { step };
        let s = &lens.surfaces[i];
        let vertex = Vec3::new(0.0, 0.0, z[i]);
        let hit = intersect_surface(origin - vertex, dir, s)?;
        origin = hit.point + vertex;
        if s.is_stop() {
            if let Some(rng) = rng.as_deref_mut() {
                let r = (hit.point.x * hit.point.x + hit.point.y * hit.point.y).sqrt();
                dir = hurb_perturb(dir, s.semi_aperture - r, lambda_nm, rng);
            }
            continue;
        }
        let (before, after) = lens.media(i, lambda_nm);
        let (n1, n2) = if reverse { (after, before) } else { (before, after) };
        dir = refract(dir, hit.normal, n1, n2).ok_or(Vignette::TotalInternalReflection)?;
    }
    Ok((origin, dir))
}

/// Traces from a film point (z = 0) toward a point on the rear vertex
/// plane and out through the front surface. Passing an RNG enables the
/// diffraction perturbation at the stop. The returned ray starts on the
/// last surface; its weight is 1.
pub fn trace_through_lens(
    film_point: Vec3,
    rear_sample: Vec3,
    lambda_nm: f64,
    lens: &LensPrescription,
    rng: Option<&mut Rng>,
) -> Result<OpticalRay, Vignette> {
    let dir = (rear_sample - film_point).normalize();
    let (origin, direction) = propagate(lens, film_point, dir, lambda_nm, false, rng)?;
    Ok(OpticalRay {
        origin,
        direction,
        wavelength_nm: lambda_nm,
        weight: 1.0,
        time: 0.0,
    })
}

/// Traces a ray entering from the scene side back toward the film.
pub fn trace_from_scene(lens: &LensPrescription, origin: Vec3, dir: Vec3, lambda_nm: f64) -> Result<(Vec3, Vec3), Vignette> {
    propagate(lens, origin, dir.normalize(), lambda_nm, true, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaxialFocus {
    /// Effective focal length, mm.
    pub efl: f64,
    /// Axial distance from the rear vertex to the focus, mm.
    pub back_focal_distance: f64,
}

/// Focus found by tracing one near-axis ray, parallel to the axis, from the
/// scene side.
pub fn paraxial_focus(lens: &LensPrescription, lambda_nm: f64) -> Result<ParaxialFocus, Vignette> {
    let min_aperture = lens.surfaces.iter().map(|s| s.semi_aperture).fold(f64::INFINITY, f64::min);
    let h = min_aperture * 1e-4;
    let z = lens.vertex_z();
    let front = z.last().copied().unwrap_or(lens.film_distance) + 1.0;
    let (o, d) = trace_from_scene(lens, Vec3::new(0.0, h, front), -Vec3::Z, lambda_nm)?;
    if d.y == 0.0 {
        return Err(Vignette::Missed);
    }
    let t = -o.y / d.y;
    Ok(ParaxialFocus {
        efl: h * d.z / d.y,
        back_focal_distance: lens.film_distance - (o.z + t * d.z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::lens::{parse_lens, IndexModel};
    use crate::rng;
    use crate::spectral::WavelengthGrid;

    fn surface(shape: SurfaceShape, semi: f64) -> LensSurface {
        LensSurface {
            shape,
            thickness: 0.0,
            semi_aperture: semi,
            medium: Some(IndexModel::Constant(1.5)),
            index: None,
            line: 1,
        }
    }

    fn angle(a: Vec3, b: Vec3) -> f64 {
        a.cross(b).length().atan2(a.dot(b))
    }

    #[test]
    fn normal_incidence_unchanged() {
        let d = Vec3::Z;
        for (n1, n2) in [(1.0, 1.5), (1.7, 1.0), (1.2, 1.2)] {
            let t = refract(d, -Vec3::Z, n1, n2).unwrap();
            assert!((t - d).length() < 1e-15);
        }
    }

    #[test]
    fn snell_thirty_degrees() {
        let th = 30f64.to_radians();
        let d = Vec3::new(th.sin(), 0.0, th.cos());
        let t = refract(d, Vec3::Z, 1.0, 1.5).unwrap();
        let want = (th.sin() / 1.5).asin().to_degrees();
        assert!((want - 19.471).abs() < 1e-3);
        assert!((angle(t, Vec3::Z).to_degrees() - want).abs() < 1e-9);
    }

    #[test]
    fn tir_past_critical_angle() {
        let th = 60f64.to_radians();
        let d = Vec3::new(th.sin(), 0.0, th.cos());
        assert!(refract(d, Vec3::Z, 1.5, 1.0).is_none());
        let crit = (1.0f64 / 1.5).asin();
        assert!((crit.to_degrees() - 41.81).abs() < 1e-2);
        let below = Vec3::new((crit - 1e-6).sin(), 0.0, (crit - 1e-6).cos());
        assert!(refract(below, Vec3::Z, 1.5, 1.0).is_some());
    }

    #[test]
    fn axial_hit_at_vertex() {
        for c in [0.05, -0.05, 0.0] {
            let s = surface(SurfaceShape::Spherical { c }, 5.0);
            let h = intersect_surface(Vec3::new(0.0, 0.0, -10.0), Vec3::Z, &s).unwrap();
            assert!(h.point.length() < 1e-12);
            assert!((h.normal + Vec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn flat_surface_plane_crossing() {
        let s = surface(SurfaceShape::Spherical { c: 0.0 }, 50.0);
        let d = Vec3::new(0.3, -0.2, 1.0).normalize();
        let o = Vec3::new(1.0, 2.0, -4.0);
        let h = intersect_surface(o, d, &s).unwrap();
        let t = 4.0 / d.z;
        assert!((h.point - (o + d * t)).length() < 1e-12);
    }

    #[test]
    fn clipped_beyond_semi_aperture() {
        let s = surface(SurfaceShape::Spherical { c: 0.01 }, 2.0);
        assert_eq!(intersect_surface(Vec3::new(3.0, 0.0, -1.0), Vec3::Z, &s), Err(Vignette::Aperture));
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn aspheric_hit_matches_bisection() {
        let shapes = [
            SurfaceShape::Aspheric { c: 0.04, k: -0.8, a4: 3e-4, a6: -2e-6, a8: 0.0 },
            SurfaceShape::Biconic { cx: 0.03, cy: -0.02, kx: 0.5, ky: -1.5 },
        ];
        for shape in shapes {
            let s = surface(shape, 8.0);
            let o = Vec3::new(-2.0, 1.5, -6.0);
            let d = Vec3::new(0.5, 0.2, 1.0).normalize();
            let h = intersect_surface(o, d, &s).unwrap();
            let f = |t: f64| {
                let p = o + d * t;
                s.sag(p.x, p.y).unwrap() - p.z
            };
            let t = bisect(f, 0.0, 12.0);
            assert!((h.point - (o + d * t)).length() < 1e-6, "{shape:?}");
        }
    }

    #[test]
    fn pinhole_lens_keeps_line() {
        let lens = LensPrescription::pinhole(20.0, 0.5);
        let film = Vec3::new(1.0, -2.0, 0.0);
        let rear = Vec3::new(0.1, 0.2, 20.0);
        let ray = trace_through_lens(film, rear, 550.0, &lens, None).unwrap();
        assert!(angle(ray.direction, (rear - film).normalize()) < 1e-12);
        assert!((ray.origin - rear).length() < 1e-12);
        assert_eq!(ray.weight, 1.0);
        let blocked = trace_through_lens(film, Vec3::new(0.6, 0.0, 20.0), 550.0, &lens, None);
        assert_eq!(blocked, Err(Vignette::Aperture));
    }

    const BICONVEX: &str = "film_distance = 100\n\
        spherical radius=100 thickness=2 semi_aperture=10 n=1.5\n\
        spherical radius=-100 thickness=1 semi_aperture=10 n=air\n\
        stop semi_aperture=9\n";

    /// Paraxial y–nu matrices: refraction [[1,0],[−φ,1]] with φ = (n2−n1)c,
    /// transfer [[1,t/n],[0,1]].
    pub(crate) fn abcd_efl(lens: &LensPrescription, lambda: f64) -> f64 {
        let mut m = [[1.0, 0.0], [0.0, 1.0]];
        let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
            [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ]
        };
        for (i, s) in lens.surfaces.iter().enumerate() {
            let (n1, n2) = lens.media(i, lambda);
            let phi = (n2 - n1) * s.base_curvature();
            m = mul([[1.0, 0.0], [-phi, 1.0]], m);
            if i + 1 < lens.surfaces.len() {
                m = mul([[1.0, s.thickness / n2], [0.0, 1.0]], m);
            }
        }
        -1.0 / m[1][0]
    }

    #[test]
    fn biconvex_focal_length() {
        let lens = parse_lens(BICONVEX, &WavelengthGrid::visible()).unwrap();
        let f = paraxial_focus(&lens, 550.0).unwrap();
        // Thick-lens formula for R = ±100, d = 2, n = 1.5.
        let oracle = 1.0 / (0.5 * (0.02 - 0.5 * 2.0 / (1.5 * 100.0 * 100.0)));
        assert!((f.efl - oracle).abs() / oracle < 1e-6, "{} vs {oracle}", f.efl);
        assert!((f.efl - 100.0).abs() < 1.0);
        assert!((f.efl - abcd_efl(&lens, 550.0)).abs() / f.efl < 1e-6);
        assert!(f.back_focal_distance > 98.0 && f.back_focal_distance < 100.0);
    }

    #[test]
    fn blue_focuses_nearer() {
        let text = BICONVEX.replace("n=1.5", "cauchy=1.5046,4200");
        let lens = parse_lens(&text, &WavelengthGrid::visible()).unwrap();
        let blue = paraxial_focus(&lens, 450.0).unwrap();
        let red = paraxial_focus(&lens, 650.0).unwrap();
        assert!(blue.back_focal_distance < red.back_focal_distance);
    }

    #[test]
    fn hurb_sigma_value() {
        assert!((hurb_sigma(550.0, 1.0) - 8.754e-5).abs() < 1e-8);
        assert_eq!(hurb_sigma(550.0, 0.0), hurb_sigma(550.0, 1e-6));
        let mut r = rng::stream(1, &[]);
        assert_eq!(hurb_perturb(Vec3::Z, 1.0, 0.0, &mut r), Vec3::Z);
    }

    #[test]
    fn hurb_spread_matches_sigma() {
        let mut r = rng::stream(42, &[]);
        let (e1, e2) = Vec3::Z.orthonormal_basis();
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let d = hurb_perturb(Vec3::Z, 1.0, 550.0, &mut r);
            s1 += (d.dot(e1) / d.z).atan().powi(2);
            s2 += (d.dot(e2) / d.z).atan().powi(2);
        }
        let sigma = hurb_sigma(550.0, 1.0);
        for s in [s1, s2] {
            let sd = (s / n as f64).sqrt();
            assert!((sd / sigma - 1.0).abs() < 0.02, "{sd} vs {sigma}");
        }
    }

    #[test]
    fn stop_centre_uses_full_radius() {
        // At the stop centre the edge distance is the radius, so the spread
        // equals hurb_sigma(λ, r).
        let lens = LensPrescription::pinhole(10.0, 0.01);
        let mut r = rng::stream(3, &[]);
        let n = 20_000;
        let mut s = 0.0;
        for _ in 0..n {
            let ray = trace_through_lens(Vec3::ZERO, Vec3::new(0.0, 0.0, 10.0), 600.0, &lens, Some(&mut r)).unwrap();
            s += ray.direction.x.powi(2);
        }
        let sd = (s / n as f64).sqrt();
        assert!((sd / hurb_sigma(600.0, 0.01) - 1.0).abs() < 0.05);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn refraction_reverses(th in 0.0f64..1.5, phi in 0.0f64..std::f64::consts::TAU, n1 in 1.0f64..2.0, n2 in 1.0f64..2.0) {
                let d = Vec3::new(th.sin() * phi.cos(), th.sin() * phi.sin(), th.cos());
                let n = -Vec3::Z;
                if let Some(t) = refract(d, n, n1, n2) {
                    let back = refract(t, -n, n2, n1).unwrap();
                    prop_assert!((back - d).length() < 1e-9);
                    prop_assert!((t.length() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn weight_is_binary(x in -3.0f64..3.0, y in -3.0f64..3.0, rx in -9.0f64..9.0, ry in -9.0f64..9.0) {
                let lens = parse_lens(BICONVEX, &WavelengthGrid::visible()).unwrap();
                if let Ok(ray) = trace_through_lens(Vec3::new(x, y, 0.0), Vec3::new(rx, ry, 100.0), 550.0, &lens, None) {
                    prop_assert_eq!(ray.weight, 1.0);
                    prop_assert!((ray.direction.length() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn bundled_lenses_parse_and_focus() {
        let g = WavelengthGrid::visible();
        for (name, text) in crate::optics::BUNDLED_LENSES {
            let lens = parse_lens(text, &g).unwrap_or_else(|e| panic!("{name}: {e}"));
            if lens.surfaces.len() == 1 {
                continue;
            }
            let f = paraxial_focus(&lens, 550.0).unwrap();
            let oracle = abcd_efl(&lens, 550.0);
            assert!((f.efl - oracle).abs() / oracle < 0.005, "{name}: {} vs {oracle}", f.efl);
            assert!((f.efl - lens.focal_length.unwrap()).abs() / f.efl < 1e-3, "{name}");
            assert!((f.back_focal_distance - lens.film_distance).abs() < 1e-3 * f.efl, "{name} not focused at infinity");
        }
    }

    /// RMS radius on the film of a collimated beam at `field_deg`.
    fn spot_rms(lens: &LensPrescription, field_deg: f64) -> (f64, usize) {
        let front = lens.vertex_z().last().copied().unwrap() + 1.0;
        let th = field_deg.to_radians();
        let d = Vec3::new(0.0, -th.sin(), -th.cos());
        let n = 300;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = -12.0 + 24.0 * (i as f64 + 0.5) / n as f64;
                let y = -12.0 + 24.0 * (j as f64 + 0.5) / n as f64;
                if let Ok((o, dir)) = trace_from_scene(lens, Vec3::new(x, y, front), d, 550.0) {
                    let t = -o.z / dir.z;
                    pts.push((o.x + t * dir.x, o.y + t * dir.y));
                }
            }
        }
        let k = pts.len() as f64;
        let (cx, cy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / k, a.1 + p.1 / k));
        let ms = pts.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>() / k;
        (ms.sqrt(), pts.len())
    }

    #[test]
    fn wide_angle_spot_grows_toward_edge() {
        let lens = parse_lens(crate::optics::bundled_lens("wide_angle_112").unwrap(), &WavelengthGrid::visible()).unwrap();
        let (centre, nc) = spot_rms(&lens, 0.0);
        let (edge, ne) = spot_rms(&lens, 54.0);
        assert!(nc > 50 && ne > 20, "{nc} {ne}");
        assert!(edge > centre, "{edge} vs {centre}");
    }
}
