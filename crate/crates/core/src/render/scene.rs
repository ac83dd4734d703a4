//! Render-ready scene: instanced assets with per-object motion, realized
//! materials and the environment light.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use super::bvh::{intersect_triangle, Bvh};
use crate::geometry::{Aabb, Similarity, Vec3};
use crate::sceneformat::{AssetDescription, AssetStore, MaterialKind, SceneRecipe};
use crate::spectral::{SpectralImage, WavelengthGrid};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("asset {0:?} is not in the asset store")]
    MissingAsset(String),
    #[error("object {instance_id}: {msg}")]
    Object { instance_id: u32, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Material realized on the render grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Material {
    Diffuse { reflectance: Vec<f64> },
    Retroreflective { reflectance: Vec<f64>, fraction: f64, sigma_rad: f64 },
    Emissive { radiance: Vec<f64> },
}

impl Material {
    pub fn realize(spec: &crate::sceneformat::MaterialSpec, grid: &WavelengthGrid) -> Result<Self, String> {
        let values = spec.spectrum.to_spectrum(grid).map_err(|e| e.to_string())?.into_values();
        Ok(match spec.kind {
            MaterialKind::Diffuse => Material::Diffuse { reflectance: values },
            MaterialKind::Retroreflective {
                retro_fraction,
                retro_sigma_deg,
            } => Material::Retroreflective {
                reflectance: values,
                fraction: retro_fraction,
                sigma_rad: retro_sigma_deg.to_radians(),
            },
            MaterialKind::Emissive => Material::Emissive { radiance: values },
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Triangle {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
    material: u32,
}

/// Triangles of one asset in its local frame, shared between instances.
#[derive(Debug)]
pub struct MeshData {
    triangles: Vec<Triangle>,
    materials: Vec<Material>,
    bvh: Bvh,
    bounds: Aabb,
}

impl MeshData {
    pub fn from_asset(asset: &AssetDescription, grid: &WavelengthGrid) -> Result<Self, String> {
        let names: Vec<&String> = asset.materials.keys().collect();
        let materials = asset
            .materials
            .values()
            .map(|m| Material::realize(m, grid))
            .collect::<Result<Vec<_>, _>>()?;
        let mut triangles = Vec::with_capacity(asset.triangle_count());
        for part in &asset.meshes {
            let material = names
                .iter()
                .position(|n| **n == part.material)
                .ok_or_else(|| format!("material {:?} undefined", part.material))? as u32;
            for t in &part.mesh.triangles {
                let [a, b, c] = t.map(|i| part.mesh.vertices[i as usize]);
                triangles.push(Triangle {
                    v0: a,
                    e1: b - a,
                    e2: c - a,
                    material,
                });
            }
        }
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| Aabb::from_points([t.v0, t.v0 + t.e1, t.v0 + t.e2]))
            .collect();
        let bvh = Bvh::build(&boxes);
        Ok(Self {
            bounds: bvh.bounds(),
            triangles,
            materials,
            bvh,
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub mesh: Arc<MeshData>,
    pub t0: Similarity,
    pub t1: Similarity,
    pub class_id: u32,
    pub instance_id: u32,
    /// World bounds over the whole shutter interval.
    pub swept_bounds: Aabb,
}

impl SceneObject {
    pub fn new(mesh: Arc<MeshData>, t0: Similarity, t1: Similarity, class_id: u32, instance_id: u32) -> Self {
        Self {
            swept_bounds: swept_bounds(mesh.bounds, &t0, &t1),
            mesh,
            t0,
            t1,
            class_id,
            instance_id,
        }
    }

    pub fn is_static(&self) -> bool {
        self.t0 == self.t1
    }

    pub fn transform_at(&self, u: f64) -> Similarity {
        if self.is_static() {
            self.t0
        } else {
            self.t0.interpolate(&self.t1, u)
        }
    }
}

fn swept_bounds(local: Aabb, t0: &Similarity, t1: &Similarity) -> Aabb {
    if t0.rotation == t1.rotation && t0.scale == t1.scale {
        // Corners move linearly, so the endpoint boxes bound the sweep.
        return local
            .corners()
            .iter()
            .flat_map(|&c| [t0.apply_point(c), t1.apply_point(c)])
            .fold(Aabb::EMPTY, Aabb::grow);
    }
    let rho = local.corners().iter().map(|c| c.length()).fold(0.0, f64::max) * t0.scale.max(t1.scale);
    let r = Vec3::splat(rho);
    Aabb::from_points([t0.translation - r, t0.translation + r, t1.translation - r, t1.translation + r])
}

/// Equirectangular map: column angle φ = atan2(y, x) from −π at the left
/// edge, row angle θ = acos(z) from the zenith at the top.
#[derive(Debug, Clone)]
pub enum Environment {
    Uniform(Vec<f64>),
    Map { image: SpectralImage, scale: f64 },
}

impl Environment {
    pub fn radiance_into(&self, dir: Vec3, out: &mut [f64]) {
        match self {
            Environment::Uniform(v) => out.copy_from_slice(v),
            Environment::Map { image, scale } => {
                let (w, h) = (image.width(), image.height());
                let phi = dir.y.atan2(dir.x);
                let theta = dir.z.clamp(-1.0, 1.0).acos();
                let x = (((phi + PI) / (2.0 * PI)) * w as f64) as usize;
                let y = ((theta / PI) * h as f64) as usize;
                let (x, y) = (x.min(w - 1), y.min(h - 1));
                for (b, o) in out.iter_mut().enumerate() {
                    *o = f64::from(image.get(x, y, b)) * scale;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit geometric normal, world space, not oriented.
    pub normal: Vec3,
    pub object: usize,
    pub material: u32,
}

#[derive(Debug)]
pub struct RenderScene {
    pub grid: WavelengthGrid,
    pub objects: Vec<SceneObject>,
    pub environment: Environment,
    top: Bvh,
}

impl RenderScene {
    /// Builds instances for every recipe object. `environment` replaces the
    /// recipe's uniform sky when given (e.g. a loaded sky map).
    pub fn build(
        recipe: &SceneRecipe,
        store: &AssetStore,
        grid: &WavelengthGrid,
        environment: Option<Environment>,
    ) -> Result<Self, SceneError> {
        let mut meshes: BTreeMap<&str, Arc<MeshData>> = BTreeMap::new();
        let mut objects = Vec::with_capacity(recipe.objects.len());
        for o in &recipe.objects {
            let asset = store.get(&o.asset_id).ok_or_else(|| SceneError::MissingAsset(o.asset_id.clone()))?;
            let mesh = match meshes.get(o.asset_id.as_str()) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(MeshData::from_asset(asset, grid).map_err(|msg| SceneError::Object {
                        instance_id: o.instance_id,
                        msg,
                    })?);
                    meshes.insert(&o.asset_id, m.clone());
                    m
                }
            };
            let obj_err = |e: crate::geometry::TransformError| SceneError::Object {
                instance_id: o.instance_id,
                msg: e.to_string(),
            };
            let t0 = o.transform_start.to_similarity().map_err(obj_err)?;
            let t1 = o.transform_end.to_similarity().map_err(obj_err)?;
            objects.push(SceneObject::new(mesh, t0, t1, o.class_label.id(), o.instance_id));
        }
        let environment = match environment {
            Some(e) => e,
            None => {
                let sky = recipe
                    .lighting
                    .sky_radiance
                    .to_spectrum(grid)
                    .map_err(|e| SceneError::Invalid(format!("sky_radiance: {e}")))?;
                Environment::Uniform(sky.scaled(recipe.lighting.sky_scale).into_values())
            }
        };
        Ok(Self::from_objects(*grid, objects, environment))
    }

    pub fn from_objects(grid: WavelengthGrid, objects: Vec<SceneObject>, environment: Environment) -> Self {
        let boxes: Vec<Aabb> = objects.iter().map(|o| o.swept_bounds).collect();
        Self {
            grid,
            top: Bvh::build(&boxes),
            objects,
            environment,
        }
    }

    pub fn material(&self, hit: &Hit) -> &Material {
        &self.objects[hit.object].mesh.materials[hit.material as usize]
    }

    fn hit_object(&self, k: usize, origin: Vec3, dir: Vec3, u: f64, t_min: f64, t_max: f64) -> Option<(f64, usize)> {
        let obj = &self.objects[k];
        let xf = obj.transform_at(u);
        // The local direction is not renormalized, so local t equals world t.
        let lo = xf.inverse_point(origin);
        let ld = xf.inverse_vector(dir);
        let mesh = &obj.mesh;
        let mut best = None;
        mesh.bvh.traverse(lo, ld, t_max, |i, tmax| {
            let tri = &mesh.triangles[i];
            let t = intersect_triangle(lo, ld, tri.v0, tri.e1, tri.e2, t_min, tmax)?;
            best = Some((t, i));
            Some(t)
        });
        best
    }

    fn finish(&self, k: usize, tri: usize, origin: Vec3, dir: Vec3, t: f64, u: f64) -> Hit {
        let obj = &self.objects[k];
        let tr = &obj.mesh.triangles[tri];
        let normal = obj.transform_at(u).apply_normal(tr.e1.cross(tr.e2)).normalize();
        Hit {
            t,
            point: origin + dir * t,
            normal,
            object: k,
            material: tr.material,
        }
    }

    /// Nearest hit with `t` in `(t_min, t_max)` at shutter fraction `u`.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, u: f64, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<(f64, usize, usize)> = None;
        self.top.traverse(origin, dir, t_max, |k, tmax| {
            let (t, tri) = self.hit_object(k, origin, dir, u, t_min, tmax)?;
            best = Some((t, k, tri));
            Some(t)
        });
        best.map(|(t, k, tri)| self.finish(k, tri, origin, dir, t, u))
    }

    pub fn occluded(&self, origin: Vec3, dir: Vec3, u: f64, t_min: f64) -> bool {
        let mut blocked = false;
        self.top.traverse(origin, dir, f64::INFINITY, |k, tmax| {
            if blocked {
                return Some(0.0);
            }
            self.hit_object(k, origin, dir, u, t_min, tmax)?;
            blocked = true;
            Some(0.0)
        });
        blocked
    }

    /// Reference implementation: every triangle of every object.
    pub fn intersect_brute_force(&self, origin: Vec3, dir: Vec3, u: f64, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (k, obj) in self.objects.iter().enumerate() {
            let xf = obj.transform_at(u);
            let lo = xf.inverse_point(origin);
            let ld = xf.inverse_vector(dir);
            for (i, tri) in obj.mesh.triangles.iter().enumerate() {
                let cap = best.map_or(t_max, |b| b.0);
                if let Some(t) = intersect_triangle(lo, ld, tri.v0, tri.e1, tri.e2, t_min, cap) {
                    best = Some((t, k, i));
                }
            }
        }
        best.map(|(t, k, tri)| self.finish(k, tri, origin, dir, t, u))
    }
}
