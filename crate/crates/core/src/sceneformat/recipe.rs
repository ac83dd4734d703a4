//! Scene recipe JSON: the declarative description of one scene instance.
//!
//! Lengths are metres, times seconds and angles degrees in the file; the
//! renderer converts angles to radians when it builds transforms.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AssetStore, ClassLabel};
use crate::geometry::{Quat, Similarity, TransformError, Vec3};
use crate::spectral::SpectralCurve;

pub const RECIPE_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("cannot access recipe {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("recipe schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported recipe_version {found:?} (this build reads {RECIPE_VERSION:?})")]
    UnsupportedVersion { found: String },
    #[error("recipe references asset {0:?}, which is not in the asset store")]
    MissingAsset(String),
    #[error("instance_id {0} is used more than once (0 is reserved)")]
    DuplicateInstance(u32),
    #[error("invalid recipe: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle_deg: f64,
}

impl Default for AxisAngle {
    fn default() -> Self {
        Self {
            axis: Vec3::Z,
            angle_deg: 0.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_default_rotation(r: &AxisAngle) -> bool {
    *r == AxisAngle::default()
}

fn is_one(s: &f64) -> bool {
    *s == 1.0
}

/// Either explicit components or a row-major 4×4 matrix, which must
/// decompose into translation, rotation and uniform scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransformSpec {
    Components {
        translation: Vec3,
        #[serde(default, skip_serializing_if = "is_default_rotation")]
        rotation: AxisAngle,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    Matrix {
        matrix: [[f64; 4]; 4],
    },
}

impl TransformSpec {
    pub fn translation(t: Vec3) -> Self {
        TransformSpec::Components {
            translation: t,
            rotation: AxisAngle::default(),
            scale: 1.0,
        }
    }

    pub fn yawed(t: Vec3, yaw_deg: f64) -> Self {
        TransformSpec::Components {
            translation: t,
            rotation: AxisAngle {
                axis: Vec3::Z,
                angle_deg: yaw_deg,
            },
            scale: 1.0,
        }
    }

    pub fn to_similarity(&self) -> Result<Similarity, TransformError> {
        match self {
            TransformSpec::Components {
                translation,
                rotation,
                scale,
            } => {
                if !(scale.is_finite() && *scale > 0.0) || !translation.is_finite() {
                    return Err(TransformError::NotDecomposable);
                }
                if rotation.angle_deg != 0.0 && rotation.axis.length() == 0.0 {
                    return Err(TransformError::NotDecomposable);
                }
                Ok(Similarity {
                    translation: *translation,
                    rotation: Quat::from_axis_angle(rotation.axis, rotation.angle_deg.to_radians()),
                    scale: *scale,
                })
            }
            TransformSpec::Matrix { matrix } => Similarity::from_matrix(*matrix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Projection {
    /// Perspective camera; `fov_deg` spans the film width.
    Pinhole { fov_deg: f64 },
    /// Equidistant fisheye; `fov_deg` spans the film width.
    Fisheye { fov_deg: f64 },
    /// Traced lens prescription; the film is `film_width_mm` wide.
    Lens { file: String, film_width_mm: f64 },
}

fn default_up() -> Vec3 {
    Vec3::Z
}

fn default_f_number() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub position: Vec3,
    pub look_at: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    pub projection: Projection,
    pub film_width_px: usize,
    pub film_height_px: usize,
    pub exposure_s: f64,
    /// Sets the radiance→irradiance factor π/(4N²) of the analytic models.
    #[serde(default = "default_f_number")]
    pub f_number: f64,
}

fn default_sky() -> SpectralCurve {
    SpectralCurve::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingConfig {
    /// Equirectangular radiance map in the spectral container format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sky_map: Option<String>,
    /// Uniform sky radiance used when no map is given.
    #[serde(default = "default_sky")]
    pub sky_radiance: SpectralCurve,
    #[serde(default = "one")]
    pub sky_scale: f64,
}

impl Default for LightingConfig {
    fn default() -> Self {
        Self {
            sky_map: None,
            sky_radiance: default_sky(),
            sky_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shutter {
    pub open: f64,
    pub close: f64,
}

impl Shutter {
    pub fn duration(&self) -> f64 {
        self.close - self.open
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedObject {
    pub asset_id: String,
    pub class_label: ClassLabel,
    pub instance_id: u32,
    pub transform_start: TransformSpec,
    pub transform_end: TransformSpec,
    /// m/s along the heading; 0 for static objects.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecipe {
    pub recipe_version: String,
    pub seed: u64,
    pub asset_store_path: String,
    pub camera: CameraConfig,
    pub lighting: LightingConfig,
    pub shutter: Shutter,
    pub objects: Vec<PlacedObject>,
}

impl SceneRecipe {
    /// Checks that need no asset store: version, shutter, camera, ids and
    /// transform decomposability.
    pub fn validate_structure(&self) -> Result<(), RecipeError> {
        if self.recipe_version != RECIPE_VERSION {
            return Err(RecipeError::UnsupportedVersion {
                found: self.recipe_version.clone(),
            });
        }
        let s = self.shutter;
        if !(s.open.is_finite() && s.close.is_finite() && s.open < s.close) {
            return Err(RecipeError::Invalid(format!(
                "shutter open {} must precede close {}",
                s.open, s.close
            )));
        }
        let c = &self.camera;
        if !(c.exposure_s.is_finite() && c.exposure_s > 0.0) {
            return Err(RecipeError::Invalid(format!("exposure_s {} must be > 0", c.exposure_s)));
        }
        if c.film_width_px == 0 || c.film_height_px == 0 {
            return Err(RecipeError::Invalid("film dimensions must be non-zero".into()));
        }
        if !(c.f_number.is_finite() && c.f_number > 0.0) {
            return Err(RecipeError::Invalid("f_number must be > 0".into()));
        }
        let fwd = c.look_at - c.position;
        if fwd.length() == 0.0 || fwd.cross(c.up).length() == 0.0 {
            return Err(RecipeError::Invalid("camera look_at/up are degenerate".into()));
        }
        match &c.projection {
            Projection::Pinhole { fov_deg } if !(*fov_deg > 0.0 && *fov_deg < 180.0) => {
                return Err(RecipeError::Invalid(format!("pinhole fov_deg {fov_deg} outside (0, 180)")))
            }
            Projection::Fisheye { fov_deg } if !(*fov_deg > 0.0 && *fov_deg <= 360.0) => {
                return Err(RecipeError::Invalid(format!("fisheye fov_deg {fov_deg} outside (0, 360]")))
            }
            Projection::Lens { film_width_mm, .. } if !(*film_width_mm > 0.0) => {
                return Err(RecipeError::Invalid("film_width_mm must be > 0".into()))
            }
            _ => {}
        }
        self.lighting
            .sky_radiance
            .validate()
            .map_err(|e| RecipeError::Invalid(format!("sky_radiance: {e}")))?;
        if !(self.lighting.sky_scale.is_finite() && self.lighting.sky_scale >= 0.0) {
            return Err(RecipeError::Invalid("sky_scale must be >= 0".into()));
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if o.instance_id == 0 || !seen.insert(o.instance_id) {
                return Err(RecipeError::DuplicateInstance(o.instance_id));
            }
            for t in [&o.transform_start, &o.transform_end] {
                t.to_similarity().map_err(|e| {
                    RecipeError::Invalid(format!("object {} ({}): {e}", o.instance_id, o.asset_id))
                })?;
            }
            if !(o.speed.is_finite() && o.speed >= 0.0) {
                return Err(RecipeError::Invalid(format!("object {}: negative speed", o.instance_id)));
            }
        }
        Ok(())
    }
}

/// Full validation, including that every asset resolves in `store`.
pub fn validate_recipe(recipe: &SceneRecipe, store: &AssetStore) -> Result<(), RecipeError> {
    recipe.validate_structure()?;
    for o in &recipe.objects {
        if store.get(&o.asset_id).is_none() {
            return Err(RecipeError::MissingAsset(o.asset_id.clone()));
        }
    }
    Ok(())
}

pub fn recipe_from_str(text: &str) -> Result<SceneRecipe, RecipeError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let recipe: SceneRecipe = serde_path_to_error::deserialize(de).map_err(|e| RecipeError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if recipe.recipe_version != RECIPE_VERSION {
        return Err(RecipeError::UnsupportedVersion {
            found: recipe.recipe_version,
        });
    }
    Ok(recipe)
}

pub fn recipe_to_string(recipe: &SceneRecipe) -> String {
    let mut s = serde_json::to_string_pretty(recipe).expect("recipe serialises");
    s.push('\n');
    s
}

pub fn read_recipe(path: impl AsRef<Path>) -> Result<SceneRecipe, RecipeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RecipeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    recipe_from_str(&text)
}

pub fn write_recipe(recipe: &SceneRecipe, path: impl AsRef<Path>) -> Result<(), RecipeError> {
    let path = path.as_ref();
    std::fs::write(path, recipe_to_string(recipe)).map_err(|source| RecipeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_recipe() -> SceneRecipe {
        SceneRecipe {
            recipe_version: RECIPE_VERSION.into(),
            seed: 11,
            asset_store_path: "assets".into(),
            camera: CameraConfig {
                position: Vec3::new(0.0, 0.0, 1.5),
                look_at: Vec3::new(10.0, 0.0, 1.5),
                up: Vec3::Z,
                projection: Projection::Pinhole { fov_deg: 60.0 },
                film_width_px: 32,
                film_height_px: 24,
                exposure_s: 0.01,
                f_number: 2.0,
            },
            lighting: LightingConfig::default(),
            shutter: Shutter { open: 0.0, close: 0.01 },
            objects: vec![],
        }
    }

    fn car_store() -> AssetStore {
        AssetStore::from_texts(["Asset \"car_001\" \"car\"\nMakeNamedMaterial \"m\" \"string type\" \"diffuse\"\nNamedMaterial \"m\"\nShape \"trianglemesh\" \"integer indices\" [0 1 2] \"point P\" [0 0 0 1 0 0 0 1 0]\n"]).unwrap()
    }

    #[test]
    fn empty_scene_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = empty_recipe();
        write_recipe(&r, &p).unwrap();
        assert_eq!(read_recipe(&p).unwrap(), r);
    }

    #[test]
    fn three_objects_round_trip_exactly() {
        let mut r = empty_recipe();
        for i in 1..=3u32 {
            let x = 5.0 * i as f64 + 0.1;
            r.objects.push(PlacedObject {
                asset_id: "car_001".into(),
                class_label: ClassLabel::Car,
                instance_id: i,
                transform_start: TransformSpec::yawed(Vec3::new(x, 1.75, 0.0), 12.5 * i as f64),
                transform_end: if i == 3 {
                    TransformSpec::Matrix {
                        matrix: Similarity::translation(Vec3::new(x + 0.3, 1.75, 0.0)).to_matrix(),
                    }
                } else {
                    TransformSpec::yawed(Vec3::new(x + 0.1 / 3.0, 1.75, 0.0), 12.5 * i as f64)
                },
                speed: 10.0 / 3.0,
            });
        }
        let text = recipe_to_string(&r);
        let back = recipe_from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(recipe_to_string(&back), text);
        validate_recipe(&back, &car_store()).unwrap();
    }

    #[test]
    fn field_order_is_irrelevant() {
        let r = empty_recipe();
        let mut v: serde_json::Value = serde_json::to_value(&r).unwrap();
        // rebuild with reversed key order
        let obj = v.as_object_mut().unwrap();
        let mut entries: Vec<_> = obj.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        entries.reverse();
        let text = format!(
            "{{{}}}",
            entries
                .iter()
                .map(|(k, v)| format!("{:?}:{}", k, v))
                .collect::<Vec<_>>()
                .join(",")
        );
        assert_eq!(recipe_from_str(&text).unwrap(), r);
    }

    #[test]
    fn missing_asset_named() {
        let mut r = empty_recipe();
        r.objects.push(PlacedObject {
            asset_id: "car_999".into(),
            class_label: ClassLabel::Car,
            instance_id: 1,
            transform_start: TransformSpec::translation(Vec3::ZERO),
            transform_end: TransformSpec::translation(Vec3::ZERO),
            speed: 0.0,
        });
        let err = validate_recipe(&r, &car_store()).unwrap_err();
        assert!(matches!(&err, RecipeError::MissingAsset(id) if id == "car_999"));
        assert!(err.to_string().contains("car_999"));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = serde_json::to_value(empty_recipe()).unwrap();
        v["camera"]["exposure_s"] = serde_json::json!("fast");
        match recipe_from_str(&v.to_string()) {
            Err(RecipeError::Schema { path, .. }) => assert_eq!(path, "camera.exposure_s"),
            other => panic!("{other:?}"),
        }
        let mut v = serde_json::to_value(empty_recipe()).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(recipe_from_str(&v.to_string()).unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut r = empty_recipe();
        r.recipe_version = "9.9".into();
        assert!(matches!(
            recipe_from_str(&recipe_to_string(&r)),
            Err(RecipeError::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn structural_checks() {
        let mut r = empty_recipe();
        r.shutter = Shutter { open: 0.02, close: 0.01 };
        assert!(r.validate_structure().is_err());

        let mut r = empty_recipe();
        let mut shear = Similarity::IDENTITY.to_matrix();
        shear[0][1] = 0.3;
        r.objects.push(PlacedObject {
            asset_id: "car_001".into(),
            class_label: ClassLabel::Car,
            instance_id: 1,
            transform_start: TransformSpec::Matrix { matrix: shear },
            transform_end: TransformSpec::translation(Vec3::ZERO),
            speed: 0.0,
        });
        assert!(r.validate_structure().is_err());

        let mut r = empty_recipe();
        let o = PlacedObject {
            asset_id: "car_001".into(),
            class_label: ClassLabel::Car,
            instance_id: 4,
            transform_start: TransformSpec::translation(Vec3::ZERO),
            transform_end: TransformSpec::translation(Vec3::ZERO),
            speed: 0.0,
        };
        r.objects = vec![o.clone(), o];
        assert!(matches!(r.validate_structure(), Err(RecipeError::DuplicateInstance(4))));
    }
}
