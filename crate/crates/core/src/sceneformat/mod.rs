//! On-disk artifacts: asset descriptions, scene recipes and the spectral
//! image container.

mod asset;
mod recipe;
mod spim;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use asset::{
    parse_asset, parse_asset_bytes, write_asset, AssetDescription, AssetError, MaterialKind,
    MaterialSpec, MeshPart, TriangleMesh,
};
pub use recipe::{
    read_recipe, recipe_from_str, recipe_to_string, validate_recipe, write_recipe, AxisAngle,
    CameraConfig, LightingConfig, PlacedObject, Projection, RecipeError, SceneRecipe, Shutter,
    TransformSpec, RECIPE_VERSION,
};
pub use spim::{
    read_spectral_image, read_spectral_image_with_header, spectral_image_from_bytes, spectral_image_to_bytes, write_spectral_image,
    SpimError, SpimHeader, SpimPlane, SPIM_MAGIC, SPIM_VERSION,
};
pub use store::{AssetStore, StoreError};

/// Semantic class of an asset. Numeric ids are what the class metadata plane
/// stores; 0 is reserved for "no object".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Car,
    Pedestrian,
    Cyclist,
    Building,
    Tree,
    Sign,
    TrafficLight,
    Other,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 8] = [
        ClassLabel::Car,
        ClassLabel::Pedestrian,
        ClassLabel::Cyclist,
        ClassLabel::Building,
        ClassLabel::Tree,
        ClassLabel::Sign,
        ClassLabel::TrafficLight,
        ClassLabel::Other,
    ];

    pub fn id(self) -> u32 {
        match self {
            ClassLabel::Car => 1,
            ClassLabel::Pedestrian => 2,
            ClassLabel::Cyclist => 3,
            ClassLabel::Building => 4,
            ClassLabel::Tree => 5,
            ClassLabel::Sign => 6,
            ClassLabel::TrafficLight => 7,
            ClassLabel::Other => 8,
        }
    }

    pub fn from_id(id: u32) -> Option<ClassLabel> {
        ClassLabel::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Car => "car",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Cyclist => "cyclist",
            ClassLabel::Building => "building",
            ClassLabel::Tree => "tree",
            ClassLabel::Sign => "sign",
            ClassLabel::TrafficLight => "traffic_light",
            ClassLabel::Other => "other",
        }
    }

    pub fn is_mobile(self) -> bool {
        matches!(
            self,
            ClassLabel::Car | ClassLabel::Pedestrian | ClassLabel::Cyclist | ClassLabel::Other
        )
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class label {s:?}"))
    }
}
