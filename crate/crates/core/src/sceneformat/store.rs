use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use super::{parse_asset, AssetDescription, AssetError, ClassLabel};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot read asset store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Asset {
        path: PathBuf,
        #[source]
        source: AssetError,
    },
    #[error("asset id {0:?} appears more than once in the store")]
    DuplicateId(String),
    #[error("asset store {0} contains no assets")]
    Empty(PathBuf),
}

/// Local asset database: every `*.asset` file in one directory, listed in
/// file-name order. Listing order is part of the determinism contract of
/// scene assembly.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    root: Option<PathBuf>,
    listing: Vec<Arc<AssetDescription>>,
    by_id: BTreeMap<String, usize>,
}

impl AssetStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let io = |source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "asset"))
            .collect();
        files.sort();
        let mut assets = Vec::with_capacity(files.len());
        for path in files {
            let text = std::fs::read(&path).map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            let asset = super::parse_asset_bytes(&text).map_err(|source| StoreError::Asset { path, source })?;
            assets.push(asset);
        }
        let mut store = Self::from_assets(assets)?;
        store.root = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn from_assets(assets: Vec<AssetDescription>) -> Result<Self, StoreError> {
        let mut by_id = BTreeMap::new();
        let mut listing = Vec::with_capacity(assets.len());
        for (i, a) in assets.into_iter().enumerate() {
            if by_id.insert(a.asset_id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(a.asset_id));
            }
            listing.push(Arc::new(a));
        }
        Ok(Self {
            root: None,
            listing,
            by_id,
        })
    }

    /// Convenience for tests and fixtures: parses asset texts in order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, StoreError> {
        let assets = texts
            .into_iter()
            .map(|t| {
                parse_asset(t).map_err(|source| StoreError::Asset {
                    path: PathBuf::from("<memory>"),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_assets(assets)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.listing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listing.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<AssetDescription>> {
        self.by_id.get(id).map(|&i| &self.listing[i])
    }

    pub fn listing(&self) -> &[Arc<AssetDescription>] {
        &self.listing
    }

    /// Assets of one class, in listing order.
    pub fn of_class(&self, class: ClassLabel) -> Vec<&Arc<AssetDescription>> {
        self.listing.iter().filter(|a| a.class_label == class).collect()
    }
}
