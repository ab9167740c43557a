use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexset::MultiIndexSet;
use crate::polybasis::BasisFamily;

use super::component::MapComponent;
use super::composed::ComposedMap;
use super::triangular::{Direction, Standardization, TriangularMap};

pub const MAP_FORMAT: &str = "tmsbi-map";
pub const MAP_FORMAT_VERSION: u32 = 1;
pub const COMPOSED_FORMAT: &str = "tmsbi-composed-map";

/// One component: index matrix (rows = indices) and aligned coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub indices: Vec<Vec<usize>>,
    pub coeffs: Vec<f64>,
}

/// JSON document describing a [`TriangularMap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub offset: usize,
    pub direction: Direction,
    pub standardization: Standardization,
    pub family: BasisFamily,
    pub quad_order: usize,
    pub components: Vec<ComponentRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ComposedFile {
    format: String,
    version: u32,
    dim: usize,
    layers: Vec<MapFile>,
}

impl MapFile {
    pub fn from_map(map: &TriangularMap) -> Self {
        let first = &map.components()[0];
        MapFile {
            format: MAP_FORMAT.to_string(),
            version: MAP_FORMAT_VERSION,
            dim: map.dim(),
            offset: map.offset(),
            direction: map.direction(),
            standardization: map.standardization().clone(),
            family: *first.family(),
            quad_order: first.quad_order(),
            components: map
                .components()
                .iter()
                .map(|c| ComponentRecord {
                    indices: c.index_set().to_rows(),
                    coeffs: c.coeffs().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_map(&self) -> Result<TriangularMap> {
        if self.format != MAP_FORMAT {
            return Err(Error::invalid(format!("unknown map format `{}`", self.format)));
        }
        if self.version != MAP_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported map format version {}",
                self.version
            )));
        }
        let family = BasisFamily::new(self.family.max_order, self.family.tail_bound)?;
        let comps = self
            .components
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let set = MultiIndexSet::from_rows(self.offset + j + 1, r.indices.clone())?;
                MapComponent::new(set, r.coeffs.clone(), family, self.quad_order)
            })
            .collect::<Result<Vec<_>>>()?;
        TriangularMap::new(
            self.dim,
            self.offset,
            self.standardization.clone(),
            comps,
            self.direction,
        )
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

impl TriangularMap {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MapFile::from_map(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<MapFile>(text)?.to_map()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: MapFile = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
        file.to_map().map_err(|e| format_err(path, e))
    }
}

impl ComposedMap {
    pub fn to_json(&self) -> Result<String> {
        let f = ComposedFile {
            format: COMPOSED_FORMAT.to_string(),
            version: MAP_FORMAT_VERSION,
            dim: self.dim(),
            layers: self.layers().iter().map(MapFile::from_map).collect(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ComposedFile = serde_json::from_str(text)?;
        if f.format != COMPOSED_FORMAT || f.version != MAP_FORMAT_VERSION {
            return Err(Error::invalid("not a composed map document"));
        }
        let layers = f.layers.iter().map(MapFile::to_map).collect::<Result<_>>()?;
        ComposedMap::from_layers(f.dim, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| format_err(path, e))
    }
}
