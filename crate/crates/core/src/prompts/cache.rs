use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CACHE_FORMAT: &str = "mplp-representation-cache";
const CACHE_VERSION: u32 = 1;

/// Frozen first-stage mask vectors keyed by utterance id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationCache {
    format: String,
    version: u32,
    /// Identifies the checkpoint the vectors were computed from.
    pub tag: String,
    width: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl RepresentationCache {
    pub fn new(tag: impl Into<String>, width: usize) -> Self {
        Self {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            tag: tag.into(),
            width,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.width {
            return Err(Error::Shape(format!(
                "cached vector of width {} in a cache of width {}",
                v.len(),
                self.width
            )));
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("utterance {id} missing from representation cache")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&fs::read(path)?)?;
        if c.format != CACHE_FORMAT || c.version != CACHE_VERSION {
            return Err(Error::Format(format!("{}: not a representation cache", path.display())));
        }
        if let Some((id, _)) = c.vectors.iter().find(|(_, v)| v.len() != c.width) {
            return Err(Error::Format(format!("cached vector {id} has the wrong width")));
        }
        Ok(c)
    }
}
