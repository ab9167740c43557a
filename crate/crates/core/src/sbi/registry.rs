use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::surrogate::SurrogateLikelihood;

pub const REGISTRY_FORMAT: &str = "tmsbi-registry";
pub const REGISTRY_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Manifest line for one assimilation step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub step: usize,
    /// Map file relative to the registry directory; absent for failed steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub n_samples: usize,
    pub skipped: usize,
    pub n_terms: usize,
    pub basis_evals: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    n_theta: usize,
    n_y: usize,
    entries: Vec<RegistryEntry>,
}

/// Surrogate likelihoods by assimilation step.
#[derive(Clone, Debug)]
pub struct Registry {
    n_theta: usize,
    n_y: usize,
    surrogates: BTreeMap<usize, SurrogateLikelihood>,
    entries: BTreeMap<usize, RegistryEntry>,
}

fn surrogate_file(step: usize) -> String {
    format!("surrogate-{step:04}.json")
}

impl Registry {
    pub fn new(n_theta: usize, n_y: usize) -> Self {
        Registry {
            n_theta,
            n_y,
            surrogates: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn len(&self) -> usize {
        self.surrogates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surrogates.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.surrogates.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn get(&self, step: usize) -> Result<&SurrogateLikelihood> {
        self.surrogates.get(&step).ok_or(Error::MissingSurrogate(step))
    }

    /// Adds a surrogate; `entry` carries its training statistics.
    pub fn insert(&mut self, surrogate: SurrogateLikelihood, mut entry: RegistryEntry) -> Result<()> {
        check_dim(self.n_theta, surrogate.n_theta())?;
        check_dim(self.n_y, surrogate.n_y())?;
        let step = surrogate.step();
        entry.step = step;
        entry.file = Some(surrogate_file(step));
        entry.n_terms = surrogate.block().n_terms();
        entry.error = None;
        self.entries.insert(step, entry);
        self.surrogates.insert(step, surrogate);
        Ok(())
    }

    /// Records a step whose training failed.
    pub fn record_failure(&mut self, step: usize, message: String) {
        self.surrogates.remove(&step);
        self.entries.insert(
            step,
            RegistryEntry {
                step,
                error: Some(message),
                ..RegistryEntry::default()
            },
        );
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (step, s) in &self.surrogates {
            fs::write(dir.join(surrogate_file(*step)), s.to_json()?)?;
        }
        let m = Manifest {
            format: REGISTRY_FORMAT.into(),
            version: REGISTRY_FORMAT_VERSION,
            n_theta: self.n_theta,
            n_y: self.n_y,
            entries: self.entries.values().cloned().collect(),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bad = |reason: String| Error::Format {
            path: path.clone(),
            reason,
        };
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| bad(e.to_string()))?;
        if m.format != REGISTRY_FORMAT || m.version != REGISTRY_FORMAT_VERSION {
            return Err(bad(format!("unsupported registry {} v{}", m.format, m.version)));
        }
        let mut reg = Registry::new(m.n_theta, m.n_y);
        for e in m.entries {
            match &e.file {
                Some(f) => {
                    let p = dir.join(f);
                    let text = match fs::read_to_string(&p) {
                        Err(err) if err.kind() == std::io::ErrorKind::NotFound => {
                            return Err(Error::MissingSurrogate(e.step))
                        }
                        r => r?,
                    };
                    let s = SurrogateLikelihood::from_json(&text).map_err(|err| {
                        Error::Format {
                            path: p.clone(),
                            reason: err.to_string(),
                        }
                    })?;
                    if s.step() != e.step {
                        return Err(bad(format!("{f} holds step {}, expected {}", s.step(), e.step)));
                    }
                    reg.insert(s, e)?;
                }
                None => {
                    reg.entries.insert(e.step, e);
                }
            }
        }
        Ok(reg)
    }
}
