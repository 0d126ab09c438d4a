//! Benchmark manifest and the bundled corpus.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Netlist, ParseError};
use crate::simulator::SweepSpec;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{name}: expected {expected} nodes, netlist has {found}")]
    NodeCountDrift { name: String, expected: usize, found: usize },
    #[error("no entry named `{0}`")]
    UnknownEntry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    /// Relative to the manifest's directory.
    pub netlist: String,
    pub output_node: String,
    /// Id of the swept source.
    pub source: String,
    /// Area denominator for transistor overhead, m^2.
    pub area: f64,
    pub expected_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    #[serde(rename = "entry")]
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A manifest entry with its parsed netlist.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub entry: ManifestEntry,
    pub path: PathBuf,
    pub netlist: Netlist,
}

impl Benchmark {
    /// The entry's sweep source over `template`'s range and grid.
    pub fn sweep(&self, template: &SweepSpec) -> SweepSpec {
        SweepSpec::new(&self.entry.source, template.start, template.stop, template.points)
    }
}

/// Directory of the corpus shipped with this crate.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn bundled_manifest() -> Result<Manifest, CorpusError> {
    Manifest::load(&bundled_dir().join("manifest.toml"))
}

pub fn read_netlist(path: &Path) -> Result<Netlist, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut n = Netlist::parse(&text).map_err(|source| CorpusError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    n.meta.path = Some(path.to_path_buf());
    Ok(n)
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn entry(&self, name: &str) -> Result<&ManifestEntry, CorpusError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CorpusError::UnknownEntry(name.to_string()))
    }

    /// Parse one entry and check its node count against the manifest.
    pub fn benchmark(&self, entry: &ManifestEntry) -> Result<Benchmark, CorpusError> {
        let path = self.base_dir.join(&entry.netlist);
        let netlist = read_netlist(&path)?;
        let found = netlist.node_count();
        if found != entry.expected_n {
            return Err(CorpusError::NodeCountDrift {
                name: entry.name.clone(),
                expected: entry.expected_n,
                found,
            });
        }
        Ok(Benchmark {
            entry: entry.clone(),
            path,
            netlist,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Benchmark>, CorpusError> {
        self.entries.iter().map(|e| self.benchmark(e)).collect()
    }

    pub fn by_name(&self, name: &str) -> Result<Benchmark, CorpusError> {
        self.benchmark(self.entry(name)?)
    }
}
