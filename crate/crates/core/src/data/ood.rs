use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, FeatureDataset, Format};
use crate::error::{Error, Result};
use crate::numerics::{permutation, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodTag {
    Near,
    Far,
}

impl std::fmt::Display for OodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OodTag::Near => "near",
            OodTag::Far => "far",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodSet {
    pub name: String,
    pub tag: OodTag,
    pub data: FeatureDataset,
}

/// Named OOD datasets, each tagged near or far. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OodSuite {
    sets: Vec<OodSet>,
}

impl OodSuite {
    pub fn new(sets: Vec<OodSet>) -> Result<Self> {
        let mut names: Vec<&str> = sets.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate OOD dataset name `{}`", w[0])));
        }
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &[OodSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// The OOD rows evaluated at 1-based step `t` of `total_steps`: the first
/// `floor(n * t / total_steps)` rows of one fixed seeded permutation, so the
/// subsets are nested in `t` and grow in proportion to the ID test set.
pub fn ood_subset(ood: &FeatureDataset, t: usize, total_steps: usize, rng: &RngStream) -> Result<FeatureDataset> {
    if t == 0 || t > total_steps {
        return Err(Error::StepOutOfRange {
            step: t,
            total: total_steps,
        });
    }
    let n = ood.len();
    let take = n * t / total_steps;
    let perm = permutation(n, &mut rng.rng());
    Ok(ood.select(&perm[..take]))
}

/// On-disk description of an ID/OOD benchmark.
///
/// Relative paths are resolved against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub id_train: PathBuf,
    pub id_test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub ood: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub tag: OodTag,
}

/// ID train/test plus the OOD suite, as loaded from a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub ood: OodSuite,
}

impl SuiteManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load every dataset; `base` is the directory relative paths hang off.
    pub fn load(&self, base: &Path) -> Result<BenchmarkData> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let train_path = resolve(&self.id_train);
        let train = load_dataset(&train_path, Format::from_path(&train_path), self.num_classes)?;
        let k = train.num_classes();
        let test_path = resolve(&self.id_test);
        let test = load_dataset(&test_path, Format::from_path(&test_path), Some(k))?;
        if test.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                got: test.dim(),
            });
        }
        let mut sets = Vec::with_capacity(self.ood.len());
        for entry in &self.ood {
            let p = resolve(&entry.path);
            let data = load_dataset(&p, Format::from_path(&p), None)?;
            if data.dim() != train.dim() {
                return Err(Error::DimensionMismatch {
                    expected: train.dim(),
                    got: data.dim(),
                });
            }
            sets.push(OodSet {
                name: entry.name.clone(),
                tag: entry.tag,
                data,
            });
        }
        Ok(BenchmarkData {
            train,
            test,
            ood: OodSuite::new(sets)?,
        })
    }
}
