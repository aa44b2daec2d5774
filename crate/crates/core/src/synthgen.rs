//! Seeded Gaussian-mixture benchmark generator.
//!
//! ID classes are isotropic Gaussians whose means sit at radius `r` on
//! random unit directions. Near-OOD components sit at jittered midpoints of
//! random class-mean pairs. Far-OOD components sit at radius `r_far + r` on
//! random directions with no positive coordinate, so they are at least
//! `r_far` from every class mean and vanish under a rectifying extractor.
//!
//! Features are rounded to `f32` so a dataset survives the binary format
//! unchanged.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_dataset, FeatureDataset, Format, ManifestEntry, OodSet, OodSuite, OodTag, SuiteManifest};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{norm, standard_normal, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub radius: f64,
    pub sigma: f64,
    pub r_far: f64,
    pub delta_near: f64,
    pub n_ood: usize,
    pub near_sets: usize,
    pub far_sets: usize,
    /// Mixture components per OOD set.
    pub ood_components: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            dim: 32,
            n_train: 200,
            n_test: 50,
            radius: 5.0,
            sigma: 1.0,
            r_far: 50.0,
            delta_near: 0.5,
            n_ood: 1000,
            near_sets: 2,
            far_sets: 2,
            ood_components: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_classes < 4 {
            return bad("num_classes must be >= 4");
        }
        if self.dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return bad("dim, n_train and n_test must be >= 1");
        }
        for (name, v) in [
            ("radius", self.radius),
            ("sigma", self.sigma),
            ("r_far", self.r_far),
            ("delta_near", self.delta_near),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        if self.near_sets + self.far_sets > 0 && (self.n_ood == 0 || self.ood_components == 0) {
            return bad("n_ood and ood_components must be >= 1 when OOD sets are requested");
        }
        Ok(())
    }
}

/// Generated data plus the component means it was drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub ood: OodSuite,
    pub class_means: Matrix,
    /// Component means of each OOD set, in suite order.
    pub ood_means: Vec<Matrix>,
}

fn unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// `count` rows drawn from `N(means[label], sigma^2 I)` with labels cycling
/// over the components.
fn sample_rows<R: Rng + ?Sized>(means: &Matrix, labels: &[usize], sigma: f64, rng: &mut R) -> Result<Matrix> {
    let d = means.cols();
    let mut data = Vec::with_capacity(labels.len() * d);
    for &l in labels {
        for &m in means.row(l) {
            data.push(round_f32(m + sigma * standard_normal(rng)));
        }
    }
    Matrix::from_vec(labels.len(), d, data)
}

fn class_split<R: Rng + ?Sized>(means: &Matrix, per_class: usize, sigma: f64, rng: &mut R) -> Result<FeatureDataset> {
    let k = means.rows();
    let labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    let x = sample_rows(means, &labels, sigma, rng)?;
    FeatureDataset::new(x, labels, k)
}

/// Generate the ID train/test split and the OOD suite. Pure in `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let root = RngStream::new(spec.seed, "synth");
    let (k, d) = (spec.num_classes, spec.dim);

    let mut r = root.derive("means").rng();
    let mut means = Vec::with_capacity(k * d);
    for _ in 0..k {
        means.extend(unit(d, &mut r).into_iter().map(|x| x * spec.radius));
    }
    let class_means = Matrix::from_vec(k, d, means)?;

    let train = class_split(&class_means, spec.n_train, spec.sigma, &mut root.derive("train").rng())?;
    let test = class_split(&class_means, spec.n_test, spec.sigma, &mut root.derive("test").rng())?;

    let mut sets = Vec::new();
    let mut ood_means = Vec::new();
    let plan = (0..spec.near_sets)
        .map(|i| (OodTag::Near, i))
        .chain((0..spec.far_sets).map(|i| (OodTag::Far, i)));
    for (tag, i) in plan {
        let stream = root.derive(format_args!("{tag}{i}"));
        let mut r = stream.derive("means").rng();
        let mut comp = Matrix::zeros(0, d);
        for _ in 0..spec.ood_components {
            let mean = match tag {
                OodTag::Near => {
                    let a = r.random_range(0..k);
                    let b = (a + r.random_range(1..k)) % k;
                    let jitter = unit(d, &mut r);
                    (0..d)
                        .map(|j| 0.5 * (class_means.row(a)[j] + class_means.row(b)[j]) + spec.delta_near * jitter[j])
                        .collect::<Vec<f64>>()
                }
                OodTag::Far => unit(d, &mut r)
                    .into_iter()
                    .map(|x| -x.abs() * (spec.r_far + spec.radius))
                    .collect(),
            };
            comp.push_row(&mean)?;
        }
        let labels: Vec<usize> = (0..spec.n_ood).map(|j| j % spec.ood_components).collect();
        let x = sample_rows(&comp, &labels, spec.sigma, &mut stream.derive("rows").rng())?;
        sets.push(OodSet {
            name: format!("{tag}{i}"),
            tag,
            data: FeatureDataset::new(x, labels, spec.ood_components)?,
        });
        ood_means.push(comp);
    }
    Ok(SynthData {
        train,
        test,
        ood: OodSuite::new(sets)?,
        class_means,
        ood_means,
    })
}

/// Write the datasets in the binary format plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_suite(data: &SynthData, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dataset(&data.train, dir.join("id_train.ocf"), Format::Binary)?;
    save_dataset(&data.test, dir.join("id_test.ocf"), Format::Binary)?;
    let mut entries = Vec::new();
    for set in data.ood.sets() {
        let file = format!("ood_{}.ocf", set.name);
        save_dataset(&set.data, dir.join(&file), Format::Binary)?;
        entries.push(ManifestEntry {
            name: set.name.clone(),
            path: PathBuf::from(file),
            tag: set.tag,
        });
    }
    let manifest = SuiteManifest {
        id_train: "id_train.ocf".into(),
        id_test: "id_test.ocf".into(),
        num_classes: Some(data.train.num_classes()),
        ood: entries,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
