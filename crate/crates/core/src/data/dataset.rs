use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"OCF1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// `.csv` files are CSV; everything else is read as the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Feature rows with integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl FeatureDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::InvalidDataset(format!(
                "need n, d > 0, got n={}, d={}",
                features.rows(),
                features.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as i64,
                num_classes,
            });
        }
        let d = features.cols();
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                got: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows at `indices`, in that order. May be empty.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Row indices of each class, in file order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub(crate) fn from_parts(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Self {
        debug_assert_eq!(features.rows(), labels.len());
        Self {
            features,
            labels,
            num_classes,
            class_names,
        }
    }

    pub(crate) fn relabel(&self, map: &[usize], num_classes: usize) -> Self {
        Self {
            features: self.features.clone(),
            labels: self.labels.iter().map(|&l| map[l]).collect(),
            num_classes,
            class_names: None,
        }
    }

    /// Concatenate datasets sharing a label space. Empty parts are skipped.
    pub fn concat(parts: &[&FeatureDataset]) -> Result<Self> {
        let first = parts.iter().find(|p| !p.is_empty()).ok_or(Error::EmptyInput)?;
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.features).collect();
        let features = Matrix::vstack(&mats)?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(Self::from_parts(
            features,
            labels,
            first.num_classes,
            first.class_names.clone(),
        ))
    }
}

/// Load a dataset. `num_classes` fixes the label range; when `None` it is
/// inferred as `max(label) + 1`.
pub fn load_dataset(path: impl AsRef<Path>, format: Format, num_classes: Option<usize>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let (features, raw_labels) = match format {
        Format::Binary => read_binary(path)?,
        Format::Csv => read_csv(path)?,
    };
    let inferred = raw_labels.iter().copied().max().map_or(0, |m| m.max(0) as usize + 1);
    let k = num_classes.unwrap_or(inferred);
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (row, &l) in raw_labels.iter().enumerate() {
        if l < 0 || l as usize >= k {
            return Err(Error::LabelOutOfRange {
                row,
                label: l,
                num_classes: k,
            });
        }
        labels.push(l as usize);
    }
    FeatureDataset::new(features, labels, k)
}

pub fn save_dataset(ds: &FeatureDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    match format {
        Format::Binary => {
            let bytes = encode_binary(ds)?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
            for (i, row) in ds.features.iter_rows().enumerate() {
                let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                rec.push(ds.labels[i].to_string());
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn encode_binary(ds: &FeatureDataset) -> Result<Vec<u8>> {
    let n = u32::try_from(ds.len()).map_err(|_| Error::InvalidDataset("too many rows".into()))?;
    let d = u32::try_from(ds.dim()).map_err(|_| Error::InvalidDataset("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (ds.dim() + 1) * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in ds.features.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in &ds.labels {
        let l = i32::try_from(l).map_err(|_| Error::InvalidDataset("label exceeds i32".into()))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn read_binary(path: &Path) -> Result<(Matrix, Vec<i64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed("shorter than the 16-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("bad magic, expected OCF1"));
    }
    let version = u32_at(&bytes, 4);
    if version != VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let n = u32_at(&bytes, 8) as usize;
    let d = u32_at(&bytes, 12) as usize;
    if n == 0 || d == 0 {
        return Err(malformed("n and d must be positive"));
    }
    let expected = HEADER_LEN + n * d * 4 + n * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            got: bytes.len(),
        });
    }
    let feat_end = HEADER_LEN + n * d * 4;
    let mut data = Vec::with_capacity(n * d);
    for (k, chunk) in bytes[HEADER_LEN..feat_end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row: k / d, col: k % d });
        }
        data.push(f64::from(v));
    }
    let labels = bytes[feat_end..]
        .chunks_exact(4)
        .map(|c| i64::from(i32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    Ok((Matrix::from_vec(n, d, data)?, labels))
}

fn read_csv(path: &Path) -> Result<(Matrix, Vec<i64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            },
        })?;
    let mut features = Matrix::zeros(0, 0);
    let mut labels = Vec::new();
    let mut width = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w || w < 2 {
            return Err(Error::RowWidth {
                path: path.to_path_buf(),
                row,
                expected: w.max(2),
                got: rec.len(),
            });
        }
        let parse_err = |token: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            token: token.to_string(),
        };
        let mut vals = Vec::with_capacity(w - 1);
        for (col, tok) in rec.iter().take(w - 1).enumerate() {
            let v: f64 = tok.parse().map_err(|_| parse_err(tok))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row, col });
            }
            vals.push(v);
        }
        let tok = &rec[w - 1];
        labels.push(tok.parse::<i64>().map_err(|_| parse_err(tok))?);
        features.push_row(&vals)?;
    }
    if labels.is_empty() {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "no rows".into(),
        });
    }
    Ok((features, labels))
}
