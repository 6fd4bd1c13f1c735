//! Precomputed image features with labels, plus a seeded synthetic generator.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatureSet {
    /// `[n, d]`, one image per row.
    pub features: Tensor,
    pub labels: Vec<u32>,
    pub class_names: Vec<String>,
    pub normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    d: usize,
    n: usize,
    class_names: Vec<String>,
    normalized: bool,
    labels: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    class_names: Vec<String>,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    label: u32,
    feature: Vec<f64>,
}

impl ImageFeatureSet {
    pub fn new(features: Tensor, labels: Vec<u32>, class_names: Vec<String>, normalized: bool) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if features.shape().len() != 2 {
            return Err(Error::shape(format!("image features must be [n, d], got {:?}", features.shape())));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{n} feature rows but {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        if normalized {
            for i in 0..n {
                let norm = features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::invalid(format!("row {i} has norm {norm} but the set is marked normalized")));
                }
            }
        }
        Ok(Self { features, labels, class_names, normalized })
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
        self.class_names.len()
    }

    /// Rows whose label is in `keep`, relabelled to positions in `keep`.
    pub fn select_classes(&self, keep: &[u32]) -> Result<Self> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(pos) = keep.iter().position(|&k| k == l) {
                data.extend_from_slice(self.features.row(i));
                labels.push(pos as u32);
            }
        }
        let names = keep
            .iter()
            .map(|&k| {
                self.class_names
                    .get(k as usize)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("class index {k} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = Tensor::new(vec![labels.len(), self.dim()], data)?;
        Self::new(features, labels, names, self.normalized)
    }

    /// Saves as a manifest plus binary blob, or as JSONL when the path ends in `.jsonl`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if is_jsonl(path) {
            return self.save_jsonl(path);
        }
        let header = FeatureHeader {
            d: self.dim(),
            n: self.len(),
            class_names: self.class_names.clone(),
            normalized: self.normalized,
            labels: self.labels.clone(),
        };
        container::save(path, &header, &[("features".to_string(), self.features.clone())].into_iter().collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if is_jsonl(path) {
            return Self::load_jsonl(path);
        }
        let (h, mut tensors): (FeatureHeader, _) = container::load(path)?;
        let features = tensors.remove("features").ok_or_else(|| Error::invalid("feature file has no \"features\" tensor"))?;
        if features.shape() != [h.n, h.d] {
            return Err(Error::shape(format!("features are {:?}, header says [{}, {}]", features.shape(), h.n, h.d)));
        }
        Self::new(features, h.labels, h.class_names, h.normalized)
    }

    /// First line `{"class_names", "normalized"}`, then one `{"label", "feature"}` per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = JsonlHeader { class_names: self.class_names.clone(), normalized: self.normalized };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for (i, &label) in self.labels.iter().enumerate() {
            serde_json::to_writer(&mut out, &JsonlRow { label, feature: self.features.row(i).to_vec() })?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let record = |line: usize, msg: String| Error::Record { path: path.to_path_buf(), line, msg };
        let header: JsonlHeader = match lines.next() {
            Some((_, l)) => {
                let l = l.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| record(1, e.to_string()))?
            }
            None => return Err(record(1, "empty feature file".into())),
        };
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut d = None;
        for (i, l) in lines {
            let l = l.map_err(|e| Error::io(path, e))?;
            if l.trim().is_empty() {
                continue;
            }
            let row: JsonlRow = serde_json::from_str(&l).map_err(|e| record(i + 1, e.to_string()))?;
            if *d.get_or_insert(row.feature.len()) != row.feature.len() {
                return Err(record(i + 1, format!("feature has {} values, expected {}", row.feature.len(), d.unwrap())));
            }
            data.extend(row.feature);
            labels.push(row.label);
        }
        let features = Tensor::new(vec![labels.len(), d.unwrap_or(0)], data)?;
        Self::new(features, labels, header.class_names, header.normalized)
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Draws `per_class` images around each row of `class_features`: the unit
/// class direction plus Gaussian noise with per-coordinate standard deviation
/// `sigma / sqrt(d)`, re-normalized. Labels follow row order.
pub fn synthesize_images(
    class_features: &Tensor,
    class_names: &[String],
    per_class: usize,
    sigma: f64,
    seed: u64,
) -> Result<ImageFeatureSet> {
    let (c, d) = class_features.dims2()?;
    if c != class_names.len() {
        return Err(Error::shape(format!("{c} class features for {} names", class_names.len())));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be non-negative, got {sigma}")));
    }
    let centers = class_features.l2_normalize_rows()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = sigma / (d as f64).sqrt();
    let mut data = Vec::with_capacity(c * per_class * d);
    let mut labels = Vec::with_capacity(c * per_class);
    for k in 0..c {
        for _ in 0..per_class {
            let v: Vec<f64> = centers
                .row(k)
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + scale * z
                })
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::NonFinite("synthetic image feature has zero norm".into()));
            }
            data.extend(v.into_iter().map(|x| x / n));
            labels.push(k as u32);
        }
    }
    ImageFeatureSet::new(Tensor::new(vec![c * per_class, d], data)?, labels, class_names.to_vec(), true)
}
