//! Seeded synthetic classification data.
//!
//! The default generator places `k` isotropic Gaussian clusters on a circle of
//! radius `2.5·√2` starting at 45°, which for `k = 4` gives one unit-variance
//! cluster per quadrant centred at `(±2.5, ±2.5)`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labelled feature matrix, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize, seed: u64) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite features"));
        }
        Ok(Self {
            features,
            labels,
            classes,
            seed,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sample(&self, i: usize) -> (ArrayView1<'_, f64>, usize) {
        (self.features.row(i), self.labels[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            seed: self.seed,
        }
    }

    /// The first `n` samples of each class, kept in dataset order.
    pub fn stratified_head(&self, n: usize) -> Result<Dataset> {
        let per_class = n / self.classes;
        let extra = n % self.classes;
        let mut taken = vec![0; self.classes];
        let mut indices = Vec::with_capacity(n);
        for (i, &y) in self.labels.iter().enumerate() {
            let quota = per_class + usize::from(y < extra);
            if taken[y] < quota {
                taken[y] += 1;
                indices.push(i);
            }
        }
        if indices.is_empty() || indices.len() < n {
            return Err(Error::invalid(format!(
                "cannot draw {n} stratified samples from {} rows",
                self.len()
            )));
        }
        Ok(self.subset(&indices))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (row, &y) in self.features.rows().into_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(y.to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. The class count is
    /// `max(label) + 1` unless `classes` is given.
    pub fn read_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().next_back() != Some("label") || header.len() < 2 {
            return Err(Error::Parse {
                path: path.into(),
                message: "header must be x0,..,x{d-1},label".into(),
            });
        }
        let dim = header.len() - 1;
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            for field in rec.iter().take(dim) {
                flat.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.into(),
                    message: e.to_string(),
                })?);
            }
            labels.push(rec[dim].trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.into(),
                message: e.to_string(),
            })?);
        }
        let k = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let features = Array2::from_shape_vec((labels.len(), dim), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Dataset::new(features, labels, k, 0)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(source) = e.into_kind() {
            return Error::io(path, source);
        }
        unreachable!("is_io_error implies an Io kind");
    }
    Error::Parse {
        path: path.into(),
        message: e.to_string(),
    }
}

/// Geometry of the Gaussian clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterGeometry {
    /// Distance of every cluster centre from the origin.
    pub radius: f64,
    /// Standard deviation of each feature within a cluster.
    pub std_dev: f64,
    /// Angle of the first centre, in radians.
    pub phase: f64,
}

impl Default for ClusterGeometry {
    fn default() -> Self {
        Self {
            radius: 2.5 * std::f64::consts::SQRT_2,
            std_dev: 1.0,
            phase: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl ClusterGeometry {
    /// Centre of cluster `c` out of `k`.
    pub fn center(&self, c: usize, k: usize) -> [f64; 2] {
        let angle = self.phase + std::f64::consts::TAU * c as f64 / k as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }
}

/// `n` two-dimensional samples from `k` Gaussian clusters with the default
/// geometry. Sample `i` belongs to class `i mod k`.
pub fn generate_multi(n: usize, k: usize, seed: u64) -> Result<Dataset> {
    generate_clusters(n, k, seed, &ClusterGeometry::default())
}

pub fn generate_clusters(n: usize, k: usize, seed: u64, geometry: &ClusterGeometry) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} samples cannot cover {k} classes")));
    }
    if !(geometry.std_dev > 0.0 && geometry.radius.is_finite() && geometry.phase.is_finite()) {
        return Err(Error::invalid("cluster geometry must be finite with positive spread"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> = (0..k).map(|c| geometry.center(c, k)).collect();
    let mut flat = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for &mu in &centers[c] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            flat.push(mu + geometry.std_dev * noise);
        }
        labels.push(c);
    }
    let features = Array2::from_shape_vec((n, 2), flat).expect("n×2 buffer");
    Dataset::new(features, labels, k, seed)
}

/// Stratified split: each class contributes `round(count·test_fraction)`
/// samples to the test set. Both halves keep the original sample order.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in data.labels().iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; data.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let take = (idx.len() as f64 * test_fraction).round() as usize;
        for &i in idx.iter().take(take) {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| is_test[i]);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("split leaves one side empty"));
    }
    Ok((data.subset(&train), data.subset(&test)))
}
