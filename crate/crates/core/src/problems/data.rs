//! Labeled datasets: synthetic Gaussian mixtures, CSV ingestion, sharding.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{gaussian_vector, RngStream};

use super::ProblemError;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, ProblemError> {
        if features.len() != labels.len() {
            return Err(ProblemError::Dataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(ProblemError::Dataset("feature rows are empty".into()));
            }
            if let Some(row) = features.iter().position(|f| f.len() != dim) {
                return Err(ProblemError::Dataset(format!(
                    "row {row} has a different width"
                )));
            }
            if features.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ProblemError::Dataset("non-finite feature value".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ProblemError::Dataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Reads header-less CSV rows: `d` feature columns then an integer label.
    /// Ragged rows are rejected. The class count is `max label + 1`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ProblemError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ProblemError::Dataset(format!("row {row}: {e}")))?;
            if rec.len() < 2 {
                return Err(ProblemError::Dataset(format!(
                    "row {row}: need at least one feature and a label"
                )));
            }
            let fields: Vec<&str> = rec.iter().collect();
            let (label_field, feature_fields) = fields.split_last().expect("row has fields");
            let label: usize = label_field.parse().map_err(|_| {
                ProblemError::Dataset(format!("row {row}: bad label {label_field:?}"))
            })?;
            let feats = feature_fields
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| ProblemError::Dataset(format!("row {row}: bad feature {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            features.push(feats);
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(ProblemError::Dataset("no rows".into()));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, labels, num_classes)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ProblemError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ProblemError::Dataset(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }
}

/// `num_clusters` isotropic unit-variance Gaussians with standard-normal
/// means; each sample is labeled by its cluster index.
pub fn gaussian_mixture_dataset(
    rng: &mut RngStream,
    num_clusters: usize,
    dim: usize,
    samples_per_cluster: usize,
) -> Result<LabeledDataset, ProblemError> {
    if num_clusters == 0 || dim == 0 || samples_per_cluster == 0 {
        return Err(ProblemError::InvalidParameter(
            "mixture arguments must all be at least 1".into(),
        ));
    }
    let means = (0..num_clusters)
        .map(|_| gaussian_vector(rng, dim, 0.0, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    let mut features = Vec::with_capacity(num_clusters * samples_per_cluster);
    let mut labels = Vec::with_capacity(num_clusters * samples_per_cluster);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_cluster {
            let noise = gaussian_vector(rng, dim, 0.0, 1.0)?;
            features.push(
                mean.as_slice()
                    .iter()
                    .zip(noise.as_slice())
                    .map(|(m, n)| m + n)
                    .collect(),
            );
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, num_clusters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShardStrategy {
    Iid,
    ByLabel { classes_per_worker: usize },
}

/// Splits `dataset` into one shard per worker.
///
/// `Iid` deals a random permutation into near-equal shards. `ByLabel` assigns
/// each worker a disjoint set of at most `classes_per_worker` labels, covering
/// every label, and hands it all samples with those labels. Samples keep
/// their input order inside a shard.
pub fn shard_dataset(
    dataset: &LabeledDataset,
    num_workers: usize,
    strategy: ShardStrategy,
    rng: &mut RngStream,
) -> Result<Vec<LabeledDataset>, ProblemError> {
    if num_workers == 0 {
        return Err(ProblemError::InvalidParameter(
            "num_workers must be at least 1".into(),
        ));
    }
    match strategy {
        ShardStrategy::Iid => {
            if dataset.len() < num_workers {
                return Err(ProblemError::InvalidParameter(format!(
                    "{} samples cannot fill {num_workers} shards",
                    dataset.len()
                )));
            }
            let mut perm: Vec<usize> = (0..dataset.len()).collect();
            rng.shuffle(&mut perm);
            let base = dataset.len() / num_workers;
            let extra = dataset.len() % num_workers;
            let mut start = 0;
            let mut shards = Vec::with_capacity(num_workers);
            for w in 0..num_workers {
                let size = base + usize::from(w < extra);
                let mut idx = perm[start..start + size].to_vec();
                idx.sort_unstable();
                shards.push(dataset.subset(&idx));
                start += size;
            }
            Ok(shards)
        }
        ShardStrategy::ByLabel { classes_per_worker } => {
            let classes = dataset.num_classes();
            if classes_per_worker == 0
                || num_workers.saturating_mul(classes_per_worker) < classes
                || classes < num_workers
            {
                return Err(ProblemError::InvalidParameter(format!(
                    "by_label({classes_per_worker}) infeasible for {classes} classes and {num_workers} workers"
                )));
            }
            let mut order: Vec<usize> = (0..classes).collect();
            rng.shuffle(&mut order);
            // near-equal contiguous chunks of the shuffled class list
            let base = classes / num_workers;
            let extra = classes % num_workers;
            let mut owner = vec![0usize; classes];
            let mut start = 0;
            for w in 0..num_workers {
                let size = base + usize::from(w < extra);
                for &c in &order[start..start + size] {
                    owner[c] = w;
                }
                start += size;
            }
            let mut buckets = vec![Vec::new(); num_workers];
            for (i, &l) in dataset.labels().iter().enumerate() {
                buckets[owner[l]].push(i);
            }
            Ok(buckets.iter().map(|idx| dataset.subset(idx)).collect())
        }
    }
}
