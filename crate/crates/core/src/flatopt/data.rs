//! Synthetic datasets standing in for image benchmarks.

use crate::error::{FpError, Result};
use crate::evalcore::fmt_num;
use crate::rng::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::str::FromStr;

/// Number of classes in `gaussian_blobs` (and the nominal class count of
/// `ring_ood`).
pub const BLOB_CLASSES: usize = 3;
/// Radius of the circle holding the blob centroids.
pub const BLOB_RADIUS: f64 = 4.0;
/// Radius of the OOD ring, far from every blob centroid.
pub const RING_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    GaussianBlobs,
    RingOod,
}

impl FromStr for DatasetKind {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(Self::TwoMoons),
            "gaussian_blobs" => Ok(Self::GaussianBlobs),
            "ring_ood" => Ok(Self::RingOod),
            other => Err(FpError::invalid_param(format!("unknown dataset `{other}`"))),
        }
    }
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            Self::TwoMoons => 2,
            Self::GaussianBlobs | Self::RingOod => BLOB_CLASSES,
        }
    }
}

/// Row-major 2-D inputs with labels. `component` is the generating class
/// before label noise (for `ring_ood` every label is 0 and carries no meaning).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub component: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV with header `x0,...,x{D-1},label`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.row(i).iter().map(|&v| fmt_num(v)).collect();
            writeln!(out, "{},{}", row.join(","), self.labels[i])?;
        }
        Ok(())
    }
}

/// Generates `n` points of the given kind. `noise` is the standard deviation
/// of the isotropic Gaussian jitter; each label is replaced by a uniformly
/// drawn different class with probability `label_noise`.
pub fn make_dataset(kind: DatasetKind, n: usize, noise: f64, label_noise: f64, seed: u64) -> Result<Dataset> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(FpError::invalid_param(format!("noise must be >= 0, got {noise}")));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(FpError::invalid_param(format!("label noise must lie in [0, 1], got {label_noise}")));
    }
    let mut rng = rng_for(seed, 0xDA7A);
    let classes = kind.num_classes();
    let mut x = Vec::with_capacity(2 * n);
    let mut component = Vec::with_capacity(n);
    for i in 0..n {
        let (px, py, c) = match kind {
            DatasetKind::TwoMoons => {
                let c = i % 2;
                let t: f64 = rng.random_range(0.0..PI);
                if c == 0 {
                    (t.cos(), t.sin(), 0)
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin(), 1)
                }
            }
            DatasetKind::GaussianBlobs => {
                let c = i % classes;
                let a = 2.0 * PI * c as f64 / classes as f64;
                (BLOB_RADIUS * a.cos(), BLOB_RADIUS * a.sin(), c)
            }
            DatasetKind::RingOod => {
                let a: f64 = rng.random_range(0.0..2.0 * PI);
                (RING_RADIUS * a.cos(), RING_RADIUS * a.sin(), 0)
            }
        };
        let jx: f64 = rng.sample(StandardNormal);
        let jy: f64 = rng.sample(StandardNormal);
        x.push(px + noise * jx);
        x.push(py + noise * jy);
        component.push(c);
    }
    let labels = component
        .iter()
        .map(|&c| {
            if kind != DatasetKind::RingOod && label_noise > 0.0 && rng.random::<f64>() < label_noise {
                let shift = rng.random_range(1..classes);
                (c + shift) % classes
            } else {
                c
            }
        })
        .collect();
    Ok(Dataset { x, dim: 2, labels, component, classes })
}

/// Recipe for a train/test split (plus ring outliers) of one dataset kind.
/// Label noise applies to the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub label_noise: f64,
    /// Size of the ring outlier pool and of the ring OOD test set.
    pub n_outliers: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn default_noise(kind: DatasetKind) -> f64 {
        match kind {
            DatasetKind::TwoMoons => 0.2,
            DatasetKind::GaussianBlobs | DatasetKind::RingOod => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// Ring outliers for outlier exposure.
    pub outliers: Dataset,
    /// Independent ring sample for OOD evaluation.
    pub ood_test: Dataset,
}

pub fn make_splits(spec: &SplitSpec) -> Result<Splits> {
    if spec.kind == DatasetKind::RingOod {
        return Err(FpError::invalid_param("ring_ood is an outlier set, not a training set"));
    }
    let seed = |tag| crate::rng::derive_seed(spec.seed, tag);
    Ok(Splits {
        train: make_dataset(spec.kind, spec.n_train, spec.noise, spec.label_noise, seed(11))?,
        test: make_dataset(spec.kind, spec.n_test, spec.noise, 0.0, seed(12))?,
        outliers: make_dataset(DatasetKind::RingOod, spec.n_outliers, spec.noise, 0.0, seed(13))?,
        ood_test: make_dataset(DatasetKind::RingOod, spec.n_outliers, spec.noise, 0.0, seed(14))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset() {
        let d = make_dataset(DatasetKind::TwoMoons, 0, 0.1, 0.0, 1).unwrap();
        assert!(d.is_empty());
        assert!(d.x.is_empty());
    }

    #[test]
    fn no_label_noise_keeps_components() {
        for kind in [DatasetKind::TwoMoons, DatasetKind::GaussianBlobs] {
            let d = make_dataset(kind, 300, 0.2, 0.0, 3).unwrap();
            assert_eq!(d.labels, d.component);
        }
    }

    #[test]
    fn label_noise_flips_about_the_requested_fraction() {
        let d = make_dataset(DatasetKind::TwoMoons, 20_000, 0.1, 0.1, 3).unwrap();
        let flipped = d.labels.iter().zip(&d.component).filter(|(a, b)| a != b).count();
        let frac = flipped as f64 / d.len() as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn fixed_seed_gives_identical_csv() {
        let render = |seed| {
            let d = make_dataset(DatasetKind::GaussianBlobs, 50, 0.5, 0.1, seed).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(render(11), render(11));
        assert_ne!(render(11), render(12));
    }

    #[test]
    fn splits_keep_test_labels_clean() {
        let spec = SplitSpec {
            kind: DatasetKind::TwoMoons,
            n_train: 400,
            n_test: 300,
            noise: 0.2,
            label_noise: 0.2,
            n_outliers: 50,
            seed: 4,
        };
        let s = make_splits(&spec).unwrap();
        assert_eq!(s.test.labels, s.test.component);
        assert_ne!(s.train.labels, s.train.component);
        assert_eq!(s.ood_test.len(), 50);
        assert_ne!(s.outliers, s.ood_test);
        assert!(make_splits(&SplitSpec { kind: DatasetKind::RingOod, ..spec }).is_err());
    }

    #[test]
    fn ring_is_far_from_blob_centroids() {
        let d = make_dataset(DatasetKind::RingOod, 500, 0.3, 0.0, 2).unwrap();
        for i in 0..d.len() {
            let r = d.row(i);
            for c in 0..BLOB_CLASSES {
                let a = 2.0 * PI * c as f64 / BLOB_CLASSES as f64;
                let dist = ((r[0] - BLOB_RADIUS * a.cos()).powi(2) + (r[1] - BLOB_RADIUS * a.sin()).powi(2)).sqrt();
                assert!(dist > 4.0);
            }
        }
    }
}
