use std::io::Read;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples<T> {
    pub dim: usize,
    pub features: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Samples<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[T], label: usize) {
        debug_assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in idx {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    /// Number of samples of each class.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Per-device training shards.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedDataset<T> {
    pub devices: Vec<Samples<T>>,
    pub classes: usize,
    pub shards_per_device: usize,
}

impl<T: Scalar> ShardedDataset<T> {
    pub fn total(&self) -> usize {
        self.devices.iter().map(Samples::len).sum()
    }

    pub fn data_sizes(&self) -> Vec<usize> {
        self.devices.iter().map(Samples::len).collect()
    }
}

/// Label-sorted non-IID split: every class is cut into shards of nearly
/// equal size, and each device receives `shards_per_device` random shards.
///
/// When `K·shards_per_device` is not a multiple of the class count, the
/// first classes get one shard more. With a single device the whole dataset
/// is returned as its shard.
pub fn partition_non_iid<T: Scalar, R: Rng + ?Sized>(
    data: &Samples<T>,
    classes: usize,
    devices: usize,
    shards_per_device: usize,
    rng: &mut R,
) -> Result<ShardedDataset<T>> {
    if devices == 0 || shards_per_device == 0 {
        return Err(Error::Config("device count and shards per device must be positive".into()));
    }
    if let Some(&y) = data.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {y} outside {classes} classes")));
    }
    if devices == 1 {
        return Ok(ShardedDataset { devices: vec![data.clone()], classes, shards_per_device });
    }
    let total_shards = devices * shards_per_device;
    if total_shards < classes {
        return Err(Error::Config(format!(
            "{devices} devices x {shards_per_device} shards cannot cover {classes} classes"
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    for (c, mut idx) in by_class.into_iter().enumerate() {
        let count = total_shards / classes + usize::from(c < total_shards % classes);
        if idx.len() < count {
            return Err(Error::Data(format!("class {c} has {} samples for {count} shards", idx.len())));
        }
        idx.shuffle(rng);
        let (base, extra) = (idx.len() / count, idx.len() % count);
        let mut start = 0;
        for s in 0..count {
            let len = base + usize::from(s < extra);
            shards.push(idx[start..start + len].to_vec());
            start += len;
        }
    }
    shards.shuffle(rng);
    let devices = shards
        .chunks(shards_per_device)
        .map(|group| {
            let mut idx: Vec<usize> = group.concat();
            idx.sort_unstable();
            data.subset(&idx)
        })
        .collect();
    Ok(ShardedDataset { devices, classes, shards_per_device })
}

/// Test shards that follow each device's training label mix: for every
/// class a device holds, `ratio` times as many test samples of that class
/// are drawn without replacement from the pooled test set.
pub fn personalized_test_shards<T: Scalar, R: Rng + ?Sized>(
    test: &Samples<T>,
    train: &ShardedDataset<T>,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<Samples<T>>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.classes];
    for (i, &y) in test.labels.iter().enumerate() {
        if y >= train.classes {
            return Err(Error::Data(format!("test label {y} outside {} classes", train.classes)));
        }
        by_class[y].push(i);
    }
    train
        .devices
        .iter()
        .map(|shard| {
            let mut idx = Vec::new();
            for (c, &n) in shard.histogram(train.classes).iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let want = ((n as f64 * ratio).round() as usize).max(1);
                if by_class[c].is_empty() {
                    return Err(Error::Data(format!("no test samples of class {c}")));
                }
                idx.extend(by_class[c].choose_multiple(rng, want.min(by_class[c].len())).copied());
            }
            idx.sort_unstable();
            Ok(test.subset(&idx))
        })
        .collect()
}

/// Gaussian-mixture classification task. Each class has `modes`
/// components whose means are drawn once with spread `separation` on the
/// first `informative` coordinates; samples add `cluster_std` noise there
/// and `noise_std` noise on the remaining coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub classes: usize,
    pub dim: usize,
    pub informative: usize,
    pub separation: f64,
    pub noise_std: f64,
    #[serde(default = "one_mode")]
    pub modes: usize,
    #[serde(default = "unit_std")]
    pub cluster_std: f64,
}

fn one_mode() -> usize {
    1
}

fn unit_std() -> f64 {
    1.0
}

impl Default for GaussianMixture {
    fn default() -> Self {
        Self { classes: 10, dim: 50, informative: 10, separation: 1.0, noise_std: 2.0, modes: 1, cluster_std: 1.0 }
    }
}

impl GaussianMixture {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 || self.informative == 0 || self.informative > self.dim || self.modes == 0 {
            return Err(Error::Config(format!("invalid mixture shape: {self:?}")));
        }
        if !(self.separation > 0.0 && self.noise_std >= 0.0 && self.cluster_std >= 0.0) {
            return Err(Error::Config("mixture spreads must be positive".into()));
        }
        Ok(())
    }

    /// Component means, `modes` consecutive entries per class.
    pub fn means<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.classes * self.modes)
            .map(|_| {
                let mut m = vec![0.0; self.dim];
                for x in &mut m[..self.informative] {
                    *x = self.separation * rng.sample::<f64, _>(StandardNormal);
                }
                m
            })
            .collect()
    }

    /// `per_class` samples of every class, in class order; the `i`-th
    /// sample of a class comes from component `i mod modes`.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, means: &[Vec<f64>], per_class: usize, rng: &mut R) -> Samples<T> {
        debug_assert_eq!(means.len(), self.classes * self.modes);
        let mut out = Samples::new(self.dim);
        let mut row = vec![T::zero(); self.dim];
        for c in 0..self.classes {
            for i in 0..per_class {
                let m = &means[c * self.modes + i % self.modes];
                for (j, (r, &mu)) in row.iter_mut().zip(m).enumerate() {
                    let sd = if j < self.informative { self.cluster_std } else { self.noise_std };
                    let z: f64 = StandardNormal.sample(rng);
                    *r = T::lit(mu + sd * z);
                }
                out.push(&row, c);
            }
        }
        out
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Data(format!("truncated IDX header: {e}")))?;
    Ok(u32::from_be_bytes(b))
}

fn read_body<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| Error::Data(format!("IDX body shorter than {len} bytes: {e}")))?;
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(body),
        Ok(_) => Err(Error::Data("trailing bytes after IDX body".into())),
        Err(e) => Err(Error::Data(e.to_string())),
    }
}

/// Reads an IDX image file (magic `0x00000803`); returns `(rows, cols, pixels)`.
pub fn read_idx_images<R: Read>(mut r: R) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32(&mut r)?;
    if magic != 0x0000_0803 {
        return Err(Error::Data(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    Ok((rows, cols, read_body(&mut r, n * rows * cols)?))
}

/// Reads an IDX label file (magic `0x00000801`).
pub fn read_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    let magic = read_u32(&mut r)?;
    if magic != 0x0000_0801 {
        return Err(Error::Data(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = read_u32(&mut r)? as usize;
    read_body(&mut r, n)
}

/// Pairs IDX images and labels into samples with pixels scaled to `[0, 1]`.
pub fn idx_samples<T: Scalar, R1: Read, R2: Read>(images: R1, labels: R2) -> Result<Samples<T>> {
    let (rows, cols, pixels) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    let dim = rows * cols;
    if dim == 0 || pixels.len() != labels.len() * dim {
        return Err(Error::Data(format!("{} labels for {} pixels of size {rows}x{cols}", labels.len(), pixels.len())));
    }
    let scale = T::lit(1.0 / 255.0);
    Ok(Samples {
        dim,
        features: pixels.into_iter().map(|p| T::from_count(p as usize) * scale).collect(),
        labels: labels.into_iter().map(usize::from).collect(),
    })
}
