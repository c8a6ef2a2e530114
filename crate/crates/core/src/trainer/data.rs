//! Labelled image sets: a seeded synthetic generator, IDX and CIFAR-10
//! binary readers, and disjoint train / validation / range splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numcore::{seeded_rng, Tensor};

/// Images `[N, C, H, W]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self, TrainError> {
        if images.dims().len() != 4 || images.dims()[0] != labels.len() {
            return Err(TrainError::Data(format!(
                "{} labels for images of dims {:?}",
                labels.len(),
                images.dims()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(TrainError::Data(format!("label {l} out of range for {classes} classes")));
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let inner: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * inner..(i + 1) * inner]);
        }
        let mut dims = self.images.dims().to_vec();
        dims[0] = idx.len();
        Dataset {
            images: Tensor::new(dims, data).expect("subset dims"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Consecutive batches of at most `size` samples.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Dataset> + '_ {
        let n = self.len();
        (0..n).step_by(size.max(1)).map(move |s| {
            let idx: Vec<usize> = (s..(s + size).min(n)).collect();
            self.subset(&idx)
        })
    }
}

/// Disjoint partitions of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub range: Dataset,
}

/// Fractions of the data set aside for validation and range estimation;
/// the rest is training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub val: f64,
    pub range: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { val: 0.2, range: 0.1 }
    }
}

/// Seeded shuffle, then range / validation / train in that order.
pub fn split(data: &Dataset, spec: SplitSpec, seed: u64) -> Result<Splits, TrainError> {
    if !(spec.val >= 0.0 && spec.range > 0.0 && spec.val + spec.range < 1.0) {
        return Err(TrainError::Config(format!(
            "split fractions val {} and range {} must leave training data",
            spec.val, spec.range
        )));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let n_range = ((n as f64 * spec.range).round() as usize).max(1);
    let n_val = (n as f64 * spec.val).round() as usize;
    if n_range + n_val >= n {
        return Err(TrainError::Data(format!("{n} samples are too few to split")));
    }
    Ok(Splits {
        range: data.subset(&idx[..n_range]),
        val: data.subset(&idx[n_range..n_range + n_val]),
        train: data.subset(&idx[n_range + n_val..]),
    })
}

/// Blobs on images: class `k` places a Gaussian bump of random width at a
/// jittered location on a circle around the centre, one channel gets the
/// bump with a class-specific sign pattern, and pixel noise is added.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 1200,
            classes: 4,
            channels: 3,
            size: 8,
            noise: 0.2,
            seed: 0,
        }
    }
}

pub fn synthetic(spec: SyntheticSpec) -> Result<Dataset, TrainError> {
    if spec.classes < 2 || spec.channels == 0 || spec.size < 2 || spec.samples == 0 {
        return Err(TrainError::Config("synthetic data needs 2+ classes, channels and pixels".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| TrainError::Config(e.to_string()))?;
    let s = spec.size as f64;
    let (c, hw) = (spec.channels, spec.size * spec.size);
    let mut data = Vec::with_capacity(spec.samples * c * hw);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let k = i % spec.classes;
        let angle = 2.0 * std::f64::consts::PI * k as f64 / spec.classes as f64;
        let cy = (s - 1.0) / 2.0 + 0.3 * s * angle.sin() + rng.random_range(-0.5..0.5);
        let cx = (s - 1.0) / 2.0 + 0.3 * s * angle.cos() + rng.random_range(-0.5..0.5);
        let width = s * rng.random_range(0.12..0.2);
        let amp = rng.random_range(0.8..1.2);
        for ch in 0..c {
            let sign = if (k + ch) % 2 == 0 { 1.0 } else { -0.5 };
            for y in 0..spec.size {
                for x in 0..spec.size {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = sign * amp * (-d2 / (2.0 * width * width)).exp();
                    data.push(v + noise.sample(&mut rng));
                }
            }
        }
        labels.push(k);
    }
    // interleaved classes come out balanced; shuffle so splits see a mix
    let images = Tensor::new(vec![spec.samples, c, spec.size, spec.size], data)?;
    let ds = Dataset::new(images, labels, spec.classes)?;
    let mut order: Vec<usize> = (0..spec.samples).collect();
    order.shuffle(&mut rng);
    Ok(ds.subset(&order))
}

fn read(path: &Path) -> Result<Vec<u8>, TrainError> {
    std::fs::read(path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, TrainError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| TrainError::Data(format!("{what}: truncated header")))
}

/// Parses an unsigned-byte IDX file, returning its dims and payload.
pub fn parse_idx(bytes: &[u8], what: &str) -> Result<(Vec<usize>, Vec<u8>), TrainError> {
    let magic = be_u32(bytes, 0, what)?;
    if magic >> 8 != 0x08 {
        return Err(TrainError::Data(format!("{what}: bad magic {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    if rank == 0 {
        return Err(TrainError::Data(format!("{what}: zero-rank IDX")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|k| be_u32(bytes, 4 + 4 * k, what).map(|d| d as usize))
        .collect::<Result<_, _>>()?;
    let body = 4 + 4 * rank;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| TrainError::Data(format!("{what}: dims overflow")))?;
    if bytes.len() - body != count {
        return Err(TrainError::Data(format!(
            "{what}: expected {count} bytes of data, found {}",
            bytes.len() - body
        )));
    }
    Ok((dims, bytes[body..].to_vec()))
}

/// IDX images (magic `0x00000803`) and labels (`0x00000801`); pixels are
/// scaled to `[0, 1]` and a single channel axis is added.
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset, TrainError> {
    let (dims, pixels) = parse_idx(&read(images)?, "IDX images")?;
    if dims.len() != 3 {
        return Err(TrainError::Data(format!("IDX images: expected rank 3, got {dims:?}")));
    }
    let (ldims, raw) = parse_idx(&read(labels)?, "IDX labels")?;
    if ldims.len() != 1 || ldims[0] != dims[0] {
        return Err(TrainError::Data(format!("IDX labels {ldims:?} do not match {} images", dims[0])));
    }
    let images = Tensor::new(
        vec![dims[0], 1, dims[1], dims[2]],
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )?;
    Dataset::new(images, raw.iter().map(|&b| b as usize).collect(), classes)
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// CIFAR-10 binary batches: 3073-byte records of one label byte and 3072
/// channel-major pixel bytes.
pub fn load_cifar(files: &[PathBuf]) -> Result<Dataset, TrainError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = read(f)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(TrainError::Data(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                f.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let images = Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, 10)
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx { images: PathBuf, labels: PathBuf },
    Cifar(Vec<PathBuf>),
}

/// Loads `source` and splits it with `seed`.
pub fn ingest_dataset(source: &DataSource, spec: SplitSpec, seed: u64) -> Result<Splits, TrainError> {
    let data = match source {
        DataSource::Synthetic(s) => synthetic(*s)?,
        DataSource::Idx { images, labels } => load_idx(images, labels, 10)?,
        DataSource::Cifar(files) => load_cifar(files)?,
    };
    split(&data, spec, seed)
}
