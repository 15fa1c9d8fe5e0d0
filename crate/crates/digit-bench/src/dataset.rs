use std::path::{Path, PathBuf};

use diffnet::NdArray;
use sha2::{Digest, Sha256};

use crate::error::{DigitError, Result};
use crate::idx::{load_idx, IdxFile, IdxImages};

pub const NUM_CLASSES: usize = 10;

/// Images `[n, c, h, w]` with values in `[0, 1]` and labels in `0..=9`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: NdArray<f32>,
    pub labels: Vec<u8>,
    pub split: String,
}

impl LabeledImageSet {
    pub fn new(images: NdArray<f32>, labels: Vec<u8>, split: &str) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(DigitError::DimensionMismatch(format!(
                "images must be [n, c, h, w], got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(DigitError::DimensionMismatch(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
            return Err(DigitError::BadLabel { index, label });
        }
        Ok(Self { images, labels, split: split.to_string() })
    }

    pub fn from_idx(images: &IdxImages, labels: &[u8], split: &str) -> Result<Self> {
        let data = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        let arr = NdArray::new(vec![images.count, 1, images.rows, images.cols], data)?;
        Self::new(arr, labels.to_vec(), split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Copies a single-channel set into `channels` identical channels.
    pub fn replicate_channels(&self, channels: usize) -> Result<Self> {
        if self.channels() == channels {
            return Ok(self.clone());
        }
        if self.channels() != 1 {
            return Err(DigitError::DimensionMismatch(format!(
                "cannot replicate {} channels into {channels}",
                self.channels()
            )));
        }
        let s = self.images.shape();
        let plane = s[2] * s[3];
        let mut data = Vec::with_capacity(self.images.len() * channels);
        for i in 0..s[0] {
            let src = self.images.sample(i);
            for _ in 0..channels {
                data.extend_from_slice(&src[..plane]);
            }
        }
        Self::new(NdArray::new(vec![s[0], channels, s[2], s[3]], data)?, self.labels.clone(), &self.split)
    }

    pub fn select(&self, indices: &[usize], split: &str) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: split.to_string(),
        }
    }

    /// SHA-256 over shape, pixel bits and labels, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for &d in self.images.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn from_set(set: &LabeledImageSet) -> Self {
        let s = set.images.shape();
        let (c, plane) = (s[1], s[2] * s[3]);
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..s[0] {
            let img = set.images.sample(i);
            for ch in 0..c {
                for &v in &img[ch * plane..(ch + 1) * plane] {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (s[0] * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| ((q / n - m * m).max(0.0).sqrt()).max(1e-6) as f32).collect();
        Self { mean: mean.into_iter().map(|m| m as f32).collect(), std }
    }

    pub fn apply(&self, images: &NdArray<f32>) -> NdArray<f32> {
        let s = images.shape();
        let plane = s[2] * s[3];
        let c = s[1];
        let mut out = images.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (k / plane) % c;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        out
    }
}

/// Which data a phase of a run touched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccessLog {
    pub entries: Vec<(String, String, String)>,
}

impl AccessLog {
    pub fn record(&mut self, phase: &str, set: &LabeledImageSet) {
        self.entries.push((phase.to_string(), set.split.clone(), set.content_hash()));
    }

    pub fn hashes_in_phase(&self, phase: &str) -> Vec<&str> {
        self.entries.iter().filter(|e| e.0 == phase).map(|e| e.2.as_str()).collect()
    }
}

/// MNIST training and test sets.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

/// `ITSA_LAB_MNIST_DIR` if set, else the `data/mnist` directory of this workspace.
pub fn default_mnist_dir() -> PathBuf {
    match std::env::var_os("ITSA_LAB_MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(DigitError::Io {
        path: dir.join(stem).display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    })
}

fn load_pair(dir: &Path, images: &str, labels: &str, split: &str) -> Result<LabeledImageSet> {
    let imgs = match load_idx(&find(dir, images)?)? {
        IdxFile::Images(i) => i,
        IdxFile::Labels(_) => return Err(DigitError::DimensionMismatch(format!("{images} holds labels"))),
    };
    let labs = match load_idx(&find(dir, labels)?)? {
        IdxFile::Labels(l) => l,
        IdxFile::Images(_) => return Err(DigitError::DimensionMismatch(format!("{labels} holds images"))),
    };
    LabeledImageSet::from_idx(&imgs, &labs, split)
}

pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    Ok(Mnist {
        train: load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "source_train")?,
        test: load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "source_test")?,
    })
}
