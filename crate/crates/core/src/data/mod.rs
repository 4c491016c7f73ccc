//! Datasets, normalization and splitting.

pub mod csv;
pub mod synth;
pub mod ts;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Equal-length multivariate series with integer labels, stored
/// sample-major as (num_samples, C, L).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub split: Split,
    pub channels: usize,
    pub length: usize,
    pub classes: usize,
    x: Vec<f64>,
    y: Vec<usize>,
    stats: Option<ChannelStats>,
}

impl SeriesDataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        channels: usize,
        length: usize,
        classes: usize,
        x: Vec<f64>,
        y: Vec<usize>,
    ) -> Result<Self> {
        if x.len() != y.len() * channels * length {
            return Err(Error::Integrity(format!(
                "{} values for {} samples of shape ({channels}, {length})",
                x.len(),
                y.len()
            )));
        }
        if let Some(&label) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unsupported(
                "non-finite values in series data".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            split,
            channels,
            length,
            classes,
            x,
            y,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn stats(&self) -> Option<&ChannelStats> {
        self.stats.as_ref()
    }

    /// One sample, (C, L) row-major.
    pub fn sample(&self, i: usize) -> Result<&[f64]> {
        if i >= self.len() {
            return Err(Error::Bounds {
                index: i,
                len: self.len(),
            });
        }
        let n = self.channels * self.length;
        Ok(&self.x[i * n..(i + 1) * n])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.y.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.channels * self.length;
        let mut x = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            x.extend_from_slice(&self.x[i * n..(i + 1) * n]);
        }
        Self {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            name: self.name.clone(),
            split: self.split,
            channels: self.channels,
            length: self.length,
            classes: self.classes,
            x: Vec::new(),
            y: Vec::new(),
            stats: self.stats.clone(),
        }
    }

    /// Samples at `indices` as a (batch, C, L) tensor plus labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let n = self.channels * self.length;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.x[i * n..(i + 1) * n].iter().map(|&v| T::lit(v)));
        }
        let x = Tensor::from_vec(data, &[indices.len(), self.channels, self.length])
            .expect("consistent batch shape");
        (x, indices.iter().map(|&i| self.y[i]).collect())
    }

    /// Per-channel mean and population standard deviation, floored.
    pub fn channel_stats(&self) -> ChannelStats {
        let (c, l) = (self.channels, self.length);
        let count = (self.len() * l).max(1) as f64;
        let mut mean = vec![0.0; c];
        for s in self.x.chunks(c * l) {
            for (ch, row) in s.chunks(l).enumerate() {
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for s in self.x.chunks(c * l) {
            for (ch, row) in s.chunks(l).enumerate() {
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(ch, v)| {
                let s = (v / count).sqrt();
                if s < STD_FLOOR {
                    log::warn!(
                        "channel {ch} of `{}` is constant; std floored at {STD_FLOOR}",
                        self.name
                    );
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        ChannelStats { mean, std }
    }

    /// Applies `(x - mean) / std` per channel and records the statistics.
    pub fn apply_stats(&mut self, stats: &ChannelStats) -> Result<()> {
        if self.stats.is_some() {
            return Err(Error::AlreadyStandardized);
        }
        if stats.mean.len() != self.channels || stats.std.len() != self.channels {
            return Err(Error::Compatibility {
                what: "normalization channel count",
                expected: stats.mean.len(),
                found: self.channels,
            });
        }
        let l = self.length;
        for s in self.x.chunks_mut(self.channels * l) {
            for (ch, row) in s.chunks_mut(l).enumerate() {
                row.iter_mut()
                    .for_each(|v| *v = (*v - stats.mean[ch]) / stats.std[ch]);
            }
        }
        self.stats = Some(stats.clone());
        Ok(())
    }

    /// Stratified split: a `ratio` share of every class goes to the second set.
    pub fn stratified_split(&self, ratio: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut keep, mut held) = (Vec::new(), Vec::new());
        for class in 0..self.classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == class).collect();
            idx.shuffle(&mut rng);
            let mut n_held = (idx.len() as f64 * ratio).round() as usize;
            if ratio > 0.0 && idx.len() >= 2 {
                n_held = n_held.clamp(1, idx.len() - 1);
            }
            held.extend_from_slice(&idx[..n_held]);
            keep.extend_from_slice(&idx[n_held..]);
        }
        keep.sort_unstable();
        held.sort_unstable();
        (self.subset(&keep), self.subset(&held))
    }
}

/// Z-normalizes both splits with statistics from the training split.
pub fn standardize(
    mut train: SeriesDataset,
    mut test: SeriesDataset,
) -> Result<(SeriesDataset, SeriesDataset)> {
    if train.stats.is_some() || test.stats.is_some() {
        return Err(Error::AlreadyStandardized);
    }
    if train.channels != test.channels || train.length != test.length {
        return Err(Error::Integrity(format!(
            "train shape ({}, {}) differs from test shape ({}, {})",
            train.channels, train.length, test.channels, test.length
        )));
    }
    let stats = train.channel_stats();
    train.apply_stats(&stats)?;
    test.apply_stats(&stats)?;
    Ok((train, test))
}

/// Loads a native CSV directory (with `meta.json`) or a UEA `.ts` pair.
pub fn load_any(path: &Path) -> Result<(SeriesDataset, SeriesDataset)> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    if path.join("meta.json").exists() {
        csv::load_dataset_dir(path)
    } else {
        ts::load_ts_dir(path)
    }
}
