//! Seeded synthetic classification tasks.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SeriesDataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Class `k` is a sinusoid with `freqs[k]` cycles per series.
    #[default]
    FreqPair,
    /// Tone at `freqs[0]` against a linear chirp from `freqs[0]` to `freqs[1]`.
    ChirpVsTone,
    /// Same tone on every channel; class 1 shifts channel `c` by `c·π/2`.
    PhaseShift,
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freq_pair" => Ok(Self::FreqPair),
            "chirp_vs_tone" => Ok(Self::ChirpVsTone),
            "phase_shift" => Ok(Self::PhaseShift),
            other => Err(Error::Config(format!(
                "unknown synthetic task `{other}` (expected freq_pair, chirp_vs_tone or phase_shift)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub length: usize,
    pub channels: usize,
    /// Samples in each split.
    pub num_samples: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Cycles per series.
    pub freqs: Vec<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            task: SynthTask::FreqPair,
            length: 128,
            channels: 2,
            num_samples: 64,
            noise_std: 0.1,
            seed: 0,
            freqs: vec![3.0, 7.0],
        }
    }
}

impl SynthSpec {
    pub fn classes(&self) -> usize {
        match self.task {
            SynthTask::FreqPair => self.freqs.len(),
            SynthTask::ChirpVsTone | SynthTask::PhaseShift => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 || self.channels == 0 || self.num_samples == 0 {
            return Err(Error::Config(
                "synthetic length ≥ 2, channels ≥ 1 and num_samples ≥ 1 required".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std {} must be finite and non-negative",
                self.noise_std
            )));
        }
        let needed = match self.task {
            SynthTask::FreqPair | SynthTask::ChirpVsTone => 2,
            SynthTask::PhaseShift => 1,
        };
        if self.freqs.len() < needed {
            return Err(Error::Config(format!(
                "task needs at least {needed} frequencies"
            )));
        }
        if self.task == SynthTask::PhaseShift && self.channels < 2 {
            return Err(Error::Config(
                "phase_shift needs at least 2 channels".into(),
            ));
        }
        let nyquist = self.length as f64 / 2.0;
        for &f in &self.freqs {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::Config(format!(
                    "frequency {f} must lie in (0, {nyquist}) cycles for length {}",
                    self.length
                )));
            }
        }
        for (i, a) in self.freqs.iter().enumerate() {
            if self.freqs[..i].contains(a) {
                return Err(Error::Config(format!(
                    "frequency {a} repeated; class frequencies must be distinct"
                )));
            }
        }
        Ok(())
    }

    fn signal(&self, class: usize, channel: usize, phase: f64, t: f64) -> f64 {
        let l = self.length as f64;
        match self.task {
            SynthTask::FreqPair => (2.0 * PI * self.freqs[class] * t / l + phase).sin(),
            SynthTask::ChirpVsTone => {
                let f0 = self.freqs[0];
                let sweep = if class == 1 { self.freqs[1] - f0 } else { 0.0 };
                (2.0 * PI * (f0 * t / l + 0.5 * sweep * t * t / (l * l)) + phase).sin()
            }
            SynthTask::PhaseShift => {
                let shift = class as f64 * channel as f64 * FRAC_PI_2;
                (2.0 * PI * self.freqs[0] * t / l + phase + shift).sin()
            }
        }
    }

    fn split(&self, split: Split) -> Result<SeriesDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(match split {
            Split::Train => 0,
            Split::Test => 1,
        });
        let k = self.classes();
        let mut labels: Vec<usize> = (0..self.num_samples).map(|i| i % k).collect();
        labels.shuffle(&mut rng);
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let (c, l) = (self.channels, self.length);
        let mut x = Vec::with_capacity(self.num_samples * c * l);
        for &class in &labels {
            // phase_shift keeps one phase per sample so the channel offsets carry the label
            let shared = rng.random_range(0.0..2.0 * PI);
            for ch in 0..c {
                let phase = match self.task {
                    SynthTask::PhaseShift => shared,
                    _ => rng.random_range(0.0..2.0 * PI),
                };
                for t in 0..l {
                    x.push(self.signal(class, ch, phase, t as f64) + noise.sample(&mut rng));
                }
            }
        }
        let name = match self.task {
            SynthTask::FreqPair => "freq_pair",
            SynthTask::ChirpVsTone => "chirp_vs_tone",
            SynthTask::PhaseShift => "phase_shift",
        };
        SeriesDataset::new(name, split, c, l, k, x, labels)
    }

    /// Class-balanced train and test splits of `num_samples` each.
    pub fn generate(&self) -> Result<(SeriesDataset, SeriesDataset)> {
        self.validate()?;
        Ok((self.split(Split::Train)?, self.split(Split::Test)?))
    }
}
