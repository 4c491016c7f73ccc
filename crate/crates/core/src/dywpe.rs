//! Dynamic wavelet positional encoding.
//!
//! The input is projected to a single channel with a learned weight per
//! channel, decomposed with a J-level DWT, and every band `c_b` is expanded
//! to `c_b ⊗ m_b` where `m_b = σ(e_b W_g) ⊙ tanh(e_b W_v)` depends only on
//! the band's learned scale embedding `e_b`. The IDWT of the expanded bands,
//! taken independently for each embedding dimension, is the positional
//! field added to the patch tokens. The map from signal to field is linear,
//! so a zero signal yields a zero field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{normal, uniform, ModelParams, ParamId};
use crate::tensor::{Real, Tensor};
use crate::wavelet::{
    dwt_multi, idwt_multi, wavelet_filters, BoundaryMode, DwtPyramid, Family, WaveletFilterPair,
};

/// Length axis the encoding is computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DywpeResolution {
    /// Per-patch means, one sample per token.
    #[default]
    Token,
    /// Full padded signal; the field is mean-pooled per patch afterwards.
    Signal,
}

/// `min(3, ⌊log2 n⌋ − 1)`, at least 1.
pub fn default_levels(n: usize) -> usize {
    let lg = if n == 0 { 0 } else { n.ilog2() as i64 };
    (lg - 1).clamp(1, 3) as usize
}

/// Length `n` is right-padded to for a `levels`-level transform: a multiple
/// of `2^levels` long enough for the filter at the coarsest level.
pub fn padded_len(n: usize, levels: usize, filter_len: usize) -> usize {
    let unit = 1usize << levels;
    let min_len = filter_len << (levels - 1);
    (n.div_ceil(unit) * unit).max(min_len)
}

/// `(σ(e W_g) ⊙ tanh(e W_v)) ⊗ c`: (…, len) coefficients → (…, len, d).
pub fn gate<T: Real>(
    e: &Tensor<T>,
    c: &Tensor<T>,
    w_g: &Tensor<T>,
    w_v: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = e.numel();
    if w_g.shape() != [d, d] || w_v.shape() != [d, d] {
        return Err(Error::dim(
            "gate",
            "weights",
            format!("W_g {:?}, W_v {:?} for d = {d}", w_g.shape(), w_v.shape()),
        ));
    }
    let e = e.reshape(&[1, d])?;
    let m = e.matmul(w_g)?.sigmoid().mul(&e.matmul(w_v)?.tanh())?;
    let mut col = c.shape().to_vec();
    col.push(1);
    c.reshape(&col)?.matmul(&m)
}

#[derive(Debug, Clone)]
pub struct Dywpe {
    w_channel: ParamId,
    w_g: ParamId,
    w_v: ParamId,
    scale_embeddings: ParamId,
    channels: usize,
    d: usize,
    levels: usize,
    filters: WaveletFilterPair,
    mode: BoundaryMode,
    resolution: DywpeResolution,
}

impl Dywpe {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        channels: usize,
        d: usize,
        levels: usize,
        family: Family,
        resolution: DywpeResolution,
        params: &mut ModelParams<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config(
                "positional encoding needs at least one level".into(),
            ));
        }
        let bound = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_channel: params.register(
                "dywpe.w_channel",
                vec![T::lit(1.0 / channels as f64); channels],
                &[channels],
            )?,
            w_g: params.register("dywpe.w_g", uniform(rng, d * d, bound), &[d, d])?,
            w_v: params.register("dywpe.w_v", uniform(rng, d * d, bound), &[d, d])?,
            scale_embeddings: params.register(
                "dywpe.scale_embeddings",
                normal(rng, (levels + 1) * d, 0.02),
                &[levels + 1, d],
            )?,
            channels,
            d,
            levels,
            filters: wavelet_filters(family),
            mode: BoundaryMode::Periodization,
            resolution,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn resolution(&self) -> DywpeResolution {
        self.resolution
    }

    pub fn w_channel(&self) -> ParamId {
        self.w_channel
    }

    /// `x_mono[t] = Σ_c x[c, t] · w_channel[c]`: (batch, C, n) → (batch, n).
    pub fn channel_project<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if x.ndim() != 3 || x.shape()[1] != self.channels {
            return Err(Error::dim(
                "channel_project",
                "channels",
                format!(
                    "input {:?}, projection has {} channels",
                    x.shape(),
                    self.channels
                ),
            ));
        }
        let (b, n) = (x.shape()[0], x.shape()[2]);
        let w = params.get(self.w_channel).reshape(&[self.channels, 1])?;
        x.permute(&[0, 2, 1])?.matmul(&w)?.reshape(&[b, n])
    }

    /// Gated expansion of band `band` (0 = approximation, then details
    /// coarsest to finest).
    pub fn gate_band<T: Real>(
        &self,
        params: &ModelParams<T>,
        band: usize,
        c: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let e = params.get(self.scale_embeddings).narrow(0, band, 1)?;
        gate(&e, c, params.get(self.w_g), params.get(self.w_v))
    }

    /// Positional field for a (batch, C, n) signal: (batch, n, d).
    pub fn encode<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mono = self.channel_project(params, x)?;
        let (b, n) = (mono.shape()[0], mono.shape()[1]);
        let n_pad = padded_len(n, self.levels, self.filters.len());
        let mono = mono.pad_last(n_pad)?;
        let pyramid = dwt_multi(&mono, self.levels, &self.filters, self.mode)?;
        let mut gated = Vec::with_capacity(self.levels + 1);
        for (i, band) in pyramid.bands().enumerate() {
            // (batch, len, d) → (batch, d, len): one IDWT row per dimension
            gated.push(self.gate_band(params, i, band)?.permute(&[0, 2, 1])?);
        }
        let approx = gated.remove(0);
        let modulated = DwtPyramid {
            approx,
            details: gated,
            mode: self.mode,
        };
        let field = idwt_multi(&modulated, &self.filters)?;
        debug_assert_eq!(field.shape(), &[b, self.d, n_pad]);
        field.narrow(2, 0, n)?.permute(&[0, 2, 1])
    }

    /// Per-patch field for a padded (batch, C, L') signal: (batch, N, d).
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        patch: usize,
    ) -> Result<Tensor<T>> {
        let (b, c, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let n = len / patch;
        match self.resolution {
            DywpeResolution::Token => {
                let pooled = x.reshape(&[b, c, n, patch])?.mean_lastdim()?;
                self.encode(params, &pooled)
            }
            DywpeResolution::Signal => {
                let field = self.encode(params, x)?;
                field
                    .permute(&[0, 2, 1])?
                    .reshape(&[b, self.d, n, patch])?
                    .mean_lastdim()?
                    .permute(&[0, 2, 1])
            }
        }
    }
}
