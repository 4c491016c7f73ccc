//! Full classifier: dual-path patch embedding, positional encoding,
//! transformer encoder and classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dywpe::{default_levels, Dywpe, DywpeResolution};
use crate::embedding::{pad_to_multiple, PatchEmbedConfig, PatchEmbedding};
use crate::encoder::{ClassifierHead, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{normal, ForwardCtx, ModelParams, ParamId};
use crate::tensor::{no_grad, Precision, Real, Tensor};
use crate::wavelet::{BoundaryMode, Family};

/// Positional signal used when the dynamic encoding is switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosFallback {
    /// Learned per-patch table of shape (N, d).
    #[default]
    Learned,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub patch_size: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub wavelet: Family,
    pub alpha_init: f64,
    /// 0 selects `min(3, ⌊log2 n⌋ − 1)`.
    pub dywpe_levels: usize,
    pub dywpe_resolution: DywpeResolution,
    pub use_wavelet_embed: bool,
    pub use_dywpe: bool,
    pub use_rpe: bool,
    pub pos_fallback: PosFallback,
    pub rpe_buckets: usize,
    pub rpe_r_max: usize,
    pub rpe_tie_heads: bool,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            heads: 4,
            layers: 4,
            patch_size: 8,
            ffn_mult: 4,
            dropout: 0.2,
            wavelet: Family::Haar,
            alpha_init: 1.0,
            dywpe_levels: 0,
            dywpe_resolution: DywpeResolution::Token,
            use_wavelet_embed: true,
            use_dywpe: true,
            use_rpe: true,
            pos_fallback: PosFallback::Learned,
            rpe_buckets: 32,
            rpe_r_max: 16,
            rpe_tie_heads: false,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            d: self.embed_dim,
            ffn_mult: self.ffn_mult,
            dropout: self.dropout,
            use_rpe: self.use_rpe,
            tie_heads: self.rpe_tie_heads,
            buckets: self.rpe_buckets,
            r_max: self.rpe_r_max,
        }
    }

    fn patch_embed(&self) -> PatchEmbedConfig {
        PatchEmbedConfig {
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            alpha_init: self.alpha_init,
            family: self.wavelet,
            mode: BoundaryMode::Periodization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.patch_embed().validate()?;
        self.encoder().validate()?;
        if self.dywpe_levels > 16 {
            return Err(Error::Config(format!(
                "dywpe_levels {} is larger than 16",
                self.dywpe_levels
            )));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::Config("alpha_init must be finite".into()));
        }
        Ok(())
    }
}

/// Shape of the data a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub channels: usize,
    pub length: usize,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct WaveFormer<T: Real> {
    config: ModelConfig,
    dims: InputDims,
    params: ModelParams<T>,
    embed: PatchEmbedding,
    dywpe: Option<Dywpe>,
    pos_table: Option<ParamId>,
    encoder: Encoder,
    head: ClassifierHead,
}

impl<T: Real> WaveFormer<T> {
    pub fn new(config: ModelConfig, dims: InputDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.channels == 0 || dims.length == 0 {
            return Err(Error::Config(format!(
                "input needs at least one channel and one timestep, got C = {}, L = {}",
                dims.channels, dims.length
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let d = config.embed_dim;
        let p = config.patch_size;
        let n = dims.length.div_ceil(p);
        let embed = PatchEmbedding::new(
            config.patch_embed(),
            dims.channels,
            config.use_wavelet_embed,
            &mut params,
            &mut rng,
        )?;
        let (dywpe, pos_table) = if config.use_dywpe {
            let span = match config.dywpe_resolution {
                DywpeResolution::Token => n,
                DywpeResolution::Signal => n * p,
            };
            let levels = match config.dywpe_levels {
                0 => default_levels(span),
                j => j,
            };
            let pe = Dywpe::new(
                dims.channels,
                d,
                levels,
                config.wavelet,
                config.dywpe_resolution,
                &mut params,
                &mut rng,
            )?;
            (Some(pe), None)
        } else {
            match config.pos_fallback {
                PosFallback::Learned => (
                    None,
                    Some(params.register("pos.table", normal(&mut rng, n * d, 0.02), &[n, d])?),
                ),
                PosFallback::None => (None, None),
            }
        };
        let encoder = Encoder::new(&mut params, &config.encoder(), &mut rng)?;
        let head = ClassifierHead::new(
            &mut params,
            d,
            config.ffn_mult,
            dims.classes,
            config.dropout,
            &mut rng,
        )?;
        Ok(Self {
            config,
            dims,
            params,
            embed,
            dywpe,
            pos_table,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn n_patches(&self) -> usize {
        self.dims.length.div_ceil(self.config.patch_size)
    }

    pub fn dywpe(&self) -> Option<&Dywpe> {
        self.dywpe.as_ref()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn embedding(&self) -> &PatchEmbedding {
        &self.embed
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.dims.channels || s[2] != self.dims.length {
            return Err(Error::dim(
                "model",
                "input",
                format!(
                    "expected (batch, {}, {}), got {:?}",
                    self.dims.channels, self.dims.length, s
                ),
            ));
        }
        Ok(())
    }

    /// DyWPE field for a (batch, C, L) input: (batch, N, d).
    pub fn positional_field(&self, x: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        self.check_input(x)?;
        match &self.dywpe {
            Some(pe) => {
                let xp = pad_to_multiple(x, self.config.patch_size)?;
                Ok(Some(pe.forward(
                    &self.params,
                    &xp,
                    self.config.patch_size,
                )?))
            }
            None => Ok(None),
        }
    }

    /// Encoder input tokens, class token at row 0: (batch, N + 1, d).
    pub fn tokens(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let xp = pad_to_multiple(x, self.config.patch_size)?;
        let tokens = self.embed.forward(&self.params, &xp)?.tokens;
        let b = x.shape()[0];
        let d = self.config.embed_dim;
        if let Some(pe) = &self.dywpe {
            let field = pe.forward(&self.params, &xp, self.config.patch_size)?;
            let field = Tensor::concat(&[&Tensor::zeros(&[b, 1, d]), &field], 1)?;
            tokens.add(&field)
        } else if let Some(id) = self.pos_table {
            let table = Tensor::concat(&[&Tensor::zeros(&[1, d]), self.params.get(id)], 0)?;
            tokens.add_broadcast(&table)
        } else {
            Ok(tokens)
        }
    }

    /// Class logits: (batch, K).
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let h = self.encoder.forward(&self.params, &self.tokens(x)?, ctx)?;
        let b = h.shape()[0];
        let cls = h.narrow(1, 0, 1)?.reshape(&[b, self.config.embed_dim])?;
        self.head.forward(&self.params, &cls, ctx)
    }

    /// Evaluation-mode predicted classes.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let _guard = no_grad();
        Ok(self.forward(x, &mut ForwardCtx::eval())?.argmax_rows())
    }
}
