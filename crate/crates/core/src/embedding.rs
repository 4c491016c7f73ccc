//! Dual-path patch embedding.
//!
//! Path A convolves the raw signal with kernel = stride = `p`. Path B takes
//! one periodized DWT level per channel, mixes the bands as
//! `W = cA + α·cD` with a learnable scalar α, and convolves `W` (length
//! L'/2) with kernel = stride = `p/2`, so both paths emit the same `N`
//! patches. The two (d/2, N) maps are concatenated feature-wise and a
//! learned class token is prepended at index 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{normal, uniform, ModelParams, ParamId};
use crate::tensor::{Real, Tensor};
use crate::wavelet::{dwt_level, wavelet_filters, BoundaryMode, Family, WaveletFilterPair};

/// Right zero-padding of the last axis up to the next multiple of `p`.
pub fn pad_to_multiple<T: Real>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("pad_to_multiple", "last", "scalar input"))?;
    let p = p.max(1);
    x.pad_last(len.div_ceil(p) * p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub alpha_init: f64,
    pub family: Family,
    pub mode: BoundaryMode,
}

impl PatchEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding dimension must be a positive even number, got {}",
                self.embed_dim
            )));
        }
        if self.patch_size < 2 || self.patch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "patch size must be even and at least 2, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Patch tokens with the class token at row 0: (batch, N + 1, d).
#[derive(Debug, Clone)]
pub struct TokenBatch<T: Real> {
    pub tokens: Tensor<T>,
    pub n_patches: usize,
}

/// Second branch of the embedding: wavelet features, or a duplicate raw
/// branch when the wavelet embedding is ablated.
#[derive(Debug, Clone)]
enum SecondPath {
    Wavelet {
        kernels: ParamId,
        bias: ParamId,
        alpha: ParamId,
        filters: WaveletFilterPair,
    },
    Raw {
        kernels: ParamId,
        bias: ParamId,
    },
}

#[derive(Debug, Clone)]
pub struct PatchEmbedding {
    config: PatchEmbedConfig,
    raw_kernels: ParamId,
    raw_bias: ParamId,
    second: SecondPath,
    cls: ParamId,
}

impl PatchEmbedding {
    pub fn new<T: Real>(
        config: PatchEmbedConfig,
        channels: usize,
        use_wavelet: bool,
        params: &mut ModelParams<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let half = config.embed_dim / 2;
        let p = config.patch_size;
        let raw_bound = 1.0 / ((channels * p) as f64).sqrt();
        let raw_kernels = params.register(
            "embed.raw.kernels",
            uniform(rng, half * channels * p, raw_bound),
            &[half, channels, p],
        )?;
        let raw_bias = params.register("embed.raw.bias", vec![T::zero(); half], &[half])?;
        let second = if use_wavelet {
            let k = p / 2;
            let bound = 1.0 / ((channels * k) as f64).sqrt();
            SecondPath::Wavelet {
                kernels: params.register(
                    "embed.wavelet.kernels",
                    uniform(rng, half * channels * k, bound),
                    &[half, channels, k],
                )?,
                bias: params.register("embed.wavelet.bias", vec![T::zero(); half], &[half])?,
                alpha: params.register("embed.alpha", vec![T::lit(config.alpha_init)], &[1])?,
                filters: wavelet_filters(config.family),
            }
        } else {
            SecondPath::Raw {
                kernels: params.register(
                    "embed.raw2.kernels",
                    uniform(rng, half * channels * p, raw_bound),
                    &[half, channels, p],
                )?,
                bias: params.register("embed.raw2.bias", vec![T::zero(); half], &[half])?,
            }
        };
        let cls = params.register(
            "embed.cls",
            normal(rng, config.embed_dim, 0.02),
            &[config.embed_dim],
        )?;
        Ok(Self {
            config,
            raw_kernels,
            raw_bias,
            second,
            cls,
        })
    }

    pub fn config(&self) -> &PatchEmbedConfig {
        &self.config
    }

    pub fn uses_wavelet(&self) -> bool {
        matches!(self.second, SecondPath::Wavelet { .. })
    }

    pub fn alpha(&self) -> Option<ParamId> {
        match self.second {
            SecondPath::Wavelet { alpha, .. } => Some(alpha),
            SecondPath::Raw { .. } => None,
        }
    }

    pub fn cls(&self) -> ParamId {
        self.cls
    }

    /// (batch, C, L') → (batch, d/2, N); L' must be a multiple of `p`.
    pub fn raw_patch_path<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.check_divisible(x)?;
        let p = self.config.patch_size;
        x.conv1d(
            params.get(self.raw_kernels),
            Some(params.get(self.raw_bias)),
            p,
            1,
        )
    }

    /// (batch, C, L') → (batch, d/2, N) via `cA + α·cD`.
    pub fn wavelet_patch_path<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.check_divisible(x)?;
        let p = self.config.patch_size;
        match &self.second {
            SecondPath::Wavelet {
                kernels,
                bias,
                alpha,
                filters,
            } => {
                let mixed = wavelet_input(x, params.get(*alpha), filters, self.config.mode)?;
                mixed.conv1d(params.get(*kernels), Some(params.get(*bias)), p / 2, 1)
            }
            SecondPath::Raw { kernels, bias } => {
                x.conv1d(params.get(*kernels), Some(params.get(*bias)), p, 1)
            }
        }
    }

    fn check_divisible<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        let len = x.shape().last().copied().unwrap_or(0);
        if len == 0 || len % self.config.patch_size != 0 {
            return Err(Error::dim(
                "patch_embedding",
                "length",
                format!(
                    "{len} is not a positive multiple of patch size {}",
                    self.config.patch_size
                ),
            ));
        }
        Ok(())
    }

    /// Pads `x` (batch, C, L) and returns the fused token batch.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
    ) -> Result<TokenBatch<T>> {
        let x = pad_to_multiple(x, self.config.patch_size)?;
        let raw = self.raw_patch_path(params, &x)?;
        let wav = self.wavelet_patch_path(params, &x)?;
        fuse_and_prepend_cls(&raw, &wav, params.get(self.cls))
    }
}

/// `cA + α·cD` from a single analysis level, shape (…, C, L'/2).
pub fn wavelet_input<T: Real>(
    x: &Tensor<T>,
    alpha: &Tensor<T>,
    filters: &WaveletFilterPair,
    mode: BoundaryMode,
) -> Result<Tensor<T>> {
    let (ca, cd) = dwt_level(x, filters, mode)?;
    ca.add(&cd.mul_scalar(alpha)?)
}

/// Concatenates (batch, d/2, N) maps into (batch, N, d) tokens and
/// prepends the class token.
pub fn fuse_and_prepend_cls<T: Real>(
    raw: &Tensor<T>,
    wav: &Tensor<T>,
    cls: &Tensor<T>,
) -> Result<TokenBatch<T>> {
    if raw.ndim() != 3 || wav.ndim() != 3 || raw.shape()[0] != wav.shape()[0] {
        return Err(Error::dim(
            "fuse",
            "batch",
            format!("raw {:?} vs wavelet {:?}", raw.shape(), wav.shape()),
        ));
    }
    if raw.shape()[2] != wav.shape()[2] {
        return Err(Error::dim(
            "fuse",
            "patches",
            format!(
                "raw path has {} patches, wavelet path {}",
                raw.shape()[2],
                wav.shape()[2]
            ),
        ));
    }
    let (batch, n) = (raw.shape()[0], raw.shape()[2]);
    let d = raw.shape()[1] + wav.shape()[1];
    if cls.shape() != [d] {
        return Err(Error::dim(
            "fuse",
            "class token",
            format!("{:?} vs d = {d}", cls.shape()),
        ));
    }
    let patches = Tensor::concat(&[raw, wav], 1)?.permute(&[0, 2, 1])?;
    let cls_rows = cls.reshape(&[1, d])?.expand_leading(batch);
    let tokens = Tensor::concat(&[&cls_rows, &patches], 1)?;
    Ok(TokenBatch {
        tokens,
        n_patches: n,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cfg(p: usize, d: usize) -> PatchEmbedConfig {
        PatchEmbedConfig {
            patch_size: p,
            embed_dim: d,
            alpha_init: 1.0,
            family: Family::Haar,
            mode: BoundaryMode::Periodization,
        }
    }

    fn random_x(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(uniform(rng, n, 1.0), shape).unwrap()
    }

    #[test]
    fn padding() {
        let x = Tensor::<f64>::zeros(&[3, 206]);
        assert_eq!(pad_to_multiple(&x, 8).unwrap().shape(), &[3, 208]);
        let x = Tensor::<f64>::zeros(&[3, 208]);
        let y = pad_to_multiple(&x, 8).unwrap();
        assert!(y.ptr_eq(&x));
        let x = Tensor::<f64>::from_f64(&[1.0], &[1, 1]).unwrap();
        assert_eq!(
            pad_to_multiple(&x, 4).unwrap().to_vec(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn config_validation() {
        assert!(cfg(8, 127).validate().is_err());
        assert!(cfg(7, 128).validate().is_err());
        assert!(cfg(1, 128).validate().is_err());
        assert!(cfg(8, 128).validate().is_ok());
    }

    #[test]
    fn path_shapes_match_table_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(8, 128), 3, true, &mut params, &mut rng).unwrap();
        let x = pad_to_multiple(&random_x(&mut rng, &[1, 3, 206]), 8).unwrap();
        assert_eq!(x.shape(), &[1, 3, 208]);
        assert_eq!(e.raw_patch_path(&params, &x).unwrap().shape(), &[1, 64, 26]);
        let alpha = params.get(e.alpha().unwrap());
        let w = wavelet_input(
            &x,
            alpha,
            &wavelet_filters(Family::Haar),
            BoundaryMode::Periodization,
        )
        .unwrap();
        assert_eq!(w.shape(), &[1, 3, 104]);
        assert_eq!(
            e.wavelet_patch_path(&params, &x).unwrap().shape(),
            &[1, 64, 26]
        );
        let tb = e.forward(&params, &x).unwrap();
        assert_eq!(tb.tokens.shape(), &[1, 27, 128]);
        assert_eq!(tb.n_patches, 26);
    }

    #[test]
    fn zero_input_zero_raw_output_and_single_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(8, 16), 2, true, &mut params, &mut rng).unwrap();
        let y = e
            .raw_patch_path(&params, &Tensor::zeros(&[1, 2, 16]))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = e
            .raw_patch_path(&params, &random_x(&mut rng, &[1, 2, 8]))
            .unwrap();
        assert_eq!(y.shape(), &[1, 8, 1]);
    }

    #[test]
    fn constant_input_is_independent_of_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(4, 8), 2, true, &mut params, &mut rng).unwrap();
        let x = Tensor::full(&[1, 2, 16], 1.7);
        let a = e.wavelet_patch_path(&params, &x).unwrap().to_vec();
        params.set_data(e.alpha().unwrap(), vec![-3.0]).unwrap();
        let b = e.wavelet_patch_path(&params, &x).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_zero_keeps_approximation_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_x(&mut rng, &[2, 8]);
        let h = wavelet_filters(Family::Haar);
        let w = wavelet_input(&x, &Tensor::scalar(0.0), &h, BoundaryMode::Periodization).unwrap();
        let (ca, _) = dwt_level(&x, &h, BoundaryMode::Periodization).unwrap();
        assert_eq!(w.to_vec(), ca.to_vec());
    }

    #[test]
    fn fusion_layout_and_class_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(4, 8), 2, true, &mut params, &mut rng).unwrap();
        let x = random_x(&mut rng, &[3, 2, 16]);
        let raw = e.raw_patch_path(&params, &x).unwrap();
        let wav = e.wavelet_patch_path(&params, &x).unwrap();
        let tb = e.forward(&params, &x).unwrap();
        let cls = params.get(e.cls()).to_vec();
        let (n, d) = (4, 8);
        for b in 0..3 {
            let tok = &tb.tokens.data()[b * (n + 1) * d..(b + 1) * (n + 1) * d];
            assert_eq!(&tok[..d], cls.as_slice());
            for i in 0..n {
                for f in 0..d / 2 {
                    assert_eq!(tok[(i + 1) * d + f], raw.data()[(b * 4 + f) * n + i]);
                    assert_eq!(
                        tok[(i + 1) * d + d / 2 + f],
                        wav.data()[(b * 4 + f) * n + i]
                    );
                }
            }
        }
        let short = Tensor::<f64>::zeros(&[1, 4, 3]);
        assert!(matches!(
            fuse_and_prepend_cls(&raw, &short, params.get(e.cls())),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn raw_only_ablation_keeps_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pa = ModelParams::<f64>::new();
        let mut pb = ModelParams::<f64>::new();
        let full = PatchEmbedding::new(cfg(8, 16), 3, true, &mut pa, &mut rng).unwrap();
        let ablated = PatchEmbedding::new(cfg(8, 16), 3, false, &mut pb, &mut rng).unwrap();
        let x = random_x(&mut rng, &[2, 3, 50]);
        assert_eq!(
            full.forward(&pa, &x).unwrap().tokens.shape(),
            ablated.forward(&pb, &x).unwrap().tokens.shape()
        );
        assert!(ablated.alpha().is_none());
    }

    #[test]
    fn alpha_gradient_vanishes_for_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(4, 8), 2, true, &mut params, &mut rng).unwrap();
        let x = Tensor::full(&[2, 2, 16], -0.4);
        let tb = e.forward(&params, &x).unwrap();
        tb.tokens.tanh().sum().backward().unwrap();
        assert_eq!(*params.get(e.alpha().unwrap()).grad().unwrap(), vec![0.0]);

        let x = random_x(&mut rng, &[2, 2, 16]);
        let tb = e.forward(&params, &x).unwrap();
        tb.tokens.tanh().sum().backward().unwrap();
        assert!(params.get(e.alpha().unwrap()).grad().unwrap()[0].abs() > 0.0);
    }

    #[test]
    fn patch_shift_permutes_interior_raw_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ModelParams::<f64>::new();
        let e = PatchEmbedding::new(cfg(4, 8), 2, true, &mut params, &mut rng).unwrap();
        let x = random_x(&mut rng, &[1, 2, 32]);
        let mut shifted = vec![0.0; 64];
        for c in 0..2 {
            for t in 4..32 {
                shifted[c * 32 + t] = x.data()[c * 32 + t - 4];
            }
        }
        let xs = Tensor::from_vec(shifted, &[1, 2, 32]).unwrap();
        let a = e.raw_patch_path(&params, &x).unwrap();
        let b = e.raw_patch_path(&params, &xs).unwrap();
        for f in 0..4 {
            for i in 0..7 {
                assert!((a.data()[f * 8 + i] - b.data()[f * 8 + i + 1]).abs() < 1e-14);
            }
        }
    }
}
