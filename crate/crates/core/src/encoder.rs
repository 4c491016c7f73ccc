//! Pre-norm transformer encoder with bucketed relative position bias.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{normal, ForwardCtx, LayerNorm, Linear, ModelParams, ParamId};
use crate::tensor::{Real, Tensor};

/// Bucket of a signed relative distance `r`.
///
/// Distances below `r_max / 2` get their own bucket; larger ones share
/// logarithmically widening buckets, saturating at `buckets / 2 - 1`.
/// Negative distances use the upper half of the index range.
pub fn relative_bucket(r: i64, buckets: usize, r_max: usize) -> usize {
    let half = buckets / 2;
    let exact = (r_max / 2) as u64;
    let a = r.unsigned_abs();
    let u = if a < exact {
        a as usize
    } else if exact == 0 {
        half.saturating_sub(1)
    } else {
        let steps = half.saturating_sub(exact as usize);
        let cap = half.saturating_sub(1);
        let extra = floor_scaled_log2(a, exact, steps, cap.saturating_sub(exact as usize));
        (exact as usize + extra).min(cap)
    };
    if r < 0 {
        u + half
    } else {
        u
    }
}

/// `min(cap, ⌊s · log2(a / h)⌋)` for `a ≥ h ≥ 1`.
fn floor_scaled_log2(a: u64, h: u64, s: usize, cap: usize) -> usize {
    let exact_powers = u32::try_from(s)
        .ok()
        .and_then(|s| Some(((a as u128).checked_pow(s)?, (h as u128).checked_pow(s)?)));
    match exact_powers {
        // largest m with 2^m · h^s ≤ a^s
        Some((num, den)) => {
            let (mut m, mut v) = (0, den);
            while m < cap {
                match v.checked_mul(2) {
                    Some(next) if next <= num => {
                        v = next;
                        m += 1;
                    }
                    _ => break,
                }
            }
            m
        }
        None => ((s as f64 * (a as f64 / h as f64).log2()).floor() as usize).min(cap),
    }
}

/// Learned bias per (head, bucket), plus one extra column for any pair
/// involving the class token at index 0.
#[derive(Debug, Clone)]
pub struct RelativePositionBias {
    table: ParamId,
    rows: usize,
    buckets: usize,
    r_max: usize,
}

impl RelativePositionBias {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        heads: usize,
        tie_heads: bool,
        buckets: usize,
        r_max: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if buckets < 2 || buckets % 2 != 0 {
            return Err(Error::Config(format!(
                "rpe buckets must be even and at least 2, got {buckets}"
            )));
        }
        if r_max > buckets {
            return Err(Error::Config(format!(
                "rpe r_max {r_max} exceeds bucket count {buckets}"
            )));
        }
        let rows = if tie_heads { 1 } else { heads };
        let table = params.register(
            "rpe.table",
            normal(rng, rows * (buckets + 1), 0.02),
            &[rows, buckets + 1],
        )?;
        Ok(Self {
            table,
            rows,
            buckets,
            r_max,
        })
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// Row-major (T, T) column indices into the table.
    pub fn bucket_indices(&self, tokens: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(tokens * tokens);
        for i in 0..tokens {
            for j in 0..tokens {
                idx.push(if i == 0 || j == 0 {
                    self.buckets
                } else {
                    relative_bucket(i as i64 - j as i64, self.buckets, self.r_max)
                });
            }
        }
        idx
    }

    /// Bias added to attention scores: (heads, T, T), or (T, T) with tied heads.
    pub fn bias<T: Real>(&self, params: &ModelParams<T>, tokens: usize) -> Result<Tensor<T>> {
        let gathered = params
            .get(self.table)
            .index_select(1, &self.bucket_indices(tokens))?;
        if self.rows == 1 {
            gathered.reshape(&[tokens, tokens])
        } else {
            gathered.reshape(&[self.rows, tokens, tokens])
        }
    }
}

/// Attention weights `softmax(q kᵀ / √d_k + bias)` for (…, heads, T, d_k)
/// inputs; `bias` must broadcast as a trailing-shape suffix.
pub fn attention_weights<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if q.ndim() < 2 || q.shape() != k.shape() {
        return Err(Error::dim(
            "attention",
            "q/k",
            format!("{:?} vs {:?}", q.shape(), k.shape()),
        ));
    }
    let dk = q.shape()[q.ndim() - 1];
    let scores = q
        .matmul(&k.transpose()?)?
        .scale(T::lit(1.0 / (dk as f64).sqrt()));
    let scores = match bias {
        Some(b) => scores.add_broadcast(b)?,
        None => scores,
    };
    scores.softmax_lastdim()
}

/// Scaled dot-product attention with an optional additive bias.
pub fn rpe_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if v.shape()[..v.ndim() - 1] != k.shape()[..k.ndim() - 1] {
        return Err(Error::dim(
            "attention",
            "v",
            format!("{:?} vs keys {:?}", v.shape(), k.shape()),
        ));
    }
    attention_weights(q, k, bias)?.matmul(v)
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub use_rpe: bool,
    pub tie_heads: bool,
    pub buckets: usize,
    pub r_max: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
    dropout: f64,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        name: &str,
        d: usize,
        heads: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(params, &format!("{name}.query"), d, d, true, rng)?,
            key: Linear::new(params, &format!("{name}.key"), d, d, true, rng)?,
            value: Linear::new(params, &format!("{name}.value"), d, d, true, rng)?,
            output: Linear::new(params, &format!("{name}.output"), d, d, true, rng)?,
            heads,
            dropout,
        })
    }

    fn split_heads<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        x.reshape(&[b, t, self.heads, d / self.heads])?
            .permute(&[0, 2, 1, 3])
    }

    /// (batch, T, d) → (batch, T, d).
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        if x.ndim() != 3 {
            return Err(Error::dim(
                "attention",
                "input",
                format!("expected (batch, T, d), got {:?}", x.shape()),
            ));
        }
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let q = self.split_heads(&self.query.forward(params, x)?)?;
        let k = self.split_heads(&self.key.forward(params, x)?)?;
        let v = self.split_heads(&self.value.forward(params, x)?)?;
        let weights = ctx.dropout(&attention_weights(&q, &k, bias)?, self.dropout);
        let mixed = weights
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, d])?;
        self.output.forward(params, &mixed)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    dropout: f64,
}

impl EncoderLayer {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = cfg.d * cfg.ffn_mult;
        Ok(Self {
            norm_attn: LayerNorm::new(params, &format!("{name}.norm_attn"), cfg.d, 1e-5)?,
            attention: MultiHeadAttention::new(
                params,
                &format!("{name}.attn"),
                cfg.d,
                cfg.heads,
                cfg.dropout,
                rng,
            )?,
            norm_ffn: LayerNorm::new(params, &format!("{name}.norm_ffn"), cfg.d, 1e-5)?,
            ffn_in: Linear::new(params, &format!("{name}.ffn_in"), cfg.d, hidden, true, rng)?,
            ffn_out: Linear::new(params, &format!("{name}.ffn_out"), hidden, cfg.d, true, rng)?,
            dropout: cfg.dropout,
        })
    }

    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        let attn =
            self.attention
                .forward(params, &self.norm_attn.forward(params, x)?, bias, ctx)?;
        let x = x.add(&attn)?;
        let h = self
            .ffn_in
            .forward(params, &self.norm_ffn.forward(params, &x)?)?
            .gelu();
        let h = self
            .ffn_out
            .forward(params, &ctx.dropout(&h, self.dropout))?;
        x.add(&h)
    }
}

/// Layer stack sharing one relative-bias table, followed by a final norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub rpe: Option<RelativePositionBias>,
    pub final_norm: LayerNorm,
}

impl Encoder {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let rpe = if cfg.use_rpe {
            Some(RelativePositionBias::new(
                params,
                cfg.heads,
                cfg.tie_heads,
                cfg.buckets,
                cfg.r_max,
                rng,
            )?)
        } else {
            None
        };
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(params, &format!("layer{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            rpe,
            final_norm: LayerNorm::new(params, "final_norm", cfg.d, 1e-5)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        let bias = match &self.rpe {
            Some(r) => Some(r.bias(params, x.shape()[1])?),
            None => None,
        };
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(params, &h, bias.as_ref(), ctx)?;
        }
        self.final_norm.forward(params, &h)
    }
}

/// `z = W_2 · Dropout(GELU(W_1 h))`, both maps bias-free.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub w1: Linear,
    pub w2: Linear,
    classes: usize,
    dropout: f64,
}

impl ClassifierHead {
    pub fn new<T: Real>(
        params: &mut ModelParams<T>,
        d: usize,
        ffn_mult: usize,
        classes: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "at least 2 classes required, got {classes}"
            )));
        }
        Ok(Self {
            w1: Linear::new(params, "head.w1", d, ffn_mult * d, false, rng)?,
            w2: Linear::new(params, "head.w2", ffn_mult * d, classes, false, rng)?,
            classes,
            dropout,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// (batch, d) → (batch, K) logits.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        h: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        let z = self.w1.forward(params, h)?.gelu();
        self.w2.forward(params, &ctx.dropout(&z, self.dropout))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::params::uniform;

    fn float_bucket(r: i64, b: usize, r_max: usize) -> usize {
        let half = (b / 2) as f64;
        let exact = (r_max / 2) as f64;
        let a = r.abs() as f64;
        let u = if a < exact {
            a
        } else {
            (exact + ((a / exact).log2() * (half - exact)).floor()).min(half - 1.0)
        };
        u as usize + if r < 0 { b / 2 } else { 0 }
    }

    fn config(d: usize, heads: usize, layers: usize, use_rpe: bool) -> EncoderConfig {
        EncoderConfig {
            layers,
            heads,
            d,
            ffn_mult: 4,
            dropout: 0.0,
            use_rpe,
            tie_heads: false,
            buckets: 32,
            r_max: 16,
        }
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(uniform(rng, n, 1.0), shape).unwrap()
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(relative_bucket(0, 32, 16), 0);
        assert_eq!(relative_bucket(20, 32, 16), 15);
        assert_eq!(relative_bucket(-5, 32, 16), 21);
        assert_eq!(relative_bucket(i64::MIN, 32, 16), 31);
        assert_eq!(relative_bucket(i64::MAX, 32, 16), 15);
    }

    #[test]
    fn bucket_matches_direct_evaluation() {
        for (b, r_max) in [(32, 16), (64, 16), (32, 8), (16, 16), (128, 32), (12, 6)] {
            for r in -600..=600 {
                assert_eq!(
                    relative_bucket(r, b, r_max),
                    float_bucket(r, b, r_max),
                    "r={r} B={b} r_max={r_max}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn bucket_range_and_monotonicity(r in 0i64..100_000, b2 in 1usize..64, frac in 0.0f64..=1.0) {
            let b = 2 * b2;
            let r_max = ((b as f64 * frac) as usize).max(2).min(b);
            for s in [r, -r] {
                prop_assert!(relative_bucket(s, b, r_max) < b);
            }
            prop_assert!(relative_bucket(r + 1, b, r_max) >= relative_bucket(r, b, r_max));
            prop_assert!(relative_bucket(-r - 1, b, r_max) >= relative_bucket(-r, b, r_max) || r == 0);
        }
    }

    #[test]
    fn class_token_uses_reserved_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::<f64>::new();
        let rpe = RelativePositionBias::new(&mut params, 2, false, 32, 16, &mut rng).unwrap();
        let idx = rpe.bucket_indices(4);
        assert_eq!(&idx[..4], &[32; 4]);
        assert!((0..4).all(|i| idx[i * 4] == 32));
        assert_eq!(idx[4 + 1], 0);
        assert_eq!(idx[4 + 3], relative_bucket(-2, 32, 16));
        assert_eq!(rpe.bias(&params, 4).unwrap().shape(), &[2, 4, 4]);
        assert!(RelativePositionBias::new(
            &mut ModelParams::<f64>::new(),
            2,
            false,
            31,
            16,
            &mut rng
        )
        .is_err());
        let mut tied = ModelParams::<f64>::new();
        let rpe = RelativePositionBias::new(&mut tied, 4, true, 32, 16, &mut rng).unwrap();
        assert_eq!(rpe.bias(&tied, 5).unwrap().shape(), &[5, 5]);
    }

    #[test]
    fn zero_bias_matches_plain_attention_and_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&mut rng, &[2, 5, 3]);
        let k = random(&mut rng, &[2, 5, 3]);
        let v = random(&mut rng, &[2, 5, 3]);
        let plain = rpe_attention(&q, &k, &v, None).unwrap();
        let zero = rpe_attention(&q, &k, &v, Some(&Tensor::zeros(&[2, 5, 5]))).unwrap();
        assert_eq!(plain.to_vec(), zero.to_vec());
        let w = attention_weights(&q, &k, None).unwrap();
        for row in w.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&mut rng, &[2, 1, 3]);
        let k = random(&mut rng, &[2, 1, 3]);
        let v = random(&mut rng, &[2, 1, 3]);
        assert_eq!(
            rpe_attention(&q, &k, &v, None).unwrap().to_vec(),
            v.to_vec()
        );
    }

    #[test]
    fn saturated_diagonal_bias_gives_identity_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 6;
        let q = random(&mut rng, &[1, t, 4]);
        let k = random(&mut rng, &[1, t, 4]);
        let v = random(&mut rng, &[1, t, 4]);
        let bias: Vec<f64> = (0..t * t)
            .map(|i| if i / t == i % t { 1e4 } else { -1e4 })
            .collect();
        let bias = Tensor::from_vec(bias, &[t, t]).unwrap();
        let out = rpe_attention(&q, &k, &v, Some(&bias)).unwrap();
        for (o, e) in out.data().iter().zip(v.data()) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_shape_errors() {
        let q = Tensor::<f64>::zeros(&[2, 5, 3]);
        assert!(rpe_attention(
            &q,
            &Tensor::zeros(&[2, 4, 3]),
            &Tensor::zeros(&[2, 4, 3]),
            None
        )
        .is_err());
        assert!(rpe_attention(&q, &q, &Tensor::zeros(&[2, 4, 3]), None).is_err());
    }

    #[test]
    fn rpe_table_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::<f64>::new();
        let enc = Encoder::new(&mut params, &config(8, 2, 1, true), &mut rng).unwrap();
        let x = random(&mut rng, &[2, 5, 8]);
        let mut ctx = ForwardCtx::eval();
        let y = enc.forward(&params, &x, &mut ctx).unwrap();
        let r = random(&mut rng, y.shape());
        y.mul(&r).unwrap().sum().backward().unwrap();
        let g = params
            .get(enc.rpe.as_ref().unwrap().table())
            .grad()
            .unwrap()
            .clone();
        assert!(g.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn zero_output_projections_make_identity_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::<f64>::new();
        let cfg = config(8, 2, 1, true);
        let layer = EncoderLayer::new(&mut params, "l", &cfg, &mut rng).unwrap();
        for id in [layer.attention.output.weight, layer.ffn_out.weight] {
            let n = params.get(id).numel();
            params.set_data(id, vec![0.0; n]).unwrap();
        }
        let x = random(&mut rng, &[3, 7, 8]);
        let y = layer
            .forward(&params, &x, None, &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn wss_shape_and_eval_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ModelParams::<f64>::new();
        let mut cfg = config(128, 4, 1, true);
        cfg.dropout = 0.2;
        let enc = Encoder::new(&mut params, &cfg, &mut rng).unwrap();
        let x = random(&mut rng, &[1, 27, 128]);
        let a = enc.forward(&params, &x, &mut ForwardCtx::eval()).unwrap();
        let b = enc.forward(&params, &x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(a.shape(), &[1, 27, 128]);
        assert_eq!(a.to_vec(), b.to_vec());
        let c = enc.forward(&params, &x, &mut ForwardCtx::train(1)).unwrap();
        assert_ne!(a.to_vec(), c.to_vec());
    }

    #[test]
    fn config_validation() {
        assert!(config(10, 4, 1, true).validate().is_err());
        assert!(config(8, 0, 1, true).validate().is_err());
        let mut c = config(8, 2, 1, true);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn head_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ModelParams::<f64>::new();
        assert!(ClassifierHead::new(&mut params, 8, 4, 1, 0.0, &mut rng).is_err());
        let head = ClassifierHead::new(&mut params, 128, 4, 2, 0.2, &mut rng).unwrap();
        let h = random(&mut rng, &[3, 128]);
        let z = head.forward(&params, &h, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(z.shape(), &[3, 2]);
        assert_eq!(
            z.to_vec(),
            head.forward(&params, &h, &mut ForwardCtx::eval())
                .unwrap()
                .to_vec()
        );
        params
            .set_data(head.w1.weight, vec![0.0; 128 * 512])
            .unwrap();
        let z = head.forward(&params, &h, &mut ForwardCtx::eval()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }
}
