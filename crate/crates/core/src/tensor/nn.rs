use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

impl<T: Real> Tensor<T> {
    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let k = self.shape().last().copied().unwrap_or(0);
        if k == 0 {
            return Err(Error::dim(
                "softmax_lastdim",
                "last",
                "empty last dimension",
            ));
        }
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            out.extend(row.iter().map(|&v| (v - max).exp()));
            let total: T = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|v| *v /= total);
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self],
            move |g| {
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(k).zip(y.chunks(k)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(&g, &y)| y * (g - dot)));
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Layer normalization over the last axis with biased variance.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let k = self.shape().last().copied().unwrap_or(0);
        if k == 0 {
            return Err(Error::dim("layer_norm", "last", "empty last dimension"));
        }
        if gain.shape() != [k] || bias.shape() != [k] {
            return Err(Error::dim(
                "layer_norm",
                "last",
                format!(
                    "gain {:?} / bias {:?} vs feature size {k}",
                    gain.shape(),
                    bias.shape()
                ),
            ));
        }
        if k == 1 && eps == T::zero() {
            return Err(Error::DivisionHazard);
        }
        let kt = T::lit(k as f64);
        let rows = self.numel() / k;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data().chunks(k) {
            let mean = row.iter().copied().sum::<T>() / kt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / kt;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gain.data()[i % k] + bias.data()[i % k])
            .collect();
        let gain_v = gain.to_vec();
        let need = (self.tracks(), gain.tracks(), bias.tracks());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self, gain, bias],
            move |g| {
                let gx = need.0.then(|| {
                    let mut gx = Vec::with_capacity(g.len());
                    for r in 0..rows {
                        let gr = &g[r * k..(r + 1) * k];
                        let hr = &xhat[r * k..(r + 1) * k];
                        let gh: Vec<T> = gr.iter().zip(&gain_v).map(|(&a, &b)| a * b).collect();
                        let mean_gh = gh.iter().copied().sum::<T>() / kt;
                        let mean_ghh = gh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / kt;
                        gx.extend(
                            gh.iter()
                                .zip(hr)
                                .map(|(&a, &h)| inv_std[r] * (a - mean_gh - h * mean_ghh)),
                        );
                    }
                    gx
                });
                let gg = need.1.then(|| {
                    let mut gg = vec![T::zero(); k];
                    for (i, (&g, &h)) in g.iter().zip(&xhat).enumerate() {
                        gg[i % k] += g * h;
                    }
                    gg
                });
                let gb = need.2.then(|| {
                    let mut gb = vec![T::zero(); k];
                    for (i, &g) in g.iter().enumerate() {
                        gb[i % k] += g;
                    }
                    gb
                });
                vec![gx, gg, gb]
            },
        ))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&self) -> Tensor<T> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi =
            T::lit(0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2);
        self.unary(
            move |x| half * x * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }

    /// Grouped 1-D cross-correlation.
    ///
    /// `self` is (batch, C_in, L) or (C_in, L); `kernels` is
    /// (C_out, C_in / groups, k); `bias`, when given, is (C_out). Output
    /// length is `(L − k) / stride + 1`. Output channel `o` only reads the
    /// input channels of group `o / (C_out / groups)`.
    pub fn conv1d(
        &self,
        kernels: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let batched = match self.ndim() {
            3 => true,
            2 => false,
            r => {
                return Err(Error::dim(
                    "conv1d",
                    "input rank",
                    format!("{r} (expected 2 or 3)"),
                ))
            }
        };
        let s = self.shape();
        let (nb, c_in, len) = if batched {
            (s[0], s[1], s[2])
        } else {
            (1, s[0], s[1])
        };
        if kernels.ndim() != 3 {
            return Err(Error::dim(
                "conv1d",
                "kernel rank",
                format!("{:?}", kernels.shape()),
            ));
        }
        let (c_out, cpg, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
        if stride == 0 {
            return Err(Error::dim("conv1d", "stride", "stride must be ≥ 1"));
        }
        if groups == 0 || c_in % groups != 0 {
            return Err(Error::dim(
                "conv1d",
                "input channels",
                format!("{c_in} not divisible by groups = {groups}"),
            ));
        }
        if c_out % groups != 0 {
            return Err(Error::dim(
                "conv1d",
                "output channels",
                format!("{c_out} not divisible by groups = {groups}"),
            ));
        }
        if cpg != c_in / groups {
            return Err(Error::dim(
                "conv1d",
                "kernel input channels",
                format!("{cpg} but input has {c_in} / {groups} per group"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::dim(
                    "conv1d",
                    "bias",
                    format!("{:?} vs C_out {c_out}", b.shape()),
                ));
            }
        }
        if k == 0 || k > len {
            return Err(Error::InputTooShort {
                op: "conv1d",
                len,
                required: k.max(1),
            });
        }
        let l_out = (len - k) / stride + 1;
        let opg = c_out / groups;
        let x = self.data();
        let w = kernels.data();
        let mut out = vec![T::zero(); nb * c_out * l_out];
        for b in 0..nb {
            for o in 0..c_out {
                let g0 = (o / opg) * cpg;
                let row = &mut out[(b * c_out + o) * l_out..(b * c_out + o + 1) * l_out];
                if let Some(bias) = bias {
                    row.iter_mut().for_each(|v| *v = bias.data()[o]);
                }
                for ci in 0..cpg {
                    let xr = &x[(b * c_in + g0 + ci) * len..(b * c_in + g0 + ci + 1) * len];
                    let wr = &w[(o * cpg + ci) * k..(o * cpg + ci + 1) * k];
                    for (t, acc) in row.iter_mut().enumerate() {
                        let xs = &xr[t * stride..t * stride + k];
                        *acc += xs.iter().zip(wr).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
        }
        let shape = if batched {
            vec![nb, c_out, l_out]
        } else {
            vec![c_out, l_out]
        };
        let (xd, wd) = (self.detach(), kernels.detach());
        let need = (
            self.tracks(),
            kernels.tracks(),
            bias.is_some_and(|b| b.tracks()),
        );
        let mut inputs = vec![self, kernels];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(out, shape, &inputs, move |g| {
            let x = xd.data();
            let w = wd.data();
            let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
            let mut gw = need.1.then(|| vec![T::zero(); w.len()]);
            let mut gb = need.2.then(|| vec![T::zero(); c_out]);
            for b in 0..nb {
                for o in 0..c_out {
                    let g0 = (o / opg) * cpg;
                    let gr = &g[(b * c_out + o) * l_out..(b * c_out + o + 1) * l_out];
                    if let Some(gb) = gb.as_mut() {
                        gb[o] += gr.iter().copied().sum::<T>();
                    }
                    for ci in 0..cpg {
                        let xoff = (b * c_in + g0 + ci) * len;
                        let woff = (o * cpg + ci) * k;
                        for (t, &gv) in gr.iter().enumerate() {
                            let base = xoff + t * stride;
                            if let Some(gx) = gx.as_mut() {
                                for j in 0..k {
                                    gx[base + j] += gv * w[woff + j];
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                for j in 0..k {
                                    gw[woff + j] += gv * x[base + j];
                                }
                            }
                        }
                    }
                }
            }
            let mut res = vec![gx, gw];
            if has_bias {
                res.push(gb);
            }
            res
        }))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 − rate)`.
    pub fn dropout(&self, rate: f64, rng: &mut impl Rng) -> Tensor<T> {
        if rate <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let scale = if keep > 0.0 {
            T::lit(1.0 / keep)
        } else {
            T::zero()
        };
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| a * m)
            .collect();
        Tensor::from_op(out, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(&mask).map(|(&a, &m)| a * m).collect())]
        })
    }

    /// Mean cross-entropy of (batch, K) logits against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        if self.ndim() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::dim(
                "cross_entropy",
                "batch",
                format!("logits {:?} vs {} labels", self.shape(), labels.len()),
            ));
        }
        let (nb, k) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Label {
                label: bad,
                classes: k,
            });
        }
        let mut probs = Vec::with_capacity(nb * k);
        let mut total = T::zero();
        for (row, &y) in self.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[y];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let inv_n = T::one() / T::lit(nb as f64);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![total * inv_n],
            vec![],
            &[self],
            move |g| {
                let mut gx: Vec<T> = probs.iter().map(|&p| p * g[0] * inv_n).collect();
                for (i, &y) in labels.iter().enumerate() {
                    gx[i * k + y] -= g[0] * inv_n;
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Index of the largest entry in each row of a (batch, K) tensor.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let k = self.shape().last().copied().unwrap_or(1).max(1);
        self.data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}
