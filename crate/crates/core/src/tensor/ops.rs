//! Elementwise, reduction and shape operations.

use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, axis extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            "all",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub(super) fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.detach();
        let y = out.clone();
        Tensor::from_op(out, self.shape().to_vec(), &[self], move |g| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(&y)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self, other],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self, other],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a, b) = (self.detach(), other.detach());
        let need = (self.tracks(), other.tracks());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self, other],
            move |g| {
                let ga = need
                    .0
                    .then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
                let gb = need
                    .1
                    .then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
                vec![ga, gb]
            },
        ))
    }

    /// `self + other` where `other.shape()` is a trailing suffix of
    /// `self.shape()`; `other` is repeated over the leading axes.
    pub fn add_broadcast(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, o) = (self.shape(), other.shape());
        if o.len() > s.len() || s[s.len() - o.len()..] != *o {
            return Err(Error::dim(
                "add_broadcast",
                "trailing",
                format!("{o:?} is not a suffix of {s:?}"),
            ));
        }
        let block = other.numel().max(1);
        let out = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + other.data()[i % block])
            .collect();
        Ok(Tensor::from_op(out, s.to_vec(), &[self, other], move |g| {
            let mut gb = vec![T::zero(); block];
            for chunk in g.chunks(block) {
                gb.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
            }
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let out = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(out, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|&v| v * s).collect())]
        })
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn mul_scalar(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(Error::dim(
                "mul_scalar",
                "scalar",
                format!("{:?}", s.shape()),
            ));
        }
        let sv = s.item();
        let out = self.data().iter().map(|&v| v * sv).collect();
        let x = self.detach();
        let need_s = s.tracks();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self, s],
            move |g| {
                let gx = g.iter().map(|&v| v * sv).collect();
                let gs = need_s.then(|| vec![g.iter().zip(x.data()).map(|(&g, &x)| g * x).sum()]);
                vec![Some(gx), gs]
            },
        ))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![], &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Mean over the last axis: (…, k) → (…).
    pub fn mean_lastdim(&self) -> Result<Tensor<T>> {
        let k = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("mean_lastdim", "last", "scalar input"))?;
        if k == 0 {
            return Err(Error::dim("mean_lastdim", "last", "empty last dimension"));
        }
        let inv = T::one() / T::lit(k as f64);
        let out = self
            .data()
            .chunks(k)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let shape = self.shape()[..self.ndim() - 1].to_vec();
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            vec![Some(
                g.iter()
                    .flat_map(|&v| std::iter::repeat_n(v * inv, k))
                    .collect(),
            )]
        }))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                "all",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            &[self],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd
            || axes
                .iter()
                .any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim(
                "permute",
                "axes",
                format!("{axes:?} for rank {nd}"),
            ));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let forward = permute_data(self.data(), &in_shape, axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let os = out_shape.clone();
        Ok(Tensor::from_op(forward, out_shape, &[self], move |g| {
            vec![Some(permute_data(g, &os, &inverse))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::dim("transpose", "rank", format!("{nd} < 2")));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "inputs", "no tensors"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::dim(
                "concat",
                format!("axis {axis}"),
                format!("rank {nd}"),
            ));
        }
        for p in parts {
            let ok =
                p.ndim() == nd && (0..nd).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("non-concat axes (concat axis {axis})"),
                    format!("{:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, parts, move |g| {
            let mut grads: Vec<Vec<T>> = extents
                .iter()
                .map(|&e| Vec::with_capacity(outer * e * inner))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    gp.extend_from_slice(&g[off..off + e * inner]);
                    off += e * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() || start + len > self.shape()[axis] {
            return Err(Error::dim(
                "narrow",
                format!("axis {axis}"),
                format!("[{start}, {}) of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let n_in = self.numel();
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); n_in];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Right zero-padding of the last axis to length `target`.
    pub fn pad_last(&self, target: usize) -> Result<Tensor<T>> {
        let k = *self.shape().last().unwrap_or(&1);
        if target < k {
            return Err(Error::dim(
                "pad_last",
                "last",
                format!("target {target} < {k}"),
            ));
        }
        if target == k {
            return Ok(self.clone());
        }
        let rows = self.numel() / k.max(1);
        let mut out = vec![T::zero(); rows * target];
        for (r, chunk) in self.data().chunks(k).enumerate() {
            out[r * target..r * target + k].copy_from_slice(chunk);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = target;
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            vec![Some(
                g.chunks(target)
                    .flat_map(|c| c[..k].iter().copied())
                    .collect(),
            )]
        }))
    }

    /// Repeats the tensor `n` times along a new leading axis.
    pub fn expand_leading(&self, n: usize) -> Tensor<T> {
        let block = self.numel();
        let mut out = Vec::with_capacity(n * block);
        for _ in 0..n {
            out.extend_from_slice(self.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape());
        Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); block];
            for chunk in g.chunks(block.max(1)) {
                gx.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
            }
            vec![Some(gx)]
        })
    }

    /// Gathers entries along `axis` at `indices` (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::dim(
                "index_select",
                format!("axis {axis}"),
                "out of rank",
            ));
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::dim(
                "index_select",
                format!("axis {axis}"),
                format!("index {bad} >= extent {extent}"),
            ));
        }
        let m = indices.len();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                out.extend_from_slice(&self.data()[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let idx = indices.to_vec();
        let n_in = self.numel();
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); n_in];
            for o in 0..outer {
                for (j, &i) in idx.iter().enumerate() {
                    let src = (o * m + j) * inner;
                    let dst = (o * extent + i) * inner;
                    for t in 0..inner {
                        gx[dst + t] += g[src + t];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
