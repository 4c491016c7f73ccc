use super::{Real, Tensor};
use crate::error::{Error, Result};

impl<T: Real> Tensor<T> {
    /// Matrix product over the last two axes.
    ///
    /// With a 2-D right operand (k, n) the left operand may have any rank
    /// ≥ 1 and is treated as a stack of rows. With higher-rank operands the
    /// leading (batch) axes must agree exactly.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if rhs.ndim() == 2 {
            self.matmul_shared(rhs)
        } else {
            self.matmul_batched(rhs)
        }
    }

    fn matmul_shared(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, n) = (w.shape()[0], w.shape()[1]);
        let in_k = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("matmul", "lhs", "scalar operand"))?;
        if in_k != k {
            return Err(Error::dim(
                "matmul",
                "inner",
                format!("{:?} x {:?}", self.shape(), w.shape()),
            ));
        }
        let rows = self.numel() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            k,
            n,
            self.data(),
            (k as isize, 1),
            w.data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (a, b) = (self.detach(), w.detach());
        let need = (self.tracks(), w.tracks());
        Ok(Tensor::from_op(out, shape, &[self, w], move |g| {
            let ga = need.0.then(|| {
                let mut ga = vec![T::zero(); rows * k];
                T::gemm(
                    rows,
                    n,
                    k,
                    g,
                    (n as isize, 1),
                    b.data(),
                    (1, n as isize),
                    T::zero(),
                    &mut ga,
                );
                ga
            });
            let gb = need.1.then(|| {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    rows,
                    n,
                    a.data(),
                    (1, k as isize),
                    g,
                    (n as isize, 1),
                    T::zero(),
                    &mut gb,
                );
                gb
            });
            vec![ga, gb]
        }))
    }

    fn matmul_batched(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let nd = sa.len();
        if nd < 3 || sb.len() != nd || sa[..nd - 2] != sb[..nd - 2] || sa[nd - 1] != sb[nd - 2] {
            return Err(Error::dim(
                "matmul",
                "batch/inner",
                format!("{sa:?} x {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
        let batch: usize = sa[..nd - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &self.data()[bi * m * k..(bi + 1) * m * k],
                (k as isize, 1),
                &rhs.data()[bi * k * n..(bi + 1) * k * n],
                (n as isize, 1),
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut shape = sa.to_vec();
        shape[nd - 1] = n;
        let (a, b) = (self.detach(), rhs.detach());
        let need = (self.tracks(), rhs.tracks());
        Ok(Tensor::from_op(out, shape, &[self, rhs], move |g| {
            let ga = need.0.then(|| {
                let mut ga = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        (n as isize, 1),
                        &b.data()[bi * k * n..(bi + 1) * k * n],
                        (1, n as isize),
                        T::zero(),
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                    );
                }
                ga
            });
            let gb = need.1.then(|| {
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    T::gemm(
                        k,
                        m,
                        n,
                        &a.data()[bi * m * k..(bi + 1) * m * k],
                        (1, k as isize),
                        &g[bi * m * n..(bi + 1) * m * n],
                        (n as isize, 1),
                        T::zero(),
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}
