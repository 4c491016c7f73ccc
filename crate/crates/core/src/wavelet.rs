//! Orthonormal wavelet filter banks and periodized multi-level DWT / IDWT.
//!
//! Analysis is a stride-2 correlation with circular wrap:
//!
//! ```text
//! cA[n] = Σ_k h[k] · x[(2n + k) mod L]
//! cD[n] = Σ_k g[k] · x[(2n + k) mod L]
//! ```
//!
//! Every operation acts on the last axis and treats all leading axes as
//! independent rows (channels never mix). Periodized analysis of an
//! orthonormal pair is an orthogonal map, so synthesis is its transpose and
//! each transform's gradient is the other transform.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Haar,
    Db2,
    Db4,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Family::Haar),
            "db2" => Ok(Family::Db2),
            "db4" => Ok(Family::Db4),
            _ => Err(Error::UnsupportedFamily(s.to_string())),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Haar => "haar",
            Family::Db2 => "db2",
            Family::Db4 => "db4",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Circular wrap; non-expansive.
    #[default]
    Periodization,
}

const DB4: [f64; 8] = [
    0.230_377_813_308_896_500_86,
    0.714_846_570_552_915_647_09,
    0.630_880_767_929_858_907_88,
    -0.027_983_769_416_859_854_211,
    -0.187_034_811_719_093_084_08,
    0.030_841_381_835_560_763_627,
    0.032_883_011_666_885_199_735,
    -0.010_597_401_785_069_032_105,
];

/// Analysis low-pass `low` (h) and high-pass `high` (g) of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    pub family: Family,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

pub fn wavelet_filters(family: Family) -> WaveletFilterPair {
    let low: Vec<f64> = match family {
        Family::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        Family::Db2 => {
            let s3 = 3f64.sqrt();
            let d = 4.0 * 2f64.sqrt();
            vec![
                (1.0 + s3) / d,
                (3.0 + s3) / d,
                (3.0 - s3) / d,
                (1.0 - s3) / d,
            ]
        }
        Family::Db4 => DB4.to_vec(),
    };
    // g[k] = (−1)^k h[len − 1 − k]
    let n = low.len();
    let high = (0..n)
        .map(|k| {
            if k % 2 == 0 {
                low[n - 1 - k]
            } else {
                -low[n - 1 - k]
            }
        })
        .collect();
    WaveletFilterPair { family, low, high }
}

impl WaveletFilterPair {
    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    /// Largest level count a length-`len` signal supports: each level needs
    /// an even input at least as long as the filter.
    pub fn max_levels(&self, len: usize) -> usize {
        let mut levels = 0;
        let mut cur = len;
        while cur >= 2 && cur % 2 == 0 && cur >= self.len() {
            levels += 1;
            cur /= 2;
        }
        levels
    }

    fn cast<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        (
            self.low.iter().map(|&v| T::lit(v)).collect(),
            self.high.iter().map(|&v| T::lit(v)).collect(),
        )
    }
}

/// Approximation band at the coarsest level plus detail bands ordered
/// coarsest (level J) to finest (level 1).
#[derive(Debug, Clone)]
pub struct DwtPyramid<T: Real> {
    pub approx: Tensor<T>,
    pub details: Vec<Tensor<T>>,
    pub mode: BoundaryMode,
}

impl<T: Real> DwtPyramid<T> {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Total coefficients per row; equals the signal length.
    pub fn coefficient_len(&self) -> usize {
        self.approx.shape().last().copied().unwrap_or(0)
            + self
                .details
                .iter()
                .map(|d| d.shape().last().copied().unwrap_or(0))
                .sum::<usize>()
    }

    /// All bands in `(A_J, D_J, …, D_1)` order.
    pub fn bands(&self) -> impl Iterator<Item = &Tensor<T>> {
        std::iter::once(&self.approx).chain(self.details.iter())
    }
}

/// Per-row analysis; output rows are `[cA | cD]`, each of length `len / 2`.
fn analyze<T: Real>(x: &[T], len: usize, lo: &[T], hi: &[T]) -> Vec<T> {
    let half = len / 2;
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(len).zip(out.chunks_mut(len)) {
        let (ca, cd) = dst.split_at_mut(half);
        for n in 0..half {
            let mut a = T::zero();
            let mut d = T::zero();
            for (k, (&h, &g)) in lo.iter().zip(hi).enumerate() {
                let v = row[(2 * n + k) % len];
                a += h * v;
                d += g * v;
            }
            ca[n] = a;
            cd[n] = d;
        }
    }
    out
}

/// Per-row synthesis; transpose of [`analyze`].
fn synthesize<T: Real>(packed: &[T], len: usize, lo: &[T], hi: &[T]) -> Vec<T> {
    let half = len / 2;
    let mut out = vec![T::zero(); packed.len()];
    for (src, row) in packed.chunks(len).zip(out.chunks_mut(len)) {
        let (ca, cd) = src.split_at(half);
        for n in 0..half {
            for (k, (&h, &g)) in lo.iter().zip(hi).enumerate() {
                row[(2 * n + k) % len] += h * ca[n] + g * cd[n];
            }
        }
    }
    out
}

fn check_level_input<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    filters: &WaveletFilterPair,
) -> Result<usize> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim(op, "last", "scalar input"))?;
    if len % 2 != 0 {
        return Err(Error::OddLength { op, len });
    }
    if len < filters.len() {
        return Err(Error::InputTooShort {
            op,
            len,
            required: filters.len(),
        });
    }
    Ok(len)
}

/// One analysis level with `[cA | cD]` packed along the last axis.
pub fn dwt_level_packed<T: Real>(x: &Tensor<T>, filters: &WaveletFilterPair) -> Result<Tensor<T>> {
    let len = check_level_input("dwt_level", x, filters)?;
    let (lo, hi) = filters.cast::<T>();
    let out = analyze(x.data(), len, &lo, &hi);
    Ok(Tensor::from_op(out, x.shape().to_vec(), &[x], move |g| {
        vec![Some(synthesize(g, len, &lo, &hi))]
    }))
}

/// Inverse of [`dwt_level_packed`].
pub fn idwt_level_packed<T: Real>(
    packed: &Tensor<T>,
    filters: &WaveletFilterPair,
) -> Result<Tensor<T>> {
    let len = check_level_input("idwt_level", packed, filters)?;
    let (lo, hi) = filters.cast::<T>();
    let out = synthesize(packed.data(), len, &lo, &hi);
    Ok(Tensor::from_op(
        out,
        packed.shape().to_vec(),
        &[packed],
        move |g| vec![Some(analyze(g, len, &lo, &hi))],
    ))
}

/// Single analysis level over the last axis: (…, L) → ((…, L/2), (…, L/2)).
pub fn dwt_level<T: Real>(
    x: &Tensor<T>,
    filters: &WaveletFilterPair,
    _mode: BoundaryMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let packed = dwt_level_packed(x, filters)?;
    let axis = x.ndim() - 1;
    let half = x.shape()[axis] / 2;
    Ok((
        packed.narrow(axis, 0, half)?,
        packed.narrow(axis, half, half)?,
    ))
}

pub fn idwt_level<T: Real>(
    approx: &Tensor<T>,
    detail: &Tensor<T>,
    filters: &WaveletFilterPair,
    _mode: BoundaryMode,
) -> Result<Tensor<T>> {
    if approx.shape() != detail.shape() || approx.ndim() == 0 {
        return Err(Error::PyramidShape(format!(
            "approximation {:?} and detail {:?} differ",
            approx.shape(),
            detail.shape()
        )));
    }
    let packed = Tensor::concat(&[approx, detail], approx.ndim() - 1)?;
    idwt_level_packed(&packed, filters)
}

/// Number of levels supported by a length-`len` signal and the error for
/// asking more.
fn level_error(requested: usize, len: usize, filters: &WaveletFilterPair) -> Error {
    let max = filters.max_levels(len);
    let unit = 1usize << requested.min(usize::BITS as usize - 2);
    let hint = if requested > 0 && len % unit != 0 {
        format!(
            "; right-pad to length {} for {requested} levels",
            len.div_ceil(unit) * unit
        )
    } else {
        String::new()
    };
    Error::Level {
        requested,
        len,
        max,
        hint,
    }
}

/// `levels`-level analysis over the last axis.
pub fn dwt_multi<T: Real>(
    x: &Tensor<T>,
    levels: usize,
    filters: &WaveletFilterPair,
    mode: BoundaryMode,
) -> Result<DwtPyramid<T>> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("dwt_multi", "last", "scalar input"))?;
    if levels == 0 || levels > filters.max_levels(len) {
        return Err(level_error(levels, len, filters));
    }
    let mut details = Vec::with_capacity(levels);
    let mut approx = x.clone();
    for _ in 0..levels {
        let (a, d) = dwt_level(&approx, filters, mode)?;
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(DwtPyramid {
        approx,
        details,
        mode,
    })
}

pub fn idwt_multi<T: Real>(
    pyramid: &DwtPyramid<T>,
    filters: &WaveletFilterPair,
) -> Result<Tensor<T>> {
    if pyramid.details.is_empty() {
        return Err(Error::PyramidShape("no detail levels".into()));
    }
    let lead = &pyramid.approx.shape()[..pyramid.approx.ndim().saturating_sub(1)];
    let mut expect = pyramid.approx.shape().last().copied().unwrap_or(0);
    for (i, d) in pyramid.details.iter().enumerate() {
        let ok = d.ndim() == pyramid.approx.ndim()
            && &d.shape()[..d.ndim() - 1] == lead
            && d.shape()[d.ndim() - 1] == expect;
        if !ok {
            return Err(Error::PyramidShape(format!(
                "detail band {i} has shape {:?}, expected trailing length {expect} with leading {lead:?}",
                d.shape()
            )));
        }
        expect *= 2;
    }
    let mut signal = pyramid.approx.clone();
    for d in &pyramid.details {
        signal = idwt_level(&signal, d, filters, pyramid.mode)?;
    }
    Ok(signal)
}

/// Writes a (C, ·) pyramid as `channel,level,kind,index,value` rows.
pub fn write_coefficients_csv<T: Real>(
    pyramid: &DwtPyramid<T>,
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "channel,level,kind,index,value")?;
    let levels = pyramid.levels();
    let channels = pyramid.approx.shape()[..pyramid.approx.ndim() - 1]
        .iter()
        .product::<usize>();
    for c in 0..channels {
        let bands = std::iter::once((levels, "A", &pyramid.approx)).chain(
            pyramid
                .details
                .iter()
                .enumerate()
                .map(|(i, d)| (levels - i, "D", d)),
        );
        for (level, kind, band) in bands {
            let n = band.shape()[band.ndim() - 1];
            for (i, v) in band.data()[c * n..(c + 1) * n].iter().enumerate() {
                writeln!(out, "{c},{level},{kind},{i},{v}")?;
            }
        }
    }
    Ok(())
}
