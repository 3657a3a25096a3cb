//! Dense NCHW tensor.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Scalar};

/// Extents in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn with_c(&self, c: usize) -> Self {
        Shape([self.n(), c, self.h(), self.w()])
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    /// Parses `NxCxHxW`.
    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(['x', 'X', ','])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| invalid(format!("cannot parse shape `{s}`")))?;
        match dims.as_slice() {
            [n, c, h, w] => Ok(Shape([*n, *c, *h, *w])),
            _ => Err(invalid(format!("shape `{s}` must have 4 extents"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(invalid(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::SCALAR, v)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| lit(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([a, b, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape.0;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Contiguous `(h, w)` plane for batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::Incompatible {
                op: "reshape",
                lhs: self.shape.0,
                rhs: shape.0,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn expect_shape(&self, shape: Shape, op: &'static str) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(Error::Incompatible {
                op,
                lhs: self.shape.0,
                rhs: shape.0,
            })
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape.0;
        if start + len > c {
            return Err(Error::ShapeMismatch {
                op: "narrow_channels",
                dim: "channels",
                expected: c,
                actual: start + len,
            });
        }
        let p = h * w;
        let mut data = Vec::with_capacity(n * len * p);
        for b in 0..n {
            let base = (b * c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor {
            shape: Shape([n, len, h, w]),
            data,
        })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape.0;
        for p in parts {
            let [pn, _, ph, pw] = p.shape.0;
            if pn != n || ph != h || pw != w {
                return Err(Error::Incompatible {
                    op: "concat_channels",
                    lhs: first.shape.0,
                    rhs: p.shape.0,
                });
            }
        }
        let c: usize = parts.iter().map(|p| p.shape.c()).sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape.c();
                let base = b * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Ok(Tensor {
            shape: Shape([n, c, h, w]),
            data,
        })
    }
}

/// `round(alpha * c)` with halves rounded up; both sides must be non-empty.
pub fn split_point(c: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("split ratio {alpha} outside (0,1)")));
    }
    let k = (alpha * c as f64 + 0.5).floor() as usize;
    if k == 0 || k >= c {
        return Err(invalid(format!(
            "split of {c} channels at ratio {alpha} leaves an empty side"
        )));
    }
    Ok(k)
}

/// Splits channels into `[0, round(alpha*C))` and the remainder.
pub fn channel_split<T: Scalar>(x: &Tensor<T>, alpha: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = x.shape().c();
    let k = split_point(c, alpha)?;
    Ok((x.narrow_channels(0, k)?, x.narrow_channels(k, c - k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_rounding() {
        assert_eq!(split_point(64, 0.5).unwrap(), 32);
        assert_eq!(split_point(10, 0.25).unwrap(), 3);
        assert!(split_point(4, 0.1).is_err());
        assert!(split_point(4, 0.9).is_err());
        assert!(split_point(4, 1.0).is_err());
    }

    #[test]
    fn split_then_concat_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::rand_uniform(Shape::new(2, 10, 3, 4), -1.0, 1.0, &mut rng);
        let (a, b) = channel_split(&x, 0.25).unwrap();
        assert_eq!(a.shape().c(), 3);
        assert_eq!(b.shape().c(), 7);
        let y = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn shape_parse() {
        let s: Shape = "1x16x64x64".parse().unwrap();
        assert_eq!(s, Shape::new(1, 16, 64, 64));
        assert!("1x2x3".parse::<Shape>().is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }
}
