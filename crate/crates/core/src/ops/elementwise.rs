use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseKind {
    Add,
    Mul,
    Relu,
    Sigmoid,
}

/// Checks that `b` may be broadcast against `a`.
///
/// Batch and channel extents of `b` are either 1 or equal to `a`'s; the
/// spatial extents are either equal to `a`'s or both 1. That covers the
/// spatial-mask `(N,1,H,W)` and channel-gate `(N,C,1,1)` patterns.
pub fn check_broadcast(a: Shape, b: Shape, op: &'static str) -> Result<()> {
    let ok_n = b.n() == a.n() || b.n() == 1;
    let ok_c = b.c() == a.c() || b.c() == 1;
    let ok_hw = (b.h() == a.h() && b.w() == a.w()) || (b.h() == 1 && b.w() == 1);
    if ok_n && ok_c && ok_hw {
        Ok(())
    } else {
        Err(Error::Incompatible {
            op,
            lhs: a.0,
            rhs: b.0,
        })
    }
}

/// Calls `f(a_index_range_start, b_plane_offset, b_is_plane)` for every `(n, c)` plane of `a`.
#[inline]
fn for_each_plane(a: Shape, b: Shape, mut f: impl FnMut(usize, usize, bool)) {
    let plane = a.plane();
    let b_full = b.h() == a.h() && b.w() == a.w();
    let b_plane = if b_full { plane } else { 1 };
    for n in 0..a.n() {
        let nb = if b.n() == 1 { 0 } else { n };
        for c in 0..a.c() {
            let cb = if b.c() == 1 { 0 } else { c };
            f((n * a.c() + c) * plane, (nb * b.c() + cb) * b_plane, b_full);
        }
    }
}

pub(crate) fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    check_broadcast(a.shape(), b.shape(), op)?;
    let plane = a.shape().plane();
    let mut out = a.clone();
    let bd = b.data();
    let od = out.data_mut();
    for_each_plane(a.shape(), b.shape(), |ao, bo, full| {
        let dst = &mut od[ao..ao + plane];
        if full {
            for (o, &bv) in dst.iter_mut().zip(&bd[bo..bo + plane]) {
                *o = f(*o, bv);
            }
        } else {
            let bv = bd[bo];
            for o in dst.iter_mut() {
                *o = f(*o, bv);
            }
        }
    });
    Ok(out)
}

/// Sums `g` (shaped like `a`) down to `b_shape` along broadcast axes, weighting by `w` when given.
pub(crate) fn reduce_to<T: Scalar>(
    g: &Tensor<T>,
    weight: Option<&Tensor<T>>,
    b_shape: Shape,
) -> Tensor<T> {
    let a = g.shape();
    let plane = a.plane();
    let mut out = Tensor::zeros(b_shape);
    let gd = g.data();
    let wd = weight.map(|w| w.data());
    let od = out.data_mut();
    for_each_plane(a, b_shape, |ao, bo, full| {
        let gp = &gd[ao..ao + plane];
        match (full, wd) {
            (true, None) => {
                for (o, &v) in od[bo..bo + plane].iter_mut().zip(gp) {
                    *o += v;
                }
            }
            (true, Some(w)) => {
                let wp = &w[ao..ao + plane];
                for ((o, &v), &x) in od[bo..bo + plane].iter_mut().zip(gp).zip(wp) {
                    *o += v * x;
                }
            }
            (false, None) => od[bo] += gp.iter().copied().sum::<T>(),
            (false, Some(w)) => {
                let wp = &w[ao..ao + plane];
                od[bo] += gp.iter().zip(wp).fold(T::zero(), |s, (&v, &x)| s + v * x);
            }
        }
    });
    out
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Element-wise add/mul (with restricted broadcasting of `b`) or unary relu/sigmoid.
pub fn pointwise<T: Scalar>(
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
    kind: PointwiseKind,
) -> Result<Tensor<T>> {
    match (kind, b) {
        (PointwiseKind::Add, Some(b)) => broadcast_binary(a, b, "add", |x, y| x + y),
        (PointwiseKind::Mul, Some(b)) => broadcast_binary(a, b, "mul", |x, y| x * y),
        (PointwiseKind::Relu, None) => Ok(a.map(|v| v.max(T::zero()))),
        (PointwiseKind::Sigmoid, None) => Ok(a.map(sigmoid)),
        (k, _) => Err(invalid(format!("{k:?} called with the wrong operand count"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_of_zero() {
        let z = Tensor::<f64>::zeros(Shape::new(1, 2, 3, 3));
        let s = pointwise(&z, None, PointwiseKind::Sigmoid).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 4), vec![-30.0, -5.0, 5.0, 30.0]).unwrap();
        let s = pointwise(&x, None, PointwiseKind::Sigmoid).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn relu_of_negative() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 2, 2), -3.0);
        let r = pointwise(&x, None, PointwiseKind::Relu).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn add_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Shape::new(2, 3, 4, 4);
        let a = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let ab = pointwise(&a, Some(&b), PointwiseKind::Add).unwrap();
        let ba = pointwise(&b, Some(&a), PointwiseKind::Add).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn broadcast_patterns() {
        let a = Tensor::<f64>::ones(Shape::new(2, 3, 4, 4));
        let mask = Tensor::full(Shape::new(1, 1, 4, 4), 2.0);
        let gate = Tensor::full(Shape::new(2, 3, 1, 1), 3.0);
        let m = pointwise(&a, Some(&mask), PointwiseKind::Mul).unwrap();
        assert!(m.data().iter().all(|&v| v == 2.0));
        let g = pointwise(&a, Some(&gate), PointwiseKind::Mul).unwrap();
        assert!(g.data().iter().all(|&v| v == 3.0));
        let bad = Tensor::ones(Shape::new(1, 1, 4, 1));
        assert!(pointwise(&a, Some(&bad), PointwiseKind::Add).is_err());
        let bad = Tensor::ones(Shape::new(1, 2, 1, 1));
        assert!(pointwise(&a, Some(&bad), PointwiseKind::Add).is_err());
    }

    #[test]
    fn wrong_arity() {
        let a = Tensor::<f64>::ones(Shape::new(1, 1, 1, 1));
        assert!(pointwise(&a, None, PointwiseKind::Add).is_err());
        assert!(pointwise(&a, Some(&a), PointwiseKind::Relu).is_err());
    }
}
