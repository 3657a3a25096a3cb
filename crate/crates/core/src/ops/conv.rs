//! 2-D cross-correlation and its adjoint (transposed convolution).

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no dilation, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            has_bias: true,
        }
    }

    /// Depthwise: one filter per channel.
    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        ConvSpec::new(channels, channels, kernel)
            .groups(channels)
            .dilation(dilation)
            .padding(dilation * (kernel - 1) / 2)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("convolution channel counts must be positive"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(invalid("convolution kernel extents must be positive"));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(invalid("stride and dilation must be at least 1"));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(invalid(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    fn out_extent(&self, input: usize, kernel: usize, dim: &'static str) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim,
                expected: span,
                actual: padded,
            });
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// Output shape of the forward convolution for `input`.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c() != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: self.in_channels,
                actual: input.c(),
            });
        }
        let oh = self.out_extent(input.h(), self.kernel_h, "height")?;
        let ow = self.out_extent(input.w(), self.kernel_w, "width")?;
        Ok(Shape::new(input.n(), self.out_channels, oh, ow))
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    /// Trainable scalars declared by this convolution.
    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Forward spec whose adjoint is the transposed convolution `self`.
    ///
    /// For a transposed spec, `in_channels` is the channel count of the
    /// transposed op's input.
    pub fn adjoint_forward(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn transpose_weight_shape(&self) -> Shape {
        Shape::new(
            self.in_channels,
            self.out_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn transpose_output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c() != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                dim: "input channels",
                expected: self.in_channels,
                actual: input.c(),
            });
        }
        let extent = |len: usize, k: usize, dim| -> Result<usize> {
            if len == 0 {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    dim,
                    expected: 1,
                    actual: 0,
                });
            }
            let full = self.stride * (len - 1) + self.dilation * (k - 1) + 1;
            if full <= 2 * self.padding {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    dim,
                    expected: 2 * self.padding + 1,
                    actual: full,
                });
            }
            Ok(full - 2 * self.padding)
        };
        Ok(Shape::new(
            input.n(),
            self.out_channels,
            extent(input.h(), self.kernel_h, "height")?,
            extent(input.w(), self.kernel_w, "width")?,
        ))
    }
}

fn check_weight<T: Scalar>(w: &Tensor<T>, expected: Shape, op: &'static str) -> Result<()> {
    let dims = ["out channels", "in channels per group", "kernel height", "kernel width"];
    for (i, name) in dims.iter().enumerate() {
        if w.dims()[i] != expected.0[i] {
            return Err(Error::ShapeMismatch {
                op,
                dim: name,
                expected: expected.0[i],
                actual: w.dims()[i],
            });
        }
    }
    Ok(())
}

fn check_bias<T: Scalar>(
    bias: Option<&Tensor<T>>,
    channels: usize,
    op: &'static str,
) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::ShapeMismatch {
                op,
                dim: "bias length",
                expected: channels,
                actual: b.len(),
            });
        }
        b.ensure_finite(op)?;
    }
    Ok(())
}

/// Range of output columns whose input column `o*stride + offset - pad` lands in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let (s, off, p, il) = (stride as i64, offset as i64, pad as i64, in_len as i64);
    let lo = if p > off { (p - off + s - 1) / s } else { 0 };
    let hi = (il - 1 + p - off).div_euclid(s) + 1;
    let hi = hi.clamp(0, out_len as i64);
    (lo.min(hi) as usize, hi as usize)
}

/// Cross-correlation of `x` with `w`; no validation.
pub(crate) fn conv_forward_raw<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    out_shape: Shape,
) -> Tensor<T> {
    let [n, cin, ih, iw] = x.dims();
    let [_, cout, oh, ow] = out_shape.0;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); out_shape.numel()];
    let col_ranges: Vec<(usize, usize)> =
        (0..kw).map(|b| valid_range(ow, iw, s, b * d, p)).collect();
    for b in 0..n {
        for oc in 0..cout {
            let g = oc / cout_g;
            let obase = (b * cout + oc) * oh * ow;
            let oplane = &mut out[obase..obase + oh * ow];
            if let Some(bias) = bias {
                let bv = bias.data()[oc];
                oplane.iter_mut().for_each(|v| *v = bv);
            }
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let ibase = (b * cin + ic) * ih * iw;
                let iplane = &xd[ibase..ibase + ih * iw];
                for a in 0..kh {
                    let (ylo, yhi) = valid_range(oh, ih, s, a * d, p);
                    for c in 0..kw {
                        let wv = wd[((oc * cin_g + icl) * kh + a) * kw + c];
                        if wv == T::zero() {
                            continue;
                        }
                        let (xlo, xhi) = col_ranges[c];
                        for oy in ylo..yhi {
                            let iy = oy * s + a * d - p;
                            let irow = &iplane[iy * iw..(iy + 1) * iw];
                            let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let shift = xlo + c * d - p;
                                for (o, &i) in orow[xlo..xhi].iter_mut().zip(&irow[shift..]) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    orow[ox] += wv * irow[ox * s + c * d - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("conv output length")
}

/// Adjoint of `conv_forward_raw` with respect to its input: scatters `gy`
/// (shaped like the forward output) into a tensor of `in_shape`.
pub(crate) fn conv_adjoint_raw<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    in_shape: Shape,
) -> Tensor<T> {
    let [n, cin, ih, iw] = in_shape.0;
    let [_, cout, oh, ow] = gy.dims();
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let gd = gy.data();
    let wd = w.data();
    let mut gx = vec![T::zero(); in_shape.numel()];
    let col_ranges: Vec<(usize, usize)> =
        (0..kw).map(|c| valid_range(ow, iw, s, c * d, p)).collect();
    for b in 0..n {
        for oc in 0..cout {
            let g = oc / cout_g;
            let obase = (b * cout + oc) * oh * ow;
            let gplane = &gd[obase..obase + oh * ow];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let ibase = (b * cin + ic) * ih * iw;
                let xplane = &mut gx[ibase..ibase + ih * iw];
                for a in 0..kh {
                    let (ylo, yhi) = valid_range(oh, ih, s, a * d, p);
                    for c in 0..kw {
                        let wv = wd[((oc * cin_g + icl) * kh + a) * kw + c];
                        let (xlo, xhi) = col_ranges[c];
                        for oy in ylo..yhi {
                            let iy = oy * s + a * d - p;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let xrow = &mut xplane[iy * iw..(iy + 1) * iw];
                            if s == 1 {
                                let shift = xlo + c * d - p;
                                for (x, &gv) in xrow[shift..].iter_mut().zip(&grow[xlo..xhi]) {
                                    *x += wv * gv;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    xrow[ox * s + c * d - p] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(in_shape, gx).expect("adjoint output length")
}

/// Gradient of the forward convolution with respect to its weight.
pub(crate) fn conv_weight_grad_raw<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let [n, cin, ih, iw] = x.dims();
    let [_, cout, oh, ow] = gy.dims();
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let xd = x.data();
    let gd = gy.data();
    let wshape = Shape::new(cout, cin_g, kh, kw);
    let mut gw = vec![T::zero(); wshape.numel()];
    let col_ranges: Vec<(usize, usize)> =
        (0..kw).map(|c| valid_range(ow, iw, s, c * d, p)).collect();
    for b in 0..n {
        for oc in 0..cout {
            let g = oc / cout_g;
            let obase = (b * cout + oc) * oh * ow;
            let gplane = &gd[obase..obase + oh * ow];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let ibase = (b * cin + ic) * ih * iw;
                let xplane = &xd[ibase..ibase + ih * iw];
                for a in 0..kh {
                    let (ylo, yhi) = valid_range(oh, ih, s, a * d, p);
                    for c in 0..kw {
                        let (xlo, xhi) = col_ranges[c];
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let iy = oy * s + a * d - p;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let xrow = &xplane[iy * iw..(iy + 1) * iw];
                            if s == 1 {
                                let shift = xlo + c * d - p;
                                acc += grow[xlo..xhi]
                                    .iter()
                                    .zip(&xrow[shift..])
                                    .fold(T::zero(), |a, (&gv, &xv)| a + gv * xv);
                            } else {
                                for ox in xlo..xhi {
                                    acc += grow[ox] * xrow[ox * s + c * d - p];
                                }
                            }
                        }
                        gw[((oc * cin_g + icl) * kh + a) * kw + c] += acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(wshape, gw).expect("weight grad length")
}

/// Per-channel sum over batch and space, shaped `(1, C, 1, 1)`.
pub(crate) fn bias_grad_raw<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = gy.dims();
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += gy.plane(b, ch).iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(Shape::new(1, c, 1, 1), out).expect("bias grad length")
}

/// Standard cross-correlation with stride, padding, dilation and groups.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    check_weight(weight, spec.weight_shape(), "conv2d")?;
    check_bias(bias, spec.out_channels, "conv2d")?;
    x.ensure_finite("conv2d input")?;
    weight.ensure_finite("conv2d weight")?;
    Ok(conv_forward_raw(x, weight, bias, spec, out_shape))
}

/// Transposed convolution: the input-adjoint of `conv2d` under
/// `spec.adjoint_forward()`, plus an optional bias.
pub fn conv2d_transpose<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out_shape = spec.transpose_output_shape(x.shape())?;
    check_weight(weight, spec.transpose_weight_shape(), "conv2d_transpose")?;
    check_bias(bias, spec.out_channels, "conv2d_transpose")?;
    x.ensure_finite("conv2d_transpose input")?;
    weight.ensure_finite("conv2d_transpose weight")?;
    let mut out = conv_adjoint_raw(x, weight, &spec.adjoint_forward(), out_shape);
    if let Some(b) = bias {
        let [n, c, h, w] = out_shape.0;
        let plane = h * w;
        let data = out.data_mut();
        for bn in 0..n {
            for ch in 0..c {
                let bv = b.data()[ch];
                let base = (bn * c + ch) * plane;
                data[base..base + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 1, 5, 6), -1.0, 1.0, &mut rng);
        let spec = ConvSpec::new(1, 1, 3).padding(1).bias(false);
        let mut w = Tensor::zeros(spec.weight_shape());
        w.set([0, 0, 1, 1], 1.0);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pointwise_scale() {
        let x = Tensor::<f32>::ones(Shape::new(1, 1, 3, 3));
        let spec = ConvSpec::new(1, 1, 1).bias(false);
        let w = Tensor::full(spec.weight_shape(), 2.0);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn output_shape_formula() {
        let spec = ConvSpec::new(3, 16, 6).stride(2).padding(2);
        let s = spec.output_shape(Shape::new(1, 3, 256, 256)).unwrap();
        assert_eq!(s, Shape::new(1, 16, 128, 128));
        let spec = ConvSpec::new(3, 16, 7);
        assert!(spec.output_shape(Shape::new(1, 3, 5, 5)).is_err());
    }

    #[test]
    fn transpose_shape() {
        let spec = ConvSpec::new(4, 2, 2).stride(2);
        let s = spec.transpose_output_shape(Shape::new(1, 4, 8, 8)).unwrap();
        assert_eq!(s, Shape::new(1, 2, 16, 16));
    }

    #[test]
    fn transpose_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 4, 4), -1.0, 1.0, &mut rng);
        let spec = ConvSpec::new(1, 1, 1).bias(false);
        let w = Tensor::ones(spec.transpose_weight_shape());
        assert_eq!(conv2d_transpose(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn rejects_bad_weight_and_groups() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 4, 5, 5));
        let spec = ConvSpec::new(4, 4, 3);
        let w = Tensor::zeros(Shape::new(4, 3, 3, 3));
        match conv2d(&x, &spec, &w, None) {
            Err(Error::ShapeMismatch { dim, .. }) => assert_eq!(dim, "in channels per group"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = ConvSpec::new(4, 6, 3).groups(4);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3));
        x.set([0, 0, 1, 1], f64::NAN);
        let spec = ConvSpec::new(1, 1, 1);
        let w = Tensor::ones(spec.weight_shape());
        assert!(matches!(conv2d(&x, &spec, &w, None), Err(Error::NonFinite(_))));
    }
}
