//! Synthetic aligned infrared/visible pairs.
//!
//! Every pair shares one random scene of soft-edged disks on a sloped
//! background. The visible image adds per-channel colour ramps and a fine
//! stripe texture; the infrared image is a box-blurred grey rendition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DataSpec {
    pub size: usize,
    pub count: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec { size: 64, count: 4 }
    }
}

/// A stack of paired images: `(count,1,s,s)` infrared and `(count,3,s,s)` visible.
#[derive(Debug, Clone)]
pub struct PairedImages<T> {
    pub infrared: Tensor<T>,
    pub visible: Tensor<T>,
}

const BLUR_RADIUS: usize = 3;

fn scene(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let (a, b, c) = (rng.gen_range(0.1..0.3), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let disks: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.2..0.8) * s,
                rng.gen_range(0.2..0.8) * s,
                rng.gen_range(0.08..0.22) * s,
                rng.gen_range(0.3..0.6),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / s, y as f64 / s);
            let mut v = a + b * fx + c * fy;
            for &(cx, cy, r, level) in &disks {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let edge = 1.0 / (1.0 + ((d - r) / 1.5).exp());
                v += level * edge;
            }
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

fn box_blur(plane: &[f64], size: usize, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(size - 1));
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(size - 1));
            let mut acc = 0.0;
            for yy in y0..=y1 {
                acc += plane[yy * size + x0..=yy * size + x1].iter().sum::<f64>();
            }
            out[y * size + x] = acc / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }
    out
}

pub fn synthetic_pairs<T: Scalar>(spec: DataSpec, seed: u64) -> Result<PairedImages<T>> {
    if spec.size < 8 || spec.count == 0 {
        return Err(invalid(format!(
            "synthetic data needs size >= 8 and count >= 1, got {}x{}",
            spec.size, spec.count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.size;
    let plane = s * s;
    let mut ir = Vec::with_capacity(spec.count * plane);
    let mut vis = Vec::with_capacity(spec.count * 3 * plane);
    for _ in 0..spec.count {
        let base = scene(s, &mut rng);
        ir.extend(box_blur(&base, s, BLUR_RADIUS).into_iter().map(T::from_f64_lossy));
        let freq = rng.gen_range(0.3..0.5) * std::f64::consts::PI * 2.0;
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (ca, sa) = (angle.cos(), angle.sin());
        for _ in 0..3 {
            let (gx, gy) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            for y in 0..s {
                for x in 0..s {
                    let (fx, fy) = (x as f64 / s as f64, y as f64 / s as f64);
                    let texture = 0.08 * (freq * (ca * x as f64 + sa * y as f64)).sin();
                    let v = 0.8 * base[y * s + x] + 0.1 + gx * fx + gy * fy + texture;
                    vis.push(T::from_f64_lossy(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Ok(PairedImages {
        infrared: Tensor::from_vec(Shape::new(spec.count, 1, s, s), ir)?,
        visible: Tensor::from_vec(Shape::new(spec.count, 3, s, s), vis)?,
    })
}

impl<T: Scalar> PairedImages<T> {
    pub fn len(&self) -> usize {
        self.infrared.shape().n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items `start..start+len` (wrapping) as a batch.
    pub fn batch(&self, start: usize, len: usize) -> (Tensor<T>, Tensor<T>) {
        let take = |t: &Tensor<T>| {
            let item = t.shape().c() * t.shape().plane();
            let mut data = Vec::with_capacity(len * item);
            for k in 0..len {
                let i = (start + k) % self.len();
                data.extend_from_slice(&t.data()[i * item..(i + 1) * item]);
            }
            let s = t.shape();
            Tensor::from_vec(Shape::new(len, s.c(), s.h(), s.w()), data).unwrap()
        };
        (take(&self.infrared), take(&self.visible))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dct2d;

    fn high_band_energy(plane: &[f64], s: usize) -> f64 {
        let t = Tensor::from_vec(Shape::new(1, 1, s, s), plane.to_vec()).unwrap();
        let d = dct2d(&t).unwrap();
        let mut hi = 0.0;
        let mut all = 0.0;
        for u in 0..s {
            for v in 0..s {
                let e = d.at([0, 0, u, v]).powi(2);
                if u + v > 0 {
                    all += e;
                    if u + v >= s / 2 {
                        hi += e;
                    }
                }
            }
        }
        hi / all
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_pairs::<f64>(DataSpec { size: 32, count: 2 }, 5).unwrap();
        let b = synthetic_pairs::<f64>(DataSpec { size: 32, count: 2 }, 5).unwrap();
        assert_eq!(a.infrared, b.infrared);
        assert_eq!(a.visible, b.visible);
        assert!(a.visible.data().iter().chain(a.infrared.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn visible_carries_more_high_frequency_energy() {
        let p = synthetic_pairs::<f64>(DataSpec { size: 32, count: 3 }, 11).unwrap();
        for n in 0..3 {
            let ir = high_band_energy(p.infrared.plane(n, 0), 32);
            let vis = high_band_energy(p.visible.plane(n, 1), 32);
            assert!(vis > 2.0 * ir, "item {n}: vis {vis} ir {ir}");
        }
    }

    #[test]
    fn batches_wrap() {
        let p = synthetic_pairs::<f32>(DataSpec { size: 8, count: 3 }, 1).unwrap();
        let (i, v) = p.batch(2, 2);
        assert_eq!(i.shape(), Shape::new(2, 1, 8, 8));
        assert_eq!(v.shape(), Shape::new(2, 3, 8, 8));
        assert_eq!(i.plane(1, 0), p.infrared.plane(0, 0));
    }
}
