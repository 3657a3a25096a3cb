//! Complementary patch masks over the last-stage feature map.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_RATIO: f64 = 0.3;
pub const DEFAULT_PATCH: usize = 4;

/// Two disjoint binary planes; 1 marks a hidden position.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub h: usize,
    pub w: usize,
    pub patch: usize,
    pub ratio: f64,
    pub mask_i: Vec<u8>,
    pub mask_v: Vec<u8>,
}

/// Number of whole patches selected: `round(ratio * grid cells)`, halves up.
pub fn selected_patches(h: usize, w: usize, ratio: f64, patch: usize) -> usize {
    let cells = (h / patch) * (w / patch);
    (ratio * cells as f64 + 0.5).floor() as usize
}

pub fn sample_complementary_masks(h: usize, w: usize, ratio: f64, patch: usize, seed: u64) -> Result<MaskPair> {
    sample_complementary_masks_split(h, w, ratio, patch, 0.5, seed)
}

/// Selects `round(ratio * cells)` distinct `patch x patch` cells and hands
/// each to the infrared mask with probability `split_ir`, otherwise to the
/// visible one. Both masks are kept non-empty.
pub fn sample_complementary_masks_split(
    h: usize,
    w: usize,
    ratio: f64,
    patch: usize,
    split_ir: f64,
    seed: u64,
) -> Result<MaskPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("mask ratio {ratio} outside (0,1)")));
    }
    if !(0.0..=1.0).contains(&split_ir) {
        return Err(invalid(format!("mask split {split_ir} outside [0,1]")));
    }
    if patch == 0 {
        return Err(invalid("mask patch size must be positive"));
    }
    let (gh, gw) = (h / patch, w / patch);
    let cells = gh * gw;
    let k = selected_patches(h, w, ratio, patch);
    if k < 2 {
        return Err(invalid(format!(
            "ratio {ratio} over {cells} patches selects {k}; need at least 2 to split between modalities"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, cells, k).into_vec();
    let mut to_ir: Vec<bool> = chosen.iter().map(|_| rng.gen_bool(split_ir)).collect();
    if to_ir.iter().all(|&b| b) || to_ir.iter().all(|&b| !b) {
        let flip = rng.gen_range(0..k);
        to_ir[flip] = !to_ir[flip];
    }
    let mut mask_i = vec![0u8; h * w];
    let mut mask_v = vec![0u8; h * w];
    for (&cell, &ir) in chosen.iter().zip(&to_ir) {
        let (py, px) = (cell / gw, cell % gw);
        let dst = if ir { &mut mask_i } else { &mut mask_v };
        for y in py * patch..(py + 1) * patch {
            for x in px * patch..(px + 1) * patch {
                dst[y * w + x] = 1;
            }
        }
    }
    Ok(MaskPair {
        h,
        w,
        patch,
        ratio,
        mask_i,
        mask_v,
    })
}

impl MaskPair {
    /// Count of positions hidden in either modality.
    pub fn coverage(&self) -> usize {
        self.mask_i.iter().zip(&self.mask_v).filter(|(&a, &b)| a | b == 1).count()
    }

    pub fn is_disjoint(&self) -> bool {
        self.mask_i.iter().zip(&self.mask_v).all(|(&a, &b)| a & b == 0)
    }

    /// `(1,1,h,w)` 0/1 tensors for `(infrared, visible)`.
    pub fn to_tensors<T: Scalar>(&self) -> (Tensor<T>, Tensor<T>) {
        let conv = |m: &[u8]| {
            Tensor::from_vec(
                Shape::new(1, 1, self.h, self.w),
                m.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect(),
            )
            .unwrap()
        };
        (conv(&self.mask_i), conv(&self.mask_v))
    }

    fn keep<T: Scalar>(&self, m: &[u8]) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(1, 1, self.h, self.w),
            m.iter().map(|&v| if v == 1 { T::zero() } else { T::one() }).collect(),
        )
        .unwrap()
    }

    fn check_extent(&self, s: Shape) -> Result<()> {
        if s.h() != self.h || s.w() != self.w {
            return Err(Error::Incompatible {
                op: "apply_masks",
                lhs: s.0,
                rhs: [1, 1, self.h, self.w],
            });
        }
        Ok(())
    }
}

fn zero_where<T: Scalar>(x: &Tensor<T>, mask: &[u8]) -> Tensor<T> {
    let plane = x.shape().plane();
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(plane) {
        for (v, &m) in chunk.iter_mut().zip(mask) {
            if m == 1 {
                *v = T::zero();
            }
        }
    }
    out
}

/// Zeroes infrared features under `mask_i` and visible ones under `mask_v`.
pub fn apply_masks<T: Scalar>(
    feat_i: &Tensor<T>,
    feat_v: &Tensor<T>,
    masks: &MaskPair,
) -> Result<(Tensor<T>, Tensor<T>)> {
    masks.check_extent(feat_i.shape())?;
    masks.check_extent(feat_v.shape())?;
    Ok((zero_where(feat_i, &masks.mask_i), zero_where(feat_v, &masks.mask_v)))
}

/// Recorded variant of [`apply_masks`].
pub fn apply_masks_graph<T: Scalar>(
    g: &mut Graph<T>,
    feat_i: NodeId,
    feat_v: NodeId,
    masks: &MaskPair,
) -> Result<(NodeId, NodeId)> {
    masks.check_extent(g.shape(feat_i))?;
    masks.check_extent(g.shape(feat_v))?;
    let ki = g.input(masks.keep(&masks.mask_i))?;
    let kv = g.input(masks.keep(&masks.mask_v))?;
    Ok((g.mul(feat_i, ki)?, g.mul(feat_v, kv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_percent_of_64x64() {
        let m = sample_complementary_masks(64, 64, 0.3, 4, 1).unwrap();
        assert_eq!(selected_patches(64, 64, 0.3, 4), 77);
        assert_eq!(m.coverage(), 1232);
        assert!(m.is_disjoint());
    }

    #[test]
    fn too_few_patches() {
        assert!(sample_complementary_masks(8, 8, 0.3, 4, 0).is_err());
        assert!(sample_complementary_masks(8, 8, 0.3, 2, 0).is_ok());
    }

    #[test]
    fn both_sides_non_empty_even_with_lopsided_split() {
        let m = sample_complementary_masks_split(16, 16, 0.3, 2, 1.0, 3).unwrap();
        assert!(m.mask_i.contains(&1) && m.mask_v.contains(&1));
    }

    #[test]
    fn apply_masks_contract() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = sample_complementary_masks(8, 8, 0.3, 1, 5).unwrap();
        let s = Shape::new(2, 3, 8, 8);
        let fi = Tensor::<f32>::rand_uniform(s, 0.5, 1.0, &mut rng);
        let fv = Tensor::<f32>::rand_uniform(s, 0.5, 1.0, &mut rng);
        let (oi, ov) = apply_masks(&fi, &fv, &m).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for p in 0..64 {
                    let (y, x) = (p / 8, p % 8);
                    let idx = [b, c, y, x];
                    if m.mask_i[p] == 1 {
                        assert_eq!(oi.at(idx), 0.0);
                        assert_eq!(ov.at(idx).to_bits(), fv.at(idx).to_bits());
                    } else if m.mask_v[p] == 1 {
                        assert_eq!(ov.at(idx), 0.0);
                        assert_eq!(oi.at(idx).to_bits(), fi.at(idx).to_bits());
                    } else {
                        assert_eq!(oi.at(idx).to_bits(), fi.at(idx).to_bits());
                        assert_eq!(ov.at(idx).to_bits(), fv.at(idx).to_bits());
                    }
                }
            }
        }
        let bad = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 8));
        assert!(apply_masks(&bad, &bad, &m).is_err());
    }
}
