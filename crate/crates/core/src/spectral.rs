//! 2-D DCT basis planes, direct transform and frequency selection.
//!
//! Bases follow `B[u,v](i,j) = cos(pi*u/H*(i+1/2)) * cos(pi*v/W*(j+1/2))`
//! without normalisation constants; [`Normalization::Orthonormal`] scales
//! them to an orthonormal set instead.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Unnormalized,
    Orthonormal,
}

fn axis_scale(k: usize, len: usize, norm: Normalization) -> f64 {
    match norm {
        Normalization::Unnormalized => 1.0,
        Normalization::Orthonormal if k == 0 => (1.0 / len as f64).sqrt(),
        Normalization::Orthonormal => (2.0 / len as f64).sqrt(),
    }
}

/// `cos(pi*k/len*(i+1/2))` for `i in 0..len`.
fn cos_row(k: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| (PI * k as f64 / len as f64 * (i as f64 + 0.5)).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis<T> {
    pub u: usize,
    pub v: usize,
    pub h: usize,
    pub w: usize,
    /// Row-major `h x w` plane.
    pub values: Vec<T>,
}

impl<T: Scalar> DctBasis<T> {
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), self.values.clone()).unwrap()
    }
}

pub fn dct_basis<T: Scalar>(u: usize, v: usize, h: usize, w: usize) -> Result<DctBasis<T>> {
    dct_basis_normalized(u, v, h, w, Normalization::Unnormalized)
}

pub fn dct_basis_normalized<T: Scalar>(
    u: usize,
    v: usize,
    h: usize,
    w: usize,
    norm: Normalization,
) -> Result<DctBasis<T>> {
    if u >= h || v >= w {
        return Err(Error::GridMismatch { u, v, h, w });
    }
    let rows = cos_row(u, h);
    let cols = cos_row(v, w);
    let k = axis_scale(u, h, norm) * axis_scale(v, w, norm);
    let values = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| T::from_f64_lossy(k * r * c)))
        .collect();
    Ok(DctBasis { u, v, h, w, values })
}

/// `(u, v, h, w, normalization)`.
type PlaneKey = (usize, usize, usize, usize, Normalization);

/// Memoises basis planes by index, extent and normalization.
#[derive(Debug, Default, Clone)]
pub struct BasisCache {
    planes: Arc<Mutex<HashMap<PlaneKey, Arc<Vec<f64>>>>>,
}

impl BasisCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get<T: Scalar>(&self, u: usize, v: usize, h: usize, w: usize, norm: Normalization) -> Result<DctBasis<T>> {
        let key = (u, v, h, w, norm);
        let cached = self.planes.lock().unwrap().get(&key).cloned();
        let plane = match cached {
            Some(p) => p,
            None => {
                let b = dct_basis_normalized::<f64>(u, v, h, w, norm)?;
                let p = Arc::new(b.values);
                self.planes.lock().unwrap().entry(key).or_insert(p).clone()
            }
        };
        Ok(DctBasis {
            u,
            v,
            h,
            w,
            values: plane.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.planes.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spectrum `f[u,v] = sum_ij x[i,j] B[u,v](i,j)` of every `(n, c)` plane.
///
/// Evaluated separably: rows first, then columns.
pub fn dct2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    dct2d_normalized(x, Normalization::Unnormalized)
}

pub fn dct2d_normalized<T: Scalar>(x: &Tensor<T>, norm: Normalization) -> Result<Tensor<T>> {
    x.ensure_finite("dct2d")?;
    let [n, c, h, w] = x.dims();
    let row_cos: Vec<Vec<f64>> = (0..h).map(|u| cos_row(u, h)).collect();
    let col_cos: Vec<Vec<f64>> = (0..w).map(|v| cos_row(v, w)).collect();
    let mut out = Tensor::zeros(x.shape());
    let mut tmp = vec![0.0f64; h * w];
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            // tmp[i, v] = sum_j x[i,j] cos_v(j)
            for i in 0..h {
                for (v, cv) in col_cos.iter().enumerate() {
                    tmp[i * w + v] = (0..w).map(|j| p[i * w + j].as_f64() * cv[j]).sum();
                }
            }
            for (u, cu) in row_cos.iter().enumerate() {
                for v in 0..w {
                    let s: f64 = (0..h).map(|i| tmp[i * w + v] * cu[i]).sum();
                    let k = axis_scale(u, h, norm) * axis_scale(v, w, norm);
                    out.set([b, ch, u, v], T::from_f64_lossy(k * s));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of the unnormalised transform, dividing each coefficient by the
/// basis energy `<B[u,v], B[u,v]>` (`HW`, `HW/2` or `HW/4`).
pub fn idct2d<T: Scalar>(spectrum: &Tensor<T>) -> Result<Tensor<T>> {
    spectrum.ensure_finite("idct2d")?;
    let [n, c, h, w] = spectrum.dims();
    let energy = |u: usize, v: usize| {
        let hw = (h * w) as f64;
        match (u == 0, v == 0) {
            (true, true) => hw,
            (true, false) | (false, true) => hw / 2.0,
            (false, false) => hw / 4.0,
        }
    };
    let row_cos: Vec<Vec<f64>> = (0..h).map(|u| cos_row(u, h)).collect();
    let col_cos: Vec<Vec<f64>> = (0..w).map(|v| cos_row(v, w)).collect();
    let mut out = Tensor::zeros(spectrum.shape());
    let mut tmp = vec![0.0f64; h * w];
    for b in 0..n {
        for ch in 0..c {
            let f = spectrum.plane(b, ch);
            // tmp[i, v] = sum_u f[u,v]/E cos_u(i)
            for i in 0..h {
                for v in 0..w {
                    tmp[i * w + v] = (0..h)
                        .map(|u| f[u * w + v].as_f64() / energy(u, v) * row_cos[u][i])
                        .sum();
                }
            }
            for i in 0..h {
                let row = &tmp[i * w..(i + 1) * w];
                for j in 0..w {
                    let s: f64 = row.iter().zip(&col_cos).map(|(t, c)| t * c[j]).sum();
                    out.set([b, ch, i, j], T::from_f64_lossy(s));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum FrequencyPolicy {
    /// Anti-diagonal zigzag order, skipping the DC term.
    #[default]
    ZigzagSkipDc,
    Custom(Vec<(usize, usize)>),
}


#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrequencySet {
    pub indices: Vec<(usize, usize)>,
    /// Grid the indices were validated against.
    pub grid: (usize, usize),
    pub policy: FrequencyPolicy,
}

impl FrequencySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// JPEG-style zigzag over an `h x w` grid, starting at `(0, 0)`.
pub fn zigzag(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(h * w);
    if h == 0 || w == 0 {
        return out;
    }
    for s in 0..(h + w - 1) {
        let lo = s.saturating_sub(w - 1);
        let hi = s.min(h - 1);
        if s % 2 == 1 {
            for u in lo..=hi {
                out.push((u, s - u));
            }
        } else {
            for u in (lo..=hi).rev() {
                out.push((u, s - u));
            }
        }
    }
    out
}

pub fn select_frequencies(n: usize, h: usize, w: usize, policy: &FrequencyPolicy) -> Result<FrequencySet> {
    let indices = match policy {
        FrequencyPolicy::ZigzagSkipDc => {
            if n == 0 || n + 1 > h * w {
                return Err(invalid(format!(
                    "zigzag selection of {n} frequencies needs 1 <= n <= {}",
                    (h * w).saturating_sub(1)
                )));
            }
            zigzag(h, w).into_iter().skip(1).take(n).collect()
        }
        FrequencyPolicy::Custom(list) => {
            if list.len() != n {
                return Err(invalid(format!(
                    "custom frequency list has {} entries, expected {n}",
                    list.len()
                )));
            }
            for (i, &(u, v)) in list.iter().enumerate() {
                if u >= h || v >= w {
                    return Err(Error::GridMismatch { u, v, h, w });
                }
                if list[..i].contains(&(u, v)) {
                    return Err(invalid(format!("duplicate frequency index ({u},{v})")));
                }
            }
            list.clone()
        }
    };
    Ok(FrequencySet {
        indices,
        grid: (h, w),
        policy: policy.clone(),
    })
}
