//! Forward kernels shared by the autodiff graph and by direct callers.

use super::mask::{MaskMatrix, MaskMode};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Offset added to masked logits in additive mode. Finite so that gradients
/// stay finite.
pub const MASK_OFFSET: f64 = -1e9;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    let (m, k) = a.shape2();
    let n = b.dims()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o = *o + x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax. Entries equal to negative infinity act as masked
/// positions; a row made entirely of them is rejected.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.shape2();
    let mut out = m.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        softmax_in_place(row).ok_or(Error::FullyMaskedRow { row: i })?;
    }
    Ok(out)
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) -> Option<()> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return None;
    }
    let mut z = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z = z + *x;
    }
    for x in row.iter_mut() {
        *x = *x / z;
    }
    Some(())
}

/// Applies `mask` to `logits` according to `mode`, without the softmax.
pub fn apply_mask<T: Scalar>(
    logits: &Tensor<T>,
    mask: &MaskMatrix,
    mode: MaskMode,
) -> Result<Tensor<T>> {
    let (r, c) = logits.shape2();
    if mask.dims() != (r, c) {
        return Err(Error::Shape {
            op: "masked_softmax",
            lhs: vec![r, c],
            rhs: vec![mask.rows(), mask.cols()],
        });
    }
    let mut out = logits.clone();
    match mode {
        MaskMode::Additive => {
            if let Some(row) = mask.first_empty_row() {
                return Err(Error::FullyMaskedRow { row });
            }
            let offset = T::from_f64(MASK_OFFSET);
            for (x, &b) in out.data_mut().iter_mut().zip(mask.bits()) {
                // unmasked entries are left untouched so an all-ones mask is a no-op
                if b == 0 {
                    *x = *x + offset;
                }
            }
        }
        MaskMode::Multiplicative => {
            for (x, &b) in out.data_mut().iter_mut().zip(mask.bits()) {
                *x = *x * T::from_f64(b as f64);
            }
        }
    }
    Ok(out)
}

pub fn masked_softmax<T: Scalar>(
    logits: &Tensor<T>,
    mask: &MaskMatrix,
    mode: MaskMode,
) -> Result<Tensor<T>> {
    softmax_rows(&apply_mask(logits, mask, mode)?)
}

/// Normalized rows and their inverse standard deviations (saved for backward).
pub(crate) fn normalize_rows<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let (r, c) = x.shape2();
    let n = T::from_f64(c as f64);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = &mut xhat.data_mut()[i * c..(i + 1) * c];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / n;
        let s = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv_std.push(s);
    }
    (xhat, inv_std)
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (_, c) = x.shape2();
    if gain.len() != c || bias.len() != c {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.dims().to_vec(),
            rhs: gain.dims().to_vec(),
        });
    }
    if eps <= T::zero() {
        return Err(Error::contract("layer_norm eps must be positive"));
    }
    let (mut y, _) = normalize_rows(x, eps);
    affine_rows(&mut y, gain.data(), bias.data());
    Ok(y)
}

fn affine_rows<T: Scalar>(y: &mut Tensor<T>, gain: &[T], bias: &[T]) {
    let c = gain.len();
    for (k, v) in y.data_mut().iter_mut().enumerate() {
        let j = k % c;
        *v = *v * gain[j] + bias[j];
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
