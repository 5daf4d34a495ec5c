//! Row-level numeric kernels shared by the tape and the tape-free decoder.
//!
//! Each kernel processes one row at a time with a fixed summation order, so a
//! row's result never depends on how many other rows are processed with it.

use super::Real;
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// `out = x · w (+ bias)` for `x: [k]`, `w: [k × n]` row-major.
pub fn vec_mat<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let n = out.len();
    debug_assert_eq!(w.len(), x.len() * n);
    match bias {
        Some(b) => out.copy_from_slice(b),
        None => out.iter_mut().for_each(|o| *o = T::zero()),
    }
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o = *o + xi * wij;
        }
    }
}

/// Normalises `x` into `out`; returns `(mean, 1/sqrt(var + eps))`.
pub fn layer_norm_row<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) -> (T, T) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + eps).sqrt();
    for (((o, &v), &g), &b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = (v - mean) * rstd * g + b;
    }
    (mean, rstd)
}

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid<T: Real>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

/// Masked softmax of one row. Masked entries are exactly zero.
pub fn softmax_masked_row<T: Real>(logits: &[T], mask: &[bool], out: &mut [T]) -> Result<()> {
    let mut max = T::neg_infinity();
    for (&l, &m) in logits.iter().zip(mask) {
        if m && l > max {
            max = l;
        }
    }
    if max == T::neg_infinity() {
        return Err(Error::FullyMasked { row: 0 });
    }
    let mut total = T::zero();
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { (l - max).exp() } else { T::zero() };
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
    Ok(())
}

pub fn softmax_row<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Log-sum-exp of a non-empty row.
pub fn logsumexp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s = row.iter().map(|&v| (v - max).exp()).sum::<T>();
    max + s.ln()
}
