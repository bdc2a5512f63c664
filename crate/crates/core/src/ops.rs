//! Elementwise and structural tensor operations.
//!
//! Every operation comes as a pure forward kernel plus a matching backward
//! kernel. The autodiff tape and the inference-only code paths call the
//! same functions, so training and deployment arithmetic are identical.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of relu given the input and upstream gradient. The kink at
/// zero routes no gradient.
pub fn d_relu(x: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert!(x.same_shape(dy));
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new_unchecked(x.shape().to_vec(), data)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        // Rearranged for numerical stability at large negative inputs.
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradient of sigmoid in terms of its *output* `y`: dy * y * (1 - y).
pub fn d_sigmoid(y: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert!(y.same_shape(dy));
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| g * yv * (1.0 - yv))
        .collect();
    Tensor::new_unchecked(y.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::new_unchecked(a.shape().to_vec(), data))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::shape("mul", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::new_unchecked(a.shape().to_vec(), data))
}

pub fn scale(x: &Tensor, c: Real) -> Tensor {
    x.map(|v| v * c)
}

/// In-place accumulation `acc += t`, used by backward sweeps.
pub fn accumulate(acc: &mut Tensor, t: &Tensor) {
    debug_assert!(acc.same_shape(t));
    for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
        *a += b;
    }
}

/// Concatenation along the first axis; trailing dimensions must match.
pub fn concat0(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != b.rank() || a.rank() == 0 || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape("concat0", a.shape(), b.shape()));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::new_unchecked(shape, data))
}

/// Splits an upstream gradient back into the two concat inputs.
pub fn d_concat0(dy: &Tensor, a_len: usize) -> (Tensor, Tensor, usize) {
    let total0 = dy.shape()[0];
    let per = dy.len() / total0;
    let split = a_len * per;
    let mut sa = dy.shape().to_vec();
    sa[0] = a_len;
    let mut sb = dy.shape().to_vec();
    sb[0] = total0 - a_len;
    let da = Tensor::new_unchecked(sa, dy.data()[..split].to_vec());
    let db = Tensor::new_unchecked(sb, dy.data()[split..].to_vec());
    (da, db, split)
}

/// Nearest-neighbour upsampling of a `[C, H, W, D]` map by 2 in each
/// spatial dimension.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let c = x.channels()?;
    let [h, w, d] = x.spatial()?;
    let (h2, w2, d2) = (2 * h, 2 * w, 2 * d);
    let mut out = vec![0.0; c * h2 * w2 * d2];
    let xs = x.data();
    for ci in 0..c {
        for oh in 0..h2 {
            for ow in 0..w2 {
                let src_row = ((ci * h + oh / 2) * w + ow / 2) * d;
                let dst_row = ((ci * h2 + oh) * w2 + ow) * d2;
                for od in 0..d2 {
                    out[dst_row + od] = xs[src_row + od / 2];
                }
            }
        }
    }
    Ok(Tensor::new_unchecked(vec![c, h2, w2, d2], out))
}

/// Backward of [`upsample2x`]: each source voxel collects the gradients of
/// its eight copies.
pub fn d_upsample2x(dy: &Tensor) -> Tensor {
    let c = dy.shape()[0];
    let (h2, w2, d2) = (dy.shape()[1], dy.shape()[2], dy.shape()[3]);
    let (h, w, d) = (h2 / 2, w2 / 2, d2 / 2);
    let mut dx = vec![0.0; c * h * w * d];
    let g = dy.data();
    for ci in 0..c {
        for oh in 0..h2 {
            for ow in 0..w2 {
                let src_row = ((ci * h + oh / 2) * w + ow / 2) * d;
                let dst_row = ((ci * h2 + oh) * w2 + ow) * d2;
                for od in 0..d2 {
                    dx[src_row + od / 2] += g[dst_row + od];
                }
            }
        }
    }
    Tensor::new_unchecked(vec![c, h, w, d], dx)
}

/// Dense layer `y = W x + b` with `x: [n]`, `W: [m, n]`, `b: [m]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() != 1 || b.rank() != 1 {
        return Err(Error::shape("linear", w.shape(), x.shape()));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.len() != n || b.len() != m {
        return Err(Error::shape("linear", w.shape(), x.shape()));
    }
    let mut out = b.data().to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.data()[i * n..(i + 1) * n];
        *o += row.iter().zip(x.data()).map(|(&wv, &xv)| wv * xv).sum::<Real>();
    }
    Ok(Tensor::new_unchecked(vec![m], out))
}

/// Backward of [`linear`]; returns `(dx, dw, db)`.
pub fn d_linear(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let mut dx = vec![0.0; n];
    let mut dw = vec![0.0; m * n];
    for i in 0..m {
        let g = dy.data()[i];
        let row = &w.data()[i * n..(i + 1) * n];
        for j in 0..n {
            dx[j] += g * row[j];
            dw[i * n + j] = g * x.data()[j];
        }
    }
    (
        Tensor::new_unchecked(vec![n], dx),
        Tensor::new_unchecked(vec![m, n], dw),
        dy.clone(),
    )
}

/// Reduces a `[C, H, W, D]` map over its spatial axes, producing `[C]`.
pub fn pool_spatial(x: &Tensor, mode: PoolMode) -> Result<Tensor> {
    let c = x.channels()?;
    let s = x.len() / c;
    let mut out = Vec::with_capacity(c);
    for ci in 0..c {
        let slice = &x.data()[ci * s..(ci + 1) * s];
        out.push(reduce(slice.iter().copied(), s, mode));
    }
    Ok(Tensor::new_unchecked(vec![c], out))
}

pub fn d_pool_spatial(x: &Tensor, dy: &Tensor, mode: PoolMode) -> Tensor {
    let c = x.shape()[0];
    let s = x.len() / c;
    let mut dx = vec![0.0; x.len()];
    for ci in 0..c {
        let slice = &x.data()[ci * s..(ci + 1) * s];
        let g = dy.data()[ci];
        match mode {
            PoolMode::Avg => {
                let share = g / s as Real;
                for v in &mut dx[ci * s..(ci + 1) * s] {
                    *v += share;
                }
            }
            PoolMode::Max => {
                let am = argmax(slice);
                dx[ci * s + am] += g;
            }
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), dx)
}

/// Reduces a `[C, H, W, D]` map over its channel axis, producing
/// `[1, H, W, D]`.
pub fn pool_channel(x: &Tensor, mode: PoolMode) -> Result<Tensor> {
    let c = x.channels()?;
    let s = x.len() / c;
    let xs = x.data();
    let mut out = vec![0.0; s];
    match mode {
        PoolMode::Avg => {
            for ci in 0..c {
                for (o, &v) in out.iter_mut().zip(&xs[ci * s..(ci + 1) * s]) {
                    *o += v;
                }
            }
            let inv = 1.0 / c as Real;
            for o in &mut out {
                *o *= inv;
            }
        }
        PoolMode::Max => {
            out.copy_from_slice(&xs[..s]);
            for ci in 1..c {
                for (o, &v) in out.iter_mut().zip(&xs[ci * s..(ci + 1) * s]) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = 1;
    Ok(Tensor::new_unchecked(shape, out))
}

pub fn d_pool_channel(x: &Tensor, dy: &Tensor, mode: PoolMode) -> Tensor {
    let c = x.shape()[0];
    let s = x.len() / c;
    let xs = x.data();
    let mut dx = vec![0.0; x.len()];
    match mode {
        PoolMode::Avg => {
            let inv = 1.0 / c as Real;
            for ci in 0..c {
                for (d, &g) in dx[ci * s..(ci + 1) * s].iter_mut().zip(dy.data()) {
                    *d += g * inv;
                }
            }
        }
        PoolMode::Max => {
            // Route each spatial position's gradient to the first channel
            // attaining the maximum.
            for j in 0..s {
                let mut best = 0usize;
                let mut bv = xs[j];
                for ci in 1..c {
                    let v = xs[ci * s + j];
                    if v > bv {
                        bv = v;
                        best = ci;
                    }
                }
                dx[best * s + j] += dy.data()[j];
            }
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), dx)
}

/// Residual attention gate `(a + 1) ⊗ f` with `a: [1, H, W, D]` broadcast
/// over the channels of `f: [C, H, W, D]`.
pub fn residual_gate(a: &Tensor, f: &Tensor) -> Result<Tensor> {
    if a.rank() != 4 || f.rank() != 4 || a.shape()[0] != 1 || a.shape()[1..] != f.shape()[1..] {
        return Err(Error::shape("residual_gate", a.shape(), f.shape()));
    }
    let c = f.shape()[0];
    let s = a.len();
    let mut out = vec![0.0; f.len()];
    for ci in 0..c {
        for j in 0..s {
            out[ci * s + j] = (a.data()[j] + 1.0) * f.data()[ci * s + j];
        }
    }
    Ok(Tensor::new_unchecked(f.shape().to_vec(), out))
}

/// Backward of [`residual_gate`]; returns `(da, df)`.
pub fn d_residual_gate(a: &Tensor, f: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let c = f.shape()[0];
    let s = a.len();
    let mut da = vec![0.0; s];
    let mut df = vec![0.0; f.len()];
    for ci in 0..c {
        for j in 0..s {
            let g = dy.data()[ci * s + j];
            da[j] += g * f.data()[ci * s + j];
            df[ci * s + j] = g * (a.data()[j] + 1.0);
        }
    }
    (
        Tensor::new_unchecked(a.shape().to_vec(), da),
        Tensor::new_unchecked(f.shape().to_vec(), df),
    )
}

/// Applies a spatial gather map per channel: `out[c, j] = x[c, map[j]]`.
/// `map` must be a permutation of the flattened spatial index range.
pub fn apply_spatial_map(x: &Tensor, map: &[u32]) -> Result<Tensor> {
    let c = x.channels()?;
    let s = x.len() / c;
    if map.len() != s {
        return Err(Error::InvalidArgument(format!(
            "spatial map of length {} does not match {} voxels",
            map.len(),
            s
        )));
    }
    let xs = x.data();
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        let base = ci * s;
        for (j, &src) in map.iter().enumerate() {
            out[base + j] = xs[base + src as usize];
        }
    }
    Ok(Tensor::new_unchecked(x.shape().to_vec(), out))
}

/// Sum of all elements as a scalar tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

fn reduce(vals: impl Iterator<Item = Real>, n: usize, mode: PoolMode) -> Real {
    match mode {
        PoolMode::Avg => vals.sum::<Real>() / n as Real,
        PoolMode::Max => vals.fold(Real::NEG_INFINITY, Real::max),
    }
}

fn argmax(slice: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in slice.iter().enumerate().skip(1) {
        if v > slice[best] {
            best = i;
        }
    }
    best
}
