//! 3D convolution via im2col and a BLAS-style matrix multiply.
//!
//! Convolutions dominate the runtime of both training and inference, so
//! the forward and backward passes lower each output block to a dense
//! `[C_in·k³] × block` column matrix and dispatch to `matrixmultiply`.
//! Everything else in the crate treats this module as a black box with
//! exact, reproducible semantics:
//!
//! * kernels are `[C_out, C_in, k, k, k]` with odd `k`,
//! * outputs keep `ceil`-free SAME geometry: `out = in / stride`, and the
//!   stride must divide each spatial extent,
//! * padding is `(k-1)/2` on every side, filled with zeros or replicated
//!   edge values.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as gemm_kernel;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as gemm_kernel;

/// How out-of-bounds source voxels are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Replicate,
}

/// Output positions processed per im2col block. Bounds the scratch matrix
/// to a few megabytes regardless of volume size.
const BLOCK: usize = 4096;

/// Geometry shared by the forward and backward passes.
struct Geom {
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: i64,
    in_sp: [usize; 3],
    out_sp: [usize; 3],
}

impl Geom {
    fn resolve(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Self> {
        if kernel.rank() != 5 {
            return Err(Error::RankMismatch {
                context: "conv3d kernel".into(),
                expected: 5,
                shape: kernel.shape().to_vec(),
            });
        }
        let c_in = input.channels()?;
        let ks = kernel.shape();
        let (c_out, k) = (ks[0], ks[2]);
        if ks[1] != c_in {
            return Err(Error::shape(
                "conv3d input channels vs kernel",
                input.shape(),
                kernel.shape(),
            ));
        }
        if ks[2] != ks[3] || ks[3] != ks[4] {
            return Err(Error::InvalidArgument(format!(
                "conv3d kernel must be cubic, got {ks:?}"
            )));
        }
        if k % 2 == 0 {
            return Err(Error::EvenKernel { k });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv3d stride must be >= 1".into()));
        }
        let in_sp = input.spatial()?;
        if in_sp.iter().any(|&d| d % stride != 0) {
            return Err(Error::IndivisibleShape {
                context: "conv3d stride".into(),
                shape: in_sp.to_vec(),
                divisor: stride,
            });
        }
        let out_sp = [in_sp[0] / stride, in_sp[1] / stride, in_sp[2] / stride];
        Ok(Geom {
            c_in,
            c_out,
            k,
            stride,
            pad: ((k - 1) / 2) as i64,
            in_sp,
            out_sp,
        })
    }

    fn k3(&self) -> usize {
        self.k * self.k * self.k
    }

    fn n_out(&self) -> usize {
        self.out_sp.iter().product()
    }

    /// Base source coordinates (already shifted by stride and padding) for
    /// each output position in `[p0, p0 + nb)`.
    fn base_coords(&self, p0: usize, nb: usize) -> (Vec<i64>, Vec<i64>, Vec<i64>) {
        let [_, ow_n, od_n] = self.out_sp;
        let (s, pad) = (self.stride as i64, self.pad);
        let mut bh = Vec::with_capacity(nb);
        let mut bw = Vec::with_capacity(nb);
        let mut bd = Vec::with_capacity(nb);
        for p in p0..p0 + nb {
            let od = p % od_n;
            let ow = (p / od_n) % ow_n;
            let oh = p / (od_n * ow_n);
            bh.push(oh as i64 * s - pad);
            bw.push(ow as i64 * s - pad);
            bd.push(od as i64 * s - pad);
        }
        (bh, bw, bd)
    }

    /// Source index map for one block: `map[j * nb + c]` is the flattened
    /// input voxel feeding kernel offset `j` at output position `c`, or -1
    /// for a zero-padded tap.
    fn block_map(&self, p0: usize, nb: usize, padding: Padding) -> Vec<i64> {
        let (bh, bw, bd) = self.base_coords(p0, nb);
        let [ih_n, iw_n, id_n] = self.in_sp.map(|d| d as i64);
        let k = self.k as i64;
        let mut map = vec![0i64; self.k3() * nb];
        let mut j = 0usize;
        for dh in 0..k {
            for dw in 0..k {
                for dd in 0..k {
                    let row = &mut map[j * nb..(j + 1) * nb];
                    match padding {
                        Padding::Zero => {
                            for c in 0..nb {
                                let (h, w, d) = (bh[c] + dh, bw[c] + dw, bd[c] + dd);
                                row[c] = if h < 0
                                    || w < 0
                                    || d < 0
                                    || h >= ih_n
                                    || w >= iw_n
                                    || d >= id_n
                                {
                                    -1
                                } else {
                                    (h * iw_n + w) * id_n + d
                                };
                            }
                        }
                        Padding::Replicate => {
                            for c in 0..nb {
                                let h = (bh[c] + dh).clamp(0, ih_n - 1);
                                let w = (bw[c] + dw).clamp(0, iw_n - 1);
                                let d = (bd[c] + dd).clamp(0, id_n - 1);
                                row[c] = (h * iw_n + w) * id_n + d;
                            }
                        }
                    }
                    j += 1;
                }
            }
        }
        map
    }
}

/// Row-major GEMM wrapper: `C = alpha * A * B + beta * C` with explicit
/// strides, matching the `matrixmultiply` calling convention.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    kd: usize,
    n: usize,
    alpha: Real,
    a: &[Real],
    rsa: isize,
    csa: isize,
    b: &[Real],
    rsb: isize,
    csb: isize,
    beta: Real,
    c: &mut [Real],
    rsc: isize,
    csc: isize,
) {
    unsafe {
        gemm_kernel(
            m,
            kd,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn gather_columns(geom: &Geom, input: &[Real], map: &[i64], nb: usize, col: &mut [Real]) {
    let k3 = geom.k3();
    let sp: usize = geom.in_sp.iter().product();
    for ci in 0..geom.c_in {
        let plane = &input[ci * sp..(ci + 1) * sp];
        for j in 0..k3 {
            let dst = &mut col[(ci * k3 + j) * nb..(ci * k3 + j + 1) * nb];
            let src = &map[j * nb..(j + 1) * nb];
            for (d, &idx) in dst.iter_mut().zip(src) {
                *d = if idx < 0 { 0.0 } else { plane[idx as usize] };
            }
        }
    }
}

/// SAME-geometry 3D convolution. `input: [C_in, H, W, D]`,
/// `kernel: [C_out, C_in, k, k, k]`, `bias: [C_out]`; returns
/// `[C_out, H/stride, W/stride, D/stride]`.
pub fn conv3d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let geom = Geom::resolve(input, kernel, stride)?;
    if bias.rank() != 1 || bias.len() != geom.c_out {
        return Err(Error::shape("conv3d bias", kernel.shape(), bias.shape()));
    }
    let n_out = geom.n_out();
    let kdim = geom.c_in * geom.k3();
    let mut out = vec![0.0; geom.c_out * n_out];
    let mut col = vec![0.0; kdim * BLOCK.min(n_out)];

    let mut p0 = 0usize;
    while p0 < n_out {
        let nb = BLOCK.min(n_out - p0);
        let map = geom.block_map(p0, nb, padding);
        gather_columns(&geom, input.data(), &map, nb, &mut col);
        // out[:, p0..p0+nb] = W · col
        gemm(
            geom.c_out,
            kdim,
            nb,
            1.0,
            kernel.data(),
            kdim as isize,
            1,
            &col,
            nb as isize,
            1,
            0.0,
            &mut out[p0..],
            n_out as isize,
            1,
        );
        p0 += nb;
    }
    for co in 0..geom.c_out {
        let b = bias.data()[co];
        for v in &mut out[co * n_out..(co + 1) * n_out] {
            *v += b;
        }
    }
    let mut shape = vec![geom.c_out];
    shape.extend_from_slice(&geom.out_sp);
    Ok(Tensor::new_unchecked(shape, out))
}

/// Backward pass of [`conv3d`]; returns `(d_input, d_kernel, d_bias)`.
pub fn conv3d_backward(
    input: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Tensor, Tensor)> {
    let geom = Geom::resolve(input, kernel, stride)?;
    let n_out = geom.n_out();
    let kdim = geom.c_in * geom.k3();
    let k3 = geom.k3();
    let sp: usize = geom.in_sp.iter().product();

    let mut d_input = vec![0.0; input.len()];
    let mut d_kernel = vec![0.0; kernel.len()];
    let mut d_bias = vec![0.0; geom.c_out];
    for (co, db) in d_bias.iter_mut().enumerate() {
        *db = dout.data()[co * n_out..(co + 1) * n_out].iter().sum();
    }

    let block = BLOCK.min(n_out);
    let mut col = vec![0.0; kdim * block];
    let mut gcol = vec![0.0; kdim * block];

    let mut p0 = 0usize;
    while p0 < n_out {
        let nb = block.min(n_out - p0);
        let map = geom.block_map(p0, nb, padding);
        gather_columns(&geom, input.data(), &map, nb, &mut col);
        // dW += dOut[:, blk] · colᵀ
        gemm(
            geom.c_out,
            nb,
            kdim,
            1.0,
            &dout.data()[p0..],
            n_out as isize,
            1,
            &col,
            1,
            nb as isize,
            1.0,
            &mut d_kernel,
            kdim as isize,
            1,
        );
        // gcol = Wᵀ · dOut[:, blk]
        gemm(
            kdim,
            geom.c_out,
            nb,
            1.0,
            kernel.data(),
            1,
            kdim as isize,
            &dout.data()[p0..],
            n_out as isize,
            1,
            0.0,
            &mut gcol,
            nb as isize,
            1,
        );
        // Scatter gcol back onto the input grid (col2im). Replicated taps
        // alias the same border voxel, so accumulation is required.
        for ci in 0..geom.c_in {
            let plane = &mut d_input[ci * sp..(ci + 1) * sp];
            for j in 0..k3 {
                let src = &gcol[(ci * k3 + j) * nb..(ci * k3 + j + 1) * nb];
                for (c, &idx) in map[j * nb..(j + 1) * nb].iter().enumerate() {
                    if idx >= 0 {
                        plane[idx as usize] += src[c];
                    }
                }
            }
        }
        p0 += nb;
    }

    Ok((
        Tensor::new_unchecked(input.shape().to_vec(), d_input),
        Tensor::new_unchecked(kernel.shape().to_vec(), d_kernel),
        Tensor::new_unchecked(vec![geom.c_out], d_bias),
    ))
}
