//! 3×3 convolution with zero padding 1 and stride 1 (cross-correlation
//! convention, no kernel flip). Spatial dimensions are always preserved.
//!
//! The forward and backward passes lower the stencil to an im2col buffer and
//! a GEMM, processed in bounded row blocks so whole-image inference never
//! materializes a full-size column matrix. Parallel tasks own disjoint
//! output regions and reduce in a fixed order, so results do not depend on
//! the worker count.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::SeedRng;
use crate::tensor::{Element, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Column-buffer budget per task, in elements.
const COL_BUDGET: usize = 2 << 20;

/// Trainable parameters of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<E: Element> {
    pub c_in: usize,
    pub k_out: usize,
    /// k_out × c_in × 3 × 3, row-major.
    pub weights: Vec<E>,
    /// One bias per output channel.
    pub bias: Vec<E>,
}

impl<E: Element> ConvParams<E> {
    pub fn zeros(c_in: usize, k_out: usize) -> Self {
        ConvParams {
            c_in,
            k_out,
            weights: vec![E::ZERO; k_out * c_in * TAPS],
            bias: vec![E::ZERO; k_out],
        }
    }

    /// Glorot-uniform weights (fan computed over the 3×3 support), zero bias.
    pub fn glorot(c_in: usize, k_out: usize, rng: &mut SeedRng) -> Self {
        let weights = crate::nn::init::glorot_uniform(
            c_in * TAPS,
            k_out * TAPS,
            k_out * c_in * TAPS,
            rng,
        );
        ConvParams {
            c_in,
            k_out,
            weights,
            bias: vec![E::ZERO; k_out],
        }
    }

    pub fn from_parts(c_in: usize, k_out: usize, weights: Vec<E>, bias: Vec<E>) -> Result<Self> {
        if weights.len() != k_out * c_in * TAPS || bias.len() != k_out {
            return Err(Error::contract(format!(
                "conv parameter sizes do not match {}->{} with a 3x3 kernel",
                c_in, k_out
            )));
        }
        Ok(ConvParams {
            c_in,
            k_out,
            weights,
            bias,
        })
    }

    pub fn convert<T: Element>(&self) -> ConvParams<T> {
        ConvParams {
            c_in: self.c_in,
            k_out: self.k_out,
            weights: self.weights.iter().map(|v| T::from_f64(v.to_f64())).collect(),
            bias: self.bias.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Gradients shaped like [`ConvParams`].
#[derive(Clone, Debug)]
pub struct ConvGrads<E: Element> {
    pub weights: Vec<E>,
    pub bias: Vec<E>,
}

fn block_rows(c_in: usize, h: usize, w: usize) -> usize {
    let per_row = c_in * TAPS * w;
    (COL_BUDGET / per_row.max(1)).clamp(1, h)
}

/// Fills `col` (c_in·9 rows × block·w cols, row-major) with the padded
/// input window for rows `y0..y0+rows` of sample plane set `planes`.
fn im2col<E: Element>(planes: &[E], c_in: usize, h: usize, w: usize, y0: usize, rows: usize, col: &mut [E]) {
    let bw = rows * w;
    for c in 0..c_in {
        let plane = &planes[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dest_all = &mut col[row * bw..(row + 1) * bw];
                for y in 0..rows {
                    let dest = &mut dest_all[y * w..(y + 1) * w];
                    let sy = (y0 + y + ky) as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dest.fill(E::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dest[0] = E::ZERO;
                            dest[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dest.copy_from_slice(src),
                        _ => {
                            dest[..w - 1].copy_from_slice(&src[1..]);
                            dest[w - 1] = E::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-gradient block back onto the input gradient planes.
fn col2im_add<E: Element>(col: &[E], c_in: usize, h: usize, w: usize, y0: usize, rows: usize, planes: &mut [E]) {
    let bw = rows * w;
    for c in 0..c_in {
        let plane = &mut planes[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src_all = &col[row * bw..(row + 1) * bw];
                for y in 0..rows {
                    let sy = (y0 + y + ky) as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &src_all[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += *s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += *s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_input<E: Element>(input: &Tensor<E>, params: &ConvParams<E>) -> Result<()> {
    if input.channels() != params.c_in {
        return Err(Error::contract(format!(
            "conv2d expects {} input channels, got {}",
            params.c_in,
            input.channels()
        )));
    }
    Ok(())
}

/// Same-size 3×3 convolution: output dims (n, k_out, h, w).
pub fn conv2d<E: Element>(input: &Tensor<E>, params: &ConvParams<E>) -> Result<Tensor<E>> {
    check_input(input, params)?;
    let (n, c_in, h, w) = input.dims();
    let k_out = params.k_out;
    let c9 = c_in * TAPS;
    let block = block_rows(c_in, h, w);
    let nblocks = h.div_ceil(block);

    // One task per (sample, row block); each produces its own output block.
    let blocks: Vec<Vec<E>> = par::map_indexed(n * nblocks, |task| {
        let (s, b) = (task / nblocks, task % nblocks);
        let y0 = b * block;
        let rows = block.min(h - y0);
        let bw = rows * w;
        let mut col = vec![E::ZERO; c9 * bw];
        let planes = &input.data()[s * c_in * h * w..(s + 1) * c_in * h * w];
        im2col(planes, c_in, h, w, y0, rows, &mut col);
        let mut out = vec![E::ZERO; k_out * bw];
        E::gemm(
            k_out,
            c9,
            bw,
            E::ONE,
            &params.weights,
            c9 as isize,
            1,
            &col,
            bw as isize,
            1,
            E::ZERO,
            &mut out,
            bw as isize,
            1,
        );
        for o in 0..k_out {
            let bias = params.bias[o];
            for v in &mut out[o * bw..(o + 1) * bw] {
                *v += bias;
            }
        }
        out
    });

    let mut output = Tensor::zeros(n, k_out, h, w);
    for (task, buf) in blocks.iter().enumerate() {
        let (s, b) = (task / nblocks, task % nblocks);
        let y0 = b * block;
        let rows = block.min(h - y0);
        for o in 0..k_out {
            let dst_start = output.offset(s, o, y0, 0);
            output.data_mut()[dst_start..dst_start + rows * w]
                .copy_from_slice(&buf[o * rows * w..(o + 1) * rows * w]);
        }
    }
    Ok(output)
}

/// Gradients of the [`conv2d`] contract with respect to input, weights and
/// bias.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    params: &ConvParams<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, ConvGrads<E>)> {
    check_input(input, params)?;
    let (n, c_in, h, w) = input.dims();
    let k_out = params.k_out;
    if grad_out.dims() != (n, k_out, h, w) {
        return Err(Error::contract(format!(
            "conv2d_backward output gradient dims {:?} do not match ({}, {}, {}, {})",
            grad_out.dims(),
            n,
            k_out,
            h,
            w
        )));
    }
    let c9 = c_in * TAPS;
    let block = block_rows(c_in, h, w);
    let nblocks = h.div_ceil(block);

    // Input gradient: grad_col = W^T · grad_out, scattered back per sample.
    let mut grad_input = Tensor::zeros(n, c_in, h, w);
    let go_data = grad_out.data();
    par::for_each_chunk_mut(grad_input.data_mut(), c_in * h * w, |s, gi_planes| {
        let mut col = vec![E::ZERO; c9 * block * w];
        for b in 0..nblocks {
            let y0 = b * block;
            let rows = block.min(h - y0);
            let bw = rows * w;
            let go = &go_data[(s * k_out * h + y0) * w..];
            E::gemm(
                c9,
                k_out,
                bw,
                E::ONE,
                &params.weights,
                1,
                c9 as isize,
                go,
                (h * w) as isize,
                1,
                E::ZERO,
                &mut col[..c9 * bw],
                bw as isize,
                1,
            );
            col2im_add(&col[..c9 * bw], c_in, h, w, y0, rows, gi_planes);
        }
    });

    // Parameter gradients: per-sample partials, then a fixed-order sum.
    let partials: Vec<(Vec<E>, Vec<E>)> = par::map_indexed(n, |s| {
        let mut gw = vec![E::ZERO; k_out * c9];
        let mut gb = vec![E::ZERO; k_out];
        let mut col = vec![E::ZERO; c9 * block * w];
        let planes = &input.data()[s * c_in * h * w..(s + 1) * c_in * h * w];
        for b in 0..nblocks {
            let y0 = b * block;
            let rows = block.min(h - y0);
            let bw = rows * w;
            im2col(planes, c_in, h, w, y0, rows, &mut col[..c9 * bw]);
            let go = &go_data[(s * k_out * h + y0) * w..];
            E::gemm(
                k_out,
                bw,
                c9,
                E::ONE,
                go,
                (h * w) as isize,
                1,
                &col[..c9 * bw],
                1,
                bw as isize,
                E::ONE,
                &mut gw,
                c9 as isize,
                1,
            );
        }
        for o in 0..k_out {
            let plane = &go_data[(s * k_out + o) * h * w..(s * k_out + o + 1) * h * w];
            let mut sum = E::ZERO;
            for v in plane {
                sum += *v;
            }
            gb[o] = sum;
        }
        (gw, gb)
    });

    let mut grads = ConvGrads {
        weights: vec![E::ZERO; k_out * c9],
        bias: vec![E::ZERO; k_out],
    };
    for (gw, gb) in &partials {
        for (acc, v) in grads.weights.iter_mut().zip(gw) {
            *acc += *v;
        }
        for (acc, v) in grads.bias.iter_mut().zip(gb) {
            *acc += *v;
        }
    }
    Ok((grad_input, grads))
}
