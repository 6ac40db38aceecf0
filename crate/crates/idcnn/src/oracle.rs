//! Independent reference implementations used by the verification harness
//! and the test suite.
//!
//! Everything here is written as plain nested loops straight from the
//! defining formulas, deliberately sharing no code with the production
//! kernels it double-checks.

#![allow(clippy::needless_range_loop)]

use crate::image::{ColorImage, NoiseMap};
use crate::nn::conv::ConvParams;
use crate::restore::RestoreConfig;
use crate::tensor::{Element, Tensor};

/// Six-nested-loop 3×3 convolution (zero padding 1, stride 1,
/// cross-correlation).
pub fn conv2d_reference<E: Element>(input: &Tensor<E>, params: &ConvParams<E>) -> Tensor<E> {
    let (n, c_in, h, w) = input.dims();
    assert_eq!(c_in, params.c_in);
    let k_out = params.k_out;
    let mut out = Tensor::zeros(n, k_out, h, w);
    for s in 0..n {
        for o in 0..k_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = params.bias[o].to_f64();
                    for c in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let wv =
                                    params.weights[((o * c_in + c) * 3 + ky) * 3 + kx].to_f64();
                                acc += wv * input.at(s, c, sy as usize, sx as usize).to_f64();
                            }
                        }
                    }
                    *out.at_mut(s, o, y, x) = E::from_f64(acc);
                }
            }
        }
    }
    out
}

/// Scalar-loop mean of per-item mean squared differences.
pub fn mse_loss_reference<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> f64 {
    let (n, c, h, w) = pred.dims();
    let per_item = (c * h * w) as f64;
    let mut total = 0.0;
    for s in 0..n {
        let mut item = 0.0;
        for c_i in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = pred.at(s, c_i, y, x).to_f64() - target.at(s, c_i, y, x).to_f64();
                    item += d * d;
                }
            }
        }
        total += item / per_item;
    }
    total / n as f64
}

/// Per-pixel confusion tally: (tp, tn, fp, fn).
pub fn confusion_reference(truth: &NoiseMap, est: &NoiseMap) -> (u64, u64, u64, u64) {
    assert_eq!(truth.dims(), est.dims());
    let (h, w) = truth.dims();
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..h {
        for x in 0..w {
            match (truth.at(y, x) != 0.0, est.at(y, x) != 0.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
            }
        }
    }
    (tp, tn, fp, fneg)
}

/// PSNR from the defining formulas, channel by channel, pixel by pixel.
pub fn psnr_reference(x: &ColorImage, xhat: &ColorImage) -> f64 {
    assert_eq!(x.dims(), xhat.dims());
    let (h, w) = x.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for xx in 0..w {
            for q in 0..3 {
                let d = x.channel(y, xx, q) as f64 - xhat.channel(y, xx, q) as f64;
                sum += d * d;
            }
        }
    }
    let mse = sum / (3.0 * (h * w) as f64);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// MAE from the defining formula.
pub fn mae_reference(x: &ColorImage, xhat: &ColorImage) -> f64 {
    assert_eq!(x.dims(), xhat.dims());
    let (h, w) = x.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for xx in 0..w {
            for q in 0..3 {
                sum += (x.channel(y, xx, q) as f64 - xhat.channel(y, xx, q) as f64).abs();
            }
        }
    }
    sum / (3.0 * (h * w) as f64)
}

/// Single-channel SSIM with an 11×11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 255, evaluated per window directly from the
/// definition and averaged over valid positions; channels averaged.
pub fn ssim_reference(x: &ColorImage, xhat: &ColorImage) -> f64 {
    assert_eq!(x.dims(), xhat.dims());
    let (h, w) = x.dims();
    assert!(h >= 11 && w >= 11);

    let mut kernel = [[0.0f64; 11]; 11];
    let sigma = 1.5;
    let mut norm = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            *k = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            norm += *k;
        }
    }
    for row in kernel.iter_mut() {
        for k in row.iter_mut() {
            *k /= norm;
        }
    }

    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut channel_sum = 0.0;
    for q in 0..3 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = kernel[i][j];
                        let a = x.channel(y0 + i, x0 + j, q) as f64;
                        let b = xhat.channel(y0 + i, x0 + j, q) as f64;
                        mx += k * a;
                        my += k * b;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                acc += s;
                count += 1;
            }
        }
        channel_sum += acc / count as f64;
    }
    channel_sum / 3.0
}

/// Brute-force adaptive mean restoration: for every flagged pixel, scan odd
/// window sizes from the configured start, find the smallest containing at
/// least one clean pixel by exhaustive search, and average those pixels.
pub fn restore_reference(
    noisy: &ColorImage,
    map: &NoiseMap,
    cfg: &RestoreConfig,
) -> Option<ColorImage> {
    let (h, w) = noisy.dims();
    assert_eq!(map.dims(), (h, w));
    let max_side = cfg.max_window.unwrap_or(2 * h.max(w) + 1);
    let mut out = noisy.clone();
    for y in 0..h {
        for x in 0..w {
            if !map.flagged(y, x) {
                continue;
            }
            let mut side = cfg.initial_window;
            let mut replaced = false;
            while side <= max_side {
                let r = side / 2;
                let mut sums = [0u64; 3];
                let mut count = 0u64;
                for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        if !map.flagged(yy, xx) {
                            let px = noisy.pixel(yy, xx);
                            for q in 0..3 {
                                sums[q] += px[q] as u64;
                            }
                            count += 1;
                        }
                    }
                }
                if count >= 1 {
                    let mut rgb = [0u8; 3];
                    for q in 0..3 {
                        rgb[q] = (sums[q] as f64 / count as f64).round() as u8;
                    }
                    out.set_pixel(y, x, rgb);
                    replaced = true;
                    break;
                }
                side += cfg.growth_step;
            }
            if !replaced {
                return None;
            }
        }
    }
    Some(out)
}
