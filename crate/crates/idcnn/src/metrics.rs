//! Detection-quality and image-quality metrics, plus the aim-diagram error
//! decomposition.

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};

/// Per-pixel classification tallies of a detection map against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Tallies TP/TN/FP/FN. Both maps must be binary and of identical dims.
pub fn confusion(truth: &NoiseMap, est: &NoiseMap) -> Result<ConfusionCounts> {
    if truth.dims() != est.dims() {
        return Err(Error::contract(format!(
            "confusion dims differ: {:?} vs {:?}",
            truth.dims(),
            est.dims()
        )));
    }
    if !truth.is_binary() || !est.is_binary() {
        return Err(Error::contract("confusion needs binary maps"));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &e) in truth.data().iter().zip(est.data()) {
        match (t != 0.0, e != 0.0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Weighted accuracy: rho·TP/(TP+FN) + (1−rho)·TN/(TN+FP), with rho taken
/// from the ground-truth counts. A class that is absent contributes its
/// weight times a rate defined as 0, which reduces to the surviving term.
pub fn wacc(c: &ConfusionCounts) -> f64 {
    let q = c.total() as f64;
    if q == 0.0 {
        return 0.0;
    }
    let pos = (c.tp + c.fn_) as f64;
    let neg = (c.tn + c.fp) as f64;
    let rho = pos / q;
    let mut acc = 0.0;
    if pos > 0.0 {
        acc += rho * c.tp as f64 / pos;
    }
    if neg > 0.0 {
        acc += (1.0 - rho) * c.tn as f64 / neg;
    }
    acc
}

/// FP / (FP + TN); 0 when there are no clean pixels.
pub fn fpr(c: &ConfusionCounts) -> f64 {
    let denom = c.fp + c.tn;
    if denom == 0 {
        0.0
    } else {
        c.fp as f64 / denom as f64
    }
}

/// FN / (TP + FN); 0 when there are no impulses.
pub fn fnr(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        c.fn_ as f64 / denom as f64
    }
}

fn check_dims(x: &ColorImage, xhat: &ColorImage) -> Result<()> {
    if x.dims() != xhat.dims() {
        return Err(Error::contract(format!(
            "image dims differ: {:?} vs {:?}",
            x.dims(),
            xhat.dims()
        )));
    }
    Ok(())
}

/// Mean squared error over all 3·Q channel values.
pub fn mse(x: &ColorImage, xhat: &ColorImage) -> Result<f64> {
    check_dims(x, xhat)?;
    let mut sum = 0u64;
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        let d = a as i64 - b as i64;
        sum += (d * d) as u64;
    }
    Ok(sum as f64 / (3.0 * x.pixel_count() as f64))
}

/// 10·log10(255² / MSE); identical images report +infinity.
pub fn psnr(x: &ColorImage, xhat: &ColorImage) -> Result<f64> {
    let mse = mse(x, xhat)?;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (255.0 * 255.0 / mse).log10())
    }
}

/// Mean absolute channel error over all 3·Q values.
pub fn mae(x: &ColorImage, xhat: &ColorImage) -> Result<f64> {
    check_dims(x, xhat)?;
    let mut sum = 0u64;
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        sum += (a as i64 - b as i64).unsigned_abs();
    }
    Ok(sum as f64 / (3.0 * x.pixel_count() as f64))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut norm = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        norm += *v;
    }
    for v in k.iter_mut() {
        *v /= norm;
    }
    k
}

/// Horizontal then vertical pass of the separable Gaussian, valid region
/// only: output is (h−10)×(w−10).
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wv = w - SSIM_WINDOW + 1;
    let hv = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * wv];
    for y in 0..h {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                acc += kj * src[y * w + x + j];
            }
            horiz[y * wv + x] = acc;
        }
    }
    let mut out = vec![0.0; hv * wv];
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (i, &ki) in k.iter().enumerate() {
                acc += ki * horiz[(y + i) * wv + x];
            }
            out[y * wv + x] = acc;
        }
    }
    out
}

/// Color SSIM: the standard single-channel SSIM (11×11 Gaussian window,
/// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 255) computed per channel
/// over the valid window positions and averaged over the three channels.
pub fn ssim_c(x: &ColorImage, xhat: &ColorImage) -> Result<f64> {
    check_dims(x, xhat)?;
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);

    let mut total = 0.0;
    for q in 0..3 {
        let a: Vec<f64> = x.data()[q..].iter().step_by(3).map(|&v| v as f64).collect();
        let b: Vec<f64> = xhat.data()[q..]
            .iter()
            .step_by(3)
            .map(|&v| v as f64)
            .collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();

        let mu_a = filter_valid(&a, h, w, &k);
        let mu_b = filter_valid(&b, h, w, &k);
        let m_aa = filter_valid(&aa, h, w, &k);
        let m_bb = filter_valid(&bb, h, w, &k);
        let m_ab = filter_valid(&ab, h, w, &k);

        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

/// Image-quality summary for one (reference, restored) pair.
#[derive(Clone, Copy, Debug)]
pub struct QualityReport {
    pub psnr: f64,
    pub mae: f64,
    pub ssim: f64,
}

pub fn quality(x: &ColorImage, xhat: &ColorImage) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(x, xhat)?,
        mae: mae(x, xhat)?,
        ssim: ssim_c(x, xhat)?,
    })
}

/// Decomposition of the restored image's MAE into the contributions of the
/// TP, FP and FN pixel classes (each class's absolute-error sum over 3·Q).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AimDiagram {
    pub mae_tp: f64,
    pub mae_fp: f64,
    pub mae_fn: f64,
}

pub fn aim_diagram(
    clean: &ColorImage,
    restored: &ColorImage,
    truth: &NoiseMap,
    est: &NoiseMap,
) -> Result<AimDiagram> {
    check_dims(clean, restored)?;
    if truth.dims() != clean.dims() || est.dims() != clean.dims() {
        return Err(Error::contract("aim_diagram dims do not match"));
    }
    if !truth.is_binary() || !est.is_binary() {
        return Err(Error::contract("aim_diagram needs binary maps"));
    }
    let (h, w) = clean.dims();
    let mut sums = [0u64; 3]; // tp, fp, fn
    for y in 0..h {
        for x in 0..w {
            let class = match (truth.flagged(y, x), est.flagged(y, x)) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => continue,
            };
            let a = clean.pixel(y, x);
            let b = restored.pixel(y, x);
            for q in 0..3 {
                sums[class] += (a[q] as i64 - b[q] as i64).unsigned_abs();
            }
        }
    }
    let denom = 3.0 * clean.pixel_count() as f64;
    Ok(AimDiagram {
        mae_tp: sums[0] as f64 / denom,
        mae_fp: sums[1] as f64 / denom,
        mae_fn: sums[2] as f64 / denom,
    })
}
