//! Batch normalization over the (batch, height, width) axes of each channel.
//!
//! Channel statistics are accumulated in f64 in a fixed order regardless of
//! precision or parallelism. Variance is the biased estimator throughout,
//! for both normalization and the running averages.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<E: Element> {
    pub gamma: Vec<E>,
    pub beta: Vec<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub eps: E,
    pub momentum: E,
}

pub const BN_EPS: f64 = 1e-4;
pub const BN_MOMENTUM: f64 = 0.9;

impl<E: Element> BatchNormParams<E> {
    /// gamma = 1, beta = 0, running mean 0 / variance 1.
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![E::ONE; channels],
            beta: vec![E::ZERO; channels],
            running_mean: vec![E::ZERO; channels],
            running_var: vec![E::ONE; channels],
            eps: E::from_f64(BN_EPS),
            momentum: E::from_f64(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn convert<T: Element>(&self) -> BatchNormParams<T> {
        let c = |v: &Vec<E>| v.iter().map(|x| T::from_f64(x.to_f64())).collect();
        BatchNormParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            eps: T::from_f64(self.eps.to_f64()),
            momentum: T::from_f64(self.momentum.to_f64()),
        }
    }
}

/// Saved forward state needed by [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<E: Element> {
    pub xhat: Tensor<E>,
    pub inv_std: Vec<E>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<E: Element> {
    pub gamma: Vec<E>,
    pub beta: Vec<E>,
}

fn check_channels<E: Element>(input: &Tensor<E>, params: &BatchNormParams<E>) -> Result<()> {
    if input.channels() != params.channels() {
        return Err(Error::contract(format!(
            "batchnorm has {} channels but input has {}",
            params.channels(),
            input.channels()
        )));
    }
    Ok(())
}

/// Per-channel (mean, biased variance) over batch and spatial axes.
fn batch_stats<E: Element>(input: &Tensor<E>) -> Vec<(f64, f64)> {
    let (n, c, h, w) = input.dims();
    let m = (n * h * w) as f64;
    par::map_indexed(c, |ch| {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in 0..n {
            for &v in input.plane(s, ch) {
                let v = v.to_f64();
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / m;
        let var = (sq / m - mean * mean).max(0.0);
        (mean, var)
    })
}

/// Inference-mode normalization with the stored running statistics.
pub fn batchnorm_infer<E: Element>(
    input: &Tensor<E>,
    params: &BatchNormParams<E>,
) -> Result<Tensor<E>> {
    check_channels(input, params)?;
    let (_, c, h, w) = input.dims();
    let spatial = h * w;
    let eps = params.eps.to_f64();
    let scale: Vec<E> = (0..c)
        .map(|ch| {
            let inv = 1.0 / (params.running_var[ch].to_f64() + eps).sqrt();
            E::from_f64(params.gamma[ch].to_f64() * inv)
        })
        .collect();
    let shift: Vec<E> = (0..c)
        .map(|ch| {
            let inv = 1.0 / (params.running_var[ch].to_f64() + eps).sqrt();
            E::from_f64(
                params.beta[ch].to_f64()
                    - params.gamma[ch].to_f64() * params.running_mean[ch].to_f64() * inv,
            )
        })
        .collect();
    let mut out = input.clone();
    par::for_each_chunk_mut(out.data_mut(), c * spatial, |_, sample| {
        for ch in 0..c {
            let (a, b) = (scale[ch], shift[ch]);
            for v in &mut sample[ch * spatial..(ch + 1) * spatial] {
                *v = a * *v + b;
            }
        }
    });
    Ok(out)
}

/// Normalizes per channel. Train mode uses batch statistics and updates the
/// running averages; infer mode uses the stored running statistics.
pub fn batchnorm_forward<E: Element>(
    input: &Tensor<E>,
    params: &mut BatchNormParams<E>,
    mode: BnMode,
) -> Result<(Tensor<E>, Option<BnCache<E>>)> {
    if mode == BnMode::Infer {
        return Ok((batchnorm_infer(input, params)?, None));
    }
    check_channels(input, params)?;
    let (n, c, h, w) = input.dims();
    let spatial = h * w;

    if n * spatial < 2 {
        return Err(Error::contract(
            "batchnorm train mode needs at least 2 values per channel (variance undefined)",
        ));
    }
    let stats = batch_stats(input);
    let momentum = params.momentum.to_f64();
    for (ch, &(mean, var)) in stats.iter().enumerate() {
        let rm = params.running_mean[ch].to_f64();
        let rv = params.running_var[ch].to_f64();
        params.running_mean[ch] = E::from_f64(momentum * rm + (1.0 - momentum) * mean);
        params.running_var[ch] = E::from_f64(momentum * rv + (1.0 - momentum) * var);
    }
    let (means, vars): (Vec<f64>, Vec<f64>) = stats.iter().copied().unzip();

    let eps = params.eps.to_f64();
    let inv_std: Vec<E> = vars
        .iter()
        .map(|&v| E::from_f64(1.0 / (v + eps).sqrt()))
        .collect();
    let mean_e: Vec<E> = means.iter().map(|&m| E::from_f64(m)).collect();

    let mut xhat = input.clone();
    par::for_each_chunk_mut(xhat.data_mut(), c * spatial, |_, sample| {
        for ch in 0..c {
            let mu = mean_e[ch];
            let is = inv_std[ch];
            for v in &mut sample[ch * spatial..(ch + 1) * spatial] {
                *v = (*v - mu) * is;
            }
        }
    });

    let mut out = xhat.clone();
    par::for_each_chunk_mut(out.data_mut(), c * spatial, |_, sample| {
        for ch in 0..c {
            let g = params.gamma[ch];
            let b = params.beta[ch];
            for v in &mut sample[ch * spatial..(ch + 1) * spatial] {
                *v = g * *v + b;
            }
        }
    });

    let cache = match mode {
        BnMode::Train => Some(BnCache { xhat, inv_std }),
        BnMode::Infer => None,
    };
    Ok((out, cache))
}

/// Full batch-statistics chain rule.
pub fn batchnorm_backward<E: Element>(
    cache: &BnCache<E>,
    params: &BatchNormParams<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, BnGrads<E>)> {
    if !cache.xhat.same_dims(grad_out) {
        return Err(Error::contract(
            "batchnorm_backward gradient dims do not match the cached forward",
        ));
    }
    let (n, c, h, w) = grad_out.dims();
    let spatial = h * w;
    let m = (n * spatial) as f64;

    // Per-channel reductions: sum(dy) and sum(dy * xhat), fixed order.
    let sums: Vec<(f64, f64)> = par::map_indexed(c, |ch| {
        let mut s_dy = 0.0;
        let mut s_dyx = 0.0;
        for s in 0..n {
            let dy = grad_out.plane(s, ch);
            let xh = cache.xhat.plane(s, ch);
            for (g, x) in dy.iter().zip(xh) {
                let g = g.to_f64();
                s_dy += g;
                s_dyx += g * x.to_f64();
            }
        }
        (s_dy, s_dyx)
    });

    let grads = BnGrads {
        beta: sums.iter().map(|&(s, _)| E::from_f64(s)).collect(),
        gamma: sums.iter().map(|&(_, s)| E::from_f64(s)).collect(),
    };

    let mean_dy: Vec<E> = sums.iter().map(|&(s, _)| E::from_f64(s / m)).collect();
    let mean_dyx: Vec<E> = sums.iter().map(|&(_, s)| E::from_f64(s / m)).collect();

    let mut grad_in = grad_out.clone();
    let xhat_data = cache.xhat.data();
    par::for_each_chunk_mut(grad_in.data_mut(), c * spatial, |s, sample| {
        let base = s * c * spatial;
        for ch in 0..c {
            let scale = params.gamma[ch] * cache.inv_std[ch];
            let mdy = mean_dy[ch];
            let mdyx = mean_dyx[ch];
            let xh = &xhat_data[base + ch * spatial..base + (ch + 1) * spatial];
            for (g, &x) in sample[ch * spatial..(ch + 1) * spatial].iter_mut().zip(xh) {
                *g = scale * (*g - mdy - x * mdyx);
            }
        }
    });

    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;

    fn rnd(n: usize, c: usize, h: usize, w: usize, rng: &mut SeedRng) -> Tensor<f64> {
        let data = (0..n * c * h * w)
            .map(|_| rng.uniform_range(-2.0, 2.0))
            .collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let input = Tensor::<f64>::from_vec(1, 2, 2, 2, vec![3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0]).unwrap();
        let mut params = BatchNormParams::identity(2);
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 1e-9, "expected ~0, got {v}");
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = SeedRng::new(123);
        let input = rnd(3, 4, 5, 5, &mut rng);
        let mut params = BatchNormParams::identity(4);
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        let m = 3.0 * 25.0;
        for ch in 0..4 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for s in 0..3 {
                for &v in out.plane(s, ch) {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn single_value_train_mode_errors() {
        let input = Tensor::<f64>::zeros(1, 2, 1, 1);
        let mut params = BatchNormParams::identity(2);
        assert!(batchnorm_forward(&input, &mut params, BnMode::Train).is_err());
        // Inference on a single value is fine.
        assert!(batchnorm_forward(&input, &mut params, BnMode::Infer).is_ok());
    }

    #[test]
    fn running_statistics_move_toward_batch() {
        let mut rng = SeedRng::new(4);
        let input = rnd(2, 1, 4, 4, &mut rng);
        let mut params = BatchNormParams::identity(1);
        let before_mean = params.running_mean[0];
        batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        let stats = batch_stats(&input);
        let expected = 0.9 * before_mean + 0.1 * stats[0].0;
        assert!((params.running_mean[0] - expected).abs() < 1e-12);
        assert!(params.running_var[0] >= 0.0);
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let mut params = BatchNormParams::<f64>::identity(1);
        params.running_mean[0] = 2.0;
        params.running_var[0] = 4.0;
        params.eps = 0.0;
        let input = Tensor::from_vec(1, 1, 1, 2, vec![2.0, 4.0]).unwrap();
        let (out, cache) = batchnorm_forward(&input, &mut params, BnMode::Infer).unwrap();
        assert!(cache.is_none());
        assert!((out.data()[0] - 0.0).abs() < 1e-12);
        assert!((out.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let input = Tensor::<f64>::zeros(1, 3, 4, 4);
        let mut params = BatchNormParams::identity(2);
        assert!(batchnorm_forward(&input, &mut params, BnMode::Train).is_err());
    }
}
