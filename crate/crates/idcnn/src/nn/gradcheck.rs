//! Central-finite-difference verification of every backward pass.
//!
//! Checks run in f64. The reported figure is a relative error with an
//! absolute floor: |a − n| / max(|a| + |n|, 1e-4), so coordinates whose true
//! gradient is negligible cannot blow the ratio up on finite-difference
//! noise, while a genuinely wrong gradient of any practical size still
//! registers far above the pass thresholds.

use crate::error::Result;
use crate::model::build_model;
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, mse_loss, relu,
    relu_backward, sigmoid, sigmoid_backward, BatchNormParams, BnMode, ConvParams,
};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-4;

/// Deliberate backward-pass corruption for harness self-tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// First convolution's weight gradient scaled by 2.
    ScaleConvWeightGrad,
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

fn central_differences(
    coords: &mut [f64],
    eval: &mut dyn FnMut(&[f64]) -> f64,
    eps: f64,
) -> Vec<f64> {
    let mut numeric = vec![0.0; coords.len()];
    for i in 0..coords.len() {
        let orig = coords[i];
        coords[i] = orig + eps;
        let fp = eval(coords);
        coords[i] = orig - eps;
        let fm = eval(coords);
        coords[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * eps);
    }
    numeric
}

fn tensor_from(coords: &[f64], dims: (usize, usize, usize, usize)) -> Tensor<f64> {
    Tensor::from_vec(dims.0, dims.1, dims.2, dims.3, coords.to_vec()).unwrap()
}

/// Convolution gradient check through the map loss. The loss is quadratic
/// in every coordinate, so central differences are exact up to roundoff and
/// a relatively large step keeps the roundoff negligible.
pub fn check_conv(seed: u64, eps: f64) -> Result<f64> {
    let dims = (1, 3, 6, 6);
    let (k_out, c_in) = (4, 3);
    let mut rng = SeedRng::new(seed);
    let n_in = dims.0 * dims.1 * dims.2 * dims.3;
    let n_w = k_out * c_in * 9;
    let mut coords: Vec<f64> = (0..n_in + n_w + k_out)
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    let target = tensor_from(
        &(0..dims.0 * k_out * dims.2 * dims.3)
            .map(|_| rng.uniform_range(-1.0, 1.0))
            .collect::<Vec<_>>(),
        (dims.0, k_out, dims.2, dims.3),
    );

    let unpack = |c: &[f64]| -> (Tensor<f64>, ConvParams<f64>) {
        let input = tensor_from(&c[..n_in], dims);
        let params = ConvParams::from_parts(
            c_in,
            k_out,
            c[n_in..n_in + n_w].to_vec(),
            c[n_in + n_w..].to_vec(),
        )
        .unwrap();
        (input, params)
    };

    let (input, params) = unpack(&coords);
    let out = conv2d(&input, &params)?;
    let (_, lgrad) = mse_loss(&out, &target)?;
    let (gi, grads) = conv2d_backward(&input, &params, &lgrad)?;
    let mut analytic = gi.data().to_vec();
    analytic.extend_from_slice(&grads.weights);
    analytic.extend_from_slice(&grads.bias);

    let mut eval = |c: &[f64]| -> f64 {
        let (input, params) = unpack(c);
        let out = conv2d(&input, &params).unwrap();
        mse_loss(&out, &target).unwrap().0
    };
    let numeric = central_differences(&mut coords, &mut eval, eps);
    Ok(max_relative_error(&analytic, &numeric))
}

/// ReLU gradient check; inputs are sampled away from the kink at 0.
pub fn check_relu(seed: u64, eps: f64) -> Result<f64> {
    let dims = (1, 2, 5, 5);
    let mut rng = SeedRng::new(seed);
    let n = dims.0 * dims.1 * dims.2 * dims.3;
    let mut coords: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.uniform_range(0.2, 1.0);
            if rng.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let target = tensor_from(
        &(0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>(),
        dims,
    );

    let input = tensor_from(&coords, dims);
    let out = relu(&input);
    let (_, lgrad) = mse_loss(&out, &target)?;
    let analytic = relu_backward(&input, &lgrad).data().to_vec();

    let mut eval = |c: &[f64]| -> f64 {
        let out = relu(&tensor_from(c, dims));
        mse_loss(&out, &target).unwrap().0
    };
    let numeric = central_differences(&mut coords, &mut eval, eps);
    Ok(max_relative_error(&analytic, &numeric))
}

/// Sigmoid gradient check.
pub fn check_sigmoid(seed: u64, eps: f64) -> Result<f64> {
    let dims = (1, 1, 6, 6);
    let mut rng = SeedRng::new(seed);
    let n = dims.0 * dims.1 * dims.2 * dims.3;
    let mut coords: Vec<f64> = (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let target = tensor_from(
        &(0..n).map(|_| rng.uniform_f64()).collect::<Vec<_>>(),
        dims,
    );

    let input = tensor_from(&coords, dims);
    let out = sigmoid(&input);
    let (_, lgrad) = mse_loss(&out, &target)?;
    let analytic = sigmoid_backward(&out, &lgrad).data().to_vec();

    let mut eval = |c: &[f64]| -> f64 {
        let out = sigmoid(&tensor_from(c, dims));
        mse_loss(&out, &target).unwrap().0
    };
    let numeric = central_differences(&mut coords, &mut eval, eps);
    Ok(max_relative_error(&analytic, &numeric))
}

/// Batchnorm gradient check (train mode) over input, gamma and beta.
pub fn check_batchnorm(seed: u64, eps: f64) -> Result<f64> {
    let dims = (2, 3, 4, 4);
    let channels = dims.1;
    let mut rng = SeedRng::new(seed);
    let n = dims.0 * dims.1 * dims.2 * dims.3;
    let mut coords: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
    coords.extend((0..channels).map(|_| rng.uniform_range(0.5, 1.5))); // gamma
    coords.extend((0..channels).map(|_| rng.uniform_range(-0.5, 0.5))); // beta
    let target = tensor_from(
        &(0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>(),
        dims,
    );

    let unpack = |c: &[f64]| -> (Tensor<f64>, BatchNormParams<f64>) {
        let input = tensor_from(&c[..n], dims);
        let mut params = BatchNormParams::identity(channels);
        params.gamma = c[n..n + channels].to_vec();
        params.beta = c[n + channels..].to_vec();
        (input, params)
    };

    let (input, mut params) = unpack(&coords);
    let (out, cache) = batchnorm_forward(&input, &mut params, BnMode::Train)?;
    let cache = cache.unwrap();
    let (_, lgrad) = mse_loss(&out, &target)?;
    let (gi, grads) = batchnorm_backward(&cache, &params, &lgrad)?;
    let mut analytic = gi.data().to_vec();
    analytic.extend_from_slice(&grads.gamma);
    analytic.extend_from_slice(&grads.beta);

    let mut eval = |c: &[f64]| -> f64 {
        let (input, mut params) = unpack(c);
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        mse_loss(&out, &target).unwrap().0
    };
    let numeric = central_differences(&mut coords, &mut eval, eps);
    Ok(max_relative_error(&analytic, &numeric))
}

/// End-to-end gradient check of a full model (every convolution weight and
/// bias, every batchnorm gamma/beta, and the input) against central finite
/// differences of the map loss.
pub fn check_model(depth: usize, filters: usize, seed: u64, eps: f64, fault: Fault) -> Result<f64> {
    let dims = (1, 3, 8, 8);
    let base = build_model::<f64>(depth, filters, &mut SeedRng::new(seed))?;
    let mut rng = SeedRng::new(seed ^ 0xabcdef);
    let n_in = dims.0 * dims.1 * dims.2 * dims.3;

    let mut coords: Vec<f64> = (0..n_in).map(|_| rng.uniform_f64()).collect();
    for (i, conv) in base.convs.iter().enumerate() {
        coords.extend_from_slice(&conv.weights);
        coords.extend_from_slice(&conv.bias);
        if i >= 1 && i <= depth - 2 {
            coords.extend_from_slice(&base.bns[i - 1].gamma);
            coords.extend_from_slice(&base.bns[i - 1].beta);
        }
    }
    let target = tensor_from(
        &(0..dims.2 * dims.3)
            .map(|_| if rng.bernoulli(0.3) { 1.0 } else { 0.0 })
            .collect::<Vec<_>>(),
        (1, 1, dims.2, dims.3),
    );

    let assemble = |c: &[f64]| -> (Tensor<f64>, crate::model::IdcnnModel<f64>) {
        let input = tensor_from(&c[..n_in], dims);
        let mut model = base.clone();
        let mut pos = n_in;
        for i in 0..depth {
            let wlen = model.convs[i].weights.len();
            model.convs[i].weights.copy_from_slice(&c[pos..pos + wlen]);
            pos += wlen;
            let blen = model.convs[i].bias.len();
            model.convs[i].bias.copy_from_slice(&c[pos..pos + blen]);
            pos += blen;
            if i >= 1 && i <= depth - 2 {
                let glen = model.bns[i - 1].gamma.len();
                model.bns[i - 1].gamma.copy_from_slice(&c[pos..pos + glen]);
                pos += glen;
                model.bns[i - 1].beta.copy_from_slice(&c[pos..pos + glen]);
                pos += glen;
            }
        }
        debug_assert_eq!(pos, c.len());
        (input, model)
    };

    let (input, mut model) = assemble(&coords);
    let (out, cache) = model.forward_train(&input)?;
    let (_, lgrad) = mse_loss(&out, &target)?;
    let grads = model.backward(&cache, &lgrad)?;

    let mut analytic = grads.input.data().to_vec();
    for i in 0..depth {
        let mut w = grads.convs[i].weights.clone();
        if fault == Fault::ScaleConvWeightGrad && i == 0 {
            for v in &mut w {
                *v *= 2.0;
            }
        }
        analytic.extend_from_slice(&w);
        analytic.extend_from_slice(&grads.convs[i].bias);
        if i >= 1 && i <= depth - 2 {
            analytic.extend_from_slice(&grads.bns[i - 1].gamma);
            analytic.extend_from_slice(&grads.bns[i - 1].beta);
        }
    }

    let mut eval = |c: &[f64]| -> f64 {
        let (input, mut model) = assemble(c);
        let (out, _) = model.forward_train(&input).unwrap();
        mse_loss(&out, &target).unwrap().0
    };
    let numeric = central_differences(&mut coords, &mut eval, eps);
    Ok(max_relative_error(&analytic, &numeric))
}

/// One named verification result.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// The standard layer-by-layer and whole-stack gradient checks.
pub fn standard_checks(fault: Fault) -> Result<Vec<CheckReport>> {
    let eps = 1e-5;
    Ok(vec![
        CheckReport {
            name: "grad conv2d (linear, wide step)",
            max_rel_err: check_conv(101, 1e-2)?,
            threshold: 1e-9,
        },
        CheckReport {
            name: "grad conv2d",
            max_rel_err: check_conv(102, eps)?,
            threshold: 1e-5,
        },
        CheckReport {
            name: "grad relu",
            max_rel_err: check_relu(103, eps)?,
            threshold: 1e-5,
        },
        CheckReport {
            name: "grad sigmoid",
            max_rel_err: check_sigmoid(104, eps)?,
            threshold: 1e-5,
        },
        CheckReport {
            name: "grad batchnorm",
            max_rel_err: check_batchnorm(105, eps)?,
            threshold: 1e-5,
        },
        CheckReport {
            name: "grad full depth-5 model",
            max_rel_err: check_model(5, 4, 106, eps, fault)?,
            threshold: 1e-5,
        },
    ])
}
