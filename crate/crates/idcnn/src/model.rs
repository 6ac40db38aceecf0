//! The impulse-detection network: a head convolution with ReLU, a body of
//! conv + batchnorm + ReLU blocks, a single-channel tail convolution and a
//! sigmoid that turns the response into a per-pixel impulse probability.

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv2d, conv2d_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, BatchNormParams, BnCache, BnGrads, BnMode,
    ConvGrads, ConvParams,
};
use crate::rng::SeedRng;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_DEPTH: usize = 17;
pub const DEFAULT_FILTERS: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct IdcnnModel<E: Element> {
    depth: usize,
    filters: usize,
    pub convs: Vec<ConvParams<E>>,
    pub bns: Vec<BatchNormParams<E>>,
}

/// Per-layer activations saved by the training forward pass.
pub struct ForwardCache<E: Element> {
    conv_inputs: Vec<Tensor<E>>,
    relu_inputs: Vec<Tensor<E>>,
    bn_caches: Vec<BnCache<E>>,
    sigmoid_out: Tensor<E>,
}

/// Gradients for every trainable tensor, plus the input gradient.
pub struct ModelGrads<E: Element> {
    pub convs: Vec<ConvGrads<E>>,
    pub bns: Vec<BnGrads<E>>,
    pub input: Tensor<E>,
}

/// Builds the layer stack with Glorot-initialized convolutions and identity
/// batchnorm parameters.
pub fn build_model<E: Element>(depth: usize, filters: usize, rng: &mut SeedRng) -> Result<IdcnnModel<E>> {
    if depth < 3 {
        return Err(Error::contract(
            "model depth must be at least 3 (head, body, tail)",
        ));
    }
    if filters < 1 {
        return Err(Error::contract("model needs at least one filter"));
    }
    let mut convs = Vec::with_capacity(depth);
    convs.push(ConvParams::glorot(INPUT_CHANNELS, filters, rng));
    for _ in 1..depth - 1 {
        convs.push(ConvParams::glorot(filters, filters, rng));
    }
    convs.push(ConvParams::glorot(filters, 1, rng));
    let bns = (0..depth - 2).map(|_| BatchNormParams::identity(filters)).collect();
    Ok(IdcnnModel {
        depth,
        filters,
        convs,
        bns,
    })
}

impl<E: Element> IdcnnModel<E> {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    /// (convolutions, batchnorms, relus, sigmoids) in the stack.
    pub fn layer_counts(&self) -> (usize, usize, usize, usize) {
        (self.depth, self.depth - 2, self.depth - 1, 1)
    }

    pub fn from_parts(
        depth: usize,
        filters: usize,
        convs: Vec<ConvParams<E>>,
        bns: Vec<BatchNormParams<E>>,
    ) -> Result<Self> {
        if depth < 3 || convs.len() != depth || bns.len() != depth - 2 {
            return Err(Error::contract("inconsistent model layer list"));
        }
        if convs[0].c_in != INPUT_CHANNELS || convs[depth - 1].k_out != 1 {
            return Err(Error::contract(
                "model must map 3 input channels to a single-channel response",
            ));
        }
        Ok(IdcnnModel {
            depth,
            filters,
            convs,
            bns,
        })
    }

    pub fn convert<T: Element>(&self) -> IdcnnModel<T> {
        IdcnnModel {
            depth: self.depth,
            filters: self.filters,
            convs: self.convs.iter().map(|c| c.convert()).collect(),
            bns: self.bns.iter().map(|b| b.convert()).collect(),
        }
    }

    /// Inference pass over a whole batch: batchnorm uses running statistics.
    /// Input values are expected in [0, 1]; the output has one channel of
    /// probabilities strictly inside (0, 1).
    pub fn forward_infer(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        if input.channels() != INPUT_CHANNELS {
            return Err(Error::contract(format!(
                "detector input must have 3 channels, got {}",
                input.channels()
            )));
        }
        let mut x = relu(&conv2d(input, &self.convs[0])?);
        for i in 1..self.depth - 1 {
            let a = conv2d(&x, &self.convs[i])?;
            let b = batchnorm_infer(&a, &self.bns[i - 1])?;
            x = relu(&b);
        }
        Ok(sigmoid(&conv2d(&x, &self.convs[self.depth - 1])?))
    }

    /// Training pass: batch statistics, running-average updates, and a cache
    /// for [`IdcnnModel::backward`].
    pub fn forward_train(&mut self, input: &Tensor<E>) -> Result<(Tensor<E>, ForwardCache<E>)> {
        if input.channels() != INPUT_CHANNELS {
            return Err(Error::contract(format!(
                "detector input must have 3 channels, got {}",
                input.channels()
            )));
        }
        let depth = self.depth;
        let mut conv_inputs = Vec::with_capacity(depth);
        let mut relu_inputs = Vec::with_capacity(depth - 1);
        let mut bn_caches = Vec::with_capacity(depth - 2);

        let mut x = input.clone();
        for i in 0..depth - 1 {
            conv_inputs.push(x.clone());
            let a = conv2d(&x, &self.convs[i])?;
            let pre = if i == 0 {
                a
            } else {
                let (b, cache) = batchnorm_forward(&a, &mut self.bns[i - 1], BnMode::Train)?;
                bn_caches.push(cache.expect("train mode always caches"));
                b
            };
            relu_inputs.push(pre.clone());
            x = relu(&pre);
        }
        conv_inputs.push(x.clone());
        let out = sigmoid(&conv2d(&x, &self.convs[depth - 1])?);
        let cache = ForwardCache {
            conv_inputs,
            relu_inputs,
            bn_caches,
            sigmoid_out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Backpropagates `grad_out` (gradient with respect to the sigmoid
    /// output) through the whole stack.
    pub fn backward(&self, cache: &ForwardCache<E>, grad_out: &Tensor<E>) -> Result<ModelGrads<E>> {
        let depth = self.depth;
        let mut conv_grads: Vec<Option<ConvGrads<E>>> = (0..depth).map(|_| None).collect();
        let mut bn_grads: Vec<Option<BnGrads<E>>> = (0..depth - 2).map(|_| None).collect();

        let mut g = sigmoid_backward(&cache.sigmoid_out, grad_out);
        let (gi, cg) = conv2d_backward(&cache.conv_inputs[depth - 1], &self.convs[depth - 1], &g)?;
        conv_grads[depth - 1] = Some(cg);
        g = gi;

        for i in (0..depth - 1).rev() {
            g = relu_backward(&cache.relu_inputs[i], &g);
            if i > 0 {
                let (gb, bg) = batchnorm_backward(&cache.bn_caches[i - 1], &self.bns[i - 1], &g)?;
                bn_grads[i - 1] = Some(bg);
                g = gb;
            }
            let (gi, cg) = conv2d_backward(&cache.conv_inputs[i], &self.convs[i], &g)?;
            conv_grads[i] = Some(cg);
            g = gi;
        }

        Ok(ModelGrads {
            convs: conv_grads.into_iter().map(|g| g.unwrap()).collect(),
            bns: bn_grads.into_iter().map(|g| g.unwrap()).collect(),
            input: g,
        })
    }

    /// Runs the detector over a whole image at once and returns the
    /// probability map.
    pub fn probability_map(&self, image: &ColorImage) -> Result<NoiseMap> {
        let (h, w) = image.dims();
        if h < 3 || w < 3 {
            return Err(Error::contract(format!(
                "detector needs at least a 3x3 image, got {h}x{w}"
            )));
        }
        let input = image_to_tensor::<E>(image);
        let out = self.forward_infer(&input)?;
        debug_assert_eq!(out.dims(), (1, 1, h, w));
        let data = out
            .data()
            .iter()
            .map(|&v| (v.to_f64() as f32).clamp(0.0, 1.0))
            .collect();
        NoiseMap::from_raw(h, w, data)
    }

    /// Thresholds the probability map; a pixel is flagged noisy when its
    /// probability is >= `threshold` (the tie goes to restoration).
    pub fn detect(&self, image: &ColorImage, threshold: f64) -> Result<NoiseMap> {
        let prob = self.probability_map(image)?;
        threshold_map(&prob, threshold)
    }
}

/// Binarizes a probability map: flagged iff probability >= threshold.
pub fn threshold_map(prob: &NoiseMap, threshold: f64) -> Result<NoiseMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!(
            "threshold {threshold} outside the open interval (0, 1)"
        )));
    }
    let (h, w) = prob.dims();
    let data = prob
        .data()
        .iter()
        .map(|&p| if (p as f64) >= threshold { 1.0 } else { 0.0 })
        .collect();
    NoiseMap::from_raw(h, w, data)
}

/// Scales 8-bit channels to [0, 1] and lays the image out as 1×3×H×W.
pub fn image_to_tensor<E: Element>(image: &ColorImage) -> Tensor<E> {
    let (h, w) = image.dims();
    let mut t = Tensor::zeros(1, INPUT_CHANNELS, h, w);
    for q in 0..INPUT_CHANNELS {
        let start = q * h * w;
        let plane = &mut t.data_mut()[start..start + h * w];
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = E::from_f64(image.channel(y, x, q) as f64 / 255.0);
            }
        }
    }
    t
}

/// Stacks noisy patches into the (n, 3, p, p) input tensor and their maps
/// into the (n, 1, p, p) target tensor.
pub fn batch_to_tensors<E: Element>(
    patches: &[&crate::dataset::Patch],
) -> Result<(Tensor<E>, Tensor<E>)> {
    if patches.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let (p_h, p_w) = patches[0].noisy.dims();
    let n = patches.len();
    let mut input = Tensor::zeros(n, INPUT_CHANNELS, p_h, p_w);
    let mut target = Tensor::zeros(n, 1, p_h, p_w);
    for (s, patch) in patches.iter().enumerate() {
        if patch.noisy.dims() != (p_h, p_w) || patch.map.dims() != (p_h, p_w) {
            return Err(Error::contract("batch patches must share one size"));
        }
        for q in 0..INPUT_CHANNELS {
            let start = input.offset(s, q, 0, 0);
            let plane = &mut input.data_mut()[start..start + p_h * p_w];
            for y in 0..p_h {
                for x in 0..p_w {
                    plane[y * p_w + x] = E::from_f64(patch.noisy.channel(y, x, q) as f64 / 255.0);
                }
            }
        }
        let start = target.offset(s, 0, 0, 0);
        let plane = &mut target.data_mut()[start..start + p_h * p_w];
        for (d, &m) in plane.iter_mut().zip(patch.map.data()) {
            *d = E::from_f64(m as f64);
        }
    }
    Ok((input, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_layer_counts() {
        let model: IdcnnModel<f32> = build_model(17, 64, &mut SeedRng::new(1)).unwrap();
        assert_eq!(model.layer_counts(), (17, 15, 16, 1));
        assert_eq!(model.convs[0].c_in, 3);
        assert_eq!(model.convs[0].k_out, 64);
        assert_eq!(model.convs[16].k_out, 1);
        for bn in &model.bns {
            assert!(bn.gamma.iter().all(|&g| g == 1.0));
            assert!(bn.beta.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn minimal_model_runs_forward() {
        let model: IdcnnModel<f64> = build_model(3, 1, &mut SeedRng::new(2)).unwrap();
        let input = Tensor::zeros(1, 3, 8, 8);
        let out = model.forward_infer(&input).unwrap();
        assert_eq!(out.dims(), (1, 1, 8, 8));
    }

    #[test]
    fn depth_below_three_rejected() {
        assert!(build_model::<f32>(2, 4, &mut SeedRng::new(3)).is_err());
        assert!(build_model::<f32>(3, 0, &mut SeedRng::new(3)).is_err());
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a: IdcnnModel<f32> = build_model(5, 4, &mut SeedRng::new(11)).unwrap();
        let b: IdcnnModel<f32> = build_model(5, 4, &mut SeedRng::new(11)).unwrap();
        for (x, y) in a.convs.iter().zip(&b.convs) {
            assert_eq!(x.weights, y.weights);
            assert_eq!(x.bias, y.bias);
        }
    }

    #[test]
    fn untrained_probabilities_stay_in_open_interval() {
        let model: IdcnnModel<f32> = build_model(5, 4, &mut SeedRng::new(7)).unwrap();
        let mut rng = SeedRng::new(8);
        let mut img = ColorImage::new(16, 16);
        for b in img.data_mut() {
            *b = rng.uniform_u8();
        }
        let map = model.probability_map(&img).unwrap();
        assert_eq!(map.dims(), (16, 16));
        for &p in map.data() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn detect_threshold_semantics() {
        let model: IdcnnModel<f32> = build_model(3, 2, &mut SeedRng::new(9)).unwrap();
        let mut img = ColorImage::new(8, 8);
        for (i, b) in img.data_mut().iter_mut().enumerate() {
            *b = (i % 251) as u8;
        }
        let prob = model.probability_map(&img).unwrap();
        let det = model.detect(&img, 0.5).unwrap();
        for (p, d) in prob.data().iter().zip(det.data()) {
            assert_eq!(*d, if *p >= 0.5 { 1.0 } else { 0.0 });
        }
        assert!(model.detect(&img, 0.0).is_err());
        assert!(model.detect(&img, 1.0).is_err());
    }

    #[test]
    fn threshold_tie_flags_the_pixel() {
        let prob = NoiseMap::from_raw(1, 3, vec![0.49, 0.5, 0.7]).unwrap();
        let det = threshold_map(&prob, 0.5).unwrap();
        assert_eq!(det.data(), &[0.0, 1.0, 1.0]);
        assert!(threshold_map(&prob, 0.0).is_err());
        assert!(threshold_map(&prob, 1.0).is_err());
    }

    #[test]
    fn detect_is_monotone_in_threshold() {
        let model: IdcnnModel<f32> = build_model(4, 3, &mut SeedRng::new(10)).unwrap();
        let mut rng = SeedRng::new(11);
        let mut img = ColorImage::new(12, 12);
        for b in img.data_mut() {
            *b = rng.uniform_u8();
        }
        let lo = model.detect(&img, 0.3).unwrap();
        let hi = model.detect(&img, 0.7).unwrap();
        for (l, h) in lo.data().iter().zip(hi.data()) {
            assert!(h <= l, "raising the threshold added a flagged pixel");
        }
    }

    #[test]
    fn non_three_channel_input_rejected() {
        let model: IdcnnModel<f64> = build_model(3, 2, &mut SeedRng::new(12)).unwrap();
        let input = Tensor::zeros(1, 2, 8, 8);
        assert!(model.forward_infer(&input).is_err());
    }

    #[test]
    fn forward_output_matches_input_spatial_dims() {
        let model: IdcnnModel<f64> = build_model(4, 2, &mut SeedRng::new(13)).unwrap();
        for &(h, w) in &[(3, 3), (5, 9), (16, 7)] {
            let input = Tensor::zeros(2, 3, h, w);
            let out = model.forward_infer(&input).unwrap();
            assert_eq!(out.dims(), (2, 1, h, w));
        }
    }
}
