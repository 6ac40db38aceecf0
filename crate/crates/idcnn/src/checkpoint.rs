//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian, all tensor values little-endian f32:
//!
//! ```text
//! magic        8 bytes  "IDCNNCKP"
//! version      u32      1
//! depth        u32
//! filters      u32
//! epochs       u32
//! batch_size   u32
//! patch_size   u32
//! decay_epoch  u32
//! lr           f64
//! lr_decay     f64
//! noise_kind   u8       0 = fixed, 1 = uniform range
//! rho_lo       f64
//! rho_hi       f64      (equals rho_lo for fixed)
//! seed         u64
//! epochs_done  u32
//! noise_model  u8       0 = ctri, 1 = spin
//! augment      u8       0 / 1
//! n_scales     u32, then n f64 resize scales
//! layer_count  u32      depth + (depth − 2), forward order
//! per layer:
//!   tag u8             1 = conv, 2 = batchnorm
//!   conv:      c_in u32, k_out u32, k_out·c_in·9 f32 weights, k_out f32 bias
//!   batchnorm: channels u32, gamma, beta, running_mean, running_var
//!              (channels f32 each), eps f32, momentum f32
//! optimizer    u8       0 = absent, 1 = present
//! if present:  per parameter group in forward order (conv weights, conv
//!              bias, bn gamma, bn beta): t u64, then m and v as f32 arrays
//!              of the group length
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::IdcnnModel;
use crate::nn::{AdamState, BatchNormParams, ConvParams};
use crate::noise::{NoiseModel, TrainingNoise};
use crate::train::{param_group_count, TrainConfig};

const MAGIC: &[u8; 8] = b"IDCNNCKP";
const VERSION: u32 = 1;

/// A saved model plus the training configuration that produced it; the
/// optimizer state is present in mid-training checkpoints.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: IdcnnModel<f32>,
    pub config: TrainConfig,
    pub epochs_done: u32,
    /// Dataset-pipeline settings the training corpus was built with.
    pub noise_model: NoiseModel,
    pub augment: bool,
    pub scales: Vec<f64>,
    pub optimizer: Option<Vec<AdamState<f32>>>,
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let model = &ckpt.model;
    let cfg = &ckpt.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        model.depth() as u32,
        model.filters() as u32,
        cfg.epochs as u32,
        cfg.batch_size as u32,
        cfg.patch_size as u32,
        cfg.decay_epoch as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.lr.to_le_bytes());
    out.extend_from_slice(&cfg.lr_decay.to_le_bytes());
    let (kind, lo, hi) = match cfg.train_noise {
        TrainingNoise::Fixed(rho) => (0u8, rho, rho),
        TrainingNoise::Uniform { lo, hi } => (1u8, lo, hi),
    };
    out.push(kind);
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.epochs_done.to_le_bytes());
    out.push(match ckpt.noise_model {
        NoiseModel::Ctri => 0,
        NoiseModel::Spin => 1,
    });
    out.push(ckpt.augment as u8);
    out.extend_from_slice(&(ckpt.scales.len() as u32).to_le_bytes());
    for s in &ckpt.scales {
        out.extend_from_slice(&s.to_le_bytes());
    }

    let depth = model.depth();
    out.extend_from_slice(&((depth + depth - 2) as u32).to_le_bytes());
    for i in 0..depth {
        let conv = &model.convs[i];
        out.push(1);
        out.extend_from_slice(&(conv.c_in as u32).to_le_bytes());
        out.extend_from_slice(&(conv.k_out as u32).to_le_bytes());
        for v in conv.weights.iter().chain(&conv.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if i >= 1 && i <= depth - 2 {
            let bn = &model.bns[i - 1];
            out.push(2);
            out.extend_from_slice(&(bn.channels() as u32).to_le_bytes());
            for arr in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                for v in arr.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            out.extend_from_slice(&bn.eps.to_le_bytes());
            out.extend_from_slice(&bn.momentum.to_le_bytes());
        }
    }

    match &ckpt.optimizer {
        None => out.push(0),
        Some(states) => {
            if states.len() != param_group_count(depth) {
                return Err(Error::contract(
                    "optimizer state does not match the model's parameter groups",
                ));
            }
            out.push(1);
            for st in states {
                out.extend_from_slice(&st.t.to_le_bytes());
                for v in st.m.iter().chain(&st.v) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let s = self.take(8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        let s = self.take(4)?;
        Ok(f32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
    fn f64(&mut self) -> Result<f64> {
        let s = self.take(8)?;
        Ok(f64::from_le_bytes(s.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let s = self.take(4 * n)?;
        Ok(s.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let depth = r.u32()? as usize;
    let filters = r.u32()? as usize;
    let epochs = r.u32()? as usize;
    let batch_size = r.u32()? as usize;
    let patch_size = r.u32()? as usize;
    let decay_epoch = r.u32()? as usize;
    let lr = r.f64()?;
    let lr_decay = r.f64()?;
    let kind = r.u8()?;
    let lo = r.f64()?;
    let hi = r.f64()?;
    let seed = r.u64()?;
    let epochs_done = r.u32()?;
    let noise_model = match r.u8()? {
        0 => NoiseModel::Ctri,
        1 => NoiseModel::Spin,
        other => {
            return Err(Error::format(
                path,
                format!("unknown noise model tag {other}"),
            ))
        }
    };
    let augment = r.u8()? != 0;
    let n_scales = r.u32()? as usize;
    let mut scales = Vec::with_capacity(n_scales);
    for _ in 0..n_scales {
        scales.push(r.f64()?);
    }
    let train_noise = match kind {
        0 => TrainingNoise::Fixed(lo),
        1 => TrainingNoise::Uniform { lo, hi },
        other => {
            return Err(Error::format(
                path,
                format!("unknown noise kind tag {other}"),
            ))
        }
    };
    let config = TrainConfig {
        epochs,
        lr,
        lr_decay,
        decay_epoch,
        batch_size,
        patch_size,
        train_noise,
        seed,
    };

    let layer_count = r.u32()? as usize;
    if depth < 3 || layer_count != depth + depth - 2 {
        return Err(Error::format(path, "layer count does not match depth"));
    }
    let mut convs: Vec<ConvParams<f32>> = Vec::with_capacity(depth);
    let mut bns: Vec<BatchNormParams<f32>> = Vec::with_capacity(depth - 2);
    for _ in 0..layer_count {
        match r.u8()? {
            1 => {
                let c_in = r.u32()? as usize;
                let k_out = r.u32()? as usize;
                let weights = r.f32_vec(k_out * c_in * 9)?;
                let bias = r.f32_vec(k_out)?;
                convs.push(ConvParams::from_parts(c_in, k_out, weights, bias)?);
            }
            2 => {
                let channels = r.u32()? as usize;
                let gamma = r.f32_vec(channels)?;
                let beta = r.f32_vec(channels)?;
                let running_mean = r.f32_vec(channels)?;
                let running_var = r.f32_vec(channels)?;
                let eps = r.f32()?;
                let momentum = r.f32()?;
                bns.push(BatchNormParams {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                });
            }
            other => {
                return Err(Error::format(path, format!("unknown layer tag {other}")));
            }
        }
    }
    let model = IdcnnModel::from_parts(depth, filters, convs, bns)?;

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let mut states = Vec::with_capacity(param_group_count(depth));
            let mut lens = Vec::new();
            for i in 0..depth {
                lens.push(model.convs[i].weights.len());
                lens.push(model.convs[i].bias.len());
                if i >= 1 && i <= depth - 2 {
                    lens.push(model.bns[i - 1].gamma.len());
                    lens.push(model.bns[i - 1].beta.len());
                }
            }
            for len in lens {
                let t = r.u64()?;
                let m = r.f32_vec(len)?;
                let v = r.f32_vec(len)?;
                let mut st = AdamState::new(len, lr);
                st.t = t;
                st.m = m;
                st.v = v;
                states.push(st);
            }
            Some(states)
        }
        other => {
            return Err(Error::format(
                path,
                format!("unknown optimizer tag {other}"),
            ))
        }
    };

    Ok(Checkpoint {
        model,
        config,
        epochs_done,
        noise_model,
        augment,
        scales,
        optimizer,
    })
}
