//! Neural building blocks: swish, sinusoidal CSI embedding, the CSI encoding
//! module, additive CSI-map injection, windowed-attention transformer blocks,
//! and the patch embed/merge/reverse/conv primitives.
//!
//! Feature maps travel as (B, C, H, W) tensors. Transformer blocks convert to
//! token form internally and preserve the input shape.

pub mod gradcheck;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{
    conv2d, conv_transpose2d, linear, Conv2d, Conv2dConfig, ConvTranspose2d,
    ConvTranspose2dConfig, Linear, VarBuilder,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency base of the sinusoidal embedding.
const SIN_BASE: f64 = 1e4;

/// swish(x) = x * sigmoid(x), elementwise.
pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&candle_nn::ops::sigmoid(x)?)?)
}

/// Parameter-free sinusoidal embedding of an SNR value: interleaved sin/cos
/// at geometrically spaced frequencies, the raw dB value as the position.
pub fn sinusoidal_embed(snr_db: f64, dim: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(format!(
            "sinusoidal embedding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut v = vec![0f64; dim];
    for i in 0..half {
        let freq = SIN_BASE.powf(-(2.0 * i as f64) / dim as f64);
        let angle = snr_db * freq;
        v[2 * i] = angle.sin();
        v[2 * i + 1] = angle.cos();
    }
    Ok(Tensor::from_vec(v, dim, dev)?.to_dtype(dtype)?)
}

/// Backbone block hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
    pub shift: bool,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.window == 0 {
            return Err(Error::config("window must be positive"));
        }
        Ok(())
    }
}

/// FC -> swish -> FC on top of the sinusoidal embedding of one SNR.
#[derive(Debug, Clone)]
pub struct CsiEncoder {
    fc1: Linear,
    fc2: Linear,
    sin_dim: usize,
}

impl CsiEncoder {
    pub fn new(sin_dim: usize, hidden: usize, out: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            fc1: linear(sin_dim, hidden, vb.pp("fc1"))?,
            fc2: linear(hidden, out, vb.pp("fc2"))?,
            sin_dim,
        })
    }

    pub fn forward(&self, snr_db: f64) -> Result<Tensor> {
        let dtype = self.fc1.weight().dtype();
        let dev = self.fc1.weight().device();
        let e = sinusoidal_embed(snr_db, self.sin_dim, dtype, dev)?.unsqueeze(0)?;
        let h = swish(&self.fc1.forward(&e)?)?;
        Ok(self.fc2.forward(&h)?.squeeze(0)?)
    }
}

/// Additive CSI-map injection: v -> swish -> FC to a length-h column,
/// replicated across the w axis and added to every channel.
#[derive(Debug, Clone)]
pub struct CsiInject {
    fc: Linear,
    rows: usize,
}

impl CsiInject {
    pub fn new(v_dim: usize, rows: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self { fc: linear(v_dim, rows, vb.pp("fc"))?, rows })
    }

    pub fn forward(&self, feature: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (_b, _c, h, _w) = feature.dims4()?;
        if h != self.rows {
            return Err(Error::config(format!(
                "CSI inject maps to {} rows but the feature map has height {h}",
                self.rows
            )));
        }
        let col = self.fc.forward(&swish(&v.unsqueeze(0)?)?)?; // (1, h)
        let map = col.reshape((1, 1, h, 1))?;
        Ok(feature.broadcast_add(&map)?)
    }
}

/// Cyclic roll along one spatial axis, built from narrow + cat.
fn roll(x: &Tensor, dim: usize, by: i64) -> Result<Tensor> {
    let len = x.dims()[dim] as i64;
    let by = ((by % len) + len) % len;
    if by == 0 {
        return Ok(x.clone());
    }
    let split = (len - by) as usize;
    let a = x.narrow(dim, 0, split)?;
    let b = x.narrow(dim, split, (len as usize) - split)?;
    Ok(Tensor::cat(&[&b, &a], dim)?.contiguous()?)
}

/// (B, H, W, C) -> (B * nWindows, window*window, C)
fn window_partition(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let t = x
        .reshape((b, h / window, window, w / window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?;
    Ok(t.reshape((b * (h / window) * (w / window), window * window, c))?)
}

/// Inverse of [`window_partition`].
fn window_merge(x: &Tensor, window: usize, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = x.dims()[2];
    let t = x
        .reshape((b, h / window, w / window, window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?;
    Ok(t.reshape((b, h, w, c))?)
}

/// Layer normalization over the last axis, built from primitive ops so it
/// differentiates and runs in f64.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(size: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(size, "weight", candle_nn::Init::Const(1.0))?,
            bias: vb.get_with_hints(size, "bias", candle_nn::Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)?)
    }
}

/// Pre-normalized windowed multi-head self-attention + MLP block with
/// residual connections and additive CSI injection up front.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    cfg: BlockConfig,
    inject: CsiInject,
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    mlp_fc1: Linear,
    mlp_fc2: Linear,
}

impl TransformerBlock {
    pub fn new(cfg: BlockConfig, v_dim: usize, rows: usize, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let hidden = (cfg.mlp_ratio * d as f64).round() as usize;
        Ok(Self {
            cfg,
            inject: CsiInject::new(v_dim, rows, vb.pp("inject"))?,
            norm1: LayerNorm::new(d, vb.pp("norm1"))?,
            qkv: linear(d, 3 * d, vb.pp("attn_qkv"))?,
            proj: linear(d, d, vb.pp("attn_proj"))?,
            norm2: LayerNorm::new(d, vb.pp("norm2"))?,
            mlp_fc1: linear(d, hidden, vb.pp("mlp_fc1"))?,
            mlp_fc2: linear(hidden, d, vb.pp("mlp_fc2"))?,
        })
    }

    fn attention(&self, tokens: &Tensor) -> Result<Tensor> {
        let (bw, n, c) = tokens.dims3()?;
        let heads = self.cfg.num_heads;
        let dh = c / heads;
        let qkv = self.qkv.forward(tokens)?; // (bw, n, 3c)
        let qkv = qkv.reshape((bw, n, 3, heads, dh))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?; // (bw, heads, n, dh)
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scale = (dh as f64).powf(-0.5);
        let attn = (q.matmul(&k.transpose(D::Minus2, D::Minus1)?)? * scale)?;
        let attn = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = attn.matmul(&v)?; // (bw, heads, n, dh)
        let out = out.transpose(1, 2)?.contiguous()?.reshape((bw, n, c))?;
        Ok(self.proj.forward(&out)?)
    }

    /// (B, C, H, W) in, same shape out.
    pub fn forward(&self, feature: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = feature.dims4()?;
        let ws = self.cfg.window;
        if h % ws != 0 || w % ws != 0 {
            return Err(Error::config(format!(
                "window {ws} does not divide feature dims {h}x{w}"
            )));
        }
        if c != self.cfg.embed_dim {
            return Err(Error::shape(format!(
                "block expects {} channels, got {c}",
                self.cfg.embed_dim
            )));
        }
        let x = self.inject.forward(feature, v)?;
        let mut t = x.permute((0, 2, 3, 1))?.contiguous()?; // (B, H, W, C)

        let shift = if self.cfg.shift && ws > 1 { (ws / 2) as i64 } else { 0 };
        if shift != 0 {
            t = roll(&roll(&t, 1, -shift)?, 2, -shift)?;
        }
        let windows = window_partition(&t, ws)?;
        let normed = self.norm1.forward(&windows)?;
        let attn = self.attention(&normed)?;
        let windows = (windows + attn)?;
        let mut t = window_merge(&windows, ws, b, h, w)?;
        if shift != 0 {
            t = roll(&roll(&t, 1, shift)?, 2, shift)?;
        }

        let tokens = t.reshape((b, h * w, c))?;
        let m = self.norm2.forward(&tokens)?;
        let m = self.mlp_fc2.forward(&swish(&self.mlp_fc1.forward(&m)?)?)?;
        let tokens = (tokens + m)?;
        Ok(tokens
            .reshape((b, h, w, c))?
            .permute((0, 3, 1, 2))?
            .contiguous()?)
    }
}

/// Strided convolution turning an image or feature map into a token grid.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    conv: Conv2d,
    patch: usize,
}

impl PatchEmbed {
    pub fn new(in_ch: usize, embed_dim: usize, patch: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig { stride: patch, ..Default::default() };
        Ok(Self { conv: conv2d(in_ch, embed_dim, patch, cfg, vb.pp("conv"))?, patch })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_b, _c, h, w) = x.dims4()?;
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::config(format!(
                "patch {} does not divide input dims {h}x{w}",
                self.patch
            )));
        }
        Ok(self.conv.forward(x)?)
    }
}

/// Downsampling projection: halves each spatial dim, doubles the channels.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    conv: Conv2d,
}

impl PatchMerge {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig { stride: 2, ..Default::default() };
        Ok(Self { conv: conv2d(dim, 2 * dim, 2, cfg, vb.pp("conv"))? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_b, _c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!("patch merge needs even dims, got {h}x{w}")));
        }
        Ok(self.conv.forward(x)?)
    }
}

/// Upsampling projection inverse to [`PatchMerge`]: doubles each spatial
/// dim, halves the channels.
#[derive(Debug, Clone)]
pub struct PatchReverse {
    conv: ConvTranspose2d,
}

impl PatchReverse {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::config("patch reverse needs an even channel count"));
        }
        let cfg = ConvTranspose2dConfig { stride: 2, ..Default::default() };
        Ok(Self { conv: conv_transpose2d(dim, dim / 2, 2, cfg, vb.pp("conv"))? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.conv.forward(x)?)
    }
}

/// Pointwise convolution to a requested channel count.
#[derive(Debug, Clone)]
pub struct ConvHead {
    conv: Conv2d,
}

impl ConvHead {
    pub fn new(in_ch: usize, out_ch: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self { conv: conv2d(in_ch, out_ch, 1, Conv2dConfig::default(), vb.pp("conv"))? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.conv.forward(x)?)
    }
}

/// Marks a parameter path as CSI-related (CSI encoders + injection FCs).
pub fn is_csi_param(name: &str) -> bool {
    name.contains("csi_enc") || name.contains("inject")
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::{VarBuilder, VarMap};

    fn vb_f64(varmap: &VarMap) -> VarBuilder<'_> {
        VarBuilder::from_varmap(varmap, DType::F64, &Device::Cpu)
    }

    #[test]
    fn swish_values() {
        let x = Tensor::new(&[0f64, 20.0, -20.0, 1.0], &Device::Cpu).unwrap();
        let y = swish(&x).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 20.0).abs() < 1e-6);
        assert!(y[2].abs() < 1e-6);
        let sig = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((y[3] - sig).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_at_zero_and_range() {
        let e = sinusoidal_embed(0.0, 8, DType::F64, &Device::Cpu)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        for i in 0..4 {
            assert_eq!(e[2 * i], 0.0);
            assert_eq!(e[2 * i + 1], 1.0);
        }
        let e = sinusoidal_embed(17.3, 32, DType::F64, &Device::Cpu)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        let e2 = sinusoidal_embed(17.3, 32, DType::F64, &Device::Cpu)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(e, e2);
        assert!(sinusoidal_embed(1.0, 7, DType::F64, &Device::Cpu).is_err());
    }

    #[test]
    fn csi_encoder_zero_weights_and_determinism() {
        let varmap = VarMap::new();
        let enc = CsiEncoder::new(8, 8, 4, vb_f64(&varmap).pp("csi_enc")).unwrap();
        let a = enc.forward(13.0).unwrap().to_vec1::<f64>().unwrap();
        let b = enc.forward(13.0).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
        // zero all weights -> zero output
        for (_, var) in varmap.data().lock().unwrap().iter() {
            var.set(&var.zeros_like().unwrap()).unwrap();
        }
        let z = enc.forward(13.0).unwrap().to_vec1::<f64>().unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inject_is_column_replicated() {
        let varmap = VarMap::new();
        let inj = CsiInject::new(4, 2, vb_f64(&varmap).pp("inject")).unwrap();
        let f = Tensor::rand(0f64, 1.0, (1, 3, 2, 3), &Device::Cpu).unwrap();
        let v = Tensor::new(&[0.3f64, -0.1, 0.7, 0.2], &Device::Cpu).unwrap();
        let out = inj.forward(&f, &v).unwrap();
        let diff = (out.clone() - &f).unwrap().to_vec3::<f64>(); // 4d, need flatten
        drop(diff);
        let d = (out - &f)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        // layout (1,3,2,3): per channel, rows repeat along w and channels share the column
        let col0 = d[0];
        let col1 = d[3];
        for ch in 0..3 {
            for x in 0..3 {
                assert!((d[ch * 6 + x] - col0).abs() < 1e-12);
                assert!((d[ch * 6 + 3 + x] - col1).abs() < 1e-12);
            }
        }
        // zero FC -> identity
        for (_, var) in varmap.data().lock().unwrap().iter() {
            var.set(&var.zeros_like().unwrap()).unwrap();
        }
        let out = inj.forward(&f, &v).unwrap();
        let d = (out - &f)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn block_preserves_shape_and_residual_identity() {
        let varmap = VarMap::new();
        let cfg = BlockConfig { embed_dim: 8, num_heads: 2, window: 2, mlp_ratio: 2.0, shift: true };
        let blk = TransformerBlock::new(cfg, 4, 4, vb_f64(&varmap).pp("blk")).unwrap();
        let x = Tensor::rand(0f64, 1.0, (2, 8, 4, 4), &Device::Cpu).unwrap();
        let v = Tensor::rand(0f64, 1.0, 4, &Device::Cpu).unwrap();
        let y = blk.forward(&x, &v).unwrap();
        assert_eq!(y.dims(), x.dims());

        // zero attention and MLP branch weights: output = input + CSI map
        for (name, var) in varmap.data().lock().unwrap().iter() {
            if name.contains("attn") || name.contains("mlp") {
                var.set(&var.zeros_like().unwrap()).unwrap();
            }
        }
        let y = blk.forward(&x, &v).unwrap();
        let injected = blk.inject.forward(&x, &v).unwrap();
        let d = (y - injected)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(d < 1e-12, "residual path leaked: {d}");
    }

    #[test]
    fn block_rejects_bad_window() {
        let varmap = VarMap::new();
        let cfg = BlockConfig { embed_dim: 8, num_heads: 2, window: 3, mlp_ratio: 2.0, shift: false };
        let blk = TransformerBlock::new(cfg, 4, 4, vb_f64(&varmap).pp("blk")).unwrap();
        let x = Tensor::rand(0f64, 1.0, (1, 8, 4, 4), &Device::Cpu).unwrap();
        let v = Tensor::rand(0f64, 1.0, 4, &Device::Cpu).unwrap();
        assert!(blk.forward(&x, &v).is_err());
    }

    #[test]
    fn patch_shapes() {
        let varmap = VarMap::new();
        let vb = vb_f64(&varmap);
        let embed = PatchEmbed::new(3, 8, 2, vb.pp("embed")).unwrap();
        let x = Tensor::rand(0f64, 1.0, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let y = embed.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 8, 16, 16]);

        let merge = PatchMerge::new(8, vb.pp("merge")).unwrap();
        let m = merge.forward(&y).unwrap();
        assert_eq!(m.dims(), &[1, 16, 8, 8]);

        let rev = PatchReverse::new(16, vb.pp("rev")).unwrap();
        let r = rev.forward(&m).unwrap();
        assert_eq!(r.dims(), &[1, 8, 16, 16]);

        let head = ConvHead::new(8, 5, vb.pp("head")).unwrap();
        let h = head.forward(&r).unwrap();
        assert_eq!(h.dims(), &[1, 5, 16, 16]);

        let odd = Tensor::rand(0f64, 1.0, (1, 3, 31, 31), &Device::Cpu).unwrap();
        assert!(embed.forward(&odd).is_err());
    }

    #[test]
    fn roll_roundtrip() {
        let x = Tensor::arange(0f64, 24.0, &Device::Cpu)
            .unwrap()
            .reshape((1, 4, 6, 1))
            .unwrap();
        let y = roll(&roll(&x, 1, -2).unwrap(), 1, 2).unwrap();
        let a = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }
}
