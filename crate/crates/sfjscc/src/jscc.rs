//! The CSI-aware JSCC encoder and decoder.
//!
//! The encoder sees both users' SNRs (the transmitter knows both CSIs); each
//! decoder sees only its own. Stage layout: the encoder patch-embeds, runs
//! depth-n blocks per stage with a merge between stages, and ends in a
//! pointwise head producing that user's share of fusion channels. The decoder
//! mirrors this with reverse projections and a sigmoid-squashed image head.

use candle_core::Tensor;
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BlockConfig, ConvHead, CsiEncoder, PatchEmbed, PatchMerge, PatchReverse, TransformerBlock};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsccConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Patch factor of the embed stage (each merge/reverse contributes
    /// another factor of 2).
    pub patch: usize,
    /// Stage-1 channel width; merging doubles it per stage.
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
    /// Alternate plain and shifted window partitions within a stage.
    pub shift_alternate: bool,
    /// Encoder stage depths n_k^e.
    pub enc_depths: Vec<usize>,
    /// Decoder stage depths n_m^d.
    pub dec_depths: Vec<usize>,
    /// Sinusoidal embedding width fed to the CSI encoders.
    pub csi_sin_dim: usize,
    pub csi_hidden: usize,
    /// CSI vector length t (encoder side) and u (decoder side).
    pub csi_dim: usize,
    /// Head width c_j, set by the fusion split at model-build time.
    pub out_channels: usize,
}

impl JsccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc_depths.is_empty() || self.dec_depths.is_empty() {
            return Err(Error::config("encoder and decoder need at least one stage"));
        }
        if self.enc_depths.iter().chain(&self.dec_depths).any(|&d| d == 0) {
            return Err(Error::config("stage depths must be >= 1"));
        }
        if self.out_channels == 0 {
            return Err(Error::config("out_channels must be >= 1"));
        }
        let enc_factor = self.patch << (self.enc_depths.len() - 1);
        let dec_factor = 1usize << self.dec_depths.len();
        if enc_factor != dec_factor {
            return Err(Error::config(format!(
                "decoder reverse stages (x{dec_factor}) do not restore the encoder \
                 downsampling (x{enc_factor}); the reshape to 3xHxW would fail"
            )));
        }
        if self.image_h % enc_factor != 0 || self.image_w % enc_factor != 0 {
            return Err(Error::config(format!(
                "image {}x{} not divisible by the cumulative patch factor {enc_factor}",
                self.image_h, self.image_w
            )));
        }
        let (gh, gw) = self.latent_grid();
        if gh % self.window != 0 || gw % self.window != 0 {
            return Err(Error::config(format!(
                "window {} does not divide the final-stage grid {gh}x{gw}",
                self.window
            )));
        }
        Ok(())
    }

    /// Grid of the encoder's final stage (= decoder stage-1 expectation).
    pub fn latent_grid(&self) -> (usize, usize) {
        let f = self.patch << (self.enc_depths.len() - 1);
        (self.image_h / f, self.image_w / f)
    }

    /// Channel width of the encoder's final stage.
    pub fn latent_dim(&self) -> usize {
        self.embed_dim << (self.enc_depths.len() - 1)
    }

    fn block_cfg(&self, dim: usize, shift: bool) -> BlockConfig {
        BlockConfig {
            embed_dim: dim,
            num_heads: self.num_heads,
            window: self.window,
            mlp_ratio: self.mlp_ratio,
            shift,
        }
    }

    fn stage_blocks(
        &self,
        depth: usize,
        dim: usize,
        rows: usize,
        v_dim: usize,
        vb: &VarBuilder,
    ) -> Result<Vec<TransformerBlock>> {
        (0..depth)
            .map(|i| {
                let shift = self.shift_alternate && i % 2 == 1;
                TransformerBlock::new(self.block_cfg(dim, shift), v_dim, rows, vb.pp(format!("blk{i}")))
            })
            .collect()
    }
}

/// Channel uses for an HxW image at the given channel bandwidth ratio:
/// n = round(cbr * 3 * H * W) complex uses.
pub fn cbr_channel_uses(h: usize, w: usize, cbr: f64) -> Result<usize> {
    if cbr <= 0.0 {
        return Err(Error::config(format!("CBR must be positive, got {cbr}")));
    }
    let n = (cbr * 3.0 * h as f64 * w as f64).round() as usize;
    if n < 1 {
        return Err(Error::config(format!("CBR {cbr} yields zero channel uses")));
    }
    Ok(n)
}

struct EncoderStage {
    merge: Option<PatchMerge>,
    blocks: Vec<TransformerBlock>,
}

/// DBC-aware JSCC encoder for one user.
pub struct JsccEncoder {
    csi_enc1: CsiEncoder,
    csi_enc2: CsiEncoder,
    embed: PatchEmbed,
    stages: Vec<EncoderStage>,
    head: ConvHead,
}

impl JsccEncoder {
    pub fn new(cfg: &JsccConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.csi_dim;
        let csi_enc1 = CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, t, vb.pp("csi_enc1"))?;
        let csi_enc2 = CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, t, vb.pp("csi_enc2"))?;
        let embed = PatchEmbed::new(3, cfg.embed_dim, cfg.patch, vb.pp("embed"))?;
        let mut stages = Vec::new();
        let mut dim = cfg.embed_dim;
        let mut rows = cfg.image_h / cfg.patch;
        for (k, &depth) in cfg.enc_depths.iter().enumerate() {
            let merge = if k == 0 {
                None
            } else {
                let m = PatchMerge::new(dim, vb.pp(format!("stage{k}_merge")))?;
                dim *= 2;
                rows /= 2;
                Some(m)
            };
            let blocks =
                cfg.stage_blocks(depth, dim, rows, 2 * t, &vb.pp(format!("stage{k}")))?;
            stages.push(EncoderStage { merge, blocks });
        }
        let head = ConvHead::new(dim, cfg.out_channels, vb.pp("head"))?;
        Ok(Self { csi_enc1, csi_enc2, embed, stages, head })
    }

    /// Images (B,3,H,W) -> features (B, c_j, h, w), conditioned on both SNRs.
    pub fn forward(&self, s: &Tensor, snr1_db: f64, snr2_db: f64) -> Result<Tensor> {
        let v1 = self.csi_enc1.forward(snr1_db)?;
        let v2 = self.csi_enc2.forward(snr2_db)?;
        let v = Tensor::cat(&[&v1, &v2], 0)?;
        let mut x = self.embed.forward(s)?;
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                x = m.forward(&x)?;
            }
            for blk in &stage.blocks {
                x = blk.forward(&x, &v)?;
            }
        }
        self.head.forward(&x)
    }
}

struct DecoderStage {
    blocks: Vec<TransformerBlock>,
    reverse: PatchReverse,
}

/// DBC-aware JSCC decoder for one user; consumes only that user's SNR.
pub struct JsccDecoder {
    csi_enc: CsiEncoder,
    stages: Vec<DecoderStage>,
    head: ConvHead,
}

impl JsccDecoder {
    pub fn new(cfg: &JsccConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let u = cfg.csi_dim;
        let csi_enc = CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, u, vb.pp("csi_enc"))?;
        let mut stages = Vec::new();
        let mut dim = cfg.latent_dim();
        let (mut rows, _) = cfg.latent_grid();
        for (m, &depth) in cfg.dec_depths.iter().enumerate() {
            let blocks = cfg.stage_blocks(depth, dim, rows, u, &vb.pp(format!("stage{m}")))?;
            let reverse = PatchReverse::new(dim, vb.pp(format!("stage{m}_reverse")))?;
            dim /= 2;
            rows *= 2;
            stages.push(DecoderStage { blocks, reverse });
        }
        let head = ConvHead::new(dim, 3, vb.pp("head"))?;
        Ok(Self { csi_enc, stages, head })
    }

    /// De-fused features (B, latent_dim, h, w) -> image (B,3,H,W) in [0,1].
    pub fn forward(&self, y_df: &Tensor, snr_db: f64) -> Result<Tensor> {
        let v = self.csi_enc.forward(snr_db)?;
        let mut x = y_df.clone();
        for stage in &self.stages {
            for blk in &stage.blocks {
                x = blk.forward(&x, &v)?;
            }
            x = stage.reverse.forward(&x)?;
        }
        let img = self.head.forward(&x)?;
        Ok(candle_nn::ops::sigmoid(&img)?)
    }
}
