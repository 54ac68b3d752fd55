//! Semantic fusion to the joint broadcast latent and per-user de-fusion.
//!
//! Fusion runs in three stages: a convolutional joint embedding of the
//! concatenated per-user features, a stack of CSI-aware transformer blocks
//! conditioned on both CSIs, and a convolutional compression to 2n reals
//! followed by power normalization. De-fusion mirrors the encoder's first
//! stage and is conditioned on that user's CSI only.

use candle_core::Tensor;
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::channel::{power_normalize, ChannelSymbols};
use crate::error::{Error, Result};
use crate::nn::{BlockConfig, ConvHead, CsiEncoder, TransformerBlock};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Total fused input channels Omega.
    pub omega: usize,
    /// Fusion ratio alpha: user 1 contributes c1 = ceil(alpha * omega).
    pub alpha: f64,
    /// Fusion transformer depth n^sf.
    pub n_sf: usize,
    /// De-fusion transformer depth n^df.
    pub n_df: usize,
    /// Complex channel uses n.
    pub n: usize,
    /// Token grid (h, w) the fusion operates on; matches the encoder output.
    pub grid_h: usize,
    pub grid_w: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
    pub shift_alternate: bool,
    pub csi_sin_dim: usize,
    pub csi_hidden: usize,
    pub csi_dim: usize,
    /// Channel width the de-fusion hands to the decoder.
    pub defuse_out_dim: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sf == 0 || self.n_df == 0 {
            return Err(Error::config("fusion and de-fusion depths must be >= 1"));
        }
        split_channels(self.alpha, self.omega)?;
        if (2 * self.n) % (self.grid_h * self.grid_w) != 0 {
            return Err(Error::config(format!(
                "2n = {} reals do not tile the {}x{} latent grid",
                2 * self.n,
                self.grid_h,
                self.grid_w
            )));
        }
        if self.grid_h % self.window != 0 || self.grid_w % self.window != 0 {
            return Err(Error::config(format!(
                "window {} does not divide the fusion grid {}x{}",
                self.window, self.grid_h, self.grid_w
            )));
        }
        Ok(())
    }

    /// Channels of the compressed latent map: c_lat * grid = 2n reals.
    pub fn latent_channels(&self) -> usize {
        2 * self.n / (self.grid_h * self.grid_w)
    }

    fn blocks(
        &self,
        depth: usize,
        v_dim: usize,
        dim: usize,
        vb: &VarBuilder,
    ) -> Result<Vec<TransformerBlock>> {
        (0..depth)
            .map(|i| {
                let cfg = BlockConfig {
                    embed_dim: dim,
                    num_heads: self.num_heads,
                    window: self.window,
                    mlp_ratio: self.mlp_ratio,
                    shift: self.shift_alternate && i % 2 == 1,
                };
                TransformerBlock::new(cfg, v_dim, self.grid_h, vb.pp(format!("blk{i}")))
            })
            .collect()
    }
}

/// Fusion-ratio channel split: c1 = ceil(alpha*omega), c2 = floor((1-alpha)*omega).
pub fn split_channels(alpha: f64, omega: usize) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must be in [0,1], got {alpha}")));
    }
    if omega < 2 {
        return Err(Error::config("omega must be >= 2"));
    }
    let c1 = (alpha * omega as f64).ceil() as usize;
    let c2 = omega - c1;
    if c1 == 0 || c2 == 0 {
        return Err(Error::config(format!(
            "split ({c1}, {c2}) at alpha={alpha} silences one user"
        )));
    }
    Ok((c1, c2))
}

/// Three-stage fusion of both users' features into the broadcast latent.
pub struct FusionModule {
    csi_enc1: CsiEncoder,
    csi_enc2: CsiEncoder,
    embed: ConvHead,
    blocks: Vec<TransformerBlock>,
    compress: ConvHead,
    n: usize,
}

impl FusionModule {
    pub fn new(cfg: &FusionConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.csi_dim;
        Ok(Self {
            csi_enc1: CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, t, vb.pp("csi_enc1"))?,
            csi_enc2: CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, t, vb.pp("csi_enc2"))?,
            embed: ConvHead::new(cfg.omega, cfg.embed_dim, vb.pp("embed"))?,
            blocks: cfg.blocks(cfg.n_sf, 2 * t, cfg.embed_dim, &vb.pp("sf"))?,
            compress: ConvHead::new(cfg.embed_dim, cfg.latent_channels(), vb.pp("compress"))?,
            n: cfg.n,
        })
    }

    /// Fuse per-user features (equal spatial dims, c1 + c2 channels total)
    /// into n unit-power complex symbols.
    pub fn forward(
        &self,
        x1e: &Tensor,
        x2e: &Tensor,
        snr1_db: f64,
        snr2_db: f64,
    ) -> Result<ChannelSymbols> {
        let (b1, _c1, h1, w1) = x1e.dims4()?;
        let (b2, _c2, h2, w2) = x2e.dims4()?;
        if (h1, w1) != (h2, w2) || b1 != b2 {
            return Err(Error::shape(format!(
                "fusion inputs disagree: {:?} vs {:?}",
                x1e.dims(),
                x2e.dims()
            )));
        }
        let joint = Tensor::cat(&[x1e, x2e], 1)?;
        self.forward_joint(&joint, snr1_db, snr2_db)
    }

    /// Fusion over an already-concatenated feature map (single-user schemes
    /// pass their lone feature map directly).
    pub fn forward_joint(
        &self,
        joint: &Tensor,
        snr1_db: f64,
        snr2_db: f64,
    ) -> Result<ChannelSymbols> {
        let v1 = self.csi_enc1.forward(snr1_db)?;
        let v2 = self.csi_enc2.forward(snr2_db)?;
        let v = Tensor::cat(&[&v1, &v2], 0)?;
        let mut x = self.embed.forward(joint)?;
        for blk in &self.blocks {
            x = blk.forward(&x, &v)?;
        }
        let z = self.compress.forward(&x)?;
        let b = z.dims()[0];
        let raw = z.reshape((b, 2 * self.n))?;
        power_normalize(&raw)
    }
}

/// Per-user de-fusion from received symbols back to a feature map.
pub struct DefusionModule {
    csi_enc: CsiEncoder,
    expand: ConvHead,
    blocks: Vec<TransformerBlock>,
    out: ConvHead,
    n: usize,
    grid: (usize, usize),
    latent_channels: usize,
}

impl DefusionModule {
    pub fn new(cfg: &FusionConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let u = cfg.csi_dim;
        Ok(Self {
            csi_enc: CsiEncoder::new(cfg.csi_sin_dim, cfg.csi_hidden, u, vb.pp("csi_enc"))?,
            expand: ConvHead::new(cfg.latent_channels(), cfg.embed_dim, vb.pp("expand"))?,
            blocks: cfg.blocks(cfg.n_df, u, cfg.embed_dim, &vb.pp("df"))?,
            out: ConvHead::new(cfg.embed_dim, cfg.defuse_out_dim, vb.pp("out"))?,
            n: cfg.n,
            grid: (cfg.grid_h, cfg.grid_w),
            latent_channels: cfg.latent_channels(),
        })
    }

    /// Received symbols (B, 2n reals) -> feature map for this user's decoder.
    /// Conditioned only on this user's SNR; there is no input for the other
    /// user's CSI.
    pub fn forward(&self, y: &ChannelSymbols, snr_db: f64) -> Result<Tensor> {
        if y.n != self.n {
            return Err(Error::shape(format!(
                "de-fusion expects n = {}, got {}",
                self.n, y.n
            )));
        }
        let b = y.data.dims()[0];
        let v = self.csi_enc.forward(snr_db)?;
        let (h, w) = self.grid;
        let mut x = y
            .data
            .reshape((b, self.latent_channels, h, w))?
            .contiguous()?;
        x = self.expand.forward(&x)?;
        for blk in &self.blocks {
            x = blk.forward(&x, &v)?;
        }
        self.out.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    fn toy_cfg() -> FusionConfig {
        FusionConfig {
            omega: 8,
            alpha: 0.5,
            n_sf: 2,
            n_df: 2,
            n: 192, // 2n = 384 = 6 channels on an 8x8 grid
            grid_h: 8,
            grid_w: 8,
            embed_dim: 8,
            num_heads: 2,
            window: 4,
            mlp_ratio: 2.0,
            shift_alternate: true,
            csi_sin_dim: 8,
            csi_hidden: 8,
            csi_dim: 8,
            defuse_out_dim: 8,
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_channels(0.5, 16).unwrap(), (8, 8));
        assert_eq!(split_channels(0.3, 16).unwrap(), (5, 11));
        for omega in [8usize, 16, 32] {
            for i in 1..100 {
                let alpha = i as f64 / 100.0;
                match split_channels(alpha, omega) {
                    Ok((c1, c2)) => {
                        assert_eq!(c1 + c2, omega);
                        assert!(c1 >= 1 && c2 >= 1);
                    }
                    Err(_) => {
                        // only near-degenerate corners may error
                        assert!(alpha * omega as f64 >= (omega - 1) as f64);
                    }
                }
            }
        }
        assert!(split_channels(-0.1, 16).is_err());
        assert!(split_channels(1.0, 16).is_err());
    }

    fn build() -> (VarMap, FusionModule, DefusionModule, FusionConfig) {
        let cfg = toy_cfg();
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let f = FusionModule::new(&cfg, vb.pp("fusion")).unwrap();
        let d = DefusionModule::new(&cfg, vb.pp("defuse1")).unwrap();
        (varmap, f, d, cfg)
    }

    #[test]
    fn fuse_emits_unit_power_latent() {
        let (_vm, fusion, _df, cfg) = build();
        let x1 = Tensor::rand(0f32, 1.0, (3, 4, 8, 8), &Device::Cpu).unwrap();
        let x2 = Tensor::rand(0f32, 1.0, (3, 4, 8, 8), &Device::Cpu).unwrap();
        let z = fusion.forward(&x1, &x2, 13.0, 8.0).unwrap();
        assert_eq!(z.n, cfg.n);
        assert_eq!(z.data.dims(), &[3, 2 * cfg.n]);
        for p in z.sample_powers().unwrap() {
            assert!((p - 1.0).abs() <= 1e-5, "latent power {p}");
        }
    }

    #[test]
    fn fuse_is_batch_equivariant() {
        let (_vm, fusion, _df, _cfg) = build();
        let x1 = Tensor::rand(0f32, 1.0, (2, 4, 8, 8), &Device::Cpu).unwrap();
        let x2 = Tensor::rand(0f32, 1.0, (2, 4, 8, 8), &Device::Cpu).unwrap();
        let z = fusion.forward(&x1, &x2, 13.0, 8.0).unwrap();
        // swap the two samples in both inputs
        let flip = |t: &Tensor| {
            Tensor::cat(&[&t.narrow(0, 1, 1).unwrap(), &t.narrow(0, 0, 1).unwrap()], 0).unwrap()
        };
        let z2 = fusion.forward(&flip(&x1), &flip(&x2), 13.0, 8.0).unwrap();
        let a = z.data.to_vec2::<f32>().unwrap();
        let b = z2.data.to_vec2::<f32>().unwrap();
        for (x, y) in a[0].iter().zip(&b[1]) {
            assert!((x - y).abs() < 1e-5);
        }
        for (x, y) in a[1].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn defuse_shapes_and_determinism() {
        let (_vm, fusion, defuse, cfg) = build();
        let x1 = Tensor::rand(0f32, 1.0, (2, 4, 8, 8), &Device::Cpu).unwrap();
        let x2 = Tensor::rand(0f32, 1.0, (2, 4, 8, 8), &Device::Cpu).unwrap();
        let z = fusion.forward(&x1, &x2, 13.0, 8.0).unwrap();
        let f = defuse.forward(&z, 13.0).unwrap();
        assert_eq!(f.dims(), &[2, cfg.defuse_out_dim, cfg.grid_h, cfg.grid_w]);
        let f2 = defuse.forward(&z, 13.0).unwrap();
        assert_eq!(
            f.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            f2.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        // wrong length
        let bad = ChannelSymbols { data: Tensor::zeros((2, 100), DType::F32, &Device::Cpu).unwrap(), n: 50 };
        assert!(defuse.forward(&bad, 13.0).is_err());
    }

    #[test]
    fn mismatched_spatial_dims_error() {
        let (_vm, fusion, _df, _cfg) = build();
        let x1 = Tensor::rand(0f32, 1.0, (1, 4, 8, 8), &Device::Cpu).unwrap();
        let x2 = Tensor::rand(0f32, 1.0, (1, 4, 4, 4), &Device::Cpu).unwrap();
        assert!(fusion.forward(&x1, &x2, 13.0, 8.0).is_err());
    }
}
