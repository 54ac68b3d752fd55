//! End-to-end transmit pipelines.
//!
//! `SfModel` is the proposed scheme: two JSCC encoders, semantic fusion into
//! one broadcast latent, and per-user de-fusion + decoding. `SingleUserModel`
//! is a point-to-point JSCC with the same structure, used by the TD and PA
//! baselines; `TdPipeline`/`PaPipeline` wire two of them to the broadcast
//! channel. Estimated CSI drives every network input; the true channel state
//! only sets the physical noise powers.

use candle_core::Tensor;
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::baselines::pa_superpose;
use crate::channel::{snr_db_to_noise_power, transmit, ChannelState, ChannelSymbols};
use crate::error::{Error, Result};
use crate::fusion::{split_channels, DefusionModule, FusionConfig, FusionModule};
use crate::jscc::{JsccConfig, JsccDecoder, JsccEncoder};
use crate::rng::Stream;

/// Reconstructions for both users plus the shared broadcast latent.
pub struct SfOutput {
    pub s1_hat: Tensor,
    pub s2_hat: Tensor,
    pub tx: ChannelSymbols,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SfModelConfig {
    /// Backbone shared by both users' encoders/decoders; `out_channels` is
    /// overridden per user by the fusion split.
    pub jscc: JsccConfig,
    /// Fusion ratio alpha.
    pub alpha: f64,
    /// Total fused channels Omega = c1 + c2.
    pub omega: usize,
    pub n_sf: usize,
    pub n_df: usize,
    /// Complex channel uses n.
    pub n: usize,
}

impl SfModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion_config()?.validate()?;
        let (c1, c2) = split_channels(self.alpha, self.omega)?;
        self.user_jscc(c1)?.validate()?;
        self.user_jscc(c2)?.validate()
    }

    fn user_jscc(&self, out_channels: usize) -> Result<JsccConfig> {
        let mut cfg = self.jscc.clone();
        cfg.out_channels = out_channels;
        Ok(cfg)
    }

    /// Fusion setup derived from the backbone: it runs on the encoder's
    /// final-stage grid at the encoder's final-stage width, and de-fusion
    /// hands the decoder exactly the width it expects.
    pub fn fusion_config(&self) -> Result<FusionConfig> {
        let (gh, gw) = self.jscc.latent_grid();
        Ok(FusionConfig {
            omega: self.omega,
            alpha: self.alpha,
            n_sf: self.n_sf,
            n_df: self.n_df,
            n: self.n,
            grid_h: gh,
            grid_w: gw,
            embed_dim: self.jscc.latent_dim(),
            num_heads: self.jscc.num_heads,
            window: self.jscc.window,
            mlp_ratio: self.jscc.mlp_ratio,
            shift_alternate: self.jscc.shift_alternate,
            csi_sin_dim: self.jscc.csi_sin_dim,
            csi_hidden: self.jscc.csi_hidden,
            csi_dim: self.jscc.csi_dim,
            defuse_out_dim: self.jscc.latent_dim(),
        })
    }
}

/// The fusion-based broadcasting scheme, end to end.
pub struct SfModel {
    enc1: JsccEncoder,
    enc2: JsccEncoder,
    fusion: FusionModule,
    defuse1: DefusionModule,
    defuse2: DefusionModule,
    dec1: JsccDecoder,
    dec2: JsccDecoder,
}

impl SfModel {
    pub fn new(cfg: &SfModelConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let (c1, c2) = split_channels(cfg.alpha, cfg.omega)?;
        let fusion_cfg = cfg.fusion_config()?;
        Ok(Self {
            enc1: JsccEncoder::new(&cfg.user_jscc(c1)?, vb.pp("enc1"))?,
            enc2: JsccEncoder::new(&cfg.user_jscc(c2)?, vb.pp("enc2"))?,
            fusion: FusionModule::new(&fusion_cfg, vb.pp("fusion"))?,
            defuse1: DefusionModule::new(&fusion_cfg, vb.pp("defuse1"))?,
            defuse2: DefusionModule::new(&fusion_cfg, vb.pp("defuse2"))?,
            dec1: JsccDecoder::new(&cfg.user_jscc(c1)?, vb.pp("dec1"))?,
            dec2: JsccDecoder::new(&cfg.user_jscc(c2)?, vb.pp("dec2"))?,
        })
    }

    /// User 1's encoder output (the semantic feature map handed to fusion),
    /// for similarity analysis.
    pub fn features_user1(&self, s1: &Tensor, est: &ChannelState) -> Result<Tensor> {
        self.enc1.forward(s1, est.snr1_db, est.snr2_db)
    }

    /// Encode both images and fuse them into the broadcast latent.
    pub fn encode(&self, s1: &Tensor, s2: &Tensor, est: &ChannelState) -> Result<ChannelSymbols> {
        let x1e = self.enc1.forward(s1, est.snr1_db, est.snr2_db)?;
        let x2e = self.enc2.forward(s2, est.snr1_db, est.snr2_db)?;
        self.fusion.forward(&x1e, &x2e, est.snr1_db, est.snr2_db)
    }

    /// De-fuse and decode the symbols one user received, with that user's
    /// estimated SNR only.
    pub fn decode_user(&self, y: &ChannelSymbols, user: usize, snr_db: f64) -> Result<Tensor> {
        match user {
            1 => self.dec1.forward(&self.defuse1.forward(y, snr_db)?, snr_db),
            2 => self.dec2.forward(&self.defuse2.forward(y, snr_db)?, snr_db),
            _ => Err(Error::config(format!("user must be 1 or 2, got {user}"))),
        }
    }

    /// Full broadcast round trip at training/eval step `step`.
    pub fn forward(
        &self,
        s1: &Tensor,
        s2: &Tensor,
        est: &ChannelState,
        truth: &ChannelState,
        seed: u64,
        step: u64,
    ) -> Result<SfOutput> {
        let tx = self.encode(s1, s2, est)?;
        let y1 = transmit(&tx, snr_db_to_noise_power(truth.snr1_db), seed, step, Stream::NoiseUser1)?;
        let y2 = transmit(&tx, snr_db_to_noise_power(truth.snr2_db), seed, step, Stream::NoiseUser2)?;
        let s1_hat = self.decode_user(&y1, 1, est.snr1_db)?;
        let s2_hat = self.decode_user(&y2, 2, est.snr2_db)?;
        Ok(SfOutput { s1_hat, s2_hat, tx })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleUserConfig {
    /// Backbone; `out_channels` is the width handed to the (single-input)
    /// fusion stage.
    pub jscc: JsccConfig,
    pub n_sf: usize,
    pub n_df: usize,
    /// This link's complex channel-use budget.
    pub n: usize,
}

impl SingleUserConfig {
    pub fn validate(&self) -> Result<()> {
        self.jscc.validate()?;
        self.fusion_config().validate()
    }

    fn fusion_config(&self) -> FusionConfig {
        let (gh, gw) = self.jscc.latent_grid();
        FusionConfig {
            omega: self.jscc.out_channels,
            // The split is unused for a single input; any interior alpha
            // satisfies validation.
            alpha: 0.5,
            n_sf: self.n_sf,
            n_df: self.n_df,
            n: self.n,
            grid_h: gh,
            grid_w: gw,
            embed_dim: self.jscc.latent_dim(),
            num_heads: self.jscc.num_heads,
            window: self.jscc.window,
            mlp_ratio: self.jscc.mlp_ratio,
            shift_alternate: self.jscc.shift_alternate,
            csi_sin_dim: self.jscc.csi_sin_dim,
            csi_hidden: self.jscc.csi_hidden,
            csi_dim: self.jscc.csi_dim,
            defuse_out_dim: self.jscc.latent_dim(),
        }
    }
}

/// A point-to-point JSCC link with the same encoder/fusion/de-fusion/decoder
/// structure as one arm of the SF scheme.
pub struct SingleUserModel {
    enc: JsccEncoder,
    fusion: FusionModule,
    defuse: DefusionModule,
    dec: JsccDecoder,
}

impl SingleUserModel {
    pub fn new(cfg: &SingleUserConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let fusion_cfg = cfg.fusion_config();
        Ok(Self {
            enc: JsccEncoder::new(&cfg.jscc, vb.pp("enc"))?,
            fusion: FusionModule::new(&fusion_cfg, vb.pp("fusion"))?,
            defuse: DefusionModule::new(&fusion_cfg, vb.pp("defuse"))?,
            dec: JsccDecoder::new(&cfg.jscc, vb.pp("dec"))?,
        })
    }

    /// Image -> unit-power symbols, conditioned on this link's SNR estimate.
    pub fn encode(&self, s: &Tensor, snr_db: f64) -> Result<ChannelSymbols> {
        let x = self.enc.forward(s, snr_db, snr_db)?;
        self.fusion.forward_joint(&x, snr_db, snr_db)
    }

    /// Received symbols -> image, conditioned on this link's SNR estimate.
    pub fn decode(&self, y: &ChannelSymbols, snr_db: f64) -> Result<Tensor> {
        self.dec.forward(&self.defuse.forward(y, snr_db)?, snr_db)
    }
}

/// Time division: each user gets an independent link sized to its share of
/// the channel uses, and the transmissions do not interact.
pub struct TdPipeline {
    pub user1: SingleUserModel,
    pub user2: SingleUserModel,
}

impl TdPipeline {
    pub fn forward(
        &self,
        s1: &Tensor,
        s2: &Tensor,
        est: &ChannelState,
        truth: &ChannelState,
        seed: u64,
        step: u64,
    ) -> Result<(Tensor, Tensor)> {
        let x1 = self.user1.encode(s1, est.snr1_db)?;
        let x2 = self.user2.encode(s2, est.snr2_db)?;
        let y1 = transmit(&x1, snr_db_to_noise_power(truth.snr1_db), seed, step, Stream::NoiseUser1)?;
        let y2 = transmit(&x2, snr_db_to_noise_power(truth.snr2_db), seed, step, Stream::NoiseUser2)?;
        Ok((
            self.user1.decode(&y1, est.snr1_db)?,
            self.user2.decode(&y2, est.snr2_db)?,
        ))
    }
}

/// Power allocation: both users' full-length codewords are superposed with
/// amplitude weights and broadcast; each receiver decodes its own image
/// directly, treating the other layer as noise.
pub struct PaPipeline {
    pub user1: SingleUserModel,
    pub user2: SingleUserModel,
    pub gamma: f64,
}

impl PaPipeline {
    pub fn forward(
        &self,
        s1: &Tensor,
        s2: &Tensor,
        est: &ChannelState,
        truth: &ChannelState,
        seed: u64,
        step: u64,
    ) -> Result<(Tensor, Tensor)> {
        let x1 = self.user1.encode(s1, est.snr1_db)?;
        let x2 = self.user2.encode(s2, est.snr2_db)?;
        let tx = pa_superpose(&x1, &x2, self.gamma)?;
        let y1 = transmit(&tx, snr_db_to_noise_power(truth.snr1_db), seed, step, Stream::NoiseUser1)?;
        let y2 = transmit(&tx, snr_db_to_noise_power(truth.snr2_db), seed, step, Stream::NoiseUser2)?;
        Ok((
            self.user1.decode(&y1, est.snr1_db)?,
            self.user2.decode(&y2, est.snr2_db)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    fn low_res_config() -> SfModelConfig {
        SfModelConfig {
            jscc: JsccConfig {
                image_h: 32,
                image_w: 32,
                patch: 2,
                embed_dim: 8,
                num_heads: 2,
                window: 4,
                mlp_ratio: 1.0,
                shift_alternate: true,
                enc_depths: vec![4],
                dec_depths: vec![4],
                csi_sin_dim: 8,
                csi_hidden: 8,
                csi_dim: 8,
                out_channels: 0,
            },
            alpha: 0.5,
            omega: 16,
            n_sf: 2,
            n_df: 2,
            n: 768,
        }
    }

    fn high_res_config() -> SfModelConfig {
        SfModelConfig {
            jscc: JsccConfig {
                image_h: 128,
                image_w: 128,
                patch: 2,
                embed_dim: 8,
                num_heads: 2,
                window: 4,
                mlp_ratio: 1.0,
                shift_alternate: true,
                enc_depths: vec![2, 4],
                dec_depths: vec![4, 2],
                csi_sin_dim: 8,
                csi_hidden: 8,
                csi_dim: 8,
                out_channels: 0,
            },
            alpha: 0.5,
            omega: 16,
            n_sf: 6,
            n_df: 6,
            n: 6144,
        }
    }

    fn build(cfg: &SfModelConfig) -> SfModel {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        SfModel::new(cfg, vb).unwrap()
    }

    fn round_trip(cfg: &SfModelConfig) {
        let model = build(cfg);
        let (h, w) = (cfg.jscc.image_h, cfg.jscc.image_w);
        let s1 = Tensor::rand(0f32, 1f32, (2, 3, h, w), &Device::Cpu).unwrap();
        let s2 = Tensor::rand(0f32, 1f32, (2, 3, h, w), &Device::Cpu).unwrap();
        let csi = ChannelState::new(13.0, 8.0);
        let out = model.forward(&s1, &s2, &csi, &csi, 7, 0).unwrap();
        assert_eq!(out.s1_hat.dims(), s1.dims());
        assert_eq!(out.s2_hat.dims(), s2.dims());
        assert_eq!(out.tx.n, cfg.n);
        let flat = out.s1_hat.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(flat.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn low_res_round_trip() {
        round_trip(&low_res_config());
    }

    #[test]
    fn high_res_round_trip() {
        round_trip(&high_res_config());
    }

    #[test]
    fn noiseless_channel_is_deterministic() {
        let cfg = low_res_config();
        let model = build(&cfg);
        let s = Tensor::rand(0f32, 1f32, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let csi = ChannelState::new(100.0, 100.0);
        let tx = model.encode(&s, &s, &csi).unwrap();
        let a = model.decode_user(&tx, 1, csi.snr1_db).unwrap();
        let b = model.decode_user(&tx, 1, csi.snr1_db).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn estimated_csi_feeds_network_true_csi_feeds_noise() {
        let cfg = low_res_config();
        let model = build(&cfg);
        let s = Tensor::rand(0f32, 1f32, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let est = ChannelState::new(13.0, 8.0);
        // Same estimate, very different physical channels: outputs must differ
        // because only the noise draw changed scale.
        let clean = ChannelState::new(60.0, 60.0);
        let noisy = ChannelState::new(0.0, 0.0);
        let a = model.forward(&s, &s, &est, &clean, 7, 0).unwrap();
        let b = model.forward(&s, &s, &est, &noisy, 7, 0).unwrap();
        let diff = (a.s1_hat - b.s1_hat)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 1e-4, "physical noise power had no effect ({diff})");
    }

    #[test]
    fn single_user_round_trip() {
        let sf = low_res_config();
        let cfg = SingleUserConfig {
            jscc: JsccConfig { out_channels: 16, ..sf.jscc.clone() },
            n_sf: 2,
            n_df: 2,
            n: 384,
        };
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let model = SingleUserModel::new(&cfg, vb).unwrap();
        let s = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let x = model.encode(&s, 10.0).unwrap();
        assert_eq!(x.n, 384);
        let y = transmit(&x, snr_db_to_noise_power(10.0), 7, 0, Stream::NoiseUser1).unwrap();
        let s_hat = model.decode(&y, 10.0).unwrap();
        assert_eq!(s_hat.dims(), s.dims());
    }

    #[test]
    fn pa_pipeline_shapes() {
        let sf = low_res_config();
        let cfg = SingleUserConfig {
            jscc: JsccConfig { out_channels: 16, ..sf.jscc.clone() },
            n_sf: 2,
            n_df: 2,
            n: 768,
        };
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let pipe = PaPipeline {
            user1: SingleUserModel::new(&cfg, vb.pp("u1")).unwrap(),
            user2: SingleUserModel::new(&cfg, vb.pp("u2")).unwrap(),
            gamma: 0.5,
        };
        let s = Tensor::rand(0f32, 1f32, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let csi = ChannelState::new(13.0, 8.0);
        let (a, b) = pipe.forward(&s, &s, &csi, &csi, 7, 0).unwrap();
        assert_eq!(a.dims(), s.dims());
        assert_eq!(b.dims(), s.dims());
    }
}
