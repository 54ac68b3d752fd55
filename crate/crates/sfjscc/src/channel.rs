//! Power-normalized complex AWGN degraded broadcast channel.
//!
//! Complex symbols are carried as a real tensor of shape (B, 2n) with
//! consecutive (real, imaginary) pairs. Both normalization and transmission
//! stay inside the autodiff graph so gradients flow back to the encoder.

use candle_core::{DType, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Per-user channel state: SNR estimates in dB plus the estimation-error
/// std used to produce them (0 when the estimate is exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub snr1_db: f64,
    pub snr2_db: f64,
    pub sigma_e: f64,
}

impl ChannelState {
    pub fn new(snr1_db: f64, snr2_db: f64) -> Self {
        Self { snr1_db, snr2_db, sigma_e: 0.0 }
    }

    /// True for a degraded pair (user 1 sees the cleaner channel).
    pub fn is_degraded(&self) -> bool {
        self.snr1_db > self.snr2_db
    }
}

/// A batch of complex channel symbols, (B, 2n) interleaved reals.
#[derive(Debug, Clone)]
pub struct ChannelSymbols {
    pub data: Tensor,
    pub n: usize,
}

impl ChannelSymbols {
    /// Per-sample mean |x_i|^2.
    pub fn sample_powers(&self) -> Result<Vec<f64>> {
        let p = self
            .data
            .sqr()?
            .sum(1)?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        Ok(p.into_iter().map(|s| s / self.n as f64).collect())
    }
}

/// Noise power sigma^2 for a given SNR in dB under unit signal power.
pub fn snr_db_to_noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Scale each sample of a (B, 2n) real tensor to unit average complex symbol
/// power. All-zero samples come out as zeros and raise a warning.
pub fn power_normalize(raw: &Tensor) -> Result<ChannelSymbols> {
    let dims = raw.dims();
    if dims.len() != 2 || dims[1] % 2 != 0 || dims[1] < 2 {
        return Err(Error::shape(format!(
            "power_normalize expects (B, 2n) with n >= 1, got {dims:?}"
        )));
    }
    let n = dims[1] / 2;
    // mean |x_i|^2 = sum of squared reals / n
    let power = (raw.sqr()?.sum_keepdim(1)? / n as f64)?;
    let degenerate = power
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .iter()
        .filter(|&&p| p < 1e-20)
        .count();
    if degenerate > 0 {
        log::warn!("power_normalize: {degenerate} degenerate all-zero sample(s)");
    }
    let scale = (power + 1e-24)?.sqrt()?.recip()?;
    let data = raw.broadcast_mul(&scale)?;
    Ok(ChannelSymbols { data, n })
}

/// y = x + n with circularly symmetric complex Gaussian noise of total
/// per-symbol variance `noise_power` (half per real component).
pub fn transmit(x: &ChannelSymbols, noise_power: f64, seed: u64, step: u64, stream: Stream) -> Result<ChannelSymbols> {
    if noise_power < 0.0 {
        return Err(Error::config("noise power must be nonnegative"));
    }
    if noise_power == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = stream_rng(seed, stream, step);
    let std = (noise_power / 2.0).sqrt();
    let count = x.data.elem_count();
    let noise: Vec<f32> = (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * std) as f32
        })
        .collect();
    let noise = Tensor::from_vec(noise, x.data.dims(), x.data.device())?
        .to_dtype(x.data.dtype())?;
    Ok(ChannelSymbols { data: (&x.data + &noise)?, n: x.n })
}

/// Training-time CSI draw: SNR1 uniform on [5, 19] dB, SNR2 a 3 or 5 dB gap
/// below it.
pub fn sample_training_csi(rng: &mut impl Rng) -> ChannelState {
    let snr1 = rng.gen_range(5.0..=19.0);
    let gap = if rng.gen_bool(0.5) { 3.0 } else { 5.0 };
    ChannelState::new(snr1, snr1 - gap)
}

/// Perturb the SNR estimates by independent N(0, sigma_e^2) dB offsets. The
/// physical channel keeps the unperturbed noise powers; only the estimates
/// handed to the CSI encoders move.
pub fn perturb_csi(state: &ChannelState, sigma_e: f64, rng: &mut impl Rng) -> ChannelState {
    if sigma_e == 0.0 {
        return *state;
    }
    let d1: f64 = StandardNormal.sample(rng);
    let d2: f64 = StandardNormal.sample(rng);
    ChannelState {
        snr1_db: state.snr1_db + d1 * sigma_e,
        snr2_db: state.snr2_db + d2 * sigma_e,
        sigma_e,
    }
}
