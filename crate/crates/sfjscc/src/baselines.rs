//! Comparison broadcasting schemes: time division, power-allocation
//! superposition, and superposition coding with SIC plus an external codec.

use std::path::{Path, PathBuf};
use std::process::Command;


use serde::{Deserialize, Serialize};

use crate::channel::{snr_db_to_noise_power, ChannelSymbols};
use crate::error::{Error, Result};
use crate::objective;

/// Time-division split of the channel uses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TdConfig {
    pub beta: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Power-allocation superposition ratio.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PaConfig {
    pub gamma: f64,
}

/// Superposition-with-SIC layer powers and the resulting bit budgets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SicConfig {
    pub zeta: f64,
    pub r1: f64,
    pub r2: f64,
    pub b1: usize,
    pub b2: usize,
}

/// Split n channel uses between the users by the TD ratio beta.
pub fn td_schedule(n: usize, beta: f64) -> Result<TdConfig> {
    if !(0.0..1.0).contains(&beta) || beta == 0.0 {
        return Err(Error::config(format!("TD ratio beta must be in (0,1), got {beta}")));
    }
    if n < 2 {
        return Err(Error::config("TD needs at least 2 channel uses"));
    }
    let n1 = (beta * n as f64).round() as usize;
    let n2 = n - n1;
    if n1 == 0 || n2 == 0 {
        return Err(Error::config(format!(
            "TD split ({n1}, {n2}) silences a user at beta={beta}, n={n}"
        )));
    }
    Ok(TdConfig { beta, n1, n2 })
}

/// Superpose two unit-power signals with amplitude weights sqrt(gamma) and
/// sqrt(1-gamma).
pub fn pa_superpose(x1: &ChannelSymbols, x2: &ChannelSymbols, gamma: f64) -> Result<ChannelSymbols> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("PA ratio gamma must be in [0,1], got {gamma}")));
    }
    if x1.n != x2.n {
        return Err(Error::shape(format!(
            "pa_superpose length mismatch: {} vs {}",
            x1.n, x2.n
        )));
    }
    let data = ((&x1.data * gamma.sqrt())? + (&x2.data * (1.0 - gamma).sqrt())?)?;
    Ok(ChannelSymbols { data, n: x1.n })
}

/// Achievable rate pair for superposition coding with SIC on the degraded
/// AWGN broadcast channel. zeta is the better user's power fraction; the
/// worse user decodes its layer treating the other as noise, the better user
/// cancels the worse user's layer first.
pub fn sic_rates(zeta: f64, snr1_db: f64, snr2_db: f64) -> Result<(f64, f64)> {
    if !(0.0 < zeta && zeta < 1.0) {
        return Err(Error::config(format!("zeta must be in (0,1), got {zeta}")));
    }
    if snr1_db <= snr2_db {
        return Err(Error::config(format!(
            "degradedness violated: snr1 {snr1_db} dB <= snr2 {snr2_db} dB"
        )));
    }
    let s1 = snr_db_to_noise_power(snr1_db);
    let s2 = snr_db_to_noise_power(snr2_db);
    let r1 = (1.0 + zeta / s1).log2();
    let r2 = (1.0 + (1.0 - zeta) / (zeta + s2)).log2();
    Ok((r1, r2))
}

/// Build the SIC config with bit budgets for n channel uses.
pub fn sic_config(zeta: f64, snr1_db: f64, snr2_db: f64, n: usize) -> Result<SicConfig> {
    let (r1, r2) = sic_rates(zeta, snr1_db, snr2_db)?;
    Ok(SicConfig {
        zeta,
        r1,
        r2,
        b1: (n as f64 * r1).floor() as usize,
        b2: (n as f64 * r2).floor() as usize,
    })
}

/// PSNR result of the codec leg, with a flag for budgets the codec cannot
/// reach (mean-image fallback).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CodecPoint {
    pub psnr_db: f64,
    pub bytes_used: usize,
    pub fallback: bool,
}

/// Subprocess boundary to a standard image codec. The adapter binary must
/// honor `encode <in.ppm> <out.bin> --rate <bpp>` and
/// `decode <in.bin> <out.ppm>`.
#[derive(Debug, Clone)]
pub struct CodecAdapter {
    cmd: PathBuf,
}

pub const CODEC_ENV: &str = "SFJSCC_CODEC";

impl CodecAdapter {
    pub fn new(cmd: impl Into<PathBuf>) -> Result<Self> {
        let cmd = cmd.into();
        let probe = Command::new(&cmd).arg("--help").output();
        match probe {
            Ok(_) => Ok(Self { cmd }),
            Err(e) => Err(Error::CodecUnavailable(format!(
                "cannot run {}: {e}",
                cmd.display()
            ))),
        }
    }

    /// Adapter from the `SFJSCC_CODEC` environment variable.
    pub fn from_env() -> Result<Self> {
        match std::env::var(CODEC_ENV) {
            Ok(p) if !p.is_empty() => Self::new(p),
            _ => Err(Error::CodecUnavailable(format!(
                "set {CODEC_ENV} to the codec adapter binary"
            ))),
        }
    }

    fn run(&self, args: &[&str]) -> Result<()> {
        let out = Command::new(&self.cmd).args(args).output().map_err(|e| {
            Error::CodecUnavailable(format!("{}: {e}", self.cmd.display()))
        })?;
        if !out.status.success() {
            return Err(Error::CodecUnavailable(format!(
                "codec exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(())
    }

    fn encode_decode(&self, ppm: &Path, bpp: f64, dir: &Path) -> Result<(usize, image::RgbImage)> {
        let bin = dir.join("coded.bin");
        let back = dir.join("decoded.ppm");
        self.run(&[
            "encode",
            ppm.to_str().unwrap(),
            bin.to_str().unwrap(),
            "--rate",
            &format!("{bpp}"),
        ])?;
        let bytes = std::fs::metadata(&bin)?.len() as usize;
        self.run(&["decode", bin.to_str().unwrap(), back.to_str().unwrap()])?;
        let img = image::open(&back)?.to_rgb8();
        Ok((bytes, img))
    }
}

fn image_mse(a: &image::RgbImage, b: &image::RgbImage) -> f64 {
    let mut acc = 0.0;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        for k in 0..3 {
            let d = pa.0[k] as f64 / 255.0 - pb.0[k] as f64 / 255.0;
            acc += d * d;
        }
    }
    acc / (a.width() as f64 * a.height() as f64 * 3.0)
}

fn mean_image_psnr(img: &image::RgbImage) -> f64 {
    let n = (img.width() * img.height()) as f64;
    let mut mean = [0.0f64; 3];
    for p in img.pixels() {
        for k in 0..3 {
            mean[k] += p.0[k] as f64 / 255.0;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut acc = 0.0;
    for p in img.pixels() {
        for k in 0..3 {
            let d = p.0[k] as f64 / 255.0 - mean[k];
            acc += d * d;
        }
    }
    objective::psnr(acc / (n * 3.0))
}

/// Compress one image through the external codec at the largest rate whose
/// file fits the bit budget, then report reconstruction PSNR.
pub fn codec_baseline(
    adapter: &CodecAdapter,
    img: &image::RgbImage,
    bit_budget: usize,
) -> Result<CodecPoint> {
    let byte_budget = bit_budget / 8;
    let dir = tempfile::tempdir()?;
    let ppm = dir.path().join("src.ppm");
    img.save_with_format(&ppm, image::ImageFormat::Pnm)?;

    let pixels = (img.width() * img.height()) as f64;
    // binary search over bits-per-pixel; the codec's rate knob is monotone
    let (mut lo, mut hi) = (0.01f64, 24.0f64);
    // does even the lowest rate fit?
    let (min_bytes, _) = adapter.encode_decode(&ppm, lo, dir.path())?;
    if min_bytes > byte_budget {
        return Ok(CodecPoint {
            psnr_db: mean_image_psnr(img),
            bytes_used: 0,
            fallback: true,
        });
    }
    let mut best: Option<(usize, image::RgbImage)> = None;
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        let (bytes, decoded) = adapter.encode_decode(&ppm, mid, dir.path())?;
        if bytes <= byte_budget {
            lo = mid;
            best = Some((bytes, decoded));
        } else {
            hi = mid;
        }
        let _ = pixels;
    }
    let (bytes_used, decoded) = match best {
        Some(b) => b,
        None => adapter.encode_decode(&ppm, lo, dir.path())?,
    };
    Ok(CodecPoint {
        psnr_db: objective::psnr(image_mse(img, &decoded)),
        bytes_used,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::power_normalize;
    use crate::rng::{stream_rng, Stream};
    use candle_core::Device;
    use rand::Rng;

    #[test]
    fn td_splits() {
        let c = td_schedule(768, 0.5).unwrap();
        assert_eq!((c.n1, c.n2), (384, 384));
        let c = td_schedule(768, 0.25).unwrap();
        assert_eq!((c.n1, c.n2), (192, 576));
        for i in 1..100 {
            let beta = i as f64 / 100.0;
            let c = td_schedule(768, beta).unwrap();
            assert_eq!(c.n1 + c.n2, 768);
            assert!(c.n1 >= 1 && c.n2 >= 1);
        }
        assert!(td_schedule(768, 0.0).is_err());
        assert!(td_schedule(100, 0.001).is_err());
    }

    fn unit_symbols(n: usize, seed: u64) -> ChannelSymbols {
        let mut rng = stream_rng(seed, Stream::Eval, 5);
        let raw: Vec<f32> = (0..2 * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let t = Tensor::from_vec(raw, (1, 2 * n), &Device::Cpu).unwrap();
        power_normalize(&t).unwrap()
    }

    #[test]
    fn pa_degenerate_weights() {
        let x1 = unit_symbols(64, 1);
        let x2 = unit_symbols(64, 2);
        let y = pa_superpose(&x1, &x2, 1.0).unwrap();
        assert_eq!(
            y.data.to_vec2::<f32>().unwrap(),
            x1.data.to_vec2::<f32>().unwrap()
        );
        let y = pa_superpose(&x1, &x2, 0.0).unwrap();
        assert_eq!(
            y.data.to_vec2::<f32>().unwrap(),
            x2.data.to_vec2::<f32>().unwrap()
        );
    }

    #[test]
    fn pa_power_of_independent_sum() {
        let n = 100_000;
        let x1 = unit_symbols(n, 3);
        let x2 = unit_symbols(n, 4);
        let y = pa_superpose(&x1, &x2, 0.5).unwrap();
        let p = y.sample_powers().unwrap()[0];
        assert!((p - 1.0).abs() < 0.01, "power {p}");
    }

    #[test]
    fn sic_closed_form_point() {
        let (r1, r2) = sic_rates(0.2, 13.0, 8.0).unwrap();
        let s1 = snr_db_to_noise_power(13.0);
        assert!((r1 - (1.0 + 0.2 / s1).log2()).abs() < 1e-12);
        assert!((r1 - 2.321).abs() < 2e-3, "r1 {r1}");
        assert!((r2 - 1.692).abs() < 2e-3, "r2 {r2}");
    }

    #[test]
    fn sic_limits_and_errors() {
        let (r1, _) = sic_rates(1e-9, 13.0, 8.0).unwrap();
        assert!(r1 < 1e-6);
        // sigma2 -> inf corresponds to snr2 -> -inf
        let (_, r2) = sic_rates(0.2, 13.0, -120.0).unwrap();
        assert!(r2 < 1e-6);
        assert!(sic_rates(0.2, 8.0, 13.0).is_err());
        assert!(sic_rates(0.0, 13.0, 8.0).is_err());
    }

    #[test]
    fn sic_monotonicity_grid() {
        let zetas: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let mut prev: Option<(f64, f64)> = None;
        for &z in &zetas {
            let (r1, r2) = sic_rates(z, 13.0, 8.0).unwrap();
            if let Some((p1, p2)) = prev {
                assert!(r1 > p1, "R1 not increasing in zeta");
                assert!(r2 < p2, "R2 not decreasing in zeta");
            }
            prev = Some((r1, r2));
        }
        let mut prev_r1 = 0.0;
        let mut prev_r2 = 0.0;
        for snr in [6.0, 9.0, 12.0, 15.0, 18.0] {
            let (r1, _) = sic_rates(0.3, snr, 5.0).unwrap();
            assert!(r1 > prev_r1, "R1 not increasing in snr1");
            prev_r1 = r1;
            let (_, r2) = sic_rates(0.3, 20.0, snr).unwrap();
            assert!(r2 > prev_r2, "R2 not increasing in snr2");
            prev_r2 = r2;
        }
    }

    #[test]
    fn missing_adapter_is_explicit() {
        let err = CodecAdapter::new("/nonexistent/codec-binary").unwrap_err();
        assert!(matches!(err, Error::CodecUnavailable(_)));
    }
}
