//! Distortion, PSNR, per-user losses, and the combined broadcast loss.
//!
//! The combined loss pushes the (PSNR1, PSNR2) performance point away from
//! the origin: L3 = -(log10 L1)^2 - (log10 L2)^2 = -(psnr1^2 + psnr2^2)/100,
//! and its gradient decomposes as w1*dL1 + w2*dL2 with analytic weights.

use candle_core::Tensor;
use serde::Serialize;

use crate::error::{Error, Result};

/// Floor applied to MSE before any logarithm.
pub const MSE_FLOOR: f64 = 1e-10;

const LN10: f64 = std::f64::consts::LN_10;

/// One training-step record, serialized into the CSV log.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub psnr1: f64,
    pub psnr2: f64,
    pub w1: f64,
    pub w2: f64,
    pub snr1_db: f64,
    pub snr2_db: f64,
}

/// Mean squared error over all pixels of a batch.
pub fn mse(s: &Tensor, s_hat: &Tensor) -> Result<f64> {
    if s.dims() != s_hat.dims() {
        return Err(Error::shape(format!(
            "mse shape mismatch: {:?} vs {:?}",
            s.dims(),
            s_hat.dims()
        )));
    }
    let v = (s - s_hat)?.sqr()?.mean_all()?.to_dtype(candle_core::DType::F64)?;
    Ok(v.to_scalar::<f64>()?)
}

/// Differentiable MSE, kept in the autodiff graph.
pub fn mse_tensor(s: &Tensor, s_hat: &Tensor) -> Result<Tensor> {
    if s.dims() != s_hat.dims() {
        return Err(Error::shape(format!(
            "mse shape mismatch: {:?} vs {:?}",
            s.dims(),
            s_hat.dims()
        )));
    }
    Ok((s - s_hat)?.sqr()?.mean_all()?)
}

/// PSNR in dB for unit-range images. Zero MSE maps to +inf; the caller must
/// not feed that sentinel back into the combined loss.
pub fn psnr(mse_value: f64) -> f64 {
    if mse_value <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse_value.log10()
    }
}

/// Inverse of [`psnr`].
pub fn psnr_to_mse(psnr_db: f64) -> f64 {
    10f64.powf(-psnr_db / 10.0)
}

fn floored(l: f64) -> f64 {
    l.max(MSE_FLOOR)
}

/// Combined loss L3 over the two users' MSEs.
pub fn l3(l1: f64, l2: f64) -> f64 {
    let (l1, l2) = (floored(l1), floored(l2));
    -(l1.log10().powi(2)) - (l2.log10().powi(2))
}

/// Analytic gradient weights (w1, w2) with dL3 = w1*dL1 + w2*dL2.
pub fn l3_gradient_weights(l1: f64, l2: f64) -> (f64, f64) {
    let w = |l: f64| {
        let l = floored(l);
        -(2.0 / LN10) * l.log10() / l
    };
    (w(l1), w(l2))
}

/// Differentiable L3 built from the two per-user MSE scalars.
pub fn l3_tensor(l1: &Tensor, l2: &Tensor) -> Result<Tensor> {
    let term = |l: &Tensor| -> Result<Tensor> {
        let log10 = (l.clamp(MSE_FLOOR, f64::INFINITY)?.log()? / LN10)?;
        Ok(log10.sqr()?)
    };
    Ok((term(l1)?.neg()? - term(l2)?)?)
}

/// Convex baseline combination lambda*L1 + (1-lambda)*L2, weighting the
/// better user's loss by lambda.
pub fn combined_baseline_loss(l1: f64, l2: f64, lambda: f64) -> f64 {
    lambda * l1 + (1.0 - lambda) * l2
}

/// Differentiable form of [`combined_baseline_loss`].
pub fn combined_baseline_loss_tensor(l1: &Tensor, l2: &Tensor, lambda: f64) -> Result<Tensor> {
    Ok(((l1 * lambda)? + (l2 * (1.0 - lambda))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::Rng;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn mse_basics() {
        let dev = Device::Cpu;
        let z = Tensor::zeros((2, 3, 4, 4), DType::F64, &dev).unwrap();
        let o = Tensor::ones((2, 3, 4, 4), DType::F64, &dev).unwrap();
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        let tenth = (&o * 0.1).unwrap();
        assert!((mse(&z, &tenth).unwrap() - 0.01).abs() < 1e-12);
        assert!(mse(&z, &Tensor::zeros((2, 3), DType::F64, &dev).unwrap()).is_err());
    }

    #[test]
    fn psnr_values() {
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr(1.0) - 0.0).abs() < 1e-12);
        assert!((psnr(0.001) - 30.0).abs() < 1e-12);
        assert!(psnr(0.0).is_infinite());
    }

    #[test]
    fn l3_values() {
        assert!((l3(0.01, 0.01) - (-8.0)).abs() < 1e-12);
        assert!((l3(0.1, 1.0) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn l3_psnr_identity() {
        let mut rng = rand::thread_rng();
        for _ in 0..100 {
            let l1 = rng.gen_range(1e-4..1.0);
            let l2 = rng.gen_range(1e-4..1.0);
            let via_psnr = -(psnr(l1).powi(2) + psnr(l2).powi(2)) / 100.0;
            let direct = l3(l1, l2);
            assert!((direct - via_psnr).abs() <= 1e-12 * direct.abs());
        }
    }

    #[test]
    fn gradient_weights_match_finite_differences() {
        for &l in &[0.3, 0.1, 0.01, 0.001] {
            let (w1, w2) = l3_gradient_weights(l, l);
            assert!((w1 - w2).abs() < 1e-15, "symmetry");
            let h = l * 1e-6;
            let fd = (l3(l + h, 0.5) - l3(l - h, 0.5)) / (2.0 * h);
            assert!(
                (w1 - fd).abs() <= 1e-3 * fd.abs(),
                "l={l}: analytic {w1} vs fd {fd}"
            );
        }
        // stationary point at L = 1
        let (w1, _) = l3_gradient_weights(1.0, 0.5);
        assert_eq!(w1, 0.0);
    }

    #[test]
    fn w_at_001() {
        let (w, _) = l3_gradient_weights(0.01, 0.5);
        assert!((w - 173.7177).abs() < 1e-3);
    }

    #[test]
    fn baseline_loss_edges() {
        assert_eq!(combined_baseline_loss(0.4, 0.9, 1.0), 0.4);
        assert_eq!(combined_baseline_loss(0.4, 0.9, 0.0), 0.9);
        assert!((combined_baseline_loss(0.3, 0.3, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn l3_tensor_matches_scalar() {
        for &(a, b) in &[(0.01, 0.01), (0.1, 1.0), (0.3, 0.002)] {
            let t = l3_tensor(&scalar(a), &scalar(b)).unwrap();
            let v = t.to_scalar::<f64>().unwrap();
            assert!((v - l3(a, b)).abs() < 1e-12);
        }
    }
}
