//! Central finite-difference gradient oracle.
//!
//! Independent of the autodiff path: it re-evaluates the loss closure at
//! perturbed parameter values and compares the quotient against the
//! backpropagated gradient. Only meant for small f64 toy models.

use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

/// Worst relative disagreement between autodiff and finite differences over
/// all vars. Per var the error is the norm ratio
/// `‖g_ad − g_fd‖₂ / max(‖g_ad‖₂, ‖g_fd‖₂)`, which stays well-conditioned
/// even when individual components vanish (e.g. the scale-invariant
/// directions introduced by layer normalization, whose true elementwise
/// gradients are near zero). `eps` is the absolute perturbation.
pub fn max_rel_error<F>(vars: &[Var], loss_fn: F, eps: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    let loss = loss_fn()?;
    if loss.dtype() != DType::F64 {
        return Err(Error::config("gradient checks require f64 models"));
    }
    let grads = loss.backward()?;
    let mut worst = 0.0f64;
    for var in vars {
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; var.elem_count()],
        };
        let shape = var.shape().clone();
        let base = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let mut diff_sq = 0.0f64;
        let mut ad_sq = 0.0f64;
        let mut fd_sq = 0.0f64;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            var.set(&Tensor::from_vec(plus, shape.clone(), var.device())?)?;
            let lp = loss_fn()?.to_scalar::<f64>()?;
            let mut minus = base.clone();
            minus[i] -= eps;
            var.set(&Tensor::from_vec(minus, shape.clone(), var.device())?)?;
            let lm = loss_fn()?.to_scalar::<f64>()?;
            var.set(&Tensor::from_vec(base.clone(), shape.clone(), var.device())?)?;
            let fd = (lp - lm) / (2.0 * eps);
            diff_sq += (analytic[i] - fd).powi(2);
            ad_sq += analytic[i].powi(2);
            fd_sq += fd.powi(2);
        }
        let denom = ad_sq.max(fd_sq).sqrt().max(1e-12);
        let rel = diff_sq.sqrt() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
