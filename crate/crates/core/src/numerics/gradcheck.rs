//! Central-difference verification of the analytic adapter gradients.

use super::matrix::Matrix;
use super::mlp::{ce_loss_and_grads, MlpParams};
use crate::error::Result;

/// Denominator floor for relative errors, so entries where both gradients are
/// near zero compare by absolute difference instead.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central differences of `loss` with respect to every entry of `at`.
pub fn central_differences(
    at: &Matrix<f64>,
    h: f64,
    mut loss: impl FnMut(&Matrix<f64>) -> Result<f64>,
) -> Result<Matrix<f64>> {
    let mut probe = at.clone();
    let mut out = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = loss(&probe)?;
        probe.as_mut_slice()[i] = orig - h;
        let minus = loss(&probe)?;
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn compare_block(name: &'static str, analytic: &Matrix<f64>, numeric: &Matrix<f64>, tol: f64) -> BlockReport {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&a, &n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        max_rel = max_rel.max(relative_error(a, n));
        max_abs = max_abs.max((a - n).abs());
    }
    BlockReport {
        name,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        passed: max_rel < tol,
    }
}

/// Checks [`ce_loss_and_grads`] against central differences of step `h`.
pub fn grad_check(
    params: &MlpParams<f64>,
    inputs: &Matrix<f64>,
    labels: &[usize],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = ce_loss_and_grads(params, inputs, labels)?;

    let numeric_w1 = central_differences(&params.w1, h, |w1| {
        let p = MlpParams {
            w1: w1.clone(),
            w2: params.w2.clone(),
        };
        Ok(ce_loss_and_grads(&p, inputs, labels)?.0)
    })?;
    let numeric_w2 = central_differences(&params.w2, h, |w2| {
        let p = MlpParams {
            w1: params.w1.clone(),
            w2: w2.clone(),
        };
        Ok(ce_loss_and_grads(&p, inputs, labels)?.0)
    })?;

    Ok(GradCheckReport {
        blocks: vec![
            compare_block("w1", &analytic.w1, &numeric_w1, tol),
            compare_block("w2", &analytic.w2, &numeric_w2, tol),
        ],
    })
}
