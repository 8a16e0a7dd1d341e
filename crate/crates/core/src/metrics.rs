//! Image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 300.0;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("image sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

/// Mean squared per-pixel error.
pub fn mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(estimate, truth)?;
    let sum: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / estimate.len() as f64)
}

/// `10 log10(σ_max² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(estimate: &[f64], truth: &[f64], sigma_max: f64) -> Result<f64> {
    if !(sigma_max > 0.0) {
        return Err(Error::invalid("sigma_max must be positive"));
    }
    Ok(psnr_from_mse(mse(estimate, truth)?, sigma_max))
}

pub fn psnr_from_mse(mse: f64, sigma_max: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (sigma_max * sigma_max / mse).log10()).min(PSNR_CAP_DB)
}

/// Global single-window SSIM with unbiased (co)variances and
/// `c1 = (0.01 L)²`, `c2 = (0.03 L)²`. Clamped to `[0, 1]`.
pub fn ssim(estimate: &[f64], truth: &[f64], data_range: f64) -> Result<f64> {
    same_len(estimate, truth)?;
    if estimate.len() < 2 {
        return Err(Error::invalid("SSIM needs at least two pixels"));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be positive"));
    }
    let n = estimate.len() as f64;
    let mu_a = estimate.iter().sum::<f64>() / n;
    let mu_b = truth.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in estimate.iter().zip(truth) {
        let (da, db) = (a - mu_a, b - mu_b);
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n - 1.0;
    var_b /= n - 1.0;
    cov /= n - 1.0;
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Identifies the configuration that produced the estimate.
    pub fingerprint: String,
    pub runtime_ms: f64,
}

pub const REPORT_HEADER: &str = "label,mse,psnr_db,ssim,fingerprint,runtime_ms";

impl MetricReport {
    pub fn compute(estimate: &[f64], truth: &[f64], sigma_max: f64) -> Result<Self> {
        let mse = mse(estimate, truth)?;
        Ok(Self {
            mse,
            psnr_db: psnr_from_mse(mse, sigma_max),
            ssim: ssim(estimate, truth, sigma_max)?,
            fingerprint: String::new(),
            runtime_ms: 0.0,
        })
    }

    pub fn csv_row(&self, label: &str) -> String {
        format!("{label},{},{},{},{},{}", self.mse, self.psnr_db, self.ssim, self.fingerprint, self.runtime_ms)
    }
}

/// 64-bit FNV-1a of `bytes`, printed as hex. Used to tag reports.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
