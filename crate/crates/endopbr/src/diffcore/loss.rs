//! Photometric L1 loss with metallic and albedo-smoothness regularizers.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Regularizer weights. Defaults follow the training recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_m: 1e-4,
            lambda_b: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub metallic_penalty: f64,
    pub albedo_smoothness: f64,
}

impl LossBreakdown {
    pub fn from_terms(l1: f64, metallic: f64, smoothness: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            total: l1 + w.lambda_m * metallic + w.lambda_b * smoothness,
            l1,
            metallic_penalty: metallic,
            albedo_smoothness: smoothness,
        }
    }
}

/// Batch loss:
/// - l1: mean over pixels and channels of |pred - gt|
/// - metallic_penalty: mean |m|
/// - albedo_smoothness: mean over pairs of the L1 norm of b(x) - b(x+eps)
pub fn compute_loss(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    m_vals: &[f64],
    albedo_pairs: &[(Vector3<f64>, Vector3<f64>)],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let n = pred.len();
    if n == 0 || gt.len() != n || m_vals.len() != n || albedo_pairs.len() != n {
        return Err(Error::EmptyBatch);
    }
    let mut abs_sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        abs_sum += (p.x - g.x).abs() + (p.y - g.y).abs() + (p.z - g.z).abs();
    }
    let l1 = abs_sum / (3.0 * n as f64);
    let metallic = m_vals.iter().map(|m| m.abs()).sum::<f64>() / n as f64;
    let smooth = albedo_pairs
        .iter()
        .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs())
        .sum::<f64>()
        / n as f64;
    Ok(LossBreakdown::from_terms(l1, metallic, smooth, weights))
}
