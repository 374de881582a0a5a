//! Reverse-mode gradients for the full shading pipeline.
//!
//! Each pixel is one independent work unit: shade forward, then backpropagate
//! the L1 photometric term plus the metallic and albedo-smoothness
//! regularizers into hash-table, MLP, light and gamma gradient slots.
//!
//! Batches run in fixed-size chunks. Chunks execute in parallel, each into
//! its own gradient delta (dense prefix + sparse hash entries), and deltas
//! merge serially in chunk order, so results do not depend on thread count.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::brdf::{self, MlpContext, MATERIAL_DIM};
use crate::error::{Error, Result};
use crate::hashgrid::{self, EncodeContext};
use crate::lighting::raw_light_grads;
use crate::model::{carve_dense_grads, Model};
use crate::renderer::{shade_detailed, PixelShadingInput};

use super::loss::{LossBreakdown, LossWeights};

/// One training pixel with everything shading needs.
#[derive(Debug, Clone, Copy)]
pub struct PixelSample {
    pub x_world: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub cam_center: Vector3<f64>,
    pub light_axis: Vector3<f64>,
    /// LDR ground truth in [0,1].
    pub gt: Vector3<f64>,
    /// Normalized-coordinate offset for the albedo-smoothness pair.
    pub jitter: Vector3<f64>,
}

/// Per-pixel loss contributions (pre-normalization sums).
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelTerms {
    pub abs_err: f64,
    pub metallic: f64,
    pub albedo: f64,
}

/// Reusable buffers for one worker.
#[derive(Default)]
pub struct PixelWorkspace {
    feat: Vec<f64>,
    enc: EncodeContext,
    mlp: MlpContext,
    feat_j: Vec<f64>,
    enc_j: EncodeContext,
    mlp_j: MlpContext,
    d_feat: Vec<f64>,
}

/// Hash of every branch decision taken while evaluating a pixel loss.
/// Finite differences across a changed branch are meaningless; the gradient
/// checker compares signatures at the two probe points and skips mismatches.
pub type BranchSignature = u64;

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

// Full-avalanche fold; a weaker multiply-only mix lets single-bit flips in
// two words cancel in the high bits.
fn sig_fold(h: u64, w: u64) -> u64 {
    mix64(h.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(w))
}

fn relu_mask(z: &[f64]) -> u64 {
    let mut m = 0u64;
    for (i, &v) in z.iter().enumerate().take(64) {
        if v > 0.0 {
            m |= 1 << i;
        }
    }
    m
}

struct PixelForward {
    parts: crate::renderer::ShadeParts,
    e: [f64; 3],
    delta_b: [f64; 3],
    terms: PixelTerms,
    sig: BranchSignature,
}

fn forward_inner(model: &Model, px: &PixelSample, ws: &mut PixelWorkspace) -> Result<PixelForward> {
    let xn = model.bounds.normalize_point(&px.x_world);
    let sample = model.material_with_ctx(&xn, &mut ws.feat, &mut ws.enc, &mut ws.mlp);

    let xj = xn + px.jitter;
    let sample_j = model.material_with_ctx(&xj, &mut ws.feat_j, &mut ws.enc_j, &mut ws.mlp_j);

    let light = model.light_values();
    let inp = PixelShadingInput {
        x: px.x_world,
        normal: px.normal,
        omega_o: crate::geometry::view_direction(&px.x_world, &px.cam_center)?,
        cam_center: px.cam_center,
        light_axis: px.light_axis,
    };
    let parts = shade_detailed(&inp, &sample, &light, model.cfg.specular_factor4)?;

    let pred = parts.result.ldr;
    let e = [pred.x - px.gt.x, pred.y - px.gt.y, pred.z - px.gt.z];
    let delta_b = [
        sample.base_color.x - sample_j.base_color.x,
        sample.base_color.y - sample_j.base_color.y,
        sample.base_color.z - sample_j.base_color.z,
    ];
    let terms = PixelTerms {
        abs_err: e.iter().map(|v| v.abs()).sum(),
        metallic: sample.metallic.abs(),
        albedo: delta_b.iter().map(|v| v.abs()).sum(),
    };

    let mut bits = 0u64;
    let push = |cond: bool, bits: &mut u64| {
        *bits = (*bits << 1) | (cond as u64);
    };
    for c in 0..3 {
        push(e[c] > 0.0, &mut bits);
        push(e[c] < 0.0, &mut bits);
        push(parts.result.hdr[c] > 0.0, &mut bits);
        push(delta_b[c] > 0.0, &mut bits);
        push(delta_b[c] < 0.0, &mut bits);
    }
    push(parts.result.li > 0.0, &mut bits);
    push(parts.result.cosfac > 0.0, &mut bits);

    let mut sig = 0xcbf2_9ce4_8422_2325u64;
    sig = sig_fold(sig, bits);
    sig = sig_fold(sig, relu_mask(&ws.mlp.z1));
    sig = sig_fold(sig, relu_mask(&ws.mlp.z2));
    sig = sig_fold(sig, relu_mask(&ws.mlp_j.z1));
    sig = sig_fold(sig, relu_mask(&ws.mlp_j.z2));

    Ok(PixelForward {
        parts,
        e,
        delta_b,
        terms,
        sig,
    })
}

/// Forward-only evaluation: loss terms plus the branch signature.
pub fn pixel_forward(
    model: &Model,
    px: &PixelSample,
    ws: &mut PixelWorkspace,
) -> Result<(PixelTerms, BranchSignature)> {
    let f = forward_inner(model, px, ws)?;
    Ok((f.terms, f.sig))
}

/// Scalar single-pixel loss matching the batch formulas at n = 1.
pub fn pixel_loss(
    model: &Model,
    px: &PixelSample,
    weights: &LossWeights,
    ws: &mut PixelWorkspace,
) -> Result<(f64, BranchSignature)> {
    let (t, sig) = pixel_forward(model, px, ws)?;
    Ok((
        t.abs_err / 3.0 + weights.lambda_m * t.metallic + weights.lambda_b * t.albedo,
        sig,
    ))
}

/// Upstream loss normalization for a batch of n pixels.
#[derive(Debug, Clone, Copy)]
pub struct UpstreamWeights {
    pub inv_3n: f64,
    pub w_metallic: f64,
    pub w_albedo: f64,
}

impl UpstreamWeights {
    pub fn for_batch(n: usize, w: &LossWeights) -> Self {
        let n = n as f64;
        UpstreamWeights {
            inv_3n: 1.0 / (3.0 * n),
            w_metallic: w.lambda_m / n,
            w_albedo: w.lambda_b / n,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fused forward + backward for one pixel. Dense gradients accumulate into
/// `dense` (non-hash prefix layout) and hash gradients append to `sparse`
/// as (offset within the hash group, value) pairs.
pub fn pixel_forward_backward(
    model: &Model,
    px: &PixelSample,
    up: &UpstreamWeights,
    dense: &mut [f64],
    sparse: &mut Vec<(u32, f64)>,
    ws: &mut PixelWorkspace,
) -> Result<PixelTerms> {
    let fwd = forward_inner(model, px, ws)?;
    let parts = &fwd.parts;
    let light = model.light_values();
    let sample = ws.mlp.sample();
    let tau = std::f64::consts::TAU;

    // d loss / d pred, then through the gamma map (pred_c = hdr_c^gamma).
    let mut d_hdr = [0.0f64; 3];
    let mut d_gamma_val = 0.0f64;
    let pred = parts.result.ldr;
    for c in 0..3 {
        let d_pred = up.inv_3n * sign(fwd.e[c]);
        let h = parts.result.hdr[c];
        if h > 0.0 && d_pred != 0.0 {
            d_hdr[c] = d_pred * light.gamma * pred[c] / h;
            d_gamma_val += d_pred * pred[c] * h.ln();
        }
    }

    // hdr_c = tau * f_c * li * cosfac.
    let cosfac = parts.result.cosfac;
    let li = parts.result.li;
    let mut d_f = [0.0f64; 3];
    let mut d_li = 0.0f64;
    for c in 0..3 {
        d_f[c] = d_hdr[c] * tau * li * cosfac;
        d_li += d_hdr[c] * tau * parts.result.f[c] * cosfac;
    }

    let (mut sinks, light_grads) = carve_dense_grads(dense, model.input_dim());
    let lg = raw_light_grads(&parts.light, &light, d_li);
    light_grads[0] += lg[0];
    light_grads[1] += lg[1];
    light_grads[2] += lg[2];
    // Gamma is stored as a log too: d raw = d value * gamma.
    light_grads[3] += d_gamma_val * light.gamma;

    // Material gradients: f_c = (1 - m)/pi * b_c + f_s(r, m).
    let pi = std::f64::consts::PI;
    let sum_df: f64 = d_f.iter().sum();
    let mut d_material = [0.0f64; MATERIAL_DIM];
    for c in 0..3 {
        d_material[c] = d_f[c] * (1.0 - sample.metallic) / pi;
    }
    d_material[3] = sum_df * parts.spec.d_roughness;
    d_material[4] = sum_df * parts.spec.d_metallic
        - (d_f[0] * sample.base_color.x + d_f[1] * sample.base_color.y + d_f[2] * sample.base_color.z)
            / pi;
    // Metallic penalty (metallic is strictly positive out of the logistic).
    d_material[4] += up.w_metallic * sign(sample.metallic);
    // Albedo smoothness: |b(x) - b(x + eps)| pulls on both evaluations.
    let mut d_material_j = [0.0f64; MATERIAL_DIM];
    for c in 0..3 {
        let s = up.w_albedo * sign(fwd.delta_b[c]);
        d_material[c] += s;
        d_material_j[c] = -s;
    }

    ws.d_feat.resize(model.input_dim(), 0.0);
    ws.d_feat.fill(0.0);
    brdf::mlp_backward(&model.mlp_params(), &ws.mlp, &d_material, &mut sinks, &mut ws.d_feat);
    hashgrid::encode_backward_with(&ws.enc, &ws.d_feat, &model.cfg.grid, |idx, g| {
        sparse.push((idx as u32, g))
    });

    ws.d_feat.fill(0.0);
    brdf::mlp_backward(&model.mlp_params(), &ws.mlp_j, &d_material_j, &mut sinks, &mut ws.d_feat);
    hashgrid::encode_backward_with(&ws.enc_j, &ws.d_feat, &model.cfg.grid, |idx, g| {
        sparse.push((idx as u32, g))
    });

    Ok(fwd.terms)
}

/// Chunk size for the training batch; fixed so accumulation order (and hence
/// the result) is independent of thread count.
const BATCH_CHUNK: usize = 1024;

struct GradDelta {
    dense: Vec<f64>,
    sparse: Vec<(u32, f64)>,
    sums: PixelTerms,
}

/// Runs forward + backward over a batch, accumulating gradients into the
/// store's slots (without zeroing them first), and returns the loss.
pub fn backward_batch(
    model: &mut Model,
    batch: &[PixelSample],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let up = UpstreamWeights::for_batch(n, weights);
    let dense_len = model.dense_len();

    let deltas: Vec<GradDelta> = {
        let m: &Model = model;
        batch
            .par_chunks(BATCH_CHUNK)
            .map(|chunk| -> Result<GradDelta> {
                let mut ws = PixelWorkspace::default();
                let mut delta = GradDelta {
                    dense: vec![0.0; dense_len],
                    sparse: Vec::with_capacity(chunk.len() * 16),
                    sums: PixelTerms::default(),
                };
                for px in chunk {
                    let t =
                        pixel_forward_backward(m, px, &up, &mut delta.dense, &mut delta.sparse, &mut ws)?;
                    delta.sums.abs_err += t.abs_err;
                    delta.sums.metallic += t.metallic;
                    delta.sums.albedo += t.albedo;
                }
                Ok(delta)
            })
            .collect::<Result<Vec<_>>>()?
    };

    let hash_off = model.store.meta(model.groups.hash).offset;
    let mut totals = PixelTerms::default();
    let grads = model.store.all_grads_mut();
    for delta in &deltas {
        for (g, d) in grads[..dense_len].iter_mut().zip(&delta.dense) {
            *g += d;
        }
        for &(off, g) in &delta.sparse {
            grads[hash_off + off as usize] += g;
        }
        totals.abs_err += delta.sums.abs_err;
        totals.metallic += delta.sums.metallic;
        totals.albedo += delta.sums.albedo;
    }

    let nf = n as f64;
    Ok(LossBreakdown::from_terms(
        totals.abs_err / (3.0 * nf),
        totals.metallic / nf,
        totals.albedo / nf,
        weights,
    ))
}
