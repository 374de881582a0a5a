//! Finite-difference verification of the analytic gradients.
//!
//! For random single-pixel losses, every touched hash entry, a random subset
//! of MLP weights, and all light/gamma scalars are probed with central
//! differences (h = 1e-5) against the reverse-mode gradients. The loss has
//! kinks (L1 terms, ReLUs, visibility cutoffs); a probe whose two evaluation
//! points straddle a kink is detected through the branch signature and
//! skipped, since finite differences are not a derivative estimate there.
//!
//! The relative error uses an absolute floor: FD at h = 1e-5 on an O(1) loss
//! resolves gradient differences down to roughly 1e-10, so components whose
//! gradient magnitude sits below `FD_ABS_FLOOR` are compared against the
//! floor instead of their own magnitude. Probe pixels are drawn by rejection
//! so predictions land at a sane magnitude; wildly over-exposed
//! configurations have large higher-order curvature that FD cannot follow.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::hashgrid::EncodeContext;
use crate::lighting::LIGHT_GRAD_CLAMP;
use crate::model::Model;

use super::autodiff::{backward_batch, pixel_loss, PixelSample, PixelWorkspace};
use super::loss::LossWeights;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative-error metric.
pub const FD_ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub n_samples: usize,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < tol)
    }

    pub fn print(&self) {
        println!("gradient check over {} single-pixel losses:", self.n_samples);
        for g in &self.groups {
            println!(
                "  {:<12} max_rel_err {:>12.3e}  checked {:>6}  skipped {:>4}",
                g.name, g.max_rel_err, g.checked, g.skipped
            );
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Draws a generic shading configuration inside the model's scene bounds.
fn random_pixel_raw(model: &Model, rng: &mut ChaCha8Rng) -> PixelSample {
    let b = &model.bounds;
    let extent = b.max_corner - b.min_corner;
    let lerp = |t: Vector3<f64>| b.min_corner + extent.component_mul(&t);
    let cam = lerp(Vector3::new(
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
    ));
    let axis = random_unit(rng);
    let dist = rng.gen_range(0.2..0.5) * extent.norm();
    let lateral = random_unit(rng) * rng.gen_range(0.0..0.2) * dist;
    let x_world = cam + axis * dist + lateral;
    let omega_o = (cam - x_world).normalize();
    let mut normal = (omega_o + 0.4 * random_unit(rng)).normalize();
    if normal.dot(&omega_o) <= 0.05 {
        normal = omega_o;
    }
    PixelSample {
        x_world,
        normal,
        cam_center: cam,
        light_axis: axis,
        gt: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
        jitter: super::train::jitter_in_ball(rng, 0.01),
    }
}

/// Rejection-samples a pixel whose prediction magnitude is moderate; None if
/// the scene/parameter combination never produces one.
fn random_pixel(model: &Model, rng: &mut ChaCha8Rng, ws: &mut PixelWorkspace) -> Option<PixelSample> {
    let weights = LossWeights::default();
    for _ in 0..400 {
        let px = random_pixel_raw(model, rng);
        if let Ok((loss, _)) = pixel_loss(model, &px, &weights, ws) {
            if loss.is_finite() && loss < 2.0 {
                return Some(px);
            }
        }
    }
    None
}

/// Flat store indices of the hash entries a pixel touches (main + jitter).
fn touched_hash_indices(model: &Model, px: &PixelSample) -> Vec<usize> {
    let xn = model.bounds.normalize_point(&px.x_world);
    let grid = &model.cfg.grid;
    let hash_off = model.store.meta(model.groups.hash).offset;
    let f = grid.features_per_level as usize;
    let mut out = Vec::new();
    let mut feat = vec![0.0; grid.output_dim()];
    let mut ctx = EncodeContext::new();
    for point in [xn, xn + px.jitter] {
        crate::hashgrid::encode_into(&point, model.hash_values(), grid, &mut feat, &mut ctx);
        for (level, slots) in ctx.corners.iter().enumerate() {
            let base = level * grid.table_size as usize * f;
            for &(entry, _) in slots.iter() {
                for t in 0..f {
                    out.push(hash_off + base + entry as usize * f + t);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Central finite differences vs analytic gradients on `n_samples` random
/// single-pixel losses; returns per-group max relative error.
pub fn grad_check(
    model: &mut Model,
    n_samples: usize,
    seed: u64,
    weights: &LossWeights,
) -> Result<GradCheckReport> {
    if n_samples == 0 {
        return Ok(GradCheckReport {
            n_samples: 0,
            groups: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_groups = model.store.groups().len();
    let mut max_err = vec![0.0f64; n_groups];
    let mut checked = vec![0usize; n_groups];
    let mut skipped = vec![0usize; n_groups];

    const HASH_CANDIDATES: usize = 48;
    const MLP_CANDIDATES_PER_GROUP: usize = 6;

    let mut sample_ws = PixelWorkspace::default();
    for _ in 0..n_samples {
        let px = match random_pixel(model, &mut rng, &mut sample_ws) {
            Some(px) => px,
            None => continue,
        };
        model.store.zero_grads();
        backward_batch(model, &[px], weights)?;
        let grads: Vec<f64> = model.store.all_grads().to_vec();

        let mut ws = PixelWorkspace::default();
        let (_, sig0) = pixel_loss(model, &px, weights, &mut ws)?;

        // Candidate coordinates per group.
        let mut candidates: Vec<(usize, usize)> = Vec::new(); // (group idx, flat idx)
        let hash_gid = model.groups.hash.0;
        let mut hash_cands = touched_hash_indices(model, &px);
        for i in (1..hash_cands.len()).rev() {
            hash_cands.swap(i, rng.gen_range(0..=i));
        }
        hash_cands.truncate(HASH_CANDIDATES);
        candidates.extend(hash_cands.into_iter().map(|i| (hash_gid, i)));

        for (gid, meta) in model.store.groups().iter().enumerate() {
            if gid == hash_gid {
                continue;
            }
            if meta.len == 1 {
                candidates.push((gid, meta.offset));
                continue;
            }
            // Random subset plus the largest-magnitude analytic gradient.
            for _ in 0..MLP_CANDIDATES_PER_GROUP {
                candidates.push((gid, meta.offset + rng.gen_range(0..meta.len)));
            }
            let argmax = (meta.offset..meta.offset + meta.len)
                .max_by(|&a, &b| grads[a].abs().total_cmp(&grads[b].abs()))
                .unwrap();
            candidates.push((gid, argmax));
        }

        for (gid, idx) in candidates {
            let analytic = grads[idx];
            // A light gradient pinned at the stability clamp is intentionally
            // not the derivative; finite differences cannot confirm it.
            if analytic.abs() >= LIGHT_GRAD_CLAMP * (1.0 - 1e-9) {
                skipped[gid] += 1;
                continue;
            }
            let orig = model.store.all_values()[idx];
            model.store.all_values_mut()[idx] = orig + FD_STEP;
            let (loss_plus, sig_plus) = pixel_loss(model, &px, weights, &mut ws)?;
            model.store.all_values_mut()[idx] = orig - FD_STEP;
            let (loss_minus, sig_minus) = pixel_loss(model, &px, weights, &mut ws)?;
            model.store.all_values_mut()[idx] = orig;
            if sig_plus != sig0 || sig_minus != sig0 {
                skipped[gid] += 1;
                continue;
            }
            let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(FD_ABS_FLOOR);
            if rel > max_err[gid] {
                max_err[gid] = rel;
            }
            checked[gid] += 1;
        }
    }
    model.store.zero_grads();

    let groups = model
        .store
        .groups()
        .iter()
        .enumerate()
        .map(|(gid, meta)| GroupReport {
            name: meta.name.clone(),
            max_rel_err: max_err[gid],
            checked: checked[gid],
            skipped: skipped[gid],
        })
        .collect();
    Ok(GradCheckReport {
        n_samples,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SceneBounds;
    use crate::hashgrid::HashGridConfig;
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            grid: HashGridConfig {
                levels: 4,
                features_per_level: 2,
                table_size: 1 << 10,
                base_resolution: 4,
                finest_resolution: 32,
            },
            ..ModelConfig::default()
        };
        let bounds = SceneBounds {
            min_corner: Vector3::repeat(-1.0),
            max_corner: Vector3::repeat(1.0),
        };
        Model::new(cfg, bounds, seed).unwrap()
    }

    #[test]
    fn zero_samples_is_an_empty_report() {
        let mut model = tiny_model(1);
        let report = grad_check(&mut model, 0, 7, &LossWeights::default()).unwrap();
        assert!(report.groups.is_empty());
        assert_eq!(report.max_rel_err(), 0.0);
        assert!(report.passes(1e-4));
    }

    #[test]
    fn fresh_init_passes_on_small_model() {
        let mut model = tiny_model(2);
        let report = grad_check(&mut model, 20, 11, &LossWeights::default()).unwrap();
        report.print();
        assert!(report.passes(1e-4), "max err {}", report.max_rel_err());
        for g in &report.groups {
            assert!(g.checked > 0, "group {} never checked", g.name);
        }
    }
}
