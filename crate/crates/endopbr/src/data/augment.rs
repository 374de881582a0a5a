//! Augmented synthetic-dataset export: perturb camera poses, material, and
//! light around a trained model and write image/depth/pose triples.
//!
//! Material perturbations are global multipliers/offsets on the MLP outputs
//! (albedo scaled, roughness offset, re-clamped), which keeps them
//! interpretable and invertible. Depth for a jittered pose is splatted from
//! the base frame and a few neighbors; a pose that is bitwise equal to its
//! base frame reuses the base depth directly.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::lighting::SpotlightValues;
use crate::model::Model;
use crate::renderer::{render_image_with, splat_depth, PerturbedMaterial, RenderedImage};

use super::{DatasetWriter, FrameRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub samples_per_frame: u32,
    pub rotation_stddev_deg: f64,
    pub translation_stddev_m: f64,
    pub albedo_scale: [f64; 2],
    pub roughness_offset: [f64; 2],
    pub l0_scale: [f64; 2],
    #[serde(default)]
    pub n_exp_override: Option<f64>,
    #[serde(default)]
    pub q_exp_override: Option<f64>,
    #[serde(default)]
    pub gamma_override: Option<f64>,
    pub exclude_training_poses: bool,
    /// Frames on each side of the base frame used as splat sources.
    pub splat_neighbors: u32,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            samples_per_frame: 24,
            rotation_stddev_deg: 5.0,
            translation_stddev_m: 0.002,
            albedo_scale: [0.8, 1.2],
            roughness_offset: [0.0, 0.0],
            l0_scale: [0.7, 1.3],
            n_exp_override: None,
            q_exp_override: None,
            gamma_override: None,
            exclude_training_poses: true,
            splat_neighbors: 2,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("albedo_scale", self.albedo_scale),
            ("roughness_offset", self.roughness_offset),
            ("l0_scale", self.l0_scale),
        ] {
            if r[0] > r[1] {
                return Err(Error::Config(format!("{name} range {r:?} is not well-ordered")));
            }
        }
        if self.rotation_stddev_deg < 0.0 || self.translation_stddev_m < 0.0 {
            return Err(Error::Config("jitter stddevs must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Total samples the spec will attempt (before skips).
pub fn planned_samples(n_frames: usize, spec: &AugmentationSpec) -> usize {
    n_frames * spec.samples_per_frame as usize
}

#[derive(Debug, Clone, Copy)]
pub struct SampleDraw {
    pub pose: Pose,
    pub albedo_scale: f64,
    pub roughness_offset: f64,
    pub l0_scale: f64,
}

fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

fn uniform_in(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

/// Draws one sample's pose jitter and override values. Always consumes the
/// same number of RNG values so sample k is reproducible.
pub fn draw_sample(rng: &mut ChaCha8Rng, base_pose: &Pose, spec: &AugmentationSpec) -> SampleDraw {
    let mut axis = Vector3::new(
        rng.gen_range(-1.0..=1.0f64),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    );
    if axis.norm() < 1e-9 {
        axis = Vector3::new(0.0, 0.0, 1.0);
    } else {
        axis = axis.normalize();
    }
    let rot_normal = Normal::new(0.0, spec.rotation_stddev_deg.max(1e-300)).unwrap();
    let angle_deg: f64 = rot_normal.sample(rng);
    let trans_normal = Normal::new(0.0, spec.translation_stddev_m.max(1e-300)).unwrap();
    let delta = Vector3::new(
        trans_normal.sample(rng),
        trans_normal.sample(rng),
        trans_normal.sample(rng),
    );
    let albedo_scale = uniform_in(rng, spec.albedo_scale);
    let roughness_offset = uniform_in(rng, spec.roughness_offset);
    let l0_scale = uniform_in(rng, spec.l0_scale);

    let pose = if spec.rotation_stddev_deg == 0.0 && spec.translation_stddev_m == 0.0 {
        *base_pose
    } else {
        Pose {
            rotation: base_pose.rotation * rodrigues(&axis, angle_deg.to_radians()),
            translation: base_pose.translation + delta,
        }
    };
    SampleDraw {
        pose,
        albedo_scale,
        roughness_offset,
        l0_scale,
    }
}

/// The spotlight values a draw renders with.
pub fn light_for_draw(model: &Model, draw: &SampleDraw, spec: &AugmentationSpec) -> SpotlightValues {
    let mut light = model.light_values();
    light.l0 *= draw.l0_scale;
    if let Some(n) = spec.n_exp_override {
        light.n_exp = n;
    }
    if let Some(q) = spec.q_exp_override {
        light.q_exp = q;
    }
    if let Some(g) = spec.gamma_override {
        light.gamma = g;
    }
    light
}

/// Renders one augmented sample given its depth map.
pub fn render_augmented_sample(
    model: &Model,
    draw: &SampleDraw,
    spec: &AugmentationSpec,
    depth: &[f64],
    k: &Intrinsics,
) -> Result<RenderedImage> {
    let material = PerturbedMaterial {
        base: model,
        albedo_scale: draw.albedo_scale,
        roughness_offset: draw.roughness_offset,
    };
    let light = light_for_draw(model, draw, spec);
    render_image_with(
        &material,
        &light,
        model.cfg.specular_factor4,
        model.cfg.forward_axis,
        &draw.pose,
        depth,
        k,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub exported: usize,
    pub skipped_low_coverage: usize,
    pub skipped_excluded_pose: usize,
}

fn poses_equal(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.rotation - b.rotation).abs().max() <= tol
        && (a.translation - b.translation).abs().max() <= tol
}

/// Exports `samples_per_frame` augmented triples per base frame.
pub fn export_augmented(
    model: &Model,
    base: &[FrameRecord],
    k: &Intrinsics,
    spec: &AugmentationSpec,
    excluded: &[Pose],
    out_dir: &Path,
) -> Result<SkipReport> {
    spec.validate()?;
    if base.is_empty() {
        return Err(Error::Dataset("no base frames for augmentation".into()));
    }
    let max_z = base
        .iter()
        .flat_map(|f| f.depth.iter().copied())
        .fold(0.0f64, f64::max);
    if max_z <= 0.0 {
        return Err(Error::EmptyScene);
    }
    let depth_scale = max_z * 1.5 / 65000.0;
    let mut writer = DatasetWriter::create(out_dir, *k, depth_scale, model.cfg.forward_axis)?;
    writer.set_bounds(model.bounds);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = SkipReport::default();
    let mut next_id = 0u32;

    for (fi, frame) in base.iter().enumerate() {
        let lo = fi.saturating_sub(spec.splat_neighbors as usize);
        let hi = (fi + spec.splat_neighbors as usize + 1).min(base.len());
        let sources = &base[lo..hi];
        for _ in 0..spec.samples_per_frame {
            let draw = draw_sample(&mut rng, &frame.pose, spec);
            if spec.exclude_training_poses
                && excluded.iter().any(|p| poses_equal(p, &draw.pose, 1e-9))
            {
                report.skipped_excluded_pose += 1;
                continue;
            }
            let depth = if draw.pose == frame.pose {
                frame.depth.clone()
            } else {
                splat_depth(&draw.pose, sources, k)?
            };
            let valid = depth.iter().filter(|&&z| z > 0.0).count();
            if (valid as f64) < 0.5 * depth.len() as f64 {
                report.skipped_low_coverage += 1;
                continue;
            }
            let img = render_augmented_sample(model, &draw, spec, &depth, k)?;
            writer.add_frame(next_id, &img.to_rgb8(), &depth, &draw.pose)?;
            next_id += 1;
            report.exported += 1;
        }
    }
    writer.finish()?;
    Ok(report)
}
