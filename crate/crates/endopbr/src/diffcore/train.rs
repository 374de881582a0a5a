//! Training loop: frame/pixel sampling, one-shot light calibration, Adam
//! updates, CSV logging, and periodic checkpoints.
//!
//! Every iteration draws `frames_per_iter` training frames uniformly at
//! random (with replacement) and `pixels_per_frame` valid pixels from each,
//! so the default 5 x 6000 recipe touches 30k pixels per step. One epoch is
//! ceil(#train frames / frames_per_iter) iterations. All randomness flows
//! from one counter-based generator, so a fixed seed reproduces the loss
//! curve bit for bit.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FrameRecord};
use crate::error::{Error, Result};
use crate::geometry::{fit_scene_bounds, normals_from_depth, unproject_pixel, Intrinsics, NormalMap};
use crate::model::{Model, ModelConfig};
use crate::renderer::shade_with_material;

use super::adam::{adam_step, AdamState};
use super::autodiff::{backward_batch, PixelSample};
use super::checkpoint;
use super::loss::{LossBreakdown, LossWeights};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub frames_per_iter: usize,
    pub pixels_per_frame: usize,
    /// Radius of the albedo-pair jitter ball in normalized coordinates.
    pub jitter_radius: f64,
    /// Checkpoint every K epochs (0 = final only).
    pub checkpoint_every: u32,
    pub out_dir: PathBuf,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1500,
            lr: 1e-4,
            weights: LossWeights::default(),
            seed: 0,
            frames_per_iter: 5,
            pixels_per_frame: 6000,
            jitter_radius: 0.01,
            checkpoint_every: 0,
            out_dir: PathBuf::from("."),
            verbose: false,
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub final_loss: LossBreakdown,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    /// Mean total loss per epoch, in order.
    pub epoch_loss: Vec<f64>,
}

/// Per-frame sampling data: normals plus the flat indices of usable pixels.
pub struct FrameSamplingData {
    pub normals: NormalMap,
    pub valid: Vec<u32>,
}

pub fn frame_sampling_data(frame: &FrameRecord, k: &Intrinsics) -> FrameSamplingData {
    let normals = normals_from_depth(&frame.depth, k, &frame.pose);
    let valid = (0..frame.depth.len())
        .filter(|&i| frame.depth[i] > 0.0 && normals.valid[i])
        .map(|i| i as u32)
        .collect();
    FrameSamplingData { normals, valid }
}

pub fn jitter_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    if radius == 0.0 {
        return Vector3::zeros();
    }
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

fn make_sample(
    frame: &FrameRecord,
    data: &FrameSamplingData,
    idx: usize,
    k: &Intrinsics,
    axis: crate::geometry::ForwardAxis,
    jitter: Vector3<f64>,
) -> Result<PixelSample> {
    let w = k.width as usize;
    let (i, j) = (idx % w, idx / w);
    let x_world = unproject_pixel(i as f64, j as f64, frame.depth[idx], k, &frame.pose)?;
    Ok(PixelSample {
        x_world,
        normal: data.normals.normals[idx],
        cam_center: frame.pose.camera_center(),
        light_axis: frame.pose.forward(axis),
        gt: frame.gt_pixel(idx),
        jitter,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

/// One-shot L0 calibration: scale L0 so the median rendered intensity over a
/// probe batch matches the median ground-truth intensity. Rendered LDR scales
/// as L0^gamma, hence the 1/gamma exponent on the ratio.
fn calibrate_l0(
    model: &mut Model,
    frames: &[&FrameRecord],
    cache: &mut SamplingCache,
    k: &Intrinsics,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    const PROBE_PIXELS: usize = 1000;
    let mut pred_vals = Vec::with_capacity(PROBE_PIXELS * 3);
    let mut gt_vals = Vec::with_capacity(PROBE_PIXELS * 3);
    let light = model.light_values();
    let mut got = 0usize;
    let mut attempts = 0usize;
    while got < PROBE_PIXELS && attempts < PROBE_PIXELS * 10 {
        attempts += 1;
        let fi = rng.gen_range(0..frames.len());
        cache.ensure(frames[fi], k);
        let data = &cache.map[&frames[fi].frame_id];
        if data.valid.is_empty() {
            continue;
        }
        let pix = data.valid[rng.gen_range(0..data.valid.len())] as usize;
        let px = make_sample(frames[fi], data, pix, k, model.cfg.forward_axis, Vector3::zeros())?;
        let s = model.material_at_world(&px.x_world);
        let inp = crate::renderer::PixelShadingInput {
            x: px.x_world,
            normal: px.normal,
            omega_o: crate::geometry::view_direction(&px.x_world, &px.cam_center)?,
            cam_center: px.cam_center,
            light_axis: px.light_axis,
        };
        let r = shade_with_material(&inp, &s, &light, model.cfg.specular_factor4)?;
        for c in 0..3 {
            pred_vals.push(r.ldr[c]);
            gt_vals.push(px.gt[c]);
        }
        got += 1;
    }
    if pred_vals.is_empty() {
        return Ok(());
    }
    let med_pred = median(&mut pred_vals);
    let med_gt = median(&mut gt_vals);
    if med_pred <= 1e-9 || med_gt <= 1e-9 {
        return Ok(());
    }
    let mut v = model.light_values();
    v.l0 = (v.l0 * (med_gt / med_pred).powf(1.0 / v.gamma)).clamp(1e-4, 1e6);
    model.set_light_values(&v);
    Ok(())
}

/// Bounded per-frame sampling cache keyed by frame_id.
struct SamplingCache {
    map: HashMap<u32, FrameSamplingData>,
    order: Vec<u32>,
    cap: usize,
}

impl SamplingCache {
    fn new(cap: usize) -> Self {
        SamplingCache {
            map: HashMap::new(),
            order: Vec::new(),
            cap,
        }
    }

    fn ensure(&mut self, frame: &FrameRecord, k: &Intrinsics) {
        if !self.map.contains_key(&frame.frame_id) {
            if self.order.len() >= self.cap {
                let evict = self.order.remove(0);
                self.map.remove(&evict);
            }
            self.map.insert(frame.frame_id, frame_sampling_data(frame, k));
            self.order.push(frame.frame_id);
        }
    }
}

pub fn train(dataset: &Dataset, model_cfg: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let k = *dataset.intrinsics();
    let train_frames: Vec<&FrameRecord> = dataset.train_frames().collect();
    if train_frames.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let any_valid = train_frames
        .iter()
        .any(|f| f.depth.iter().any(|&z| z > 0.0));
    if !any_valid {
        return Err(Error::Dataset("dataset has zero valid depth pixels".into()));
    }

    let owned: Vec<FrameRecord> = train_frames.iter().map(|f| (*f).clone()).collect();
    let bounds = fit_scene_bounds(&owned, &k)?;
    drop(owned);

    let mut model = Model::new(model_cfg, bounds, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut cache = SamplingCache::new(16);

    calibrate_l0(&mut model, &train_frames, &mut cache, &k, &mut rng)?;

    let mut adam = AdamState::new(model.store.len(), cfg.lr);
    adam.validate()?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "epoch,iter,l1,metallic,smoothness,total,l0,n_exp,q_exp,gamma")
        .map_err(|e| Error::io(&log_path, e))?;

    let iters_per_epoch = train_frames.len().div_ceil(cfg.frames_per_iter).max(1);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs as usize);
    let mut final_loss = LossBreakdown::default();
    let mut global_iter = 0u64;

    for epoch in 1..=cfg.epochs {
        let mut epoch_total = 0.0;
        for _ in 0..iters_per_epoch {
            // Draw the iteration's frames, then its pixels, in a fixed order.
            let frame_picks: Vec<usize> = (0..cfg.frames_per_iter)
                .map(|_| rng.gen_range(0..train_frames.len()))
                .collect();
            let mut batch = Vec::with_capacity(cfg.frames_per_iter * cfg.pixels_per_frame);
            for &fi in &frame_picks {
                let frame = train_frames[fi];
                cache.ensure(frame, &k);
                let data = &cache.map[&frame.frame_id];

                if data.valid.is_empty() {
                    continue;
                }
                for _ in 0..cfg.pixels_per_frame {
                    let pix = data.valid[rng.gen_range(0..data.valid.len())] as usize;
                    let jit = jitter_in_ball(&mut rng, cfg.jitter_radius);
                    batch.push(make_sample(frame, data, pix, &k, model.cfg.forward_axis, jit)?);
                }
            }
            if batch.is_empty() {
                return Err(Error::Dataset("no valid pixels to sample".into()));
            }
            let loss = backward_batch(&mut model, &batch, &cfg.weights)?;
            adam_step(&mut model.store, &mut adam)?;

            global_iter += 1;
            let lv = model.light_values();
            writeln!(
                log,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                epoch,
                global_iter,
                loss.l1,
                loss.metallic_penalty,
                loss.albedo_smoothness,
                loss.total,
                lv.l0,
                lv.n_exp,
                lv.q_exp,
                lv.gamma
            )
            .map_err(|e| Error::io(&log_path, e))?;
            epoch_total += loss.total;
            final_loss = loss;
        }
        epoch_loss.push(epoch_total / iters_per_epoch as f64);

        if cfg.verbose && (epoch == 1 || epoch % 25 == 0 || epoch == cfg.epochs) {
            let lv = model.light_values();
            eprintln!(
                "epoch {epoch}/{}: total={:.6} l1={:.6} L0={:.3} n={:.3} q={:.3} gamma={:.3}",
                cfg.epochs, final_loss.total, final_loss.l1, lv.l0, lv.n_exp, lv.q_exp, lv.gamma
            );
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
            let path = cfg.out_dir.join(format!("checkpoint_{epoch:05}.bin"));
            checkpoint::save(&model, &path)?;
        }
    }

    let checkpoint_path = cfg.out_dir.join("checkpoint.bin");
    checkpoint::save(&model, &checkpoint_path)?;
    Ok(TrainOutcome {
        model,
        final_loss,
        checkpoint_path,
        log_path,
        epoch_loss,
    })
}

/// Builds shading samples for every valid pixel of a frame; used by the
/// evaluation and gradient-check paths.
pub fn all_valid_samples(
    frame: &FrameRecord,
    k: &Intrinsics,
    axis: crate::geometry::ForwardAxis,
) -> Result<Vec<(usize, PixelSample)>> {
    let data = frame_sampling_data(frame, k);
    let mut out = Vec::with_capacity(data.valid.len());
    for &pix in &data.valid {
        out.push((
            pix as usize,
            make_sample(frame, &data, pix as usize, k, axis, Vector3::zeros())?,
        ));
    }
    Ok(out)
}
