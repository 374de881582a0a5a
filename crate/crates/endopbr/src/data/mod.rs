//! Dataset ingestion and export.
//!
//! On-disk layout: `manifest.json` next to `images/NNNN.png` (8-bit RGB),
//! `depth/NNNN.png` (16-bit grayscale, meters = raw * depth_scale) and
//! `poses/NNNN.txt` (4x4 row-major camera-to-world).

pub mod augment;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ForwardAxis, Intrinsics, Pose, SceneBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One dataset sample: RGB image, depth map, pose, split tag.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub image: RgbImage,
    /// Meters; 0 marks a missing measurement.
    pub depth: Vec<f64>,
    pub pose: Pose,
    pub split: Split,
}

impl FrameRecord {
    /// Ground-truth LDR color at a flat pixel index, in [0,1].
    pub fn gt_pixel(&self, idx: usize) -> Vector3<f64> {
        let w = self.image.width() as usize;
        let p = self.image.get_pixel((idx % w) as u32, (idx / w) as u32);
        Vector3::new(
            p.0[0] as f64 / 255.0,
            p.0[1] as f64 / 255.0,
            p.0[2] as f64 / 255.0,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: u32,
    pub image: String,
    pub depth: String,
    pub pose: String,
}

/// Ground-truth constants of an analytic oracle scene, kept in the manifest
/// so recovery runs can compare against them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneTruth {
    pub kind: String,
    pub base_color: [f64; 3],
    pub roughness: f64,
    pub metallic: f64,
    pub l0: f64,
    pub n_exp: f64,
    pub q_exp: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub intrinsics: Intrinsics,
    /// Meters per raw 16-bit depth unit.
    pub depth_scale: f64,
    #[serde(default)]
    pub forward_axis: ForwardAxis,
    pub frames: Vec<ManifestFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_bounds: Option<SceneBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SceneTruth>,
}

#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub frames: Vec<FrameRecord>,
}

impl Dataset {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.manifest.intrinsics
    }

    pub fn train_frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.split == Split::Train)
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.split == Split::Test)
    }
}

fn frame_err(frame_id: u32, msg: impl Into<String>) -> Error {
    Error::Frame {
        frame_id,
        msg: msg.into(),
    }
}

/// Loads a dataset from a manifest path (or a directory containing
/// `manifest.json`). Frames come back sorted by frame_id with the 8:1 split
/// applied.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let root = manifest_path
        .parent()
        .ok_or_else(|| Error::Dataset("manifest path has no parent directory".into()))?
        .to_path_buf();
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;

    if manifest.frames.is_empty() {
        return Err(Error::Dataset("manifest lists no frames".into()));
    }
    if manifest.depth_scale <= 0.0 {
        return Err(Error::Dataset(format!(
            "depth_scale must be positive, got {}",
            manifest.depth_scale
        )));
    }
    manifest.intrinsics.validate()?;

    let k = manifest.intrinsics;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        let img_path = root.join(&mf.image);
        let img = image::open(&img_path)
            .map_err(|e| frame_err(mf.frame_id, format!("image {}: {e}", img_path.display())))?
            .to_rgb8();
        if img.width() != k.width || img.height() != k.height {
            return Err(frame_err(
                mf.frame_id,
                format!(
                    "image is {}x{} but intrinsics expect {}x{}",
                    img.width(),
                    img.height(),
                    k.width,
                    k.height
                ),
            ));
        }
        let depth_path = root.join(&mf.depth);
        let depth_img = image::open(&depth_path)
            .map_err(|e| frame_err(mf.frame_id, format!("depth {}: {e}", depth_path.display())))?
            .to_luma16();
        if depth_img.width() != k.width || depth_img.height() != k.height {
            return Err(frame_err(
                mf.frame_id,
                format!(
                    "depth is {}x{} but intrinsics expect {}x{}",
                    depth_img.width(),
                    depth_img.height(),
                    k.width,
                    k.height
                ),
            ));
        }
        let depth: Vec<f64> = depth_img
            .pixels()
            .map(|p| p.0[0] as f64 * manifest.depth_scale)
            .collect();

        let pose_path = root.join(&mf.pose);
        let pose = read_pose(&pose_path).map_err(|e| frame_err(mf.frame_id, e.to_string()))?;
        pose.validate(1e-4)
            .map_err(|e| frame_err(mf.frame_id, e.to_string()))?;

        frames.push(FrameRecord {
            frame_id: mf.frame_id,
            image: img,
            depth,
            pose,
            split: Split::Train,
        });
    }
    frames.sort_by_key(|f| f.frame_id);
    split_frames(&mut frames);

    Ok(Dataset {
        root,
        manifest,
        frames,
    })
}

/// Tags every 9th frame (sorted by frame_id) as test, the rest as train.
/// With fewer than 9 frames everything stays train; the caller should warn.
pub fn split_frames(frames: &mut [FrameRecord]) -> SplitSummary {
    frames.sort_by_key(|f| f.frame_id);
    let mut summary = SplitSummary::default();
    for (idx, frame) in frames.iter_mut().enumerate() {
        frame.split = if idx % 9 == 8 { Split::Test } else { Split::Train };
        match frame.split {
            Split::Train => summary.train += 1,
            Split::Test => summary.test += 1,
        }
    }
    summary
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Dataset(format!("pose {}: bad number '{t}': {e}", path.display())))
        })
        .collect::<Result<_>>()?;
    if vals.len() != 16 {
        return Err(Error::Dataset(format!(
            "pose {} has {} values, expected 16",
            path.display(),
            vals.len()
        )));
    }
    let m = Matrix4::from_row_slice(&vals);
    let bottom = m.row(3);
    if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
        return Err(Error::Dataset(format!(
            "pose {} bottom row is not [0 0 0 1]",
            path.display()
        )));
    }
    Ok(Pose::from_matrix4(&m))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let m = pose.to_matrix4();
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Quantizes a depth map to 16 bits with the given scale.
pub fn depth_to_raw16(depth: &[f64], depth_scale: f64, width: u32, height: u32) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let raw: Vec<u16> = depth
        .iter()
        .map(|&z| (z / depth_scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    ImageBuffer::from_raw(width, height, raw).expect("depth buffer size")
}

/// Writes a dataset directory (manifest + per-frame files).
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn create(
        root: &Path,
        intrinsics: Intrinsics,
        depth_scale: f64,
        forward_axis: ForwardAxis,
    ) -> Result<Self> {
        for sub in ["images", "depth", "poses"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            manifest: DatasetManifest {
                intrinsics,
                depth_scale,
                forward_axis,
                frames: Vec::new(),
                scene_bounds: None,
                truth: None,
            },
        })
    }

    pub fn set_truth(&mut self, truth: SceneTruth) {
        self.manifest.truth = Some(truth);
    }

    pub fn set_bounds(&mut self, bounds: SceneBounds) {
        self.manifest.scene_bounds = Some(bounds);
    }

    pub fn add_frame(
        &mut self,
        frame_id: u32,
        image: &RgbImage,
        depth: &[f64],
        pose: &Pose,
    ) -> Result<()> {
        let k = self.manifest.intrinsics;
        let image_rel = format!("images/{frame_id:04}.png");
        let depth_rel = format!("depth/{frame_id:04}.png");
        let pose_rel = format!("poses/{frame_id:04}.txt");

        let image_path = self.root.join(&image_rel);
        image
            .save(&image_path)
            .map_err(|e| Error::Image {
                path: image_path.clone(),
                msg: e.to_string(),
            })?;
        let depth_path = self.root.join(&depth_rel);
        depth_to_raw16(depth, self.manifest.depth_scale, k.width, k.height)
            .save(&depth_path)
            .map_err(|e| Error::Image {
                path: depth_path.clone(),
                msg: e.to_string(),
            })?;
        write_pose(&self.root.join(&pose_rel), pose)?;

        self.manifest.frames.push(ManifestFrame {
            frame_id,
            image: image_rel,
            depth: depth_rel,
            pose: pose_rel,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
