//! Camera model, pixel unprojection, depth-based surface normals, view
//! directions, and scene-coordinate normalization.
//!
//! Conventions: pixel centers sit at integer coordinates (no half-pixel
//! offset), `i` is the column, `j` is the row, and depth is the camera-space
//! z coordinate in meters. Poses are camera-to-world. Depth value 0 means
//! "no measurement" and such pixels are excluded everywhere downstream.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::FrameRecord;
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::Config(format!(
                "principal point cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Config(format!(
                "principal point cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Which camera axis the endoscope light points along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ForwardAxis {
    #[serde(rename = "+z")]
    #[default]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks R is a proper rotation within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho_err = (rtr - Matrix3::identity()).abs().max();
        if ortho_err > tol {
            return Err(Error::Config(format!(
                "rotation is not orthonormal (max |RtR - I| = {ortho_err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::Config(format!(
                "rotation determinant {det} is not 1"
            )));
        }
        Ok(())
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn camera_to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// World-space direction of the camera/light optical axis.
    pub fn forward(&self, axis: ForwardAxis) -> Vector3<f64> {
        let z = match axis {
            ForwardAxis::PosZ => Vector3::new(0.0, 0.0, 1.0),
            ForwardAxis::NegZ => Vector3::new(0.0, 0.0, -1.0),
        };
        self.rotation * z
    }

    /// Row-major 4x4 camera-to-world matrix.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Self {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }
}

/// Unprojects pixel (i, j) with z-depth `z` into a world point.
pub fn unproject_pixel(i: f64, j: f64, z: f64, k: &Intrinsics, pose: &Pose) -> Result<Vector3<f64>> {
    if z <= 0.0 {
        return Err(Error::InvalidDepth { i, j, depth: z });
    }
    let p_cam = Vector3::new((i - k.cx) / k.fx * z, (j - k.cy) / k.fy * z, z);
    Ok(pose.camera_to_world(&p_cam))
}

/// Projects a world point to (i, j, z). Returns None for points at or behind
/// the camera plane.
pub fn project_point(x_world: &Vector3<f64>, k: &Intrinsics, pose: &Pose) -> Option<(f64, f64, f64)> {
    let p = pose.world_to_camera(x_world);
    if p.z <= 0.0 {
        return None;
    }
    Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

/// Unit vector from a surface point toward the camera center.
pub fn view_direction(x: &Vector3<f64>, cam_center: &Vector3<f64>) -> Result<Vector3<f64>> {
    let v = cam_center - x;
    let norm = v.norm();
    if norm < 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "surface point coincides with camera center at {x:?}"
        )));
    }
    Ok(v / norm)
}

/// Per-pixel world-frame unit normals plus a validity mask.
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub normals: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

/// Estimates world-frame surface normals from a depth map.
///
/// Camera-space points are differenced (central in the interior, one-sided at
/// the borders), crossed, oriented toward the camera, and rotated into the
/// world frame. A pixel is invalid if its own depth or any depth it
/// differences against is missing, or if the cross product degenerates.
pub fn normals_from_depth(depth: &[f64], k: &Intrinsics, pose: &Pose) -> NormalMap {
    let w = k.width as usize;
    let h = k.height as usize;
    assert_eq!(depth.len(), w * h, "depth map size mismatch");

    let cam_point = |i: usize, j: usize| -> Option<Vector3<f64>> {
        let z = depth[j * w + i];
        if z <= 0.0 {
            return None;
        }
        Some(Vector3::new(
            (i as f64 - k.cx) / k.fx * z,
            (j as f64 - k.cy) / k.fy * z,
            z,
        ))
    };

    let mut normals = vec![Vector3::zeros(); w * h];
    let mut valid = vec![false; w * h];

    for j in 0..h {
        for i in 0..w {
            let center = match cam_point(i, j) {
                Some(p) => p,
                None => continue,
            };
            // Central differences in the interior, one-sided at borders.
            let (xa, xb) = if i > 0 && i + 1 < w {
                (cam_point(i - 1, j), cam_point(i + 1, j))
            } else if i + 1 < w {
                (Some(center), cam_point(i + 1, j))
            } else {
                (cam_point(i - 1, j), Some(center))
            };
            let (ya, yb) = if j > 0 && j + 1 < h {
                (cam_point(i, j - 1), cam_point(i, j + 1))
            } else if j + 1 < h {
                (Some(center), cam_point(i, j + 1))
            } else {
                (cam_point(i, j - 1), Some(center))
            };
            let (xa, xb, ya, yb) = match (xa, xb, ya, yb) {
                (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                _ => continue,
            };
            let n_cam = (xb - xa).cross(&(yb - ya));
            let norm = n_cam.norm();
            if norm < 1e-15 {
                continue;
            }
            let mut n_cam = n_cam / norm;
            // Orient toward the camera: the direction to the camera center in
            // camera space is -center.
            if n_cam.dot(&(-center)) < 0.0 {
                n_cam = -n_cam;
            }
            normals[j * w + i] = pose.rotation * n_cam;
            valid[j * w + i] = true;
        }
    }

    NormalMap { normals, valid }
}

/// Axis-aligned box enclosing all unprojected training points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min_corner: Vector3<f64>,
    pub max_corner: Vector3<f64>,
}

impl SceneBounds {
    /// Maps a world point into [0,1]^3, clamped.
    pub fn normalize_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            ((x.x - self.min_corner.x) / (self.max_corner.x - self.min_corner.x)).clamp(0.0, 1.0),
            ((x.y - self.min_corner.y) / (self.max_corner.y - self.min_corner.y)).clamp(0.0, 1.0),
            ((x.z - self.min_corner.z) / (self.max_corner.z - self.min_corner.z)).clamp(0.0, 1.0),
        )
    }
}

/// Fits scene bounds over every valid depth pixel of the given frames.
///
/// A margin of 1% of the axis extent (floor 0.01 m) is added on each side;
/// axes still narrower than 1e-6 m are widened to 1e-3 m.
pub fn fit_scene_bounds(frames: &[FrameRecord], k: &Intrinsics) -> Result<SceneBounds> {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    let w = k.width as usize;
    let h = k.height as usize;
    for frame in frames {
        for j in 0..h {
            for i in 0..w {
                let z = frame.depth[j * w + i];
                if z <= 0.0 {
                    continue;
                }
                let p = unproject_pixel(i as f64, j as f64, z, k, &frame.pose)?;
                min = min.inf(&p);
                max = max.sup(&p);
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::EmptyScene);
    }
    Ok(bounds_with_margin(min, max))
}

pub(crate) fn bounds_with_margin(min: Vector3<f64>, max: Vector3<f64>) -> SceneBounds {
    let mut lo = min;
    let mut hi = max;
    for a in 0..3 {
        let extent = hi[a] - lo[a];
        let margin = (0.01 * extent).max(0.01);
        lo[a] -= margin;
        hi[a] += margin;
        if hi[a] - lo[a] < 1e-6 {
            let mid = 0.5 * (lo[a] + hi[a]);
            lo[a] = mid - 5e-4;
            hi[a] = mid + 5e-4;
        }
    }
    SceneBounds {
        min_corner: lo,
        max_corner: hi,
    }
}
