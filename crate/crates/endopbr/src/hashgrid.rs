//! Multiresolution hash encoding of normalized 3D points.
//!
//! Each level overlays a virtual grid of resolution `N_l` on the unit cube,
//! hashes the 8 corners of the voxel containing the query into a fixed-size
//! feature table, and trilinearly interpolates the corner features. Level
//! outputs are concatenated. The encoding is linear in the table entries, so
//! the backward pass just scatters the upstream gradient with the same
//! trilinear weights.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial hash primes; corner coordinates are multiplied with 32-bit
/// wrapping arithmetic before the XOR, as is conventional for this encoding.
const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: u32,
    pub features_per_level: u32,
    /// Entries per level; must be a power of two.
    pub table_size: u32,
    pub base_resolution: u32,
    pub finest_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 16,
            features_per_level: 2,
            table_size: 1 << 19,
            base_resolution: 16,
            finest_resolution: 2048,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("hash grid needs at least one level".into()));
        }
        if self.features_per_level < 1 {
            return Err(Error::Config("features_per_level must be >= 1".into()));
        }
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "table_size {} is not a power of two",
                self.table_size
            )));
        }
        if self.base_resolution < 1 || self.finest_resolution < self.base_resolution {
            return Err(Error::Config(format!(
                "resolutions must satisfy 1 <= base ({}) <= finest ({})",
                self.base_resolution, self.finest_resolution
            )));
        }
        Ok(())
    }

    /// Per-level geometric growth factor of the grid resolution.
    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            1.0
        } else {
            (((self.finest_resolution as f64).ln() - (self.base_resolution as f64).ln())
                / (self.levels as f64 - 1.0))
                .exp()
        }
    }

    pub fn level_resolution(&self, level: u32) -> u32 {
        (self.base_resolution as f64 * self.growth_factor().powi(level as i32)).floor() as u32
    }

    /// Length of the concatenated feature vector.
    pub fn output_dim(&self) -> usize {
        (self.levels * self.features_per_level) as usize
    }

    /// Total scalar count of all level tables.
    pub fn param_len(&self) -> usize {
        self.levels as usize * self.table_size as usize * self.features_per_level as usize
    }

    fn level_offset(&self, level: u32) -> usize {
        level as usize * self.table_size as usize * self.features_per_level as usize
    }
}

/// Uniform initialization in [-1e-4, 1e-4]; small enough that early material
/// predictions stay near the logistic midpoint.
pub fn init_tables<R: Rng>(cfg: &HashGridConfig, rng: &mut R) -> Vec<f64> {
    (0..cfg.param_len()).map(|_| rng.gen_range(-1e-4..=1e-4)).collect()
}

fn corner_hash(cfg: &HashGridConfig, cx: u32, cy: u32, cz: u32) -> u32 {
    let h = cx.wrapping_mul(HASH_PRIMES[0])
        ^ cy.wrapping_mul(HASH_PRIMES[1])
        ^ cz.wrapping_mul(HASH_PRIMES[2]);
    h & (cfg.table_size - 1)
}

/// Corner lookups recorded by the forward pass, reused by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct EncodeContext {
    /// Per level: 8 (entry index within level, trilinear weight) pairs.
    pub corners: Vec<[(u32, f64); 8]>,
}

impl EncodeContext {
    pub fn new() -> Self {
        EncodeContext::default()
    }
}

/// Encodes a point in [0,1]^3 into `out` (length `cfg.output_dim()`),
/// recording corner lookups in `ctx`. Inputs outside the unit cube are
/// clamped.
pub fn encode_into(
    x: &Vector3<f64>,
    tables: &[f64],
    cfg: &HashGridConfig,
    out: &mut [f64],
    ctx: &mut EncodeContext,
) {
    debug_assert_eq!(tables.len(), cfg.param_len());
    debug_assert_eq!(out.len(), cfg.output_dim());
    let f = cfg.features_per_level as usize;
    ctx.corners.clear();
    ctx.corners.resize(cfg.levels as usize, [(0u32, 0.0f64); 8]);

    let p = Vector3::new(
        x.x.clamp(0.0, 1.0),
        x.y.clamp(0.0, 1.0),
        x.z.clamp(0.0, 1.0),
    );

    for level in 0..cfg.levels {
        let n = cfg.level_resolution(level) as f64;
        let sx = p.x * n;
        let sy = p.y * n;
        let sz = p.z * n;
        let (ix, iy, iz) = (sx.floor(), sy.floor(), sz.floor());
        let (fx, fy, fz) = (sx - ix, sy - iy, sz - iz);
        let (ix, iy, iz) = (ix as u32, iy as u32, iz as u32);

        let base = cfg.level_offset(level);
        let out_base = level as usize * f;
        for k in out.iter_mut().skip(out_base).take(f) {
            *k = 0.0;
        }
        let slots = &mut ctx.corners[level as usize];
        for (corner, slot) in slots.iter_mut().enumerate() {
            let (dx, dy, dz) = (
                (corner & 1) as u32,
                ((corner >> 1) & 1) as u32,
                ((corner >> 2) & 1) as u32,
            );
            let w = (if dx == 1 { fx } else { 1.0 - fx })
                * (if dy == 1 { fy } else { 1.0 - fy })
                * (if dz == 1 { fz } else { 1.0 - fz });
            let entry = corner_hash(cfg, ix + dx, iy + dy, iz + dz);
            *slot = (entry, w);
            let src = base + entry as usize * f;
            for t in 0..f {
                out[out_base + t] += w * tables[src + t];
            }
        }
    }
}

/// Convenience wrapper that allocates the output.
pub fn encode(x: &Vector3<f64>, tables: &[f64], cfg: &HashGridConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.output_dim()];
    let mut ctx = EncodeContext::new();
    encode_into(x, tables, cfg, &mut out, &mut ctx);
    out
}

/// Walks the recorded corner lookups and emits `(flat table index, gradient)`
/// contributions: upstream feature gradient times the trilinear weight.
pub fn encode_backward_with(
    ctx: &EncodeContext,
    upstream: &[f64],
    cfg: &HashGridConfig,
    mut emit: impl FnMut(usize, f64),
) {
    debug_assert_eq!(upstream.len(), cfg.output_dim());
    let f = cfg.features_per_level as usize;
    for (level, slots) in ctx.corners.iter().enumerate() {
        let base = cfg.level_offset(level as u32);
        let out_base = level * f;
        for &(entry, w) in slots.iter() {
            if w == 0.0 {
                continue;
            }
            let dst = base + entry as usize * f;
            for t in 0..f {
                emit(dst + t, w * upstream[out_base + t]);
            }
        }
    }
}

/// Scatters `upstream` (gradient w.r.t. the feature vector) into the flat
/// table gradient buffer.
pub fn encode_backward(
    ctx: &EncodeContext,
    upstream: &[f64],
    cfg: &HashGridConfig,
    table_grads: &mut [f64],
) {
    debug_assert_eq!(table_grads.len(), cfg.param_len());
    encode_backward_with(ctx, upstream, cfg, |idx, g| table_grads[idx] += g);
}
