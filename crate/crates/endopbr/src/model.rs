//! The trainable scene model: hash tables + BRDF MLP + spotlight/gamma
//! scalars, all registered in one flat [`ParamStore`].
//!
//! Group layout (registration order) keeps every non-hash parameter in a
//! dense prefix so per-chunk gradient deltas can be a small dense buffer
//! plus a sparse list for the hash tables:
//!
//! ```text
//! mlp_w1 | mlp_b1 | mlp_w2 | mlp_b2 | mlp_w3 | mlp_b3 |
//! light_l0 | light_n | light_q | gamma | hash_tables
//! ```

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brdf::{self, BrdfSample, MlpContext, MlpGradSinks, MlpParams, HIDDEN_DIM, MATERIAL_DIM};
use crate::diffcore::{GroupId, ParamStore};
use crate::error::Result;
use crate::geometry::{ForwardAxis, SceneBounds};
use crate::hashgrid::{self, EncodeContext, HashGridConfig};
use crate::lighting::{RawLightParams, SpotlightValues};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid: HashGridConfig,
    pub forward_axis: ForwardAxis,
    /// Divide the specular term by the conventional extra factor of 4.
    pub specular_factor4: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: HashGridConfig::default(),
            forward_axis: ForwardAxis::default(),
            specular_factor4: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelGroups {
    pub w1: GroupId,
    pub b1: GroupId,
    pub w2: GroupId,
    pub b2: GroupId,
    pub w3: GroupId,
    pub b3: GroupId,
    pub l0: GroupId,
    pub n_exp: GroupId,
    pub q_exp: GroupId,
    pub gamma: GroupId,
    pub hash: GroupId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub bounds: SceneBounds,
    pub store: ParamStore,
    pub groups: ModelGroups,
}

impl Model {
    /// Builds a freshly initialized model. All randomness comes from `seed`.
    pub fn new(cfg: ModelConfig, bounds: SceneBounds, seed: u64) -> Result<Self> {
        cfg.grid.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = cfg.grid.output_dim();

        let mlp_flat = brdf::init_mlp(input_dim, &mut rng);
        let tables = hashgrid::init_tables(&cfg.grid, &mut rng);

        let mut store = ParamStore::new();
        let mut off = 0usize;
        let mut take = |len: usize| {
            let s = mlp_flat[off..off + len].to_vec();
            off += len;
            s
        };
        let w1 = store.register("mlp_w1", &[HIDDEN_DIM, input_dim], take(input_dim * HIDDEN_DIM));
        let b1 = store.register("mlp_b1", &[HIDDEN_DIM], take(HIDDEN_DIM));
        let w2 = store.register("mlp_w2", &[HIDDEN_DIM, HIDDEN_DIM], take(HIDDEN_DIM * HIDDEN_DIM));
        let b2 = store.register("mlp_b2", &[HIDDEN_DIM], take(HIDDEN_DIM));
        let w3 = store.register("mlp_w3", &[MATERIAL_DIM, HIDDEN_DIM], take(HIDDEN_DIM * MATERIAL_DIM));
        let b3 = store.register("mlp_b3", &[MATERIAL_DIM], take(MATERIAL_DIM));
        let init_light = RawLightParams::from_values(&SpotlightValues {
            l0: 1.0,
            n_exp: 1.0,
            q_exp: 2.0,
            gamma: 2.2,
        });
        let l0 = store.register("light_l0", &[1], vec![init_light.l0]);
        let n_exp = store.register("light_n", &[1], vec![init_light.n_exp]);
        let q_exp = store.register("light_q", &[1], vec![init_light.q_exp]);
        let gamma = store.register("gamma", &[1], vec![init_light.gamma]);
        let hash = store.register(
            "hash_tables",
            &[
                cfg.grid.levels as usize,
                cfg.grid.table_size as usize,
                cfg.grid.features_per_level as usize,
            ],
            tables,
        );

        Ok(Model {
            cfg,
            bounds,
            store,
            groups: ModelGroups {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
                l0,
                n_exp,
                q_exp,
                gamma,
                hash,
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.grid.output_dim()
    }

    /// Scalar count of the dense (non-hash) parameter prefix.
    pub fn dense_len(&self) -> usize {
        self.store.meta(self.groups.hash).offset
    }

    /// Flat offset of the [l0, n, q, gamma] scalars.
    pub fn light_offset(&self) -> usize {
        self.store.meta(self.groups.l0).offset
    }

    pub fn hash_values(&self) -> &[f64] {
        self.store.values(self.groups.hash)
    }

    pub fn mlp_params(&self) -> MlpParams<'_> {
        MlpParams {
            input_dim: self.input_dim(),
            w1: self.store.values(self.groups.w1),
            b1: self.store.values(self.groups.b1),
            w2: self.store.values(self.groups.w2),
            b2: self.store.values(self.groups.b2),
            w3: self.store.values(self.groups.w3),
            b3: self.store.values(self.groups.b3),
        }
    }

    pub fn light_raw(&self) -> RawLightParams {
        RawLightParams {
            l0: self.store.values(self.groups.l0)[0],
            n_exp: self.store.values(self.groups.n_exp)[0],
            q_exp: self.store.values(self.groups.q_exp)[0],
            gamma: self.store.values(self.groups.gamma)[0],
        }
    }

    pub fn light_values(&self) -> SpotlightValues {
        SpotlightValues::from_raw(&self.light_raw())
    }

    pub fn set_light_values(&mut self, v: &SpotlightValues) {
        let raw = RawLightParams::from_values(v);
        self.store.values_mut(self.groups.l0)[0] = raw.l0;
        self.store.values_mut(self.groups.n_exp)[0] = raw.n_exp;
        self.store.values_mut(self.groups.q_exp)[0] = raw.q_exp;
        self.store.values_mut(self.groups.gamma)[0] = raw.gamma;
    }

    /// Predicts the material at a normalized point, reusing caller buffers.
    pub fn material_with_ctx(
        &self,
        x_norm: &Vector3<f64>,
        feat: &mut Vec<f64>,
        enc: &mut EncodeContext,
        mlp: &mut MlpContext,
    ) -> BrdfSample {
        feat.resize(self.input_dim(), 0.0);
        hashgrid::encode_into(x_norm, self.hash_values(), &self.cfg.grid, feat, enc);
        brdf::mlp_forward(&self.mlp_params(), feat, mlp);
        mlp.sample()
    }

    /// Predicts the material at a normalized point in [0,1]^3.
    pub fn material_at(&self, x_norm: &Vector3<f64>) -> BrdfSample {
        let mut feat = Vec::new();
        let mut enc = EncodeContext::new();
        let mut mlp = MlpContext::new();
        self.material_with_ctx(x_norm, &mut feat, &mut enc, &mut mlp)
    }

    /// Predicts the material at a world point (normalizing first).
    pub fn material_at_world(&self, x_world: &Vector3<f64>) -> BrdfSample {
        self.material_at(&self.bounds.normalize_point(x_world))
    }
}

/// Splits a dense gradient buffer (layout mirroring the store prefix) into
/// MLP sinks plus the 4-scalar light/gamma slice.
pub fn carve_dense_grads<'a>(
    dense: &'a mut [f64],
    input_dim: usize,
) -> (MlpGradSinks<'a>, &'a mut [f64]) {
    let (w1, rest) = dense.split_at_mut(input_dim * HIDDEN_DIM);
    let (b1, rest) = rest.split_at_mut(HIDDEN_DIM);
    let (w2, rest) = rest.split_at_mut(HIDDEN_DIM * HIDDEN_DIM);
    let (b2, rest) = rest.split_at_mut(HIDDEN_DIM);
    let (w3, rest) = rest.split_at_mut(HIDDEN_DIM * MATERIAL_DIM);
    let (b3, light) = rest.split_at_mut(MATERIAL_DIM);
    debug_assert_eq!(light.len(), 4);
    (
        MlpGradSinks {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        },
        light,
    )
}
