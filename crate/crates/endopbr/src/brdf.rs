//! Neural BRDF field and analytic BRDF evaluation.
//!
//! The field is a small MLP over hash-grid features producing a 5D material
//! vector (base color, roughness, metallic), squashed into (0,1) with a
//! logistic. The analytic part evaluates the co-located diffuse + specular
//! BRDF: GGX normal distribution, Schlick Fresnel with a scalar F0 so the
//! specular lobe stays white, and Smith-GGX visibility with k = (r+1)^2 / 8.
//!
//! With the light at the camera the half vector collapses onto the view
//! direction, so every specular term depends on the single cosine
//! c = n . omega_o.

use nalgebra::Vector3;
use rand::Rng;

pub const HIDDEN_DIM: usize = 64;
pub const MATERIAL_DIM: usize = 5;

/// Per-point material record. All components live in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrdfSample {
    pub base_color: Vector3<f64>,
    pub roughness: f64,
    pub metallic: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Borrowed views of the MLP weights. Matrices are row-major `[out][in]`.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams<'a> {
    pub input_dim: usize,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub w3: &'a [f64],
    pub b3: &'a [f64],
}

/// Mutable gradient slots matching `MlpParams`.
pub struct MlpGradSinks<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
    pub w3: &'a mut [f64],
    pub b3: &'a mut [f64],
}

/// Activations recorded by the forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpContext {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub raw: Vec<f64>,
    pub material: [f64; MATERIAL_DIM],
}

impl MlpContext {
    pub fn new() -> Self {
        MlpContext::default()
    }

    pub fn sample(&self) -> BrdfSample {
        BrdfSample {
            base_color: Vector3::new(self.material[0], self.material[1], self.material[2]),
            roughness: self.material[3],
            metallic: self.material[4],
        }
    }
}

fn dense_forward(w: &[f64], b: &[f64], input: &[f64], out: &mut Vec<f64>) {
    let out_dim = b.len();
    let in_dim = input.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    out.clear();
    out.reserve(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// Runs the MLP and logistic squashing, recording activations in `ctx`.
pub fn mlp_forward(params: &MlpParams, features: &[f64], ctx: &mut MlpContext) {
    debug_assert_eq!(features.len(), params.input_dim);
    ctx.input.clear();
    ctx.input.extend_from_slice(features);

    dense_forward(params.w1, params.b1, features, &mut ctx.z1);
    ctx.a1.clear();
    ctx.a1.extend(ctx.z1.iter().map(|&z| relu(z)));

    dense_forward(params.w2, params.b2, &ctx.a1, &mut ctx.z2);
    ctx.a2.clear();
    ctx.a2.extend(ctx.z2.iter().map(|&z| relu(z)));

    dense_forward(params.w3, params.b3, &ctx.a2, &mut ctx.raw);
    for (m, &r) in ctx.material.iter_mut().zip(ctx.raw.iter()) {
        *m = sigmoid(r);
    }
}

/// Backpropagates `d_material` (gradient w.r.t. the squashed 5-vector)
/// through the MLP. Accumulates into the weight sinks and into `d_input`
/// (gradient w.r.t. the feature vector, used for the hash tables).
pub fn mlp_backward(
    params: &MlpParams,
    ctx: &MlpContext,
    d_material: &[f64; MATERIAL_DIM],
    sinks: &mut MlpGradSinks,
    d_input: &mut [f64],
) {
    debug_assert_eq!(d_input.len(), params.input_dim);
    // Squash: d_raw = d_material * s * (1 - s).
    let mut d_raw = [0.0f64; MATERIAL_DIM];
    for i in 0..MATERIAL_DIM {
        let s = ctx.material[i];
        d_raw[i] = d_material[i] * s * (1.0 - s);
    }

    // Output layer.
    let mut d_a2 = vec![0.0f64; HIDDEN_DIM];
    for o in 0..MATERIAL_DIM {
        let g = d_raw[o];
        sinks.b3[o] += g;
        let row = &params.w3[o * HIDDEN_DIM..(o + 1) * HIDDEN_DIM];
        let grow = &mut sinks.w3[o * HIDDEN_DIM..(o + 1) * HIDDEN_DIM];
        for h in 0..HIDDEN_DIM {
            grow[h] += g * ctx.a2[h];
            d_a2[h] += g * row[h];
        }
    }

    // Hidden layer 2.
    let mut d_a1 = vec![0.0f64; HIDDEN_DIM];
    for o in 0..HIDDEN_DIM {
        let g = if ctx.z2[o] > 0.0 { d_a2[o] } else { 0.0 };
        if g == 0.0 {
            continue;
        }
        sinks.b2[o] += g;
        let row = &params.w2[o * HIDDEN_DIM..(o + 1) * HIDDEN_DIM];
        let grow = &mut sinks.w2[o * HIDDEN_DIM..(o + 1) * HIDDEN_DIM];
        for h in 0..HIDDEN_DIM {
            grow[h] += g * ctx.a1[h];
            d_a1[h] += g * row[h];
        }
    }

    // Input layer.
    let in_dim = params.input_dim;
    for o in 0..HIDDEN_DIM {
        let g = if ctx.z1[o] > 0.0 { d_a1[o] } else { 0.0 };
        if g == 0.0 {
            continue;
        }
        sinks.b1[o] += g;
        let row = &params.w1[o * in_dim..(o + 1) * in_dim];
        let grow = &mut sinks.w1[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += g * ctx.input[i];
            d_input[i] += g * row[i];
        }
    }
}

/// He-uniform weight init, zero biases. Layout matches the `MlpParams` row
/// ordering w1|b1|w2|b2|w3|b3 in one flat buffer.
pub fn init_mlp<R: Rng>(input_dim: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(mlp_param_len(input_dim));
    let layer = |fan_in: usize, fan_out: usize, rng: &mut R, out: &mut Vec<f64>| {
        let limit = (6.0 / fan_in as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)));
        out.extend(std::iter::repeat(0.0).take(fan_out));
    };
    layer(input_dim, HIDDEN_DIM, rng, &mut out);
    layer(HIDDEN_DIM, HIDDEN_DIM, rng, &mut out);
    layer(HIDDEN_DIM, MATERIAL_DIM, rng, &mut out);
    out
}

pub fn mlp_param_len(input_dim: usize) -> usize {
    input_dim * HIDDEN_DIM + HIDDEN_DIM + HIDDEN_DIM * HIDDEN_DIM + HIDDEN_DIM
        + HIDDEN_DIM * MATERIAL_DIM + MATERIAL_DIM
}

/// Diffuse term (1 - m) / pi * b.
pub fn brdf_diffuse(s: &BrdfSample) -> Vector3<f64> {
    s.base_color * ((1.0 - s.metallic) / std::f64::consts::PI)
}

/// Specular value plus its partials w.r.t. roughness and metallic.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpecularEval {
    pub value: f64,
    pub d_roughness: f64,
    pub d_metallic: f64,
}

/// White specular term for the co-located case (h = omega_o).
///
/// `factor4` divides by the conventional extra 4 in the Cook-Torrance
/// denominator; off by default.
pub fn brdf_specular_eval(
    omega: &Vector3<f64>,
    n: &Vector3<f64>,
    s: &BrdfSample,
    factor4: bool,
) -> SpecularEval {
    let c_raw = omega.dot(n);
    if c_raw <= 0.0 {
        return SpecularEval::default();
    }
    let c = c_raw.min(1.0);
    let (r, m) = (s.roughness, s.metallic);
    let pi = std::f64::consts::PI;

    // GGX normal distribution with alpha = r^2.
    let alpha = r * r;
    let a2 = alpha * alpha;
    let t = c * c * (a2 - 1.0) + 1.0;
    let d = a2 / (pi * t * t);
    let dd_dalpha = 2.0 * alpha * (t - 2.0 * c * c * a2) / (pi * t * t * t);
    let dd_dr = dd_dalpha * 2.0 * r;

    // Schlick Fresnel with scalar F0 = 0.04 (1 - m) + m.
    let s5 = (1.0 - c).powi(5);
    let f0 = 0.04 * (1.0 - m) + m;
    let fresnel = f0 + (1.0 - f0) * s5;
    let df_dm = 0.96 * (1.0 - s5);

    // Smith-GGX visibility, k = (r+1)^2 / 8.
    let k = (r + 1.0) * (r + 1.0) / 8.0;
    let g_den = c * (1.0 - k) + k;
    let g1 = c / g_den;
    let g = g1 * g1;
    let dg1_dk = -c * (1.0 - c) / (g_den * g_den);
    let dg_dr = 2.0 * g1 * dg1_dk * (r + 1.0) / 4.0;

    // Eq-style denominator (n.wi)(n.wo) = c^2, clamped at grazing.
    let cd = c.max(1e-4);
    let mut den = cd * cd;
    if factor4 {
        den *= 4.0;
    }

    SpecularEval {
        value: d * fresnel * g / den,
        d_roughness: (dd_dr * fresnel * g + d * fresnel * dg_dr) / den,
        d_metallic: d * df_dm * g / den,
    }
}

pub fn brdf_specular(omega: &Vector3<f64>, n: &Vector3<f64>, s: &BrdfSample, factor4: bool) -> f64 {
    brdf_specular_eval(omega, n, s, factor4).value
}

/// Full BRDF f = f_d + f_s * (1,1,1).
pub fn brdf_total(
    omega: &Vector3<f64>,
    n: &Vector3<f64>,
    s: &BrdfSample,
    factor4: bool,
) -> Vector3<f64> {
    brdf_diffuse(s).add_scalar(brdf_specular(omega, n, s, factor4))
}
