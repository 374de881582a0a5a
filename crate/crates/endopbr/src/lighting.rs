//! Learnable spotlight model and gamma tone mapping.
//!
//! The light sits at the camera center and points along the camera forward
//! axis. Intensity at a surface point falls off as cos^n(theta) / d^q and is
//! zero on and behind the light's equatorial plane. L0, n, q and the tone
//! exponent gamma are stored as unconstrained logs and mapped through exp so
//! they stay positive.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Resolved (positive) spotlight parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotlightValues {
    pub l0: f64,
    pub n_exp: f64,
    pub q_exp: f64,
    pub gamma: f64,
}

impl SpotlightValues {
    pub fn from_raw(raw: &RawLightParams) -> Self {
        SpotlightValues {
            l0: raw.l0.exp(),
            n_exp: raw.n_exp.exp(),
            q_exp: raw.q_exp.exp(),
            gamma: raw.gamma.exp(),
        }
    }
}

/// Unconstrained storage-space parameters (log of the positive values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawLightParams {
    pub l0: f64,
    pub n_exp: f64,
    pub q_exp: f64,
    pub gamma: f64,
}

impl RawLightParams {
    pub fn from_values(v: &SpotlightValues) -> Self {
        RawLightParams {
            l0: v.l0.ln(),
            n_exp: v.n_exp.ln(),
            q_exp: v.q_exp.ln(),
            gamma: v.gamma.ln(),
        }
    }
}

/// Per-parameter magnitude cap on light gradients; the angular falloff has
/// an unbounded derivative near the cone edge when n_exp < 1.
pub const LIGHT_GRAD_CLAMP: f64 = 1e4;

/// Incident intensity plus partials w.r.t. the positive-space parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct IncidentLightEval {
    pub value: f64,
    pub d_l0: f64,
    pub d_n: f64,
    pub d_q: f64,
}

/// Evaluates the spotlight at `x` for a light at `x_l` aimed along `v_l`.
pub fn incident_light_eval(
    x: &Vector3<f64>,
    x_l: &Vector3<f64>,
    v_l: &Vector3<f64>,
    p: &SpotlightValues,
) -> Result<IncidentLightEval> {
    let delta = x - x_l;
    let d = delta.norm();
    if d < 1e-6 {
        return Err(Error::DegenerateGeometry(format!(
            "surface point within {d:.1e} m of the light center"
        )));
    }
    let cos_theta = delta.dot(v_l) / d;
    if cos_theta <= 0.0 {
        return Ok(IncidentLightEval::default());
    }
    let cos_theta = cos_theta.min(1.0);
    let angular = cos_theta.powf(p.n_exp);
    let falloff = d.powf(p.q_exp);
    let shape = angular / falloff;
    let value = p.l0 * shape;
    Ok(IncidentLightEval {
        value,
        d_l0: shape,
        d_n: value * cos_theta.ln(),
        d_q: -value * d.ln(),
    })
}

pub fn incident_light(
    x: &Vector3<f64>,
    x_l: &Vector3<f64>,
    v_l: &Vector3<f64>,
    p: &SpotlightValues,
) -> Result<f64> {
    Ok(incident_light_eval(x, x_l, v_l, p)?.value)
}

/// Chain-rules an upstream dL/dL_i into raw (log-space) parameter gradients,
/// clamped to `LIGHT_GRAD_CLAMP`.
pub fn raw_light_grads(eval: &IncidentLightEval, values: &SpotlightValues, upstream: f64) -> [f64; 3] {
    let clamp = |g: f64| g.clamp(-LIGHT_GRAD_CLAMP, LIGHT_GRAD_CLAMP);
    [
        clamp(upstream * eval.d_l0 * values.l0),
        clamp(upstream * eval.d_n * values.n_exp),
        clamp(upstream * eval.d_q * values.q_exp),
    ]
}

/// HDR -> LDR power tone map, clamped to [0,1] for image output.
pub fn gamma_map(c_hdr: &Vector3<f64>, gamma: f64) -> Vector3<f64> {
    Vector3::new(
        c_hdr.x.powf(gamma).clamp(0.0, 1.0),
        c_hdr.y.powf(gamma).clamp(0.0, 1.0),
        c_hdr.z.powf(gamma).clamp(0.0, 1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base_values() -> SpotlightValues {
        SpotlightValues {
            l0: 2.0,
            n_exp: 1.0,
            q_exp: 2.0,
            gamma: 2.2,
        }
    }

    #[test]
    fn on_axis_unit_distance_gives_l0() {
        let p = SpotlightValues {
            l0: 3.7,
            ..base_values()
        };
        let li = incident_light(
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &p,
        )
        .unwrap();
        assert_eq!(li, 3.7);
    }

    #[test]
    fn sixty_degree_falloff_hand_value() {
        // L0=2, n=1, q=2, theta=60 deg, d=2 -> 2 * 0.5 / 4 = 0.25.
        let p = base_values();
        let x = Vector3::new(3.0f64.sqrt(), 0.0, 1.0);
        let li = incident_light(&x, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0), &p).unwrap();
        assert!((li - 0.25).abs() < 1e-15, "got {li}");
    }

    #[test]
    fn behind_light_is_dark() {
        let p = base_values();
        let li = incident_light(
            &Vector3::new(0.0, 1.0, -0.1),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &p,
        )
        .unwrap();
        assert_eq!(li, 0.0);
        let eval = incident_light_eval(
            &Vector3::new(0.0, 1.0, -0.1),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &p,
        )
        .unwrap();
        assert_eq!((eval.d_l0, eval.d_n, eval.d_q), (0.0, 0.0, 0.0));
    }

    #[test]
    fn coincident_point_is_degenerate() {
        let p = base_values();
        assert!(incident_light(
            &Vector3::new(0.0, 0.0, 1e-9),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &p,
        )
        .is_err());
    }

    #[test]
    fn backward_on_axis_unit_distance() {
        let p = SpotlightValues {
            l0: 5.0,
            ..base_values()
        };
        let eval = incident_light_eval(
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &p,
        )
        .unwrap();
        assert_eq!(eval.d_l0, 1.0);
        assert_eq!(eval.d_n, 0.0);
        assert_eq!(eval.d_q, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..100 {
            let p = SpotlightValues {
                l0: rng.gen_range(0.5..5.0),
                n_exp: rng.gen_range(0.5..3.0),
                q_exp: rng.gen_range(0.5..3.0),
                gamma: 2.2,
            };
            let x_l = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let v_l = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            // Point in front of the light, not too close and not grazing.
            let lateral = Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            );
            let x = x_l + v_l * rng.gen_range(0.4..2.0) + lateral;
            let eval = match incident_light_eval(&x, &x_l, &v_l, &p) {
                Ok(e) if e.value > 1e-9 => e,
                _ => continue,
            };
            let eval_at = |p: &SpotlightValues| incident_light(&x, &x_l, &v_l, p).unwrap();
            let checks = [
                (eval.d_l0, {
                    let mut pp = p;
                    pp.l0 += h;
                    let plus = eval_at(&pp);
                    pp.l0 -= 2.0 * h;
                    (plus - eval_at(&pp)) / (2.0 * h)
                }),
                (eval.d_n, {
                    let mut pp = p;
                    pp.n_exp += h;
                    let plus = eval_at(&pp);
                    pp.n_exp -= 2.0 * h;
                    (plus - eval_at(&pp)) / (2.0 * h)
                }),
                (eval.d_q, {
                    let mut pp = p;
                    pp.q_exp += h;
                    let plus = eval_at(&pp);
                    pp.q_exp -= 2.0 * h;
                    (plus - eval_at(&pp)) / (2.0 * h)
                }),
            ];
            for (analytic, fd) in checks {
                let denom = analytic.abs().max(fd.abs()).max(1e-9);
                assert!(
                    (analytic - fd).abs() / denom < 1e-6,
                    "analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gamma_map_cases() {
        let c = Vector3::new(0.25, 0.5, 1.0);
        assert_relative_eq!(gamma_map(&c, 1.0), c);
        assert_relative_eq!(
            gamma_map(&Vector3::repeat(0.25), 0.5),
            Vector3::repeat(0.5),
            epsilon = 1e-15
        );
        assert_eq!(gamma_map(&Vector3::zeros(), 2.2), Vector3::zeros());
        // HDR overshoot clamps to 1 for image output.
        assert_eq!(gamma_map(&Vector3::repeat(3.0), 1.3), Vector3::repeat(1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn intensity_decreases_with_distance_and_angle(
                d1 in 0.1f64..1.0, extra in 0.05f64..2.0,
                cos1 in 0.05f64..0.95, dcos in 0.01f64..0.05,
            ) {
                let p = SpotlightValues { l0: 1.5, n_exp: 2.0, q_exp: 2.0, gamma: 1.0 };
                let v_l = Vector3::new(0.0, 0.0, 1.0);
                let at = |cos: f64, d: f64| {
                    let sin = (1.0 - cos * cos).sqrt();
                    incident_light(&(Vector3::new(sin, 0.0, cos) * d), &Vector3::zeros(), &v_l, &p)
                        .unwrap()
                };
                prop_assert!(at(cos1, d1) > at(cos1, d1 + extra));
                let cos2 = (cos1 + dcos).min(0.999);
                prop_assert!(at(cos2, d1) > at(cos1, d1));
                prop_assert!(at(cos1, d1) >= 0.0);
            }

            #[test]
            fn gamma_map_is_monotone_and_fixes_endpoints(
                a in 0.0f64..1.0, b in 0.0f64..1.0, g in 0.2f64..4.0,
            ) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let ml = gamma_map(&Vector3::repeat(lo), g);
                let mh = gamma_map(&Vector3::repeat(hi), g);
                prop_assert!(ml.x <= mh.x + 1e-15);
                prop_assert_eq!(gamma_map(&Vector3::zeros(), g), Vector3::zeros());
                prop_assert_eq!(gamma_map(&Vector3::repeat(1.0), g), Vector3::repeat(1.0));
            }
        }
    }
}
