use super::params::{Mat, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl OptState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Mat> { params.values().iter().map(|p| Mat::zeros(p.dim())).collect() };
        OptState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Clips `grads` to global norm `clip` (if positive), applies decoupled
/// weight decay, then the bias-corrected Adam update. Returns the
/// pre-clipping gradient norm.
pub fn adam_step(params: &mut ParamSet, grads: &mut [Mat], opt: &mut OptState, clip: f64) -> Result<f64> {
    if grads.len() != params.len() || opt.m.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("{} gradients for {} parameters", grads.len(), params.len()),
        });
    }
    for (g, p) in grads.iter().zip(params.values()) {
        if g.dim() != p.dim() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("gradient {:?} vs parameter {:?}", g.dim(), p.dim()),
            });
        }
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            op: "adam_step (gradient norm)".into(),
        });
    }
    if clip > 0.0 && norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    opt.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = opt.config;
    let t = opt.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .values_mut()
        .iter_mut()
        .zip(grads.iter())
        .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *p -= lr * weight_decay * *p;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    if params.values().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            op: "adam_step".into(),
        });
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", Mat::from_elem((1, 1), v));
        ps
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut ps = ParamSet::new();
        ps.add("a", Mat::from_elem((2, 3), 0.25));
        let before = ps.clone();
        let mut opt = OptState::new(
            &ps,
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        let mut grads = vec![Mat::zeros((2, 3))];
        adam_step(&mut ps, &mut grads, &mut opt, 1.0).unwrap();
        assert_eq!(ps, before);
    }

    #[test]
    fn clipping_scales_to_unit_norm() {
        let mut ps = ParamSet::new();
        ps.add("a", Mat::zeros((1, 2)));
        let mut opt = OptState::new(&ps, AdamConfig::default());
        let mut grads = vec![Mat::from_shape_vec((1, 2), vec![6.0, 8.0]).unwrap()];
        let norm = adam_step(&mut ps, &mut grads, &mut opt, 1.0).unwrap();
        assert_eq!(norm, 10.0);
        assert!((grads[0][[0, 0]] - 0.6).abs() < 1e-15);
        assert!((grads[0][[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn matches_hand_unrolled_recurrence() {
        let cfg = AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        };
        let mut ps = scalar_params(0.5);
        let mut opt = OptState::new(&ps, cfg);
        let seq = [0.3, -0.2, 0.7];

        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, g) in seq.iter().enumerate() {
            let t = t as i32 + 1;
            w -= 0.01 * 1e-5 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);

            let mut grads = vec![Mat::from_elem((1, 1), *g)];
            adam_step(&mut ps, &mut grads, &mut opt, 0.0).unwrap();
            assert!((ps.values()[0][[0, 0]] - w).abs() < 1e-12);
        }
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn rejects_non_finite() {
        let mut ps = scalar_params(0.0);
        let mut opt = OptState::new(&ps, AdamConfig::default());
        let mut grads = vec![Mat::from_elem((1, 1), f64::NAN)];
        assert!(adam_step(&mut ps, &mut grads, &mut opt, 1.0).is_err());
        let mut grads = vec![Mat::zeros((2, 1))];
        assert!(matches!(
            adam_step(&mut ps, &mut grads, &mut opt, 1.0),
            Err(Error::Shape { .. })
        ));
    }
}
