//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per tensor, allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            ..Default::default()
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)`.
pub fn adam_step<P, G>(params: &mut P, grads: &G, state: &mut OptimizerState, learning_rate: f64, weight_decay: f64) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() {
        return Err(Error::shape("gradient tensors", param_tensors.len(), grad_tensors.len()));
    }
    for ((name, p), (_, g)) in param_tensors.iter().zip(&grad_tensors) {
        if p.len() != g.len() {
            return Err(Error::shape("gradient tensor", format!("{name}[{}]", p.len()), g.len()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {name}")));
        }
    }
    if state.first.is_empty() {
        state.first = grad_tensors.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != grad_tensors.len()
        || state.first.iter().zip(&grad_tensors).any(|(m, (_, g))| m.len() != g.len())
    {
        return Err(Error::shape("optimizer state", state.first.len(), grad_tensors.len()));
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - learning_rate * weight_decay;

    for (((_, p), (_, g)), (m, v)) in param_tensors
        .iter_mut()
        .zip(&grad_tensors)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for idx in 0..p.len() {
            let gi = g[idx];
            m[idx] = beta1 * m[idx] + (1.0 - beta1) * gi;
            v[idx] = beta2 * v[idx] + (1.0 - beta2) * gi * gi;
            let m_hat = m[idx] / bias1;
            let v_hat = v[idx] / bias2;
            p[idx] = p[idx] * decay - learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalars(Vec<f64>);

    impl Parameters for Scalars {
        fn tensors(&self) -> Vec<(String, &[f64])> {
            vec![("x".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
            vec![("x".into(), &mut self.0)]
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Scalars(vec![1.5, -2.0]);
        let mut s = OptimizerState::default();
        for _ in 0..3 {
            adam_step(&mut p, &Scalars(vec![0.0, 0.0]), &mut s, 0.1, 0.0).unwrap();
        }
        assert_eq!(p.0, vec![1.5, -2.0]);
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g, v̂ = g², so the step is −lr·g/(|g| + ε).
        let mut p = Scalars(vec![2.0]);
        let mut s = OptimizerState::default();
        let g = 0.3;
        adam_step(&mut p, &Scalars(vec![g]), &mut s, 0.01, 0.0).unwrap();
        let expected = 2.0 - 0.01 * g / (g + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-15);

        let mut p = Scalars(vec![2.0]);
        let mut s = OptimizerState::default();
        adam_step(&mut p, &Scalars(vec![g]), &mut s, 0.01, 0.5).unwrap();
        let expected = 2.0 * (1.0 - 0.005) - 0.01 * g / (g + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Scalars(vec![0.0]);
        let mut s = OptimizerState::default();
        let err = adam_step(&mut p, &Scalars(vec![f64::NAN]), &mut s, 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("gradient of x"));
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = Scalars(vec![1.0, 2.0, 3.0]);
            let mut s = OptimizerState::default();
            for i in 0..50 {
                let g: Vec<f64> = p.0.iter().map(|x| 2.0 * x + i as f64 * 0.01).collect();
                adam_step(&mut p, &Scalars(g), &mut s, 0.05, 0.01).unwrap();
            }
            p.0
        };
        assert_eq!(run(), run());
    }
}
