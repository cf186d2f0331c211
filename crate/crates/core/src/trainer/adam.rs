use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments of one layer's kernel and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments<T> {
    pub m_kernel: Vec<T>,
    pub v_kernel: Vec<T>,
    pub m_bias: Vec<T>,
    pub v_bias: Vec<T>,
}

/// Per-layer gradients, keyed by layer path: `(d_kernel, d_bias)`.
pub type LayerGrads<T> = BTreeMap<String, (Vec<T>, Vec<T>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub t: u64,
    pub moments: BTreeMap<String, LayerMoments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        let moments = params
            .layers()
            .iter()
            .map(|(path, l)| {
                let (nk, nb) = (l.kernel.len(), l.bias.len());
                (
                    path.clone(),
                    LayerMoments {
                        m_kernel: vec![T::zero(); nk],
                        v_kernel: vec![T::zero(); nk],
                        m_bias: vec![T::zero(); nb],
                        v_bias: vec![T::zero(); nb],
                    },
                )
            })
            .collect();
        Self { config, t: 0, moments }
    }

    /// One bias-corrected Adam update of every layer in `grads`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &LayerGrads<T>, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.eps);
        let lr = T::lit(lr);
        let c1 = T::one() - b1.powi(self.t as i32);
        let c2 = T::one() - b2.powi(self.t as i32);
        for (path, (gk, gb)) in grads {
            let layer = params
                .layer_mut(path)
                .ok_or_else(|| Error::ConfigMismatch(format!("gradient for unknown layer `{path}`")))?;
            let mom = self
                .moments
                .get_mut(path)
                .ok_or_else(|| Error::ConfigMismatch(format!("no optimizer state for `{path}`")))?;
            let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            };
            update(layer.kernel.values_mut(), gk, &mut mom.m_kernel, &mut mom.v_kernel);
            update(layer.bias.values_mut(), gb, &mut mom.m_bias, &mut mom.v_bias);
            if layer.kernel.values().iter().chain(layer.bias.values()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("adam step"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetConfig;

    fn zero_grads(p: &ModelParams<f64>) -> LayerGrads<f64> {
        p.layers()
            .iter()
            .map(|(k, l)| (k.clone(), (vec![0.0; l.kernel.len()], vec![0.0; l.bias.len()])))
            .collect()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let cfg = NetConfig { depth: 1, base_channels: 2, input_size: 8, ..NetConfig::default() };
        let mut p = ModelParams::<f64>::build(cfg, 1).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let grads = zero_grads(&p);
        for _ in 0..3 {
            adam.step(&mut p, &grads, 1e-2).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = NetConfig { depth: 1, base_channels: 1, input_size: 4, ..NetConfig::default() };
        let mut p = ModelParams::<f64>::build(cfg, 2).unwrap();
        let before = p.clone();
        let mut grads = zero_grads(&p);
        grads.get_mut("region/head").unwrap().0[0] = 3.0;
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &grads, 0.01).unwrap();
        let d = before.layer("region/head").unwrap().kernel.values()[0] - p.layer("region/head").unwrap().kernel.values()[0];
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((d - 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
    }
}
