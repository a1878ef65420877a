use std::collections::BTreeMap;

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction. State is keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(learning_rate: f64, config: AdamConfig) -> Self {
        Self { config, learning_rate, step: 0, moments: BTreeMap::new() }
    }

    /// Updates every parameter from its accumulated gradient and replaces it
    /// with a fresh leaf. All gradients must be present before anything is
    /// modified.
    pub fn update(&mut self, params: Vec<(String, &mut Tensor)>) -> Result<()> {
        let grads = params
            .iter()
            .map(|(name, t)| {
                t.grad().ok_or_else(|| Error::Contract(format!("parameter `{name}` has no gradient")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((name, param), g) in params.into_iter().zip(grads) {
            let st = self
                .moments
                .entry(name)
                .or_insert_with(|| Moments { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            if st.m.len() != g.len() {
                return Err(Error::Shape("optimizer state does not match parameter size".into()));
            }
            let mut data = param.to_vec();
            for i in 0..data.len() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = st.m[i] / c1;
                let vh = st.v[i] / c2;
                data[i] -= self.learning_rate * mh / (vh.sqrt() + epsilon);
            }
            *param = Tensor::param(param.shape(), data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_with_grad(g: &[f64], adam: &mut Adam, p: &mut Tensor) {
        let x = Tensor::new(p.shape(), g.to_vec()).unwrap();
        p.mul(&x).unwrap().sum().backward().unwrap();
        adam.update(vec![("p".into(), p)]).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(0.1, AdamConfig::default());
        step_with_grad(&[0.0; 3], &mut adam, &mut p);
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let mut p = Tensor::param(&[4], vec![0.0; 4]).unwrap();
        let lr = 1e-3;
        let mut adam = Adam::new(lr, AdamConfig::default());
        step_with_grad(&[3.0, -0.01, 1e-3, 42.0], &mut adam, &mut p);
        for d in p.to_vec() {
            assert!((0.9 * lr..=lr).contains(&d.abs()), "{d}");
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut w = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(0.1, AdamConfig::default());
        for _ in 0..500 {
            let d = w.add_scalar(-3.0);
            d.mul(&d).unwrap().sum().backward().unwrap();
            adam.update(vec![("w".into(), &mut w)]).unwrap();
        }
        assert!((w.item() - 3.0).abs() < 0.1, "{}", w.item());
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let mut adam = Adam::new(0.1, AdamConfig::default());
        assert!(matches!(adam.update(vec![("p".into(), &mut p)]), Err(Error::Contract(_))));
        assert_eq!(adam.step, 0);
    }
}
