use serde::{Deserialize, Serialize};

use super::mlp::{Layer, Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<Layer> = net
            .layers()
            .iter()
            .map(|l| Layer::zeros(l.inputs(), l.outputs()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update of `net` along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != self.m.len() {
            return Err(Error::Shape {
                expected: format!("{} gradient layers", self.m.len()),
                got: grads.layers.len().to_string(),
            });
        }
        for (k, (g, m)) in grads.layers.iter().zip(&self.m).enumerate() {
            if g.weight.dim() != m.weight.dim() || g.bias.len() != m.bias.len() {
                return Err(Error::Shape {
                    expected: format!("layer {k} gradient {:?}", m.weight.dim()),
                    got: format!("{:?}", g.weight.dim()),
                });
            }
        }
        if let Some((k, x)) = grads
            .slices()
            .flatten()
            .enumerate()
            .find(|(_, x)| !x.is_finite())
        {
            return Err(Error::NonFinite(format!("gradient coordinate {k} = {x}")));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        let moments = self
            .m
            .iter_mut()
            .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()])
            .zip(
                self.v
                    .iter_mut()
                    .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()]),
            );
        for ((p, g), (m, v)) in net.slices_mut().zip(grads.slices()).zip(moments) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        debug_assert!(net.all_finite(), "non-finite parameter after Adam step");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::{array, Array2};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Layer {
                weight: array![[w]],
                bias: array![0.0],
            }],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> MlpGrads {
        MlpGrads {
            layers: vec![Layer {
                weight: array![[g]],
                bias: array![0.0],
            }],
            input: Array2::zeros((1, 1)),
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut net = scalar_net(1.25);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &scalar_grad(1.0)).unwrap();
        let after_one = net.layers()[0].weight[[0, 0]];
        let m_before = adam.m[0].weight[[0, 0]];
        adam.step(&mut net, &scalar_grad(0.0)).unwrap();
        // the decayed first moment still moves the parameter; from a fresh
        // state, zero gradients leave it untouched
        assert!((adam.m[0].weight[[0, 0]] - 0.9 * m_before).abs() < 1e-15);
        assert_ne!(net.layers()[0].weight[[0, 0]], after_one);

        let mut fresh = scalar_net(1.25);
        let mut adam = AdamState::new(&fresh, AdamConfig::default());
        for _ in 0..100 {
            adam.step(&mut fresh, &scalar_grad(0.0)).unwrap();
        }
        assert_eq!(fresh.layers()[0].weight[[0, 0]], 1.25);
        assert_eq!(adam.step, 100);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &scalar_grad(1.0)).unwrap();
        let expected = -3e-4 * (1.0 / (1.0 + 1e-8));
        assert!((net.layers()[0].weight[[0, 0]] - expected).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_the_recurrence() {
        let mut net = scalar_net(0.5);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 3e-4, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, 0.5);
        for t in 1..=2 {
            let g = 0.7;
            adam.step(&mut net, &scalar_grad(g)).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
            assert!((net.layers()[0].weight[[0, 0]] - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = scalar_net(0.5);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let err = adam.step(&mut net, &scalar_grad(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(adam.step, 0);
        assert_eq!(net.layers()[0].weight[[0, 0]], 0.5);
    }
}
