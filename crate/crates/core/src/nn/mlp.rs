use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` by the activation derivative, given the
    /// pre-activation `z` and output `y`.
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, y: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => ndarray::Zip::from(grad)
                .and(z)
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Tanh => ndarray::Zip::from(grad)
                .and(y)
                .for_each(|g, &y| *g *= 1.0 - y * y),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Affine layer `y = x·Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn slices(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Feed-forward network: hidden layers share one activation, the output
/// layer has its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
    /// Bumped on every parameter mutation so stale caches are detectable.
    generation: u64,
}

/// Intermediates of a forward pass needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Parameter gradients plus the gradient with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
    pub input: Array2<f64>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| l.slices())
    }
}

impl Mlp {
    /// Network with the given layer widths (`sizes[0]` is the input width),
    /// initialized uniformly in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                for s in layer.slices_mut() {
                    s.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
                }
                layer
            })
            .collect();
        Self {
            layers,
            hidden,
            output,
            generation: 0,
        }
    }

    pub fn from_layers(layers: Vec<Layer>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("an MLP needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::Shape {
                    expected: format!("layer {} input width {}", k + 1, pair[0].outputs()),
                    got: pair[1].inputs().to_string(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    expected: format!("bias of length {}", l.outputs()),
                    got: l.bias.len().to_string(),
                });
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| l.slices())
    }

    /// Mutable access to every parameter; invalidates existing caches.
    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.generation += 1;
        self.layers.iter_mut().flat_map(|l| l.slices_mut())
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: format!("{} input columns", self.input_dim()),
                got: x.ncols().to_string(),
            });
        }
        Ok(())
    }

    /// Output only, without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t()) + &layer.bias;
            let act = if k == last { self.output } else { self.hidden };
            act.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            let mut y = z.clone();
            let act = if k == last { self.output } else { self.hidden };
            act.apply(&mut y);
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre,
            output: h,
        })
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to every parameter and
    /// to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<MlpGrads> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache {
                cached: cache.generation,
                current: self.generation,
            });
        }
        if upstream.dim() != cache.output.dim() {
            return Err(Error::Shape {
                expected: format!("{:?} upstream gradient", cache.output.dim()),
                got: format!("{:?}", upstream.dim()),
            });
        }
        let n = self.layers.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for k in (0..n).rev() {
            let act = if k == n - 1 { self.output } else { self.hidden };
            let y = if k == n - 1 { &cache.output } else { &cache.inputs[k + 1] };
            act.backprop(&mut delta, &cache.pre[k], y);
            // the product of a transposed view can come back column-major
            let weight = delta.t().dot(&cache.inputs[k]).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[k].weight);
            grads.push(Layer { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok(MlpGrads {
            layers: grads,
            input: delta,
        })
    }

    /// `self ← ρ·self + (1 − ρ)·online`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, rho: f64) {
        assert_eq!(self.sizes(), online.sizes(), "soft update needs matching shapes");
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            ndarray::Zip::from(&mut t.weight)
                .and(&o.weight)
                .for_each(|t, &o| *t = rho * *t + (1.0 - rho) * o);
            ndarray::Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = rho * *t + (1.0 - rho) * o);
        }
        self.generation += 1;
    }

    pub fn all_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }
}
