use std::collections::BTreeMap;

use rand::Rng;

use super::spec::{LayerSpec, NetSpec};
use super::{NnError, Tensor};

/// First and second moment estimates of the adaptive optimizer, keyed like the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

/// Named weight tensors plus optimizer bookkeeping.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params {
    pub(crate) weights: BTreeMap<String, Tensor>,
    pub(crate) step: u64,
    pub(crate) moments: Option<Moments>,
}

pub(crate) fn weight_name(layer: usize) -> String {
    format!("l{layer:02}.w")
}

pub(crate) fn bias_name(layer: usize) -> String {
    format!("l{layer:02}.b")
}

impl Params {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self, NnError> {
        Self::build(spec, |fan_in, fan_out, n| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        })
    }

    pub fn zeros_like_spec(spec: &NetSpec) -> Result<Self, NnError> {
        Self::build(spec, |_, _, n| vec![0.0; n])
    }

    fn build(
        spec: &NetSpec,
        mut fill: impl FnMut(usize, usize, usize) -> Vec<f32>,
    ) -> Result<Self, NnError> {
        let shapes = spec.layer_shapes()?;
        let mut weights = BTreeMap::new();
        let mut prev = spec.input.clone();
        for (i, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
            match *layer {
                LayerSpec::Conv { out_channels, kernel, .. } => {
                    let kv = kernel.pow((prev.len() - 1) as u32);
                    let fan_in = prev[0] * kv;
                    let fan_out = out_channels * kv;
                    let data = fill(fan_in, fan_out, out_channels * fan_in);
                    let mut wshape = vec![out_channels, prev[0]];
                    wshape.extend(std::iter::repeat_n(kernel, prev.len() - 1));
                    weights.insert(weight_name(i), Tensor::new(wshape, data)?);
                    weights.insert(bias_name(i), Tensor::zeros(vec![out_channels]));
                }
                LayerSpec::Dense { out } => {
                    let data = fill(prev[0], out, out * prev[0]);
                    weights.insert(weight_name(i), Tensor::new(vec![out, prev[0]], data)?);
                    weights.insert(bias_name(i), Tensor::zeros(vec![out]));
                }
                _ => {}
            }
            prev = shape.clone();
        }
        Ok(Self { weights, step: 0, moments: None })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.weights.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.weights.insert(name.into(), tensor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> Option<&Moments> {
        self.moments.as_ref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.weights.values().map(Tensor::len).sum()
    }

    /// Overwrites every weight with `other`'s, keeping this instance's optimizer state.
    pub fn copy_weights_from(&mut self, other: &Params) {
        self.weights = other.weights.clone();
    }
}

/// Gradient of a scalar loss with respect to every named weight.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Gradients(pub BTreeMap<String, Tensor>);

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Self(
            params
                .weights
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `self += scale * other`, key by key.
    pub fn accumulate(&mut self, other: &Gradients, scale: f32) -> Result<(), NnError> {
        for (name, g) in &other.0 {
            let dst = self
                .0
                .get_mut(name)
                .ok_or_else(|| NnError::Usage(format!("gradient key {name} not present")))?;
            if dst.shape() != g.shape() {
                return Err(NnError::Shape(format!("gradient {name} shape mismatch")));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.0.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}
