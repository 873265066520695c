//! Fully connected ReLU network with a linear output layer and hand-written
//! backpropagation. Parameters live in one flat vector so optimizers can
//! treat the model as a point in R^P.

use crate::error::{FpError, Result};
use crate::evalcore::{ClassifierHead, EvalSet, Features};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (ReLU applied for hidden layers, raw logits for the last).
    pub acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    /// Input to the last layer (the penultimate features).
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    sizes: Vec<usize>,
    activation: String,
    layers: Vec<LayerJson>,
}

impl MlpModel {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(FpError::invalid_param(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        for (l, &fan_in) in sizes[..model.num_layers()].iter().enumerate() {
            let (w, _) = model.layer_ranges(l);
            let std = (2.0 / fan_in as f64).sqrt();
            for v in &mut model.params[w] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(model)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        if params.len() != Self::param_count(sizes) {
            return Err(FpError::invalid_input(format!(
                "expected {} parameters, got {}",
                Self::param_count(sizes),
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    /// Weight and bias index ranges of layer `l`.
    fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (start..start + i * o, start + i * o..start + i * o + o)
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> ForwardCache {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.num_layers() {
            let (wr, br) = self.layer_ranges(l);
            let (w, b) = (&self.params[wr], &self.params[br]);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let mut out = vec![0.0; batch * n_out];
            let hidden = l + 1 < self.num_layers();
            for r in 0..batch {
                let xr = &input[r * n_in..(r + 1) * n_in];
                for (o, dst) in out[r * n_out..(r + 1) * n_out].iter_mut().enumerate() {
                    let wrow = &w[o * n_in..(o + 1) * n_in];
                    let z = wrow.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() + b[o];
                    *dst = if hidden { z.max(0.0) } else { z };
                }
            }
            acts.push(out);
        }
        ForwardCache { batch, acts }
    }

    pub fn logits(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward(x, batch).acts.pop().unwrap()
    }

    /// Gradient of a loss with respect to all parameters, given its
    /// gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, dlogits, &mut grad);
        grad
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        let batch = cache.batch;
        let mut delta = dlogits.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (wr, br) = self.layer_ranges(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.acts[l];
            {
                let (gw, gb) = grad[wr.start..br.end].split_at_mut(n_in * n_out);
                for r in 0..batch {
                    let xr = &input[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[r * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[wr];
            let mut prev = vec![0.0; batch * n_in];
            for r in 0..batch {
                for o in 0..n_out {
                    let d = delta[r * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev[r * n_in..(r + 1) * n_in].iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            // ReLU derivative; the stored activation is post-ReLU
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Last layer as a classifier head (K×H weights, K biases).
    pub fn head(&self) -> ClassifierHead {
        let l = self.num_layers() - 1;
        let (wr, br) = self.layer_ranges(l);
        let n_in = self.sizes[l];
        ClassifierHead {
            weights: self.params[wr].chunks_exact(n_in).map(<[f64]>::to_vec).collect(),
            bias: self.params[br].to_vec(),
        }
    }

    /// Logits on `x` as an evaluation set, with penultimate features and the
    /// head attached when the network has a hidden layer.
    pub fn eval_set(&self, x: &[f64], labels: &[usize]) -> Result<EvalSet> {
        let cache = self.forward(x, labels.len());
        let eval = EvalSet::new(cache.logits().to_vec(), self.num_classes(), labels.to_vec())?;
        if self.num_layers() < 2 {
            return Ok(eval);
        }
        let features = Features { values: cache.penultimate().to_vec(), dim: self.sizes[self.num_layers() - 1] };
        eval.with_model_access(features, self.head())
    }

    pub fn to_json(&self) -> String {
        let layers = (0..self.num_layers())
            .map(|l| {
                let (wr, br) = self.layer_ranges(l);
                LayerJson {
                    weights: self.params[wr].chunks_exact(self.sizes[l]).map(<[f64]>::to_vec).collect(),
                    bias: self.params[br].to_vec(),
                }
            })
            .collect();
        let json = ModelJson { sizes: self.sizes.clone(), activation: "relu".into(), layers };
        serde_json::to_string_pretty(&json).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: ModelJson =
            serde_json::from_str(text).map_err(|e| FpError::Parse { line: e.line() as u64, message: e.to_string() })?;
        let params: Vec<f64> = json
            .layers
            .into_iter()
            .flat_map(|layer| layer.weights.into_iter().flatten().chain(layer.bias))
            .collect();
        Self::from_params(&json.sizes, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = MlpModel::zeros(&[3, 5, 2]).unwrap();
        assert!(m.logits(&[1.0, -2.0, 3.0, 0.5, 0.5, 0.5], 2).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let mut m = MlpModel::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            m.params_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.5, -1.0, 2.0, 3.0, 0.0, -4.0];
        assert_eq!(m.logits(&x, 2), x.to_vec());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = MlpModel::init(&[4, 8, 8, 3], &mut rng_from(5)).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = m.logits(&x, 5);
        let b = m.logits(&x, 5);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn json_round_trip() {
        let m = MlpModel::init(&[2, 4, 3], &mut rng_from(1)).unwrap();
        assert_eq!(MlpModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn eval_set_carries_consistent_head() {
        let m = MlpModel::init(&[2, 6, 3], &mut rng_from(2)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 1.0, -1.0];
        let e = m.eval_set(&x, &[0, 1, 2]).unwrap();
        assert!(e.head().is_some());
        assert_eq!(e.features().unwrap().dim, 6);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(MlpModel::zeros(&[3]).is_err());
        assert!(MlpModel::zeros(&[3, 0, 2]).is_err());
    }
}
