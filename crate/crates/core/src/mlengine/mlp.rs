//! Dense networks with tanh hidden layers and a sigmoid output, trained by
//! full-batch gradient descent on the mean logistic loss. With no hidden
//! layers the network is plain logistic regression.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gbdt::{logistic_loss, sigmoid};
use super::{MlError, Samples};

pub const MAX_HIDDEN_LAYERS: usize = 2;
pub const MAX_HIDDEN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(samples: &Samples) -> Self {
        let n = samples.len() as f64;
        let d = samples.n_features;
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for f in 0..d {
            let m = (0..samples.len()).map(|i| samples.value(i, f)).sum::<f64>() / n;
            let v = (0..samples.len()).map(|i| (samples.value(i, f) - m).powi(2)).sum::<f64>() / n;
            mean[f] = m;
            scale[f] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
        }
        Scaler { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Scaler { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub scaler: Scaler,
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFit {
    pub model: Mlp,
    pub loss_history: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform initialization from `seed`.
    pub fn init(scaler: Scaler, hidden: &[usize], seed: u64) -> Result<Self, MlError> {
        if hidden.len() > MAX_HIDDEN_LAYERS || hidden.iter().any(|&h| h == 0 || h > MAX_HIDDEN_UNITS) {
            return Err(MlError::InvalidHyperparams(format!(
                "hidden layers {hidden:?}: at most {MAX_HIDDEN_LAYERS} layers of 1..={MAX_HIDDEN_UNITS} units"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![scaler.mean.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; outputs],
                    activation: if k + 2 == sizes.len() { Activation::Sigmoid } else { Activation::Tanh },
                }
            })
            .collect();
        Ok(Mlp { scaler, layers })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Output-layer logit.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut cur = Vec::with_capacity(MAX_HIDDEN_UNITS);
        self.scaler.apply(x, &mut cur);
        let mut next = Vec::with_capacity(MAX_HIDDEN_UNITS);
        for (k, layer) in self.layers.iter().enumerate() {
            next.clear();
            for o in 0..layer.outputs {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = layer.bias[o] + w.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
                next.push(if k + 1 == self.layers.len() { z } else { z.tanh() });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Flattened parameters, layer by layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Mean logistic loss over `samples` and its analytic gradient with
    /// respect to [`Mlp::params`].
    pub fn loss_and_grad(&self, samples: &Samples) -> (f64, Vec<f64>) {
        let n_layers = self.layers.len();
        let mut grad = vec![0.0; self.param_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let at = *acc;
                *acc += l.weights.len() + l.bias.len();
                Some(at)
            })
            .collect();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(vec![0.0; self.scaler.mean.len()]);
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.outputs]));
        let width = self.layers.iter().map(|l| l.inputs.max(l.outputs)).max().unwrap_or(1);
        let mut delta = vec![0.0; width];
        let mut prev_delta = vec![0.0; width];
        let mut loss = 0.0;
        for i in 0..samples.len() {
            for (f, a) in acts[0].iter_mut().enumerate() {
                *a = (samples.value(i, f) - self.scaler.mean[f]) / self.scaler.scale[f];
            }
            for (k, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(k + 1);
                let input = &head[k];
                let last = k + 1 == n_layers;
                for (o, out) in tail[0].iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let z = layer.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    *out = if last { z } else { z.tanh() };
                }
            }
            let z = acts[n_layers][0];
            let y = samples.y[i];
            loss += logistic_loss(z, y);
            delta[0] = sigmoid(z) - f64::from(u8::from(y));
            for k in (0..n_layers).rev() {
                let layer = &self.layers[k];
                let input = &acts[k];
                let (gw, gb) = grad[offsets[k]..offsets[k] + layer.weights.len() + layer.bias.len()]
                    .split_at_mut(layer.weights.len());
                for o in 0..layer.outputs {
                    let d = delta[o];
                    gb[o] += d;
                    for (g, x) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if k > 0 {
                    for (j, pd) in prev_delta[..layer.inputs].iter_mut().enumerate() {
                        let back: f64 =
                            (0..layer.outputs).map(|o| layer.weights[o * layer.inputs + j] * delta[o]).sum();
                        *pd = back * (1.0 - input[j] * input[j]);
                    }
                    std::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        let n = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

pub fn train_mlp(samples: &Samples, hidden: &[usize], params: MlpParams) -> Result<MlpFit, MlError> {
    let mut model = Mlp::init(Scaler::fit(samples), hidden, params.seed)?;
    let mut history = Vec::with_capacity(params.epochs);
    let mut p = model.params();
    for epoch in 0..params.epochs {
        let (loss, grad) = model.loss_and_grad(samples);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(MlError::Divergence { epoch });
        }
        history.push(loss);
        for (w, g) in p.iter_mut().zip(&grad) {
            *w -= params.learning_rate * g;
        }
        model.set_params(&p);
    }
    if p.iter().any(|w| !w.is_finite()) {
        return Err(MlError::Divergence { epoch: params.epochs });
    }
    Ok(MlpFit { model, loss_history: history })
}

pub fn train_logistic(samples: &Samples, params: MlpParams) -> Result<MlpFit, MlError> {
    train_mlp(samples, &[], params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Samples {
        let x = vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.4, 0.8, 0.1, 0.3, 0.7];
        Samples::new(2, x, vec![false, true, false, true, true])
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let s = toy();
        let fit = train_mlp(&s, &[8], MlpParams { epochs: 0, learning_rate: 0.5, seed: 3 }).unwrap();
        let init = Mlp::init(Scaler::fit(&s), &[8], 3).unwrap();
        assert_eq!(fit.model, init);
        assert!(fit.loss_history.is_empty());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = toy();
        for hidden in [vec![], vec![4], vec![5, 3]] {
            let net = Mlp::init(Scaler::fit(&s), &hidden, 9).unwrap();
            let (_, grad) = net.loss_and_grad(&s);
            let p = net.params();
            let eps = 1e-6;
            let mut fd = Vec::new();
            for k in 0..p.len() {
                let mut probe = net.clone();
                let mut q = p.clone();
                q[k] += eps;
                probe.set_params(&q);
                let up = probe.loss_and_grad(&s).0;
                q[k] -= 2.0 * eps;
                probe.set_params(&q);
                let down = probe.loss_and_grad(&s).0;
                fd.push((up - down) / (2.0 * eps));
            }
            let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            assert!(diff / norm < 1e-5, "hidden {hidden:?}: rel err {}", diff / norm);
        }
    }

    #[test]
    fn too_large_network_rejected() {
        let s = toy();
        assert!(Mlp::init(Scaler::fit(&s), &[64], 0).is_err());
        assert!(Mlp::init(Scaler::fit(&s), &[4, 4, 4], 0).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let s = toy();
        let err = train_mlp(&s, &[4], MlpParams { epochs: 50, learning_rate: 1e308, seed: 1 }).unwrap_err();
        assert!(matches!(err, MlError::Divergence { .. }), "{err}");
    }
}
