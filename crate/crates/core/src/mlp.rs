//! Fully connected ReLU networks on flat parameter vectors, with hand-written
//! reverse mode and the Adam family of optimizers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths from input to logits; ReLU between every pair of linear layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MlpArchitecture {
    widths: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "an architecture needs an input and an output width".into(),
            ));
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        Ok(MlpArchitecture { widths: layer_widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of linear layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offset of layer `l`'s weight block; its bias follows the `out x in` weights.
    fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.depth() + 1);
        let mut acc = 0;
        o.push(0);
        for w in self.widths.windows(2) {
            acc += w[1] * (w[0] + 1);
            o.push(acc);
        }
        o
    }
}

impl TryFrom<Vec<usize>> for MlpArchitecture {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        MlpArchitecture::new(v)
    }
}

impl From<MlpArchitecture> for Vec<usize> {
    fn from(a: MlpArchitecture) -> Self {
        a.widths
    }
}

/// Parameters of one network, stored flat: per layer a row-major `out x in`
/// weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArchitecture,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    /// Output of hidden layer `l` (1-based; 0 is the input).
    pub fn activation(&self, l: usize) -> &[f64] {
        &self.acts[l]
    }
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        MlpParams {
            offsets: arch.offsets(),
            data: vec![0.0; arch.param_count()],
            arch: arch.clone(),
        }
    }

    pub fn from_flat(arch: &MlpArchitecture, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.param_count() {
            return Err(Error::LengthMismatch(format!(
                "{} parameters for an architecture with {}",
                data.len(),
                arch.param_count()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(MlpParams {
            offsets: arch.offsets(),
            data,
            arch: arch.clone(),
        })
    }

    /// Gaussian weights with std `init_scale / sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng>(arch: &MlpArchitecture, init_scale: f64, rng: &mut R) -> Self {
        let mut p = MlpParams::zeros(arch);
        for l in 0..arch.depth() {
            let fan_in = arch.widths[l];
            let normal = Normal::new(0.0, init_scale / (fan_in as f64).sqrt()).expect("finite std");
            let (w, _) = p.layer_mut(l);
            for v in w {
                *v = normal.sample(rng);
            }
        }
        p
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let n_w = self.arch.widths[l] * self.arch.widths[l + 1];
        self.data[self.offsets[l]..self.offsets[l + 1]].split_at(n_w)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let n_w = self.arch.widths[l] * self.arch.widths[l + 1];
        self.data[self.offsets[l]..self.offsets[l + 1]].split_at_mut(n_w)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.arch.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Runs the network, filling `cache`. No validation.
    pub fn forward_into(&self, x: &[f64], cache: &mut Cache) {
        let depth = self.arch.depth();
        cache.acts.resize(depth + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for l in 0..depth {
            let (w, b) = self.layer(l);
            let n_in = self.arch.widths[l];
            let (prev, next) = cache.acts.split_at_mut(l + 1);
            let a = &prev[l];
            let z = &mut next[0];
            z.clear();
            z.extend(b.iter().zip(w.chunks_exact(n_in)).map(|(&bi, row)| {
                bi + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
            }));
            if l + 1 < depth {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut c = Cache::default();
        self.forward_into(x, &mut c);
        Ok(c.logits().to_vec())
    }

    /// Back-propagates `dlogits` (plus optional `dfeat` injected at the last
    /// hidden layer). Parameter gradients are added to `grad`; the input
    /// gradient is written to `dx` when given.
    pub fn backward(
        &self,
        cache: &Cache,
        dlogits: &[f64],
        dfeat: Option<&[f64]>,
        mut grad: Option<&mut [f64]>,
        dx: Option<&mut Vec<f64>>,
    ) {
        let depth = self.arch.depth();
        let mut delta = dlogits.to_vec();
        let mut next = Vec::new();
        for l in (0..depth).rev() {
            let (w, _) = self.layer(l);
            let n_in = self.arch.widths[l];
            let a = &cache.acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[self.offsets[l]..self.offsets[l + 1]].split_at_mut(w.len());
                for (j, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        gb[j] += d;
                        for (gwi, ai) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a) {
                            *gwi += d * ai;
                        }
                    }
                }
            }
            if l == 0 && dx.is_none() {
                break;
            }
            next.clear();
            next.resize(n_in, 0.0);
            for (j, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (ni, wi) in next.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *ni += d * wi;
                    }
                }
            }
            if l > 0 {
                if l + 1 == depth {
                    if let Some(f) = dfeat {
                        next.iter_mut().zip(f).for_each(|(n, fi)| *n += fi);
                    }
                }
                // ReLU subgradient is 0 at exactly 0
                for (ni, ai) in next.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *ni = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(dx) = dx {
            *dx = delta;
        }
    }

    /// True if any hidden pre-activation is exactly zero at `x`.
    pub fn on_kink(&self, x: &[f64]) -> bool {
        let depth = self.arch.depth();
        let mut a = x.to_vec();
        for l in 0..depth - 1 {
            let (w, b) = self.layer(l);
            let n_in = self.arch.widths[l];
            let z: Vec<f64> = b
                .iter()
                .zip(w.chunks_exact(n_in))
                .map(|(&bi, row)| bi + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>())
                .collect();
            if z.contains(&0.0) {
                return true;
            }
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        false
    }
}

/// `(loss, dloss/dlogits)` for softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = m + total.ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| e / total - if k == y { 1.0 } else { 0.0 })
        .collect();
    ((lse - logits[y]).max(0.0), grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

/// Adam state; `decoupled` applies weight decay outside the moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64, decoupled: bool) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let mut g = grad[i];
            if !decoupled {
                g += weight_decay * params[i];
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            if decoupled {
                params[i] -= lr * weight_decay * params[i];
            }
            params[i] -= lr * update;
        }
    }
}
