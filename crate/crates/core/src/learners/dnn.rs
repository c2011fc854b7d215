//! Fully connected classifier: ReLU hidden layers, softmax output, mean
//! cross-entropy plus `l2 / 2 * sum(W^2)` (weights only), trained with Adam
//! on shuffled mini-batches. Inputs are standardized with statistics from
//! the training set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LearnerError, Matrix, TaskKind, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnParams {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for DnnParams {
    fn default() -> Self {
        DnnParams { hidden_sizes: vec![64], epochs: 200, batch_size: 32, learning_rate: 1e-3, l2: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn apply(&self, a: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            z.push(self.b[o] + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Mlp {
    /// He-initialized network with identity input scaling.
    pub fn new(input_dim: usize, hidden_sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden_sizes);
        sizes.push(N_CLASSES);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (inputs, outputs) = (io[0], io[1]);
                let normal = Normal::new(0.0, (2.0 / inputs.max(1) as f64).sqrt()).expect("valid std");
                Dense {
                    inputs,
                    outputs,
                    w: (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect(),
                    b: vec![0.0; outputs],
                }
            })
            .collect();
        Mlp { layers, shift: vec![0.0; input_dim], scale: vec![1.0; input_dim] }
    }

    pub fn fit(d: &Dataset, hp: &DnnParams) -> Result<Mlp, LearnerError> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if hp.batch_size == 0 || !(hp.learning_rate > 0.0) || hp.l2 < 0.0 || hp.hidden_sizes.contains(&0) {
            return Err(LearnerError::InvalidHyperparameter {
                name: "dnn".into(),
                reason: "batch_size, learning_rate and hidden sizes must be positive, l2 non-negative".into(),
            });
        }
        let d = d.canonical();
        let y = d.classes().ok_or(LearnerError::WrongTask { expected: TaskKind::Classification })?;
        let x = &d.features.x;
        let (n, dims) = (x.rows(), x.cols());

        let mut net = Mlp::new(dims, &hp.hidden_sizes, hp.seed);
        for j in 0..dims {
            let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            net.shift[j] = mean;
            net.scale[j] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        }
        let scaled: Vec<Vec<f64>> = x.iter_rows().map(|r| net.standardize(r)).collect();

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(1));
        let mut adam = Adam::new(net.n_params(), hp.learning_rate);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..hp.epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(hp.batch_size) {
                let xs: Vec<&[f64]> = batch.iter().map(|&i| scaled[i].as_slice()).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
                let (loss, grad) = net.loss_and_gradient_scaled(&xs, &ys, hp.l2);
                if !loss.is_finite() {
                    return Err(LearnerError::DivergedTraining(format!("loss {loss} in epoch {epoch}")));
                }
                let mut p = net.params();
                adam.step(&mut p, &grad);
                net.set_params(&p);
            }
        }
        Ok(net)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) * s).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    fn forward_scaled(&self, a0: &[f64]) -> Vec<f64> {
        let mut a = a0.to_vec();
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if k + 1 < self.layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            } else {
                return softmax(&z);
            }
        }
        unreachable!("network has an output layer")
    }

    /// Class probabilities for raw (unstandardized) feature rows.
    pub fn predict_proba(&self, x: &Matrix) -> Vec<[f64; N_CLASSES]> {
        x.iter_rows()
            .map(|r| {
                let p = self.forward_scaled(&self.standardize(r));
                [p[0], p[1], p[2]]
            })
            .collect()
    }

    /// Mean cross-entropy plus the L2 penalty on raw feature rows.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize], l2: f64) -> f64 {
        let ce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| -self.forward_scaled(&self.standardize(x))[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / xs.len() as f64;
        ce + self.penalty(l2)
    }

    fn penalty(&self, l2: f64) -> f64 {
        0.5 * l2 * self.layers.iter().flat_map(|l| &l.w).map(|w| w * w).sum::<f64>()
    }

    /// Loss and its gradient with respect to [`Mlp::params`], by backpropagation.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[usize], l2: f64) -> (f64, Vec<f64>) {
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| self.standardize(x)).collect();
        let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        self.loss_and_gradient_scaled(&refs, ys, l2)
    }

    fn loss_and_gradient_scaled(&self, xs: &[&[f64]], ys: &[usize], l2: f64) -> (f64, Vec<f64>) {
        let nl = self.layers.len();
        let b = xs.len() as f64;
        let mut gw: Vec<Vec<f64>> = self.layers.iter().map(|l| l.w.iter().map(|w| l2 * w).collect()).collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        let mut ce = 0.0;

        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(nl);
        for (x, &y) in xs.iter().zip(ys) {
            acts.clear();
            zs.clear();
            acts.push(x.to_vec());
            for (k, layer) in self.layers.iter().enumerate() {
                let mut z = Vec::new();
                layer.apply(&acts[k], &mut z);
                let a = if k + 1 < nl { z.iter().map(|v| v.max(0.0)).collect() } else { softmax(&z) };
                zs.push(z);
                acts.push(a);
            }
            let p = &acts[nl];
            ce -= p[y].max(f64::MIN_POSITIVE).ln();

            let mut delta: Vec<f64> =
                p.iter().enumerate().map(|(c, pc)| (pc - if c == y { 1.0 } else { 0.0 }) / b).collect();
            for k in (0..nl).rev() {
                let layer = &self.layers[k];
                let a_in = &acts[k];
                for o in 0..layer.outputs {
                    let dz = delta[o];
                    if dz == 0.0 {
                        continue;
                    }
                    gb[k][o] += dz;
                    let row = &mut gw[k][o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, a) in row.iter_mut().zip(a_in) {
                        *g += dz * a;
                    }
                }
                if k > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, &dz) in delta.iter().enumerate().take(layer.outputs) {
                        if dz == 0.0 {
                            continue;
                        }
                        let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                        for (pv, w) in prev.iter_mut().zip(row) {
                            *pv += dz * w;
                        }
                    }
                    for (pv, z) in prev.iter_mut().zip(&zs[k - 1]) {
                        if *z <= 0.0 {
                            *pv = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let loss = ce / b + self.penalty(l2);
        let mut grad = Vec::with_capacity(self.n_params());
        for (w, bb) in gw.into_iter().zip(gb) {
            grad.extend(w);
            grad.extend(bb);
        }
        (loss, grad)
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}
