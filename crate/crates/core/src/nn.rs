//! Minimal feed-forward network with ReLU hidden layers, backprop and Adam.
//!
//! Used for the approximate Q-functions (`f32`) and the learnability
//! regressors (`f64`). Weights are stored row-major as `[outputs][inputs]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        // Kaiming-uniform on fan-in, matching common framework defaults.
        let bound = (1.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| F::of(rng.gen_range(-bound..bound)))
            .collect();
        let bias = (0..outputs).map(|_| F::of(rng.gen_range(-bound..bound))).collect();
        Self { inputs, outputs, weights, bias }
    }

    fn apply(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + dot(row, x));
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut total = acc.iter().fold(F::zero(), |s, &v| s + v);
    for (x, y) in ra.iter().zip(rb) {
        total += *x * *y;
    }
    total
}

/// Parameter-shaped accumulator for gradients or optimizer moments.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub weights: Vec<Vec<F>>,
    pub bias: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Mlp<F>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![F::zero(); l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![F::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    fn values(&self) -> impl Iterator<Item = &F> {
        self.weights.iter().chain(self.bias.iter()).flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten()
    }

    pub fn norm(&self) -> F {
        self.values().map(|&g| g * g).sum::<F>().sqrt()
    }

    pub fn scale(&mut self, k: F) {
        self.values_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// `sizes` lists every layer width including input and output, e.g. `[8, 128, 128, 4]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an Mlp needs at least an input and an output width");
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(F::zero()));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass followed by backprop of `grad_out(output)` into `grads`.
    /// Returns the network output.
    pub fn backward<G>(&self, x: &[F], grad_out: G, grads: &mut Gradients<F>) -> Vec<F>
    where
        G: FnOnce(&[F]) -> Vec<F>,
    {
        let last = self.layers.len() - 1;
        // activations[i] is the input of layer i
        let mut activations: Vec<Vec<F>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&activations[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(F::zero()));
            }
            activations.push(out);
        }
        let output = activations[self.layers.len()].clone();
        let mut delta = grad_out(&output);
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &activations[i];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.bias[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == F::zero() {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * *xi;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![F::zero(); layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == F::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * *w;
                }
            }
            // ReLU derivative of the previous layer's output
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= F::zero() {
                    *p = F::zero();
                }
            }
            delta = prev;
        }
        output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Order-stable digest of all parameters; used to assert that evaluation leaves a learner untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)) {
            h ^= v.as_f64().to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.iter().map(|w| w.as_f64()).collect(),
                    bias: l.bias.iter().map(|b| b.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &MlpRecord) -> Option<Self> {
        let mut layers = Vec::with_capacity(rec.layers.len());
        for (i, l) in rec.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return None;
            }
            if i > 0 && rec.layers[i - 1].outputs != l.inputs {
                return None;
            }
            layers.push(Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.iter().map(|&w| F::of(w)).collect(),
                bias: l.bias.iter().map(|&b| F::of(b)).collect(),
            });
        }
        if layers.is_empty() {
            return None;
        }
        Some(Self { layers })
    }
}

/// Serialized network: layer shapes plus weights as decimals.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MlpRecord {
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Gradients<F>,
    v: Gradients<F>,
    step: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &Mlp<F>, lr: F) -> Self {
        Self {
            lr,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    /// Applies one update with already batch-averaged gradients.
    pub fn step(&mut self, net: &mut Mlp<F>, grads: &Gradients<F>) {
        self.step += 1;
        let bc1 = F::one() - self.beta1.powi(self.step);
        let bc2 = F::one() - self.beta2.powi(self.step);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().zip(&grads.weights[i]).zip(
                self.m.weights[i].iter_mut().zip(self.v.weights[i].iter_mut()),
            );
            let bias = layer
                .bias
                .iter_mut()
                .zip(&grads.bias[i])
                .zip(self.m.bias[i].iter_mut().zip(self.v.bias[i].iter_mut()));
            for ((p, &g), (m, v)) in params.chain(bias) {
                *m = self.beta1 * *m + (F::one() - self.beta1) * g;
                *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net: Mlp<f64> = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        let target = [0.5, -0.25];
        let loss = |n: &Mlp<f64>| -> f64 {
            let y = n.forward(&x);
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&x, |y| y.iter().zip(&target).map(|(a, b)| a - b).collect(), &mut grads);
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].weights.len() {
                let orig = net.layers[li].weights[wi];
                net.layers[li].weights[wi] = orig + h;
                let up = loss(&net);
                net.layers[li].weights[wi] = orig - h;
                let down = loss(&net);
                net.layers[li].weights[wi] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grads.weights[li][wi]).abs() < 1e-6, "layer {li} w{wi}: {fd} vs {}", grads.weights[li][wi]);
            }
            for bi in 0..net.layers[li].bias.len() {
                let orig = net.layers[li].bias[bi];
                net.layers[li].bias[bi] = orig + h;
                let up = loss(&net);
                net.layers[li].bias[bi] = orig - h;
                let down = loss(&net);
                net.layers[li].bias[bi] = orig;
                assert!(((up - down) / (2.0 * h) - grads.bias[li][bi]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_fits_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net: Mlp<f32> = Mlp::new(&[1, 16, 16, 1], &mut rng);
        let mut opt = Adam::new(&net, 0.01);
        let xs: Vec<f32> = (0..32).map(|i| -1.0 + i as f32 / 16.0).collect();
        let mut grads = Gradients::zeros_like(&net);
        for _ in 0..1500 {
            grads.clear();
            for &x in &xs {
                net.backward(&[x], |y| vec![y[0] - x * x], &mut grads);
            }
            grads.scale(1.0 / xs.len() as f32);
            opt.step(&mut net, &grads);
        }
        let mse: f32 = xs.iter().map(|&x| (net.forward(&[x])[0] - x * x).powi(2)).sum::<f32>() / 32.0;
        assert!(mse < 2e-3, "mse {mse}");
    }

    #[test]
    fn record_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net: Mlp<f32> = Mlp::new(&[4, 3, 2], &mut rng);
        let back: Mlp<f32> = Mlp::from_record(&net.to_record()).unwrap();
        assert_eq!(net, back);
        let mut bad = net.to_record();
        bad.layers[1].inputs = 7;
        assert!(Mlp::<f32>::from_record(&bad).is_none());
    }
}
