//! Reward-to-go regressors: ridge over a fixed feature map, or a small MLP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ZpdError;
use crate::env::{EnvConfig, StateVector};
use crate::linalg::ridge;
use crate::nn::{Adam, Gradients, Mlp, MlpRecord};
use crate::scalar::Scalar;

/// Fixed features for the linear regressor. A bias term is always appended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum FeatureMap {
    /// The state vector as-is.
    Raw { dim: usize },
    /// Independent one-hots over cell, speed and heading of a GridTrack state.
    GridOneHot { width: usize, height: usize, speeds: usize },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureMap::Raw { dim } => dim + 1,
            FeatureMap::GridOneHot { width, height, speeds } => width * height + speeds + 4 + 1,
        }
    }

    pub fn state_dim(&self) -> usize {
        match *self {
            FeatureMap::Raw { dim } => dim,
            FeatureMap::GridOneHot { .. } => 4,
        }
    }

    pub fn features<F: Scalar>(&self, s: &[f64]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        match *self {
            FeatureMap::Raw { dim } => {
                for (o, v) in out.iter_mut().zip(&s[..dim]) {
                    *o = F::of(*v);
                }
            }
            FeatureMap::GridOneHot { width, height, speeds } => {
                let clip = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
                let (x, y) = (clip(s[0], width), clip(s[1], height));
                out[x * height + y] = F::one();
                out[width * height + clip(s[2], speeds)] = F::one();
                out[width * height + speeds + clip(s[3], 4)] = F::one();
            }
        }
        let last = out.len() - 1;
        out[last] = F::one();
        out
    }
}

/// How to build a regressor; stored in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorSpec {
    Linear {
        features: FeatureMap,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Mlp {
        state_dim: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default = "default_mlp_lr")]
        learning_rate: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_lambda() -> f64 {
    1e-2
}
fn default_hidden() -> usize {
    16
}
fn default_epochs() -> usize {
    60
}
fn default_batch() -> usize {
    32
}
fn default_mlp_lr() -> f64 {
    5e-3
}

impl RegressorSpec {
    /// Linear one-hot features on GridTrack, a width-16 MLP on MiniLander.
    pub fn for_env(cfg: &EnvConfig) -> Self {
        match cfg {
            EnvConfig::GridTrack(c) => RegressorSpec::Linear {
                features: FeatureMap::GridOneHot {
                    width: c.layout.first().map(|r| r.chars().count()).unwrap_or(0),
                    height: c.layout.len(),
                    speeds: c.max_speed + 1,
                },
                lambda: default_lambda(),
            },
            EnvConfig::MiniLander(_) => RegressorSpec::Mlp {
                state_dim: 8,
                hidden: default_hidden(),
                epochs: default_epochs(),
                batch: default_batch(),
                learning_rate: default_mlp_lr(),
                seed: 0,
            },
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            RegressorSpec::Linear { features, .. } => features.state_dim(),
            RegressorSpec::Mlp { state_dim, .. } => *state_dim,
        }
    }

    /// Same spec with the MLP initialisation seed replaced.
    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        if let RegressorSpec::Mlp { seed, .. } = &mut out {
            *seed = new_seed;
        }
        out
    }
}

/// Standardisation of one input or output coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub sd: f64,
}

impl Affine {
    fn fit(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count().max(1) as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self { mean, sd: if sd > 1e-9 { sd } else { 1.0 } }
    }
}

/// A fitted map from states to predicted reward-to-go.
#[derive(Clone, Debug, PartialEq)]
pub enum Regressor<F> {
    Linear { features: FeatureMap, weights: Vec<F> },
    Mlp { net: Mlp<F>, inputs: Vec<Affine>, output: Affine },
}

impl<F: Scalar> Regressor<F> {
    pub fn fit(spec: &RegressorSpec, states: &[&StateVector], targets: &[f64]) -> Result<Self, ZpdError> {
        if states.is_empty() {
            return Err(ZpdError::EmptyDataset);
        }
        let dim = spec.state_dim();
        if let Some(bad) = states.iter().find(|s| s.dim() != dim) {
            return Err(ZpdError::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        match spec {
            RegressorSpec::Linear { features, lambda } => {
                let x: Vec<Vec<F>> = states.iter().map(|s| features.features(s)).collect();
                let y: Vec<F> = targets.iter().map(|&t| F::of(t)).collect();
                let weights = ridge(&x, &y, F::of(*lambda)).ok_or(ZpdError::Singular)?;
                Ok(Regressor::Linear { features: features.clone(), weights })
            }
            &RegressorSpec::Mlp { state_dim, hidden, epochs, batch, learning_rate, seed } => {
                Ok(fit_mlp(states, targets, state_dim, hidden, epochs, batch.max(1), learning_rate, seed))
            }
        }
    }

    pub fn predict(&self, s: &[f64]) -> F {
        match self {
            Regressor::Linear { features, weights } => {
                features.features::<F>(s).iter().zip(weights).map(|(a, b)| *a * *b).sum()
            }
            Regressor::Mlp { net, inputs, output } => {
                let x = standardize(s, inputs);
                let y = net.forward(&x)[0];
                F::of(y.as_f64() * output.sd + output.mean)
            }
        }
    }

    pub fn to_record(&self) -> RegressorRecord {
        match self {
            Regressor::Linear { features, weights } => RegressorRecord::Linear {
                features: features.clone(),
                weights: weights.iter().map(|w| w.as_f64()).collect(),
            },
            Regressor::Mlp { net, inputs, output } => RegressorRecord::Mlp {
                network: net.to_record(),
                input_mean: inputs.iter().map(|a| a.mean).collect(),
                input_sd: inputs.iter().map(|a| a.sd).collect(),
                output_mean: output.mean,
                output_sd: output.sd,
            },
        }
    }

    pub fn from_record(rec: &RegressorRecord) -> Result<Self, ZpdError> {
        let bad = |m: &str| ZpdError::Checkpoint(m.to_string());
        match rec {
            RegressorRecord::Linear { features, weights } => {
                if weights.len() != features.dim() {
                    return Err(bad("linear weight count does not match the feature map"));
                }
                Ok(Regressor::Linear { features: features.clone(), weights: weights.iter().map(|&w| F::of(w)).collect() })
            }
            RegressorRecord::Mlp { network, input_mean, input_sd, output_mean, output_sd } => {
                let net = Mlp::from_record(network).ok_or_else(|| bad("inconsistent network shapes"))?;
                if input_mean.len() != net.input_dim() || input_sd.len() != net.input_dim() || net.output_dim() != 1 {
                    return Err(bad("regressor network has the wrong input or output width"));
                }
                let inputs = input_mean.iter().zip(input_sd).map(|(&mean, &sd)| Affine { mean, sd }).collect();
                Ok(Regressor::Mlp { net, inputs, output: Affine { mean: *output_mean, sd: *output_sd } })
            }
        }
    }
}

fn standardize<F: Scalar>(s: &[f64], inputs: &[Affine]) -> Vec<F> {
    s.iter().zip(inputs).map(|(v, a)| F::of((v - a.mean) / a.sd)).collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_mlp<F: Scalar>(
    states: &[&StateVector],
    targets: &[f64],
    dim: usize,
    hidden: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Regressor<F> {
    let inputs: Vec<Affine> = (0..dim).map(|d| Affine::fit(states.iter().map(move |s| s[d]))).collect();
    let output = Affine::fit(targets.iter().copied());
    let x: Vec<Vec<F>> = states.iter().map(|s| standardize(s, &inputs)).collect();
    let y: Vec<F> = targets.iter().map(|t| F::of((t - output.mean) / output.sd)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::<F>::new(&[dim, hidden, hidden, 1], &mut rng);
    let mut adam = Adam::new(&net, F::of(lr));
    let mut grads = Gradients::zeros_like(&net);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grads.clear();
            let k = F::of(2.0 / chunk.len() as f64);
            for &i in chunk {
                net.backward(&x[i], |out| vec![k * (out[0] - y[i])], &mut grads);
            }
            adam.step(&mut net, &grads);
        }
    }
    Regressor::Mlp { net, inputs, output }
}

/// Serialized regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RegressorRecord {
    Linear {
        features: FeatureMap,
        weights: Vec<f64>,
    },
    Mlp {
        network: MlpRecord,
        input_mean: Vec<f64>,
        input_sd: Vec<f64>,
        output_mean: f64,
        output_sd: f64,
    },
}
