use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Observation, TokenId};
use crate::rng::seeded;

use super::Encoder;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Tabular,
    SmallNet,
}

pub const SMALLNET_HIDDEN: usize = 64;

/// A function `(obs, prefix) → R^out` with a flat parameter vector.
///
/// The tabular backend stores one row per visited context and reads unseen contexts as
/// zeros; rows are allocated by [`Model::ensure`]. The small net is
/// `W2 tanh(W1 x + b1) + b2` on the encoder's one-hot features.
#[derive(Clone, Debug)]
pub struct Model {
    pub(crate) encoder: Encoder,
    pub(crate) out_dim: usize,
    pub(crate) kind: Kind,
    pub(crate) params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) enum Kind {
    Tabular {
        rows: HashMap<Vec<u64>, usize>,
        keys: Vec<Vec<u64>>,
    },
    SmallNet {
        hidden: usize,
    },
}

/// Cached forward pass, needed for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub out: Vec<f64>,
    pub(crate) row: Option<usize>,
    pub(crate) active: Vec<usize>,
    pub(crate) hidden: Vec<f64>,
}

impl Model {
    pub fn tabular(encoder: Encoder, out_dim: usize) -> Self {
        Self {
            encoder,
            out_dim,
            kind: Kind::Tabular {
                rows: HashMap::new(),
                keys: Vec::new(),
            },
            params: Vec::new(),
        }
    }

    pub fn small_net(encoder: Encoder, hidden: usize, out_dim: usize, seed: u64) -> Self {
        let d = encoder.input_dim();
        let mut rng = seeded(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mut params = Vec::with_capacity(d * hidden + hidden + out_dim * hidden + out_dim);
        for _ in 0..(d * hidden + hidden) {
            params.push(rng.random_range(-bound..bound));
        }
        params.resize(params.len() + out_dim * hidden + out_dim, 0.0);
        Self {
            encoder,
            out_dim,
            kind: Kind::SmallNet { hidden },
            params,
        }
    }

    pub fn new(backend: Backend, encoder: Encoder, out_dim: usize, seed: u64) -> Self {
        match backend {
            Backend::Tabular => Self::tabular(encoder, out_dim),
            Backend::SmallNet => Self::small_net(encoder, SMALLNET_HIDDEN, out_dim, seed),
        }
    }

    pub fn backend(&self) -> Backend {
        match self.kind {
            Kind::Tabular { .. } => Backend::Tabular,
            Kind::SmallNet { .. } => Backend::SmallNet,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Allocates a zero row for an unseen tabular context; no-op for the small net.
    pub fn ensure(&mut self, obs: &Observation, prefix: &[TokenId]) {
        if let Kind::Tabular { rows, keys } = &mut self.kind {
            let key = self.encoder.key(obs, prefix);
            if !rows.contains_key(&key) {
                rows.insert(key.clone(), keys.len());
                keys.push(key);
                self.params.resize(self.params.len() + self.out_dim, 0.0);
            }
        }
    }

    pub(crate) fn tabular_keys(&self) -> Option<&[Vec<u64>]> {
        match &self.kind {
            Kind::Tabular { keys, .. } => Some(keys),
            Kind::SmallNet { .. } => None,
        }
    }

    pub fn forward(&self, obs: &Observation, prefix: &[TokenId]) -> Forward {
        self.forward_with(&self.params, obs, prefix)
    }

    /// Forward pass with an alternative parameter vector of the same layout.
    pub fn forward_with(&self, params: &[f64], obs: &Observation, prefix: &[TokenId]) -> Forward {
        match &self.kind {
            Kind::Tabular { rows, .. } => {
                let row = rows.get(&self.encoder.key(obs, prefix)).copied();
                let out = match row {
                    Some(r) if (r + 1) * self.out_dim <= params.len() => {
                        params[r * self.out_dim..(r + 1) * self.out_dim].to_vec()
                    }
                    _ => vec![0.0; self.out_dim],
                };
                Forward {
                    out,
                    row,
                    active: vec![],
                    hidden: vec![],
                }
            }
            &Kind::SmallNet { hidden } => {
                let active = self.encoder.active(obs, prefix);
                let d = self.encoder.input_dim();
                let b1 = &params[d * hidden..d * hidden + hidden];
                let mut h = b1.to_vec();
                for &i in &active {
                    for (hk, w) in h.iter_mut().zip(&params[i * hidden..(i + 1) * hidden]) {
                        *hk += w;
                    }
                }
                for x in &mut h {
                    *x = x.tanh();
                }
                let w2 = d * hidden + hidden;
                let b2 = w2 + self.out_dim * hidden;
                let out = (0..self.out_dim)
                    .map(|o| {
                        params[b2 + o]
                            + params[w2 + o * hidden..w2 + (o + 1) * hidden]
                                .iter()
                                .zip(&h)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                    })
                    .collect();
                Forward {
                    out,
                    row: None,
                    active,
                    hidden: h,
                }
            }
        }
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dout`.
    ///
    /// # Panics
    /// For a tabular context that was never [`ensure`](Self::ensure)d.
    pub fn backward(&self, fwd: &Forward, dout: &[f64], grad: &mut [f64]) {
        match &self.kind {
            Kind::Tabular { .. } => {
                let r = fwd.row.expect("tabular backward on an unallocated context");
                for (g, d) in grad[r * self.out_dim..(r + 1) * self.out_dim].iter_mut().zip(dout) {
                    *g += d;
                }
            }
            &Kind::SmallNet { hidden } => {
                let d = self.encoder.input_dim();
                let w2 = d * hidden + hidden;
                let b2 = w2 + self.out_dim * hidden;
                let mut dh = vec![0.0; hidden];
                for (o, &go) in dout.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    grad[b2 + o] += go;
                    let row = w2 + o * hidden;
                    for k in 0..hidden {
                        grad[row + k] += go * fwd.hidden[k];
                        dh[k] += go * self.params[row + k];
                    }
                }
                for (k, x) in dh.iter_mut().enumerate() {
                    *x *= 1.0 - fwd.hidden[k] * fwd.hidden[k];
                }
                for (g, x) in grad[d * hidden..d * hidden + hidden].iter_mut().zip(&dh) {
                    *g += x;
                }
                for &i in &fwd.active {
                    for (g, x) in grad[i * hidden..(i + 1) * hidden].iter_mut().zip(&dh) {
                        *g += x;
                    }
                }
            }
        }
    }
}
