use crate::mdp::{
    normalized_action_dist, Action, ActionTrie, Observation, TokenId, TokenPolicy,
};

use super::{Backend, Encoder, Forward, Model, PolicyError};

/// Autoregressive token policy `π(w | o, prefix)`: a softmax over per-context logits.
#[derive(Clone, Debug)]
pub struct AutoregressivePolicy {
    model: Model,
}

/// Masked softmax; masked-out entries get probability exactly 0.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let m = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if allowed(i) { (x - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    p
}

impl AutoregressivePolicy {
    pub fn new(backend: Backend, encoder: Encoder, seed: u64) -> Self {
        let v = encoder.vocab;
        Self {
            model: Model::new(backend, encoder, v, seed),
        }
    }

    pub fn from_model(model: Model) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn vocab_size(&self) -> usize {
        self.model.out_dim
    }

    /// Raw logits with masked tokens set to `-inf`.
    pub fn logits(&self, obs: &Observation, prefix: &[TokenId], mask: Option<&[bool]>) -> Vec<f64> {
        let mut l = self.model.forward(obs, prefix).out;
        if let Some(m) = mask {
            for (x, &ok) in l.iter_mut().zip(m) {
                if !ok {
                    *x = f64::NEG_INFINITY;
                }
            }
        }
        l
    }

    pub fn forward(&self, obs: &Observation, prefix: &[TokenId]) -> Forward {
        self.model.forward(obs, prefix)
    }

    pub fn probs(&self, obs: &Observation, prefix: &[TokenId], mask: Option<&[bool]>) -> Vec<f64> {
        masked_softmax(&self.model.forward(obs, prefix).out, mask)
    }

    /// `Σ_j ln π(w^j | o, w^{1:j−1})`, masking with `trie` when given.
    pub fn action_logprob(
        &self,
        obs: &Observation,
        action: &Action,
        trie: Option<&ActionTrie>,
    ) -> Result<f64, PolicyError> {
        let v = self.vocab_size();
        let mut total = 0.0;
        for j in 0..action.len() {
            let prefix = action.prefix(j);
            let tok = action.tokens()[j];
            let mask = trie.map(|t| t.mask(prefix, v));
            if tok >= v || mask.as_ref().is_some_and(|m| !m[tok]) {
                return Err(PolicyError::IllegalAction {
                    position: j,
                    token: tok,
                });
            }
            total += self.probs(obs, prefix, mask.as_deref())[tok].ln();
        }
        Ok(total)
    }

    /// Adds `coef · ∇ ln π(token | o, prefix)` to `grad`.
    pub fn logprob_grad(
        &self,
        fwd: &Forward,
        mask: Option<&[bool]>,
        token: TokenId,
        coef: f64,
        grad: &mut [f64],
    ) {
        let p = masked_softmax(&fwd.out, mask);
        let mut d: Vec<f64> = p.iter().map(|&x| -coef * x).collect();
        d[token] += coef;
        self.model.backward(fwd, &d, grad);
    }

    /// Length-normalised distribution over `legal`: softmax of `ln π(a|o) / |a|`.
    pub fn twosome_action_dist(&self, obs: &Observation, legal: &[Action]) -> Vec<f64> {
        let trie = ActionTrie::new(legal);
        normalized_action_dist(self, obs, legal, Some(&trie))
    }
}

impl TokenPolicy for AutoregressivePolicy {
    fn vocab_size(&self) -> usize {
        self.model.out_dim
    }

    fn token_probs(&self, obs: &Observation, prefix: &[TokenId], mask: Option<&[bool]>) -> Vec<f64> {
        self.probs(obs, prefix, mask)
    }
}
