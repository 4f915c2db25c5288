use crate::mdp::{Observation, TokenId, TokenValueFn};

use super::{Backend, Encoder, Forward, Model};

/// Token value function `V_θ(o, context)` with a frozen target copy `θ̄`.
#[derive(Clone, Debug)]
pub struct TokenCritic {
    model: Model,
    target: Vec<f64>,
}

impl TokenCritic {
    pub fn new(backend: Backend, encoder: Encoder, seed: u64) -> Self {
        Self::from_model(Model::new(backend, encoder, 1, seed))
    }

    pub fn from_model(model: Model) -> Self {
        let target = model.params.clone();
        Self { model, target }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.model.params
    }

    pub fn target_params(&self) -> &[f64] {
        &self.target
    }

    /// Allocates a tabular row; the target copy reads it as its initial value until synced.
    pub fn ensure(&mut self, obs: &Observation, context: &[TokenId]) {
        self.model.ensure(obs, context);
        self.target.resize(self.model.params.len(), 0.0);
    }

    pub fn value(&self, obs: &Observation, context: &[TokenId], use_target: bool) -> f64 {
        let p = if use_target {
            &self.target
        } else {
            &self.model.params
        };
        self.model.forward_with(p, obs, context).out[0]
    }

    pub fn forward(&self, obs: &Observation, context: &[TokenId]) -> Forward {
        self.model.forward(obs, context)
    }

    pub fn backward(&self, fwd: &Forward, dvalue: f64, grad: &mut [f64]) {
        self.model.backward(fwd, &[dvalue], grad);
    }

    /// `θ̄ ← θ`.
    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.model.params);
    }

    pub fn view(&self, use_target: bool) -> CriticView<'_> {
        CriticView {
            critic: self,
            use_target,
        }
    }
}

/// A [`TokenValueFn`] reading either the live or the target parameters.
#[derive(Clone, Copy)]
pub struct CriticView<'a> {
    critic: &'a TokenCritic,
    use_target: bool,
}

impl TokenValueFn for CriticView<'_> {
    fn value(&self, obs: &Observation, context: &[TokenId]) -> f64 {
        self.critic.value(obs, context, self.use_target)
    }
}
