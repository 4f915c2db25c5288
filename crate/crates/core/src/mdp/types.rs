use serde::{Deserialize, Serialize};

use super::{MdpError, TokenId};

/// An environment observation: an opaque state handle plus its token rendering.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub id: u64,
    pub text: Vec<TokenId>,
}

impl Observation {
    pub fn new(id: u64, text: Vec<TokenId>) -> Self {
        Self { id, text }
    }
}

/// A non-empty token sequence `w^1 .. w^|a|`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<TokenId>", into = "Vec<TokenId>")]
pub struct Action(Vec<TokenId>);

impl Action {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self, MdpError> {
        if tokens.is_empty() {
            return Err(MdpError::EmptyAction);
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The first `j` tokens; `prefix(0)` is empty.
    ///
    /// # Panics
    /// If `j > self.len()`.
    pub fn prefix(&self, j: usize) -> &[TokenId] {
        &self.0[..j]
    }
}

impl TryFrom<Vec<TokenId>> for Action {
    type Error = MdpError;

    fn try_from(tokens: Vec<TokenId>) -> Result<Self, Self::Error> {
        Action::new(tokens)
    }
}

impl From<Action> for Vec<TokenId> {
    fn from(a: Action) -> Self {
        a.0
    }
}

/// One environment step together with what the agent recorded while emitting the action.
///
/// `token_values[j]` for `j < |a|` is the critic's value of the context in which token
/// `j + 1` was emitted, i.e. `(obs, a[..j])`; `token_values[|a|]` is the bootstrap slot
/// holding the value of `(next_obs, ∅)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub token_logprobs: Vec<f64>,
    pub token_values: Vec<f64>,
}

impl StepRecord {
    pub(crate) fn validate(&self) -> Result<(), MdpError> {
        let n = self.action.len();
        if self.token_logprobs.len() != n {
            return Err(MdpError::InvalidTrajectory(format!(
                "{} token logprobs for an action of {n} tokens",
                self.token_logprobs.len()
            )));
        }
        if self.token_values.len() != n + 1 {
            return Err(MdpError::InvalidTrajectory(format!(
                "{} token values for an action of {n} tokens (expected {})",
                self.token_values.len(),
                n + 1
            )));
        }
        if let Some(lp) = self
            .token_logprobs
            .iter()
            .find(|lp| !lp.is_finite() || **lp > 0.0)
        {
            return Err(MdpError::InvalidTrajectory(format!(
                "token log-probability {lp} is not a finite non-positive number"
            )));
        }
        if !self.reward.is_finite() {
            return Err(MdpError::InvalidTrajectory("non-finite reward".into()));
        }
        Ok(())
    }
}

/// An immutable sequence of steps from one episode (or one contiguous slice of it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
    episode_return: f64,
    discounted_return: f64,
    gamma_a: f64,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord>, gamma_a: f64) -> Result<Self, MdpError> {
        let episode_return = steps.iter().map(|s| s.reward).sum();
        let discounted_return = discounted(&steps, gamma_a);
        Self::from_parts(steps, episode_return, discounted_return, gamma_a)
    }

    /// Rebuilds a trajectory from stored totals, rejecting inconsistent ones.
    pub fn from_parts(
        steps: Vec<StepRecord>,
        episode_return: f64,
        discounted_return: f64,
        gamma_a: f64,
    ) -> Result<Self, MdpError> {
        if !(gamma_a > 0.0 && gamma_a <= 1.0) {
            return Err(MdpError::InvalidTrajectory(format!(
                "gamma_a {gamma_a} outside (0, 1]"
            )));
        }
        for s in &steps {
            s.validate()?;
        }
        if let Some(pos) = steps.iter().position(|s| s.done) {
            if pos + 1 != steps.len() {
                return Err(MdpError::InvalidTrajectory(format!(
                    "step {pos} is terminal but is not the last of {}",
                    steps.len()
                )));
            }
        }
        let expect = discounted(&steps, gamma_a);
        if (expect - discounted_return).abs() > 1e-9 {
            return Err(MdpError::InvalidTrajectory(format!(
                "discounted return {discounted_return} != {expect}"
            )));
        }
        let undiscounted: f64 = steps.iter().map(|s| s.reward).sum();
        if (undiscounted - episode_return).abs() > 1e-9 {
            return Err(MdpError::InvalidTrajectory(format!(
                "episode return {episode_return} != {undiscounted}"
            )));
        }
        Ok(Self {
            steps,
            episode_return,
            discounted_return,
            gamma_a,
        })
    }

    pub fn empty(gamma_a: f64) -> Self {
        Self {
            steps: Vec::new(),
            episode_return: 0.0,
            discounted_return: 0.0,
            gamma_a,
        }
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn discounted_return(&self) -> f64 {
        self.discounted_return
    }

    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }

    pub fn token_count(&self) -> usize {
        self.steps.iter().map(|s| s.action.len()).sum()
    }

    /// True when the last step ended the episode.
    pub fn is_terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.done)
    }

    /// Copy with `token_values` replaced (e.g. refreshed by a newer critic).
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        if values.len() != self.steps.len() {
            return Err(MdpError::InvalidTrajectory(format!(
                "{} value rows for {} steps",
                values.len(),
                self.steps.len()
            )));
        }
        let steps = self
            .steps
            .iter()
            .zip(values)
            .map(|(s, v)| StepRecord {
                token_values: v,
                ..s.clone()
            })
            .collect();
        Self::from_parts(
            steps,
            self.episode_return,
            self.discounted_return,
            self.gamma_a,
        )
    }
}

fn discounted(steps: &[StepRecord], gamma: f64) -> f64 {
    let mut g = 1.0;
    let mut total = 0.0;
    for s in steps {
        total += g * s.reward;
        g *= gamma;
    }
    total
}
