use crate::envs::EnvError;

use super::{Action, Observation, TokenId, Vocabulary};

/// How an environment delimits token actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionFormat {
    /// Actions end with the reserved `eoa` token (included in the action).
    Delimited { eoa: TokenId, max_len: usize },
    /// Every action has exactly `len` tokens.
    Fixed { len: usize },
}

impl ActionFormat {
    pub fn max_action_len(self) -> usize {
        match self {
            ActionFormat::Delimited { max_len, .. } => max_len,
            ActionFormat::Fixed { len } => len,
        }
    }
}

/// Result of executing one action.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
}

/// A token-action environment.
pub trait Environment: Send {
    fn vocab(&self) -> &Vocabulary;

    fn action_format(&self) -> ActionFormat;

    /// Observation ids are always `< observation_count()`.
    fn observation_count(&self) -> usize;

    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: &Action) -> Result<Outcome, EnvError>;

    /// Feasible actions at `obs`: non-empty, duplicate-free, deterministic in `obs`.
    fn legal_actions(&self, obs: &Observation) -> Vec<Action>;

    fn max_action_len(&self) -> usize {
        self.action_format().max_action_len()
    }
}

/// Environments whose reachable state space can be enumerated exactly.
pub trait Enumerable: Environment {
    /// Support of the start-state distribution.
    fn start_observations(&self) -> Vec<Observation>;

    /// Pure transition function (no time limit, no internal state).
    fn transition(&self, obs: &Observation, action: &Action) -> Outcome;
}

/// Prefix tree over a set of legal actions; yields per-prefix token masks.
#[derive(Clone, Debug)]
pub struct ActionTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: Vec<(TokenId, usize)>,
    action: Option<usize>,
}

impl ActionTrie {
    pub fn new(actions: &[Action]) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (ai, a) in actions.iter().enumerate() {
            let mut cur = 0;
            for &tok in a.tokens() {
                cur = match nodes[cur].children.iter().find(|(t, _)| *t == tok) {
                    Some(&(_, child)) => child,
                    None => {
                        nodes.push(TrieNode::default());
                        let child = nodes.len() - 1;
                        nodes[cur].children.push((tok, child));
                        child
                    }
                };
            }
            nodes[cur].action.get_or_insert(ai);
        }
        for n in &mut nodes {
            n.children.sort_unstable();
        }
        Self { nodes }
    }

    fn locate(&self, prefix: &[TokenId]) -> Option<usize> {
        prefix.iter().try_fold(0usize, |cur, tok| {
            self.nodes[cur]
                .children
                .iter()
                .find(|(t, _)| t == tok)
                .map(|&(_, c)| c)
        })
    }

    /// Tokens that extend `prefix` towards some legal action, in increasing order.
    pub fn allowed(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        self.locate(prefix)
            .map(|n| self.nodes[n].children.iter().map(|&(t, _)| t).collect())
            .unwrap_or_default()
    }

    pub fn mask(&self, prefix: &[TokenId], vocab_size: usize) -> Vec<bool> {
        let mut m = vec![false; vocab_size];
        for t in self.allowed(prefix) {
            m[t] = true;
        }
        m
    }

    /// Index of the legal action spelled exactly by `tokens`, if any.
    pub fn action_index(&self, tokens: &[TokenId]) -> Option<usize> {
        self.locate(tokens).and_then(|n| self.nodes[n].action)
    }

    pub fn is_complete(&self, prefix: &[TokenId]) -> bool {
        self.action_index(prefix).is_some()
    }
}
