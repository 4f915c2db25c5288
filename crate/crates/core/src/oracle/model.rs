use std::collections::{HashMap, VecDeque};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::mdp::{Action, Enumerable, Environment, Observation, TokenId};
use crate::rng::{derive_seed, seeded};

use super::OracleError;

/// Where a token edge leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeTarget {
    /// To the decision context one token longer.
    Intra(usize),
    /// Completes legal action `action` of the node's observation.
    Boundary { action: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub token: TokenId,
    pub target: EdgeTarget,
}

/// A decision context `(observation, proper prefix)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub obs: usize,
    pub prefix: Vec<TokenId>,
    pub edges: Vec<Edge>,
}

/// A legal action at an observation with its deterministic outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionInfo {
    pub action: Action,
    pub reward: f64,
    /// Next observation index; `None` when the action ends the episode.
    pub next: Option<usize>,
    /// `(node, edge index)` pairs traversed while emitting the action.
    pub path: Vec<(usize, usize)>,
}

/// Exact token-level expansion of an enumerable environment.
///
/// Nodes are the contexts in which a token is chosen; each observation's root node holds
/// the empty prefix. Rewards live only on boundary edges.
#[derive(Clone, Debug)]
pub struct PrefixModel {
    pub nodes: Vec<Node>,
    /// Environment observation id per observation index.
    pub obs_ids: Vec<u64>,
    pub roots: Vec<usize>,
    pub actions: Vec<Vec<ActionInfo>>,
    /// Observation indices of the start support.
    pub starts: Vec<usize>,
    pub vocab_size: usize,
    index: HashMap<u64, usize>,
    fingerprint: String,
}

pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;

impl PrefixModel {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn observation_count(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.edges.len()).sum()
    }

    pub fn obs_index(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Node of `(obs, prefix)` if that context exists.
    pub fn find_node(&self, obs: usize, prefix: &[TokenId]) -> Option<usize> {
        prefix.iter().try_fold(self.roots[obs], |n, &tok| {
            self.nodes[n].edges.iter().find_map(|e| match e.target {
                EdgeTarget::Intra(c) if e.token == tok => Some(c),
                _ => None,
            })
        })
    }

    /// Stable digest of the model structure.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Replays `paths` random episodes through `env.step` and compares every transition.
    pub fn check_against_env(
        &self,
        env: &mut dyn Environment,
        paths: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<(), OracleError> {
        let index = &self.index;
        for p in 0..paths {
            let mut rng = seeded(derive_seed(seed, &[p as u64]));
            let obs = env.reset(derive_seed(seed, &[p as u64, 1]));
            let mut cur = *index.get(&obs.id).ok_or_else(|| {
                OracleError::ModelMismatch(format!("start observation {} not in model", obs.id))
            })?;
            if !self.starts.contains(&cur) {
                return Err(OracleError::ModelMismatch(format!(
                    "observation {} is not a start state",
                    obs.id
                )));
            }
            for _ in 0..max_len {
                let acts = &self.actions[cur];
                let info = &acts[rng.random_range(0..acts.len())];
                let out = env.step(&info.action).map_err(|e| {
                    OracleError::ModelMismatch(format!("env rejected replayed action: {e}"))
                })?;
                if (out.reward - info.reward).abs() > 1e-12 {
                    return Err(OracleError::ModelMismatch(format!(
                        "reward {} vs model {}",
                        out.reward, info.reward
                    )));
                }
                match info.next {
                    None if out.done => break,
                    None => {
                        return Err(OracleError::ModelMismatch(
                            "model terminal but env continued".into(),
                        ))
                    }
                    Some(n) => {
                        if self.obs_ids[n] != out.obs.id {
                            return Err(OracleError::ModelMismatch(format!(
                                "next observation {} vs model {}",
                                out.obs.id, self.obs_ids[n]
                            )));
                        }
                        if out.done {
                            // time limit
                            break;
                        }
                        cur = n;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Breadth-first expansion of every observation reachable from the start support.
pub fn enumerate_prefix_model(
    env: &dyn Enumerable,
    node_budget: usize,
) -> Result<PrefixModel, OracleError> {
    let mut obs_ids: Vec<u64> = Vec::new();
    let mut obs_list: Vec<Observation> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut intern = |o: Observation,
                      obs_ids: &mut Vec<u64>,
                      obs_list: &mut Vec<Observation>,
                      queue: &mut VecDeque<usize>|
     -> usize {
        *index.entry(o.id).or_insert_with(|| {
            obs_ids.push(o.id);
            obs_list.push(o);
            queue.push_back(obs_ids.len() - 1);
            obs_ids.len() - 1
        })
    };
    let mut starts = Vec::new();
    for o in env.start_observations() {
        let i = intern(o, &mut obs_ids, &mut obs_list, &mut queue);
        if !starts.contains(&i) {
            starts.push(i);
        }
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    let mut actions: Vec<Vec<ActionInfo>> = Vec::new();
    while let Some(oi) = queue.pop_front() {
        let obs = obs_list[oi].clone();
        let legal = env.legal_actions(&obs);
        if legal.is_empty() {
            return Err(OracleError::ModelMismatch(format!(
                "observation {} has no legal actions",
                obs.id
            )));
        }
        let root = nodes.len();
        nodes.push(Node {
            obs: oi,
            prefix: vec![],
            edges: vec![],
        });
        debug_assert_eq!(roots.len(), oi);
        roots.push(root);
        let mut infos = Vec::with_capacity(legal.len());
        for (ai, a) in legal.iter().enumerate() {
            let mut cur = root;
            let mut path = Vec::with_capacity(a.len());
            for (j, &tok) in a.tokens().iter().enumerate() {
                let last = j + 1 == a.len();
                let existing = nodes[cur].edges.iter().position(|e| e.token == tok);
                let ei = match existing {
                    Some(ei) => {
                        let clash = matches!(
                            (nodes[cur].edges[ei].target, last),
                            (EdgeTarget::Boundary { .. }, _) | (EdgeTarget::Intra(_), true)
                        );
                        if clash {
                            return Err(OracleError::ModelMismatch(format!(
                                "legal actions at observation {} are not prefix-free",
                                obs.id
                            )));
                        }
                        ei
                    }
                    None => {
                        let target = if last {
                            EdgeTarget::Boundary { action: ai }
                        } else {
                            nodes.push(Node {
                                obs: oi,
                                prefix: a.prefix(j + 1).to_vec(),
                                edges: vec![],
                            });
                            EdgeTarget::Intra(nodes.len() - 1)
                        };
                        nodes[cur].edges.push(Edge { token: tok, target });
                        nodes[cur].edges.len() - 1
                    }
                };
                path.push((cur, ei));
                if let EdgeTarget::Intra(c) = nodes[cur].edges[ei].target {
                    cur = c;
                }
            }
            let out = env.transition(&obs, a);
            let next = if out.done {
                None
            } else {
                Some(intern(out.obs, &mut obs_ids, &mut obs_list, &mut queue))
            };
            infos.push(ActionInfo {
                action: a.clone(),
                reward: out.reward,
                next,
                path,
            });
        }
        actions.push(infos);
        if nodes.len() > node_budget {
            return Err(OracleError::TooLarge {
                nodes: nodes.len(),
                budget: node_budget,
            });
        }
    }

    let mut h = Sha256::new();
    for (n, node) in nodes.iter().enumerate() {
        h.update((n as u64).to_le_bytes());
        h.update(obs_ids[node.obs].to_le_bytes());
        for e in &node.edges {
            h.update((e.token as u64).to_le_bytes());
        }
    }
    for row in &actions {
        for a in row {
            h.update(a.reward.to_le_bytes());
            h.update(a.next.map_or(u64::MAX, |x| x as u64).to_le_bytes());
        }
    }
    let fingerprint = h
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect();

    Ok(PrefixModel {
        nodes,
        obs_ids,
        roots,
        actions,
        starts,
        vocab_size: env.vocab().len(),
        index,
        fingerprint,
    })
}
