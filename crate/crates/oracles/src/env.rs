//! Exhaustive depth-first search over action sequences.

use empo_core::envsim::{make_env, ActionId, Env, EnvError, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvOptimum {
    /// Best total extrinsic return over all sequences of length ≤ `max_len`
    /// (sequences may stop early; the empty sequence scores 0).
    pub best: f64,
    /// Shortest sequence achieving `best`, first in action-id order.
    pub witness: Vec<ActionId>,
    /// How many distinct sequences of the witness length achieve `best`.
    pub shortest_witnesses: usize,
    /// Search-tree nodes expanded.
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    Env(EnvError),
    Budget { budget: u64 },
}

impl std::fmt::Display for SearchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SearchError::Env(e) => write!(f, "environment: {e}"),
            SearchError::Budget { budget } => write!(f, "search exceeded {budget} nodes"),
        }
    }
}

impl std::error::Error for SearchError {}

impl From<EnvError> for SearchError {
    fn from(e: EnvError) -> Self {
        SearchError::Env(e)
    }
}

struct Search {
    best: f64,
    best_len: usize,
    witness: Vec<ActionId>,
    count: usize,
    nodes: u64,
    budget: u64,
}

impl Search {
    fn offer(&mut self, total: f64, path: &[ActionId]) {
        let better = total > self.best || (total == self.best && path.len() < self.best_len);
        if better {
            self.best = total;
            self.best_len = path.len();
            self.witness = path.to_vec();
            self.count = 1;
        } else if total == self.best && path.len() == self.best_len {
            self.count += 1;
        }
    }

    fn dfs(&mut self, env: &Env, total: f64, path: &mut Vec<ActionId>, left: usize) -> Result<(), SearchError> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(SearchError::Budget { budget: self.budget });
        }
        self.offer(total, path);
        if left == 0 || env.is_done() {
            return Ok(());
        }
        for (id, _) in env.admissible_actions()? {
            let mut next = env.clone();
            let out = next.step(id)?;
            path.push(id);
            self.dfs(&next, total + out.reward, path, left - 1)?;
            path.pop();
        }
        Ok(())
    }
}

/// Maximum achievable return within `max_len` steps, by exhaustive search
/// expanding at most `budget` nodes.
pub fn oracle_env_optimum(spec: &TaskSpec, max_len: usize, budget: u64) -> Result<EnvOptimum, SearchError> {
    let env = make_env(spec)?;
    let mut s = Search { best: 0.0, best_len: 0, witness: Vec::new(), count: 1, nodes: 0, budget };
    s.dfs(&env, 0.0, &mut Vec::new(), max_len)?;
    Ok(EnvOptimum { best: s.best, witness: s.witness, shortest_witnesses: s.count, nodes: s.nodes })
}
