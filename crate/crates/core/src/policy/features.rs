//! Hashed sparse features for the softmax policy.
//!
//! Base channel φ(s, u, a), one binary feature per bucket:
//! - `b|tok` for every action token,
//! - `oa|o|tok` for every (observation token, action token) pair,
//! - `ta-any|verb`, `ta-all|verb`: some / all object tokens of the action occur in the task,
//! - `oa-any|verb`, `oa-all|verb`: the same against the observation.
//!
//! Tip channel ψ(tips, a), union over the retrieved tips, keyed by the outcome
//! the tip reports (`fail`: negative score, `done`: no missing milestones,
//! `stuck`: anything else, i.e. the episode ran out of steps):
//! - `tk|outcome|tok`: an object or verb token of the action is mentioned in the tip,
//! - `tl|outcome`, `tl|outcome|verb`: the action repeats the tip's last action (for `done`
//!   tips only once its objects are in view),
//! - `tm|outcome`, `tm|outcome|verb`: the action would complete one of the tip's missing milestones
//!   right now (same verb, every object token of the action in view).

use serde::{Deserialize, Serialize};

use crate::envsim::Observation;
use crate::envsim::TaskSpec;
use crate::hashing::{bucket, FEATURE_SALT};
use crate::memory::Tip;
use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 512;

/// Tokens carrying no object information.
pub const STOPWORDS: [&str; 6] = ["on", "up", "to", "with", "around", "the"];

/// Sparse feature vector as sorted, deduplicated `(bucket, value)` pairs.
pub type Sparse<T> = Vec<(u32, T)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ContextFeatures<T> {
    pub base: Vec<Sparse<T>>,
    pub tip: Vec<Sparse<T>>,
    pub tip_present: bool,
}

impl<T: Scalar> ContextFeatures<T> {
    pub fn num_actions(&self) -> usize {
        self.base.len()
    }

    /// The same state with the tip channel stripped.
    pub fn without_tips(&self) -> ContextFeatures<T> {
        ContextFeatures { base: self.base.clone(), tip: vec![Vec::new(); self.base.len()], tip_present: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub base: usize,
    pub tip: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        FeatureDims { base: DEFAULT_DIM, tip: DEFAULT_DIM }
    }
}

fn binary<T: Scalar>(mut idx: Vec<usize>) -> Sparse<T> {
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter().map(|i| (i as u32, T::one())).collect()
}

fn is_stop(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

/// Bucket of a base-channel feature.
pub fn base_bucket(parts: &[&str], dims: FeatureDims) -> usize {
    bucket(FEATURE_SALT, parts, dims.base)
}

/// Bucket of a tip-channel feature. The leading `tip` part separates the two channels.
pub fn tip_bucket(parts: &[&str], dims: FeatureDims) -> usize {
    let mut p = Vec::with_capacity(parts.len() + 1);
    p.push("tip");
    p.extend_from_slice(parts);
    bucket(FEATURE_SALT, &p, dims.tip)
}

fn base_features<T: Scalar>(obs: &[String], task: &[String], action: &[String], dims: FeatureDims) -> Sparse<T> {
    let mut idx = Vec::with_capacity(action.len() * (obs.len() + 1) + 4);
    for a in action {
        idx.push(base_bucket(&["b", a], dims));
        for o in obs {
            idx.push(base_bucket(&["oa", o, a], dims));
        }
    }
    let verb = action.first().map(String::as_str).unwrap_or("");
    let objects: Vec<&String> = action.iter().skip(1).filter(|t| !is_stop(t)).collect();
    if !objects.is_empty() {
        let in_task = objects.iter().filter(|t| task.contains(t)).count();
        let in_obs = objects.iter().filter(|t| obs.contains(t)).count();
        if in_task > 0 {
            idx.push(base_bucket(&["ta-any", verb], dims));
        }
        if in_task == objects.len() {
            idx.push(base_bucket(&["ta-all", verb], dims));
        }
        if in_obs > 0 {
            idx.push(base_bucket(&["oa-any", verb], dims));
        }
        if in_obs == objects.len() {
            idx.push(base_bucket(&["oa-all", verb], dims));
        }
    }
    binary(idx)
}

/// Parsed view of a tip produced by the deterministic tip template.
#[derive(Debug, Clone, PartialEq)]
pub struct TipSections {
    /// The tip states that no milestone is missing.
    pub complete: bool,
    pub missing: Vec<Vec<String>>,
    pub last_action: Vec<String>,
    pub tokens: Vec<String>,
}

impl TipSections {
    /// Splits `missing milestones: a b, c d; last action: x y; last room: r; score z`.
    /// Content that does not follow the template only contributes token mentions.
    pub fn parse(content: &str) -> TipSections {
        let mut complete = false;
        let mut missing = Vec::new();
        let mut last_action = Vec::new();
        for part in content.split("; ") {
            if let Some(rest) = part.strip_prefix("missing milestones: ") {
                complete = rest == "none";
                if !complete {
                    missing = rest
                        .split(", ")
                        .map(|m| m.split_whitespace().map(str::to_string).collect())
                        .collect();
                }
            } else if let Some(rest) = part.strip_prefix("last action: ") {
                last_action = rest.split_whitespace().map(str::to_string).collect();
            }
        }
        let tokens = content
            .split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == ':')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        TipSections { complete, missing, last_action, tokens }
    }
}

/// Verb used in milestone names for the action verb, if any.
fn milestone_verb(action_verb: &str) -> &str {
    match action_verb {
        "pick" => "take",
        "look" | "inspect" => "see",
        "move" => "reach",
        v => v,
    }
}

/// Whether `action` would complete milestone `m` (same verb, all milestone objects named).
fn completes(action: &[String], m: &[String]) -> bool {
    let (Some(av), Some(mv)) = (action.first(), m.first()) else {
        return false;
    };
    milestone_verb(av) == mv
        && mv != "reach"
        && m.iter().skip(1).filter(|t| !is_stop(t)).all(|t| action.iter().skip(1).any(|a| a == t))
}

fn outcome_label<T: Scalar>(score: T, sec: &TipSections) -> &'static str {
    if score < T::zero() {
        "fail"
    } else if sec.complete {
        "done"
    } else {
        "stuck"
    }
}

fn tip_features<T: Scalar>(
    tips: &[(TipSections, &'static str)],
    obs: &[String],
    action: &[String],
    dims: FeatureDims,
) -> Sparse<T> {
    let mut idx = Vec::new();
    let verb = action.first().map(String::as_str).unwrap_or("");
    let in_view = action.iter().skip(1).filter(|t| !is_stop(t)).all(|t| obs.contains(t));
    for (sec, outcome) in tips {
        for a in action.iter().filter(|t| !is_stop(t)) {
            if sec.tokens.iter().any(|t| t == a) {
                idx.push(tip_bucket(&["tk", outcome, a], dims));
            }
        }
        if !sec.last_action.is_empty() && sec.last_action == action && (in_view || *outcome != "done") {
            idx.push(tip_bucket(&["tl", outcome], dims));
            idx.push(tip_bucket(&["tl", outcome, verb], dims));
        }
        if in_view && sec.missing.iter().any(|m| completes(action, m)) {
            idx.push(tip_bucket(&["tm", outcome], dims));
            idx.push(tip_bucket(&["tm", outcome, verb], dims));
        }
    }
    binary(idx)
}

/// Builds the per-action feature maps for one decision point.
pub fn featurize<T: Scalar>(
    obs: &Observation,
    task: &TaskSpec,
    actions: &[Vec<String>],
    tips: &[&Tip<T>],
    dims: FeatureDims,
) -> ContextFeatures<T> {
    let base = actions.iter().map(|a| base_features(&obs.tokens, &task.description, a, dims)).collect();
    if tips.is_empty() {
        return ContextFeatures { base, tip: vec![Vec::new(); actions.len()], tip_present: false };
    }
    let parsed: Vec<(TipSections, &'static str)> = tips
        .iter()
        .map(|t| {
            let sec = TipSections::parse(&t.content);
            let outcome = outcome_label(t.score, &sec);
            (sec, outcome)
        })
        .collect();
    let tip = actions.iter().map(|a| tip_features(&parsed, &obs.tokens, a, dims)).collect();
    ContextFeatures { base, tip, tip_present: true }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_template_sections() {
        let s = TipSections::parse("missing milestones: take battery, focus red bulb; last action: move back; score 10");
        assert_eq!(s.missing, vec![toks("take battery"), toks("focus red bulb")]);
        assert_eq!(s.last_action, toks("move back"));
        assert!(s.tokens.contains(&"battery".to_string()));
        assert!(!s.complete);
        let none = TipSections::parse("missing milestones: none; last action: connect a to b; last room: attic; score 100");
        assert!(none.missing.is_empty() && none.complete);
        assert_eq!(none.last_action, toks("connect a to b"));
    }

    #[test]
    fn milestone_completion_matching() {
        assert!(completes(&toks("pick up battery"), &toks("take battery")));
        assert!(completes(&toks("focus on red light bulb"), &toks("focus red light bulb")));
        assert!(!completes(&toks("focus on green light bulb"), &toks("focus red light bulb")));
        assert!(!completes(&toks("move forward"), &toks("reach attic")));
    }

    #[test]
    fn base_features_are_binary_and_sorted() {
        let f: Sparse<f64> = base_features(&toks("hallway looked red bulb"), &toks("turn on red bulb"), &toks("focus on red bulb"), FeatureDims::default());
        assert!(f.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(f.iter().all(|&(i, v)| v == 1.0 && (i as usize) < DEFAULT_DIM));
        let all = base_bucket(&["ta-all", "focus"], FeatureDims::default()) as u32;
        assert!(f.iter().any(|&(i, _)| i == all));
    }
}
