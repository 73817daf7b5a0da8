//! Non-parametric stores: the tip buffer and the state-novelty counter.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::{bucket, EMBED_SALT};
use crate::scalar::Scalar;

pub const KEY_DIM: usize = 64;
pub const TIP_CAPACITY: usize = 1000;
pub const RETRIEVE_LIMIT: usize = 10;
pub const RETRIEVE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_STATE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("key is not unit-norm (norm {0})")]
    NotNormalized(f64),
    #[error("key has dimension {got}, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn norm_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(100.0))
}

fn check_unit<T: Scalar>(key: &[T]) -> Result<(), MemoryError> {
    if key.len() != KEY_DIM {
        return Err(MemoryError::Dimension { got: key.len(), want: KEY_DIM });
    }
    let n = key.iter().map(|&x| x * x).sum::<T>().sqrt();
    if (n - T::one()).abs() > norm_tolerance::<T>() || !n.is_finite() {
        return Err(MemoryError::NotNormalized(n.as_f64()));
    }
    Ok(())
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Hashed bag-of-tokens embedding, L2-normalized. The empty list maps to `e_0`.
pub fn embed<T: Scalar>(tokens: &[String]) -> Vec<T> {
    let mut v = vec![T::zero(); KEY_DIM];
    if tokens.is_empty() {
        v[0] = T::one();
        return v;
    }
    for t in tokens {
        let i = bucket(EMBED_SALT, &[t], KEY_DIM);
        v[i] = v[i] + T::one();
    }
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    v.iter_mut().for_each(|x| *x = *x / n);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Tip<T> {
    pub content: String,
    pub key: Vec<T>,
    pub score: T,
    pub seq: u64,
}

impl<T: Scalar> Tip<T> {
    /// A tip not yet stored; `seq` is assigned by the buffer.
    pub fn new(content: impl Into<String>, key: Vec<T>, score: T) -> Self {
        Tip { content: content.into(), key, score, seq: 0 }
    }
}

/// Capacity-bounded, content-deduplicated, FIFO-evicting tip store.
#[derive(Debug, Clone, PartialEq)]
pub struct TipMemory<T> {
    entries: VecDeque<Tip<T>>,
    content_index: HashSet<String>,
    capacity: usize,
    next_seq: u64,
}

impl<T: Scalar> Default for TipMemory<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> TipMemory<T> {
    pub fn new() -> Self {
        Self::with_capacity(TIP_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        TipMemory { entries: VecDeque::new(), content_index: HashSet::new(), capacity, next_seq: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn entries(&self) -> impl Iterator<Item = &Tip<T>> {
        self.entries.iter()
    }

    pub fn contains_content(&self, content: &str) -> bool {
        self.content_index.contains(content)
    }

    /// Stores `tip` unless its content is already present. Evicts the oldest
    /// entry when the buffer grows past capacity.
    pub fn add(&mut self, mut tip: Tip<T>) -> Result<bool, MemoryError> {
        check_unit(&tip.key)?;
        if self.content_index.contains(&tip.content) {
            return Ok(false);
        }
        tip.seq = self.next_seq;
        self.next_seq += 1;
        self.content_index.insert(tip.content.clone());
        self.entries.push_back(tip);
        while self.entries.len() > self.capacity {
            if let Some(old) = self.entries.pop_front() {
                self.content_index.remove(&old.content);
            }
        }
        Ok(true)
    }

    /// Tips with cosine similarity strictly above 0.5, best score first (older
    /// first on ties), at most 10.
    pub fn retrieve(&self, key: &[T]) -> Vec<&Tip<T>> {
        let threshold = T::lit(RETRIEVE_THRESHOLD);
        let mut hits: Vec<&Tip<T>> = self.entries.iter().filter(|t| dot(key, &t.key) > threshold).collect();
        hits.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal).then(a.seq.cmp(&b.seq))
        });
        hits.truncate(RETRIEVE_LIMIT);
        hits
    }

    pub fn reset(&mut self) {
        self.entries.clear();
        self.content_index.clear();
        self.next_seq = 0;
    }

    /// Plain-text snapshot: header lines then `tip <seq> <score> <key...> | <content>`.
    pub fn to_snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "empo-memory 1");
        let _ = writeln!(s, "dim {KEY_DIM}");
        let _ = writeln!(s, "capacity {}", self.capacity);
        let _ = writeln!(s, "seq {}", self.next_seq);
        let _ = writeln!(s, "count {}", self.entries.len());
        for t in &self.entries {
            let _ = write!(s, "tip {} {}", t.seq, t.score);
            for k in &t.key {
                let _ = write!(s, " {k}");
            }
            let _ = writeln!(s, " | {}", t.content);
        }
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self, MemoryError> {
        let bad = |m: &str| MemoryError::Snapshot(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("empo-memory 1") {
            return Err(bad("missing header"));
        }
        let mut header = |key: &str| -> Result<u64, MemoryError> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| MemoryError::Snapshot(format!("bad `{key}` line")))
        };
        let dim = header("dim")? as usize;
        if dim != KEY_DIM {
            return Err(MemoryError::Dimension { got: dim, want: KEY_DIM });
        }
        let capacity = header("capacity")? as usize;
        let next_seq = header("seq")?;
        let count = header("count")? as usize;
        let mut mem = TipMemory::with_capacity(capacity);
        mem.next_seq = next_seq;
        for line in lines.by_ref().take(count) {
            let (nums, content) = line.split_once(" | ").ok_or_else(|| bad("tip line without content"))?;
            let mut it = nums.split_whitespace();
            if it.next() != Some("tip") {
                return Err(bad("expected `tip`"));
            }
            let seq: u64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad seq"))?;
            let score: T = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad score"))?;
            let key: Vec<T> = it.map(|x| x.parse().map_err(|_| bad("bad key value"))).collect::<Result<_, _>>()?;
            check_unit(&key)?;
            if !mem.content_index.insert(content.to_string()) {
                return Err(bad("duplicate content"));
            }
            mem.entries.push_back(Tip { content: content.to_string(), key, score, seq });
        }
        if mem.entries.len() != count {
            return Err(bad("truncated snapshot"));
        }
        Ok(mem)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_snapshot())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Self::from_snapshot(&std::fs::read_to_string(path)?)
    }
}

/// Pseudo-count store of visited states.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyStore<T> {
    entries: Vec<(Vec<T>, u64)>,
    threshold: T,
}

impl<T: Scalar> NoveltyStore<T> {
    pub fn new(threshold: T) -> Self {
        NoveltyStore { entries: Vec::new(), threshold }
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(_, c)| *c)
    }

    /// `1/n` for the visit count `n` of the nearest similar state, after
    /// counting this visit. A state with no neighbour at or above the
    /// threshold starts a new counter and earns 1.
    pub fn novelty_reward(&mut self, key: &[T]) -> T {
        let mut best: Option<(usize, T)> = None;
        for (i, (k, _)) in self.entries.iter().enumerate() {
            let sim = dot(key, k);
            if sim >= self.threshold && best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        match best {
            None => {
                self.entries.push((key.to_vec(), 1));
                T::one()
            }
            Some((i, _)) => {
                self.entries[i].1 += 1;
                T::one() / T::from_u64(self.entries[i].1).unwrap_or(T::infinity())
            }
        }
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    pub fn to_snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "empo-novelty 1");
        let _ = writeln!(s, "dim {KEY_DIM}");
        let _ = writeln!(s, "threshold {}", self.threshold);
        let _ = writeln!(s, "count {}", self.entries.len());
        for (k, c) in &self.entries {
            let _ = write!(s, "state {c}");
            for x in k {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self, MemoryError> {
        let bad = |m: &str| MemoryError::Snapshot(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("empo-novelty 1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String, MemoryError> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .map(|r| r.trim().to_string())
                .ok_or_else(|| MemoryError::Snapshot(format!("bad `{key}` line")))
        };
        let dim: usize = field("dim")?.parse().map_err(|_| bad("bad dim"))?;
        if dim != KEY_DIM {
            return Err(MemoryError::Dimension { got: dim, want: KEY_DIM });
        }
        let threshold: T = field("threshold")?.parse().map_err(|_| bad("bad threshold"))?;
        let count: usize = field("count")?.parse().map_err(|_| bad("bad count"))?;
        let mut store = NoveltyStore::new(threshold);
        for line in lines.take(count) {
            let mut it = line.split_whitespace();
            if it.next() != Some("state") {
                return Err(bad("expected `state`"));
            }
            let c: u64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad count"))?;
            let key: Vec<T> = it.map(|x| x.parse().map_err(|_| bad("bad key value"))).collect::<Result<_, _>>()?;
            check_unit(&key)?;
            store.entries.push((key, c));
        }
        if store.entries.len() != count {
            return Err(bad("truncated snapshot"));
        }
        Ok(store)
    }
}
