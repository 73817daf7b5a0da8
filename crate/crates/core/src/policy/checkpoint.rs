//! Plain-text policy checkpoint.
//!
//! ```text
//! empo-policy 1
//! salt 5eede4b020250001
//! d_base 512
//! d_tip 512
//! version 17
//! w <d_base values>
//! v <d_tip values>
//! ```
//! Values are written with shortest round-trip formatting, so decoding
//! reproduces the saved floats bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{PolicyError, PolicyParams};
use crate::hashing::FEATURE_SALT;
use crate::scalar::Scalar;

const MAGIC: &str = "empo-policy 1";

pub fn write_params<T: Scalar>(p: &PolicyParams<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "salt {FEATURE_SALT:016x}");
    let _ = writeln!(s, "d_base {}", p.w.len());
    let _ = writeln!(s, "d_tip {}", p.v.len());
    let _ = writeln!(s, "version {}", p.version);
    for (name, vals) in [("w", &p.w), ("v", &p.v)] {
        s.push_str(name);
        for x in vals.iter() {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    s
}

fn bad(msg: impl Into<String>) -> PolicyError {
    PolicyError::Checkpoint(msg.into())
}

pub fn read_params<T: Scalar>(text: &str) -> Result<PolicyParams<T>, PolicyError> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header"));
    }
    let mut field = |key: &str| -> Result<String, PolicyError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected `{key}`")))
    };
    let salt = u64::from_str_radix(&field("salt")?, 16).map_err(|_| bad("bad salt"))?;
    if salt != FEATURE_SALT {
        return Err(bad(format!("feature salt {salt:016x} does not match {FEATURE_SALT:016x}")));
    }
    let d_base: usize = field("d_base")?.parse().map_err(|_| bad("bad d_base"))?;
    let d_tip: usize = field("d_tip")?.parse().map_err(|_| bad("bad d_tip"))?;
    let version: u64 = field("version")?.parse().map_err(|_| bad("bad version"))?;
    let parse_vec = |s: String, n: usize, name: &str| -> Result<Vec<T>, PolicyError> {
        let v: Vec<T> = s
            .split_whitespace()
            .map(|x| x.parse::<T>().map_err(|_| bad(format!("bad value `{x}` in {name}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != n {
            return Err(bad(format!("{name} has {} values, expected {n}", v.len())));
        }
        Ok(v)
    };
    let w = parse_vec(field("w")?, d_base, "w")?;
    let v = parse_vec(field("v")?, d_tip, "v")?;
    let p = PolicyParams { w, v, version };
    if !p.is_finite() {
        return Err(bad("non-finite weights"));
    }
    Ok(p)
}

pub fn save_params<T: Scalar>(p: &PolicyParams<T>, path: &Path) -> Result<(), PolicyError> {
    std::fs::write(path, write_params(p))?;
    Ok(())
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<PolicyParams<T>, PolicyError> {
    read_params(&std::fs::read_to_string(path)?)
}
