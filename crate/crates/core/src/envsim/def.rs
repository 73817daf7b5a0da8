//! Parser for the plain-text environment definition files.
//!
//! See `ENV_FORMAT.md` at the repository root for the grammar.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::EnvError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bound {
    Fixed(usize),
    /// Room chosen for an earlier object.
    Object(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Not placed at layout time; only appears as a combine product.
    Unplaced,
    Range(Bound, Bound),
}

#[derive(Debug, Clone)]
pub struct ObjectDef {
    pub id: String,
    pub placement: Placement,
    pub focusable: bool,
    pub takeable: bool,
    /// Display tokens, possibly containing `{cN}` palette slots.
    pub name: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CombineDef {
    pub verb: String,
    pub held: usize,
    pub prep: String,
    pub other: usize,
    pub product: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    See(usize),
    Take(usize),
    Focus(usize),
    Combine(usize),
    Reach(usize),
}

#[derive(Debug, Clone)]
pub struct MilestoneDef {
    pub reward: f64,
    pub event: Event,
    pub after: Option<Event>,
}

/// A parsed environment family.
#[derive(Debug, Clone)]
pub struct EnvDef {
    pub family: String,
    pub version: u32,
    pub variants: u64,
    pub max_steps: usize,
    pub rooms: usize,
    pub room_names: Vec<String>,
    pub look: Vec<String>,
    /// Without `move back`.
    pub oneway: bool,
    pub palette: Vec<String>,
    pub task: Vec<String>,
    pub objects: Vec<ObjectDef>,
    pub combines: Vec<CombineDef>,
    pub milestones: Vec<MilestoneDef>,
    pub penalty: f64,
    /// Hex SHA-256 of the source text.
    pub checksum: String,
}

fn perr(line: usize, msg: impl Into<String>) -> EnvError {
    EnvError::Parse { line, msg: msg.into() }
}

impl EnvDef {
    pub fn parse(text: &str) -> Result<EnvDef, EnvError> {
        let checksum = hex::encode(Sha256::digest(text.as_bytes()));
        let mut family = None;
        let mut version = 1;
        let mut variants = None;
        let mut max_steps = 30;
        let mut rooms = None;
        let mut room_names = Vec::new();
        let mut look = vec!["look".to_string(), "around".to_string()];
        let mut oneway = false;
        let mut palette = Vec::new();
        let mut task = Vec::new();
        let mut objects: Vec<ObjectDef> = Vec::new();
        let mut combines: Vec<CombineDef> = Vec::new();
        let mut milestones = Vec::new();
        let mut penalty = -100.0;
        let mut object_ix: HashMap<String, usize> = HashMap::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let rest = &words[1..];
            let num = |s: &str| -> Result<u64, EnvError> {
                s.parse::<u64>().map_err(|_| perr(line_no, format!("expected integer, got `{s}`")))
            };
            match words[0] {
                "family" => family = Some(one(rest, line_no)?.to_string()),
                "version" => version = num(one(rest, line_no)?)? as u32,
                "variants" => variants = Some(num(one(rest, line_no)?)?),
                "max_steps" => max_steps = num(one(rest, line_no)?)? as usize,
                "rooms" => rooms = Some(num(one(rest, line_no)?)? as usize),
                "room_names" => room_names = owned(rest),
                "look" => look = owned(rest),
                "oneway" if rest.is_empty() => oneway = true,
                "palette" => palette = owned(rest),
                "task" => task = owned(rest),
                "penalty" => {
                    penalty = one(rest, line_no)?
                        .parse::<f64>()
                        .map_err(|_| perr(line_no, "bad penalty"))?
                }
                "object" => {
                    // object <id> <placement> <flags> : <name tokens>
                    let colon = rest
                        .iter()
                        .position(|w| *w == ":")
                        .ok_or_else(|| perr(line_no, "object line needs `:`"))?;
                    if colon != 3 || colon + 1 >= rest.len() {
                        return Err(perr(line_no, "expected `object <id> <room> <flags> : <name>`"));
                    }
                    let id = rest[0].to_string();
                    if object_ix.contains_key(&id) {
                        return Err(perr(line_no, format!("duplicate object `{id}`")));
                    }
                    let placement = parse_placement(rest[1], &object_ix, line_no)?;
                    let flags = rest[2];
                    let mut focusable = false;
                    let mut takeable = false;
                    for f in flags.split(',') {
                        match f {
                            "focus" => focusable = true,
                            "take" => takeable = true,
                            "-" => {}
                            other => return Err(perr(line_no, format!("unknown flag `{other}`"))),
                        }
                    }
                    object_ix.insert(id.clone(), objects.len());
                    objects.push(ObjectDef { id, placement, focusable, takeable, name: owned(&rest[colon + 1..]) });
                }
                "combine" => {
                    // combine <verb> <held> <prep> <other> [-> <product>]
                    if rest.len() != 4 && !(rest.len() == 6 && rest[4] == "->") {
                        return Err(perr(line_no, "expected `combine <verb> <a> <prep> <b> [-> <product>]`"));
                    }
                    let obj = |s: &str| {
                        object_ix.get(s).copied().ok_or_else(|| perr(line_no, format!("unknown object `{s}`")))
                    };
                    let product = if rest.len() == 6 { Some(obj(rest[5])?) } else { None };
                    combines.push(CombineDef {
                        verb: rest[0].to_string(),
                        held: obj(rest[1])?,
                        prep: rest[2].to_string(),
                        other: obj(rest[3])?,
                        product,
                    });
                }
                "milestone" => {
                    // milestone <reward> <event> [after <event>]
                    if rest.len() < 3 {
                        return Err(perr(line_no, "milestone needs reward and event"));
                    }
                    let reward = rest[0].parse::<f64>().map_err(|_| perr(line_no, "bad reward"))?;
                    let event = parse_event(&rest[1..3], &object_ix, &combines, line_no)?;
                    let after = match rest.get(3) {
                        None => None,
                        Some(&"after") if rest.len() == 6 => {
                            Some(parse_event(&rest[4..6], &object_ix, &combines, line_no)?)
                        }
                        _ => return Err(perr(line_no, "expected `after <kind> <target>`")),
                    };
                    milestones.push(MilestoneDef { reward, event, after });
                }
                other => return Err(perr(line_no, format!("unknown directive `{other}`"))),
            }
        }

        let family = family.ok_or_else(|| perr(0, "missing `family`"))?;
        let variants = variants.ok_or_else(|| perr(0, "missing `variants`"))?;
        let rooms = rooms.ok_or_else(|| perr(0, "missing `rooms`"))?;
        if rooms == 0 || room_names.len() < rooms {
            return Err(perr(0, "need at least `rooms` room names"));
        }
        if milestones.is_empty() || milestones.len() > 32 {
            return Err(perr(0, "between 1 and 32 milestones required"));
        }
        let total: f64 = milestones.iter().map(|m| m.reward).sum();
        if (total - 100.0).abs() > 1e-9 {
            return Err(perr(0, format!("milestone rewards sum to {total}, expected 100")));
        }
        if !(-100.0..=0.0).contains(&penalty) {
            return Err(perr(0, "penalty must lie in [-100, 0]"));
        }
        let max_slot = objects
            .iter()
            .flat_map(|o| o.name.iter())
            .chain(task.iter())
            .filter_map(|t| palette_slot(t))
            .max();
        if let Some(slot) = max_slot {
            if slot >= palette.len() {
                return Err(perr(0, format!("palette slot c{slot} exceeds palette size")));
            }
        }
        for o in &objects {
            if let Placement::Range(lo, hi) = &o.placement {
                for b in [lo, hi] {
                    if let Bound::Fixed(r) = b {
                        if *r >= rooms {
                            return Err(perr(0, format!("object `{}` placed outside the corridor", o.id)));
                        }
                    }
                }
            }
        }
        for m in &milestones {
            if let Event::Reach(r) = m.event {
                if r >= rooms {
                    return Err(perr(0, "reach milestone outside the corridor"));
                }
            }
        }

        Ok(EnvDef {
            family,
            version,
            variants,
            max_steps,
            rooms,
            room_names,
            look,
            oneway,
            palette,
            task,
            objects,
            combines,
            milestones,
            penalty,
            checksum,
        })
    }
}

/// Returns `N` for a token of the form `{cN}`.
pub(crate) fn palette_slot(tok: &str) -> Option<usize> {
    tok.strip_prefix("{c")?.strip_suffix('}')?.parse().ok()
}

fn one<'a>(rest: &[&'a str], line: usize) -> Result<&'a str, EnvError> {
    match rest {
        [x] => Ok(x),
        _ => Err(perr(line, "expected exactly one value")),
    }
}

fn owned(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn parse_bound(s: &str, objs: &HashMap<String, usize>, line: usize) -> Result<Bound, EnvError> {
    if let Some(id) = s.strip_prefix('@') {
        return objs
            .get(id)
            .map(|&i| Bound::Object(i))
            .ok_or_else(|| perr(line, format!("unknown object reference `{s}`")));
    }
    s.parse().map(Bound::Fixed).map_err(|_| perr(line, format!("bad room bound `{s}`")))
}

fn parse_placement(s: &str, objs: &HashMap<String, usize>, line: usize) -> Result<Placement, EnvError> {
    if s == "-" {
        return Ok(Placement::Unplaced);
    }
    let (lo, hi) = s.split_once("..").unwrap_or((s, s));
    Ok(Placement::Range(parse_bound(lo, objs, line)?, parse_bound(hi, objs, line)?))
}

fn parse_event(
    ws: &[&str],
    objs: &HashMap<String, usize>,
    combines: &[CombineDef],
    line: usize,
) -> Result<Event, EnvError> {
    let obj = |s: &str| objs.get(s).copied().ok_or_else(|| perr(line, format!("unknown object `{s}`")));
    match ws[0] {
        "see" => Ok(Event::See(obj(ws[1])?)),
        "take" => Ok(Event::Take(obj(ws[1])?)),
        "focus" => Ok(Event::Focus(obj(ws[1])?)),
        "reach" => ws[1].parse().map(Event::Reach).map_err(|_| perr(line, "bad room index")),
        "combine" => combines
            .iter()
            .position(|c| c.verb == ws[1])
            .map(Event::Combine)
            .ok_or_else(|| perr(line, format!("unknown combine verb `{}`", ws[1]))),
        other => Err(perr(line, format!("unknown event `{other}`"))),
    }
}
