//! Metrics JSON-lines to long-format CSV: `iteration,series,value`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};

use anyhow::{bail, Context as _, Result};
use serde_json::Value;

use crate::manifest::{resolve_out, RunManifest};
use crate::ExportArgs;

/// One CSV row per numeric or boolean field per record; absent values are skipped.
pub fn to_rows(line: &str) -> Result<Vec<(u64, String, f64)>> {
    let v: Value = serde_json::from_str(line)?;
    let Some(obj) = v.as_object() else { bail!("metrics line is not an object") };
    let Some(it) = obj.get("iteration").and_then(Value::as_u64) else { bail!("metrics line lacks an iteration") };
    let mut rows = Vec::new();
    for (k, x) in obj {
        if k == "iteration" {
            continue;
        }
        let val = match x {
            Value::Number(n) => n.as_f64(),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        };
        if let Some(val) = val {
            if !val.is_finite() {
                bail!("non-finite {k} at iteration {it}");
            }
            rows.push((it, k.clone(), val));
        }
    }
    Ok(rows)
}

pub fn export(args: ExportArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    let mut manifest = RunManifest::new("export").output("csv", "metrics.csv");
    manifest.config.insert("export.metrics".into(), args.metrics.display().to_string());
    manifest.write(&out)?;
    let input = File::open(&args.metrics).with_context(|| format!("opening {}", args.metrics.display()))?;
    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(csv, "iteration,series,value")?;
    let mut n = 0;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for (it, series, v) in to_rows(&line).with_context(|| format!("{} line {}", args.metrics.display(), i + 1))? {
            writeln!(csv, "{it},{series},{v}")?;
            n += 1;
        }
    }
    csv.flush()?;
    println!("wrote {n} rows to {}", out.join("metrics.csv").display());
    Ok(())
}
