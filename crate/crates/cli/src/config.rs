//! Config files (TOML) with dotted `key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

/// Recursively overlays `top` on `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a table"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Defaults, then the file, then the overrides, then deserialization with
/// unknown keys rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<(T, Table)> {
    let mut table = Table::try_from(defaults).context("serializing defaults")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let top: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, top);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let value: T = Value::Table(table.clone()).try_into().context("invalid configuration")?;
    // Re-serialize so the snapshot holds exactly what was used.
    let snapshot = Table::try_from(&value).context("serializing configuration")?;
    Ok((value, snapshot))
}

pub fn from_snapshot<T: DeserializeOwned>(text: &str) -> Result<T> {
    let table: Table = text.parse().context("parsing recorded configuration")?;
    Value::Table(table).try_into().context("invalid recorded configuration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        rate: f64,
        name: String,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        seed: u64,
        inner: Inner,
    }

    fn defaults() -> Outer {
        Outer {
            seed: 1,
            inner: Inner {
                rate: 0.5,
                name: "a".into(),
            },
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let (v, _) = resolve(&defaults(), None, &["inner.rate=2".into(), "inner.name=bee".into(), "seed=9".into()]).unwrap();
        assert_eq!(v.seed, 9);
        assert_eq!(v.inner.rate, 2.0);
        assert_eq!(v.inner.name, "bee");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(&defaults(), None, &["inner.bogus=1".into()]).is_err());
        assert!(resolve(&defaults(), None, &["noequals".into()]).is_err());
        assert!(resolve(&defaults(), None, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn file_layers_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[inner]\nrate = 0.25\n").unwrap();
        let (v, snap) = resolve(&defaults(), Some(&p), &[]).unwrap();
        assert_eq!(v.inner.rate, 0.25);
        assert_eq!(v.inner.name, "a");
        let back: Outer = from_snapshot(&snap.to_string()).unwrap();
        assert_eq!(back, v);
    }
}
