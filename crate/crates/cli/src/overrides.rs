//! `--key value` flags layered over a TOML run configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use toml::{Table, Value};

use sparsesplat::io::config::RunConfig;

/// Splits `--key value` and `--key=value` tokens; dashes in keys become underscores.
pub fn parse_pairs(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            bail!("unexpected argument `{tok}`; configuration flags look like --key value");
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("flag --{flag} needs a value"))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Types a flag value after the key's default; keys without a default
/// (optional paths, the endpoint) are strings.
fn typed(defaults: &Table, key: &str, raw: &str) -> Result<Value> {
    let bad = || format!("invalid value `{raw}` for {key}");
    Ok(match defaults.get(key) {
        Some(Value::Float(_)) => Value::Float(raw.parse().with_context(bad)?),
        Some(Value::Integer(_)) => Value::Integer(raw.parse().with_context(bad)?),
        Some(Value::Boolean(_)) => Value::Boolean(raw.parse().with_context(bad)?),
        _ => Value::String(raw.to_string()),
    })
}

/// File, then environment endpoint, then flags; unknown keys are rejected.
pub fn merge(file: Option<&Path>, env_endpoint: Option<&str>, pairs: &[(String, String)]) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.parse::<Table>()
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => Table::new(),
    };
    if let Some(e) = env_endpoint {
        table.insert("prior_endpoint".into(), Value::String(e.into()));
    }
    let defaults = Table::try_from(RunConfig::default()).context("serializing defaults")?;
    for (key, raw) in pairs {
        table.insert(key.clone(), typed(&defaults, key, raw)?);
    }
    let cfg: RunConfig = Value::Table(table).try_into().context("invalid run configuration")?;
    Ok(cfg)
}
