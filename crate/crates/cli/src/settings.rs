//! Layering of defaults, `--config` files and flags.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use chd_core::config::KeyValues;

pub const SEED_ENV: &str = "CHD_SEED";

pub fn file(path: Option<&Path>) -> Result<KeyValues> {
    Ok(match path {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    })
}

/// `slot` takes the file value, then the flag value, when present.
pub fn layer<T: FromStr>(kv: &mut KeyValues, key: &str, flag: Option<T>, slot: &mut T) -> Result<()> {
    kv.take_into(key, slot)?;
    if let Some(v) = flag {
        *slot = v;
    }
    Ok(())
}

/// Like [`layer`] for settings without a default.
pub fn layer_opt<T: FromStr>(kv: &mut KeyValues, key: &str, flag: Option<T>) -> Result<Option<T>> {
    let from_file = kv.take(key)?;
    Ok(flag.or(from_file))
}

/// Boolean switches: the flag can only turn them on.
pub fn layer_switch(kv: &mut KeyValues, key: &str, flag: bool) -> Result<bool> {
    let from_file: Option<bool> = kv.take(key)?;
    Ok(flag || from_file.unwrap_or(false))
}

/// Flag, then file, then `CHD_SEED`, then 0.
pub fn seed(kv: &mut KeyValues, flag: Option<u64>) -> Result<u64> {
    if let Some(s) = layer_opt(kv, "seed", flag)? {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

pub fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v),
        None => bail!("missing required setting --{} (or `{}` in the config file)", name.replace('_', "-"), name),
    }
}

pub fn list<T: FromStr>(text: &str, name: &str) -> Result<Vec<T>> {
    let out: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok().with_context(|| format!("bad {name} entry {s:?}")))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        bail!("{name} list is empty");
    }
    Ok(out)
}
