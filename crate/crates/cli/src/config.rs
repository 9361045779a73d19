//! Plain-text `key = value` benchmark configuration.
//!
//! One key per line, lists comma-separated, `#` starts a comment. Keys not
//! given keep the values of the full published grid at the given `n`.
//!
//! ```text
//! n = 500
//! replications = 100
//! bandwidths = 0.05, 0.10, 0.15, 0.20, 0.25, n^-0.3
//! c_gamma = 0.1, 0.3, 1, 3
//! estimators = static, robbins_monro, averaged
//! master_seed = 42
//! ```

use std::collections::BTreeMap;

use geomed::bench::{BandwidthSpec, Estimator, TableExperimentConfig};

use crate::CliError;

const KEYS: &[&str] = &[
    "n",
    "d",
    "replications",
    "bandwidths",
    "c_gamma",
    "estimators",
    "gamma_exponent",
    "decaying_gamma_exponent",
    "restarts",
    "master_seed",
    "x",
    "kernel",
    "norm",
];

pub fn parse_config(text: &str) -> Result<TableExperimentConfig, CliError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(i, format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(bad(i, format!("unknown key `{key}`")));
        }
        if entries.insert(key.to_string(), (i, value.trim().to_string())).is_some() {
            return Err(bad(i, format!("duplicate key `{key}`")));
        }
    }

    let n = match entries.get("n") {
        Some((i, v)) => num::<usize>(*i, v)?,
        None => return Err(CliError::Input("config: `n` is required".into())),
    };
    let mut cfg = TableExperimentConfig::published_grid(n);
    for (key, (i, v)) in &entries {
        let i = *i;
        match key.as_str() {
            "n" => {}
            "d" => cfg.d = num(i, v)?,
            "replications" => cfg.replications = num(i, v)?,
            "restarts" => cfg.restarts = num(i, v)?,
            "master_seed" => cfg.master_seed = num(i, v)?,
            "x" => cfg.x = num(i, v)?,
            "gamma_exponent" => cfg.gamma_exponent = num(i, v)?,
            "decaying_gamma_exponent" => cfg.decaying_gamma_exponent = num(i, v)?,
            "c_gamma" => cfg.c_gamma_values = list(v).map(|s| num(i, s)).collect::<Result<_, _>>()?,
            "bandwidths" => {
                cfg.bandwidths = list(v).map(|s| bandwidth(i, s)).collect::<Result<_, _>>()?
            }
            "estimators" => {
                cfg.estimators = list(v)
                    .map(|s| Estimator::parse(s).map_err(|e| bad(i, e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "kernel" => cfg.kernel = v.parse().map_err(|e: geomed::Error| bad(i, e.to_string()))?,
            "norm" => cfg.norm = v.parse().map_err(|e: geomed::Error| bad(i, e.to_string()))?,
            _ => unreachable!("keys are checked above"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bad(line: usize, msg: String) -> CliError {
    CliError::Input(format!("config line {}: {msg}", line + 1))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn num<T: std::str::FromStr>(line: usize, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| bad(line, format!("cannot parse `{v}`")))
}

/// `0.15`, `n^-0.3` or `2*n^-0.3`.
fn bandwidth(line: usize, token: &str) -> Result<BandwidthSpec, CliError> {
    if let Some(pos) = token.find("n^-") {
        let exponent = num(line, &token[pos + 3..])?;
        let prefix = token[..pos].trim().trim_end_matches('*').trim();
        let c_h = if prefix.is_empty() { 1.0 } else { num(line, prefix)? };
        Ok(BandwidthSpec::Decaying { c_h, exponent })
    } else {
        Ok(BandwidthSpec::Fixed(num(line, token)?))
    }
}
