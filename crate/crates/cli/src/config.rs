//! Flat key=value experiment configuration with embedded defaults.
//!
//! A config file selects the experiment with `experiment = <kind>` and may
//! override any of that kind's keys; unknown keys are rejected with a
//! diagnostic naming the key, so typos cannot silently fall back to
//! defaults.

use std::collections::BTreeMap;

use ttopt_core::{Error, Result};

pub const KINDS: [&str; 6] = [
    "elliptic-1d",
    "elliptic-2d",
    "topopt",
    "mc-compare",
    "eps-sweep",
    "beta-sweep",
];

/// Ordered default key/value pairs of one experiment kind.
pub fn defaults(kind: &str) -> Result<Vec<(&'static str, String)>> {
    let common = |mut v: Vec<(&'static str, String)>| {
        v.push(("seed", "42".into()));
        v.push(("threads", "0".into()));
        v.push(("out", "out".into()));
        v
    };
    let s = |x: &str| x.to_string();
    match kind {
        "elliptic-1d" => Ok(common(vec![
            ("h", s("0.0009765625")), // 1/1024
            ("n", s("17")),
            ("alpha", s("1e-2")),
            ("beta", s("0")),
            ("eps", s("1e-5")),
            ("delta_tt", s("1e-5")),
            ("tol", s("1e-5")),
            ("max_iter", s("10000")),
            ("threshold", s("1e-4")),
        ])),
        "elliptic-2d" => Ok(common(vec![
            ("h", s("0.015625")), // 1/64
            ("n", s("5")),
            ("alpha", s("1e-2")),
            ("beta", s("0")),
            ("eps", s("1e-5")),
            ("delta_tt", s("1e-5")),
            ("tol", s("1e-5")),
            ("max_iter", s("10000")),
            ("threshold", s("1e-4")),
        ])),
        "beta-sweep" => Ok(common(vec![
            ("h", s("0.0009765625")),
            ("n", s("17")),
            ("alpha", s("1e-2")),
            ("betas", s("0,1e-2,1e-1,1")),
            ("eps", s("1e-5")),
            ("delta_tt", s("1e-5")),
            ("tol", s("1e-5")),
            ("max_iter", s("10000")),
            ("threshold", s("1e-4")),
        ])),
        "eps-sweep" => Ok(common(vec![
            ("h", s("0.001953125")), // 1/512
            ("n", s("33")),
            ("alpha", s("1e-2")),
            ("beta", s("1e-1")),
            ("eps_list", s("1e-1,1e-2")),
            ("eps_ref", s("1e-3")),
            ("delta_tt", s("1e-6")),
            ("tol", s("1e-6")),
            ("max_iter", s("20000")),
        ])),
        "mc-compare" => Ok(common(vec![
            ("h", s("0.0009765625")),
            ("n", s("17")),
            ("alpha", s("1e-2")),
            ("beta", s("1e-1")),
            ("eps", s("1e-2")),
            ("delta_tt", s("1e-5")),
            ("ref_tol", s("1e-8")),
            ("tt_tols", s("1e-5")),
            ("mc_tols", s("1e-5")),
            ("sample_sizes", s("1024,4096,16384")),
            ("max_iter", s("20000")),
        ])),
        "topopt" => Ok(common(vec![
            ("ny", s("25")),
            ("vbar", s("0.4")),
            ("eta", s("0.1")),
            ("tau", s("3e-3")),
            ("kappa", s("0")),
            ("kappa_step", s("2e-3")),
            ("beta", s("0")),
            ("eps", s("1e-3")),
            ("delta_tt", s("1e-2")),
            ("n", s("3")),
            ("iterations", s("5000")),
            ("stats_samples", s("32")),
            ("std_samples", s("1024")),
        ])),
        other => Err(Error::invalid(format!(
            "unknown experiment kind `{other}` (expected one of {})",
            KINDS.join(", ")
        ))),
    }
}

/// Render the default config of a kind as a parseable file.
pub fn print_defaults(kind: &str) -> Result<String> {
    let mut out = format!("experiment = {kind}\n");
    for (k, v) in defaults(kind)? {
        out.push_str(&format!("{k} = {v}\n"));
    }
    Ok(out)
}

/// A validated configuration: defaults merged with the file's overrides.
#[derive(Debug, Clone)]
pub struct Config {
    pub kind: String,
    map: BTreeMap<String, String>,
}

impl Config {
    /// Parse a config file body. Every key must belong to the selected
    /// experiment kind.
    pub fn parse(text: &str) -> Result<Config> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::invalid("config is missing the `experiment` key"))?;
        let mut map: BTreeMap<String, String> = defaults(&kind)?
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for (k, v) in pairs {
            if k == "experiment" {
                continue;
            }
            if !map.contains_key(&k) {
                return Err(Error::invalid(format!(
                    "unknown key `{k}` for experiment `{kind}`"
                )));
            }
            map.insert(k, v);
        }
        Ok(Config { kind, map })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    /// Whether the selected experiment kind defines this key.
    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn str(&self, key: &str) -> &str {
        self.map
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` missing from validated config"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::invalid(format!("key `{key}`: expected a number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.str(key)
            .parse()
            .map_err(|_| Error::invalid(format!("key `{key}`: expected a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::invalid(format!("key `{key}`: expected a non-negative integer")))
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>> {
        self.str(key)
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("key `{key}`: expected numbers")))
            })
            .collect()
    }

    pub fn list_usize(&self, key: &str) -> Result<Vec<usize>> {
        self.str(key)
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("key `{key}`: expected integers")))
            })
            .collect()
    }
}
