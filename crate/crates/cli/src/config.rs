//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! experiment = spatial
//! seed = 7
//! out = results
//! format = csv
//!
//! [spatial]
//! theta = 1
//! n = 4
//! coefficients = geometric 1 2
//! ```
//!
//! Keys before the first section are global. Every section key must be one
//! of the keys the section declares; unknown keys and sections are errors.
//! Values are kept as text and typed on access. Defaults filled in during a
//! run are written back, so the stored config is the fully resolved one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use hierarchia::hiergroup::{CoefficientSequence, TailRule};

use crate::CliError;

pub const EXPERIMENTS: &[&str] = &["walk", "feller", "twolevel", "cascade", "genealogy", "spatial", "verify-all"];

const GLOBAL_KEYS: &[&str] = &["experiment", "seed", "out", "format"];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "walk" => &["n", "depth", "coefficients", "level_exponent", "boundary", "level", "paths"],
        "feller" => &["c", "x0", "t", "lambda", "replicates"],
        "twolevel" => &["c", "a", "eps", "burn_in", "spacing", "draws", "chains", "t_end", "step", "tail_k"],
        "cascade" => &["theta", "coefficients", "kind", "eps", "level", "j_max", "replicates", "top"],
        "genealogy" => &["theta", "coefficients", "level", "j_max", "delta", "replicates"],
        "spatial" => &["theta", "n", "depth", "coefficients", "mode", "burn_in", "spacing", "snapshots", "level", "replicates", "cap"],
        "verify" => &["criteria"],
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::Validation(format!("format must be csv or json, got `{s}`"))),
        }
    }
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Config {
    pub global: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        let mut current: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Validation(format!("line {}: {msg}", no + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| at("unterminated section header".into()))?.trim();
                if section_keys(name).is_none() {
                    return Err(at(format!("unknown section `[{name}]`")));
                }
                cfg.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match &current {
                None => {
                    if !GLOBAL_KEYS.contains(&k) {
                        return Err(at(format!("unknown key `{k}`")));
                    }
                    cfg.global.insert(k.into(), v.into());
                }
                Some(s) => {
                    if !section_keys(s).unwrap().contains(&k) {
                        return Err(at(format!("unknown key `{k}` in [{s}]")));
                    }
                    cfg.sections.get_mut(s).unwrap().insert(k.into(), v.into());
                }
            }
        }
        cfg.validate_globals()?;
        Ok(cfg)
    }

    fn validate_globals(&self) -> Result<(), CliError> {
        if let Some(e) = self.global.get("experiment") {
            if !EXPERIMENTS.contains(&e.as_str()) {
                return Err(CliError::Validation(format!("unknown experiment `{e}`")));
            }
        }
        if let Some(s) = self.global.get("seed") {
            parse_seed(s)?;
        }
        if let Some(f) = self.global.get("format") {
            Format::from_str(f)?;
        }
        Ok(())
    }

    /// Canonical text: globals in fixed order, then sections and keys sorted.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for k in GLOBAL_KEYS {
            if let Some(v) = self.global.get(*k) {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        for (name, kv) in &self.sections {
            let _ = writeln!(s, "\n[{name}]");
            for (k, v) in kv {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn experiment(&self) -> Option<&str> {
        self.global.get("experiment").map(String::as_str)
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        self.global.get("seed").map(|s| parse_seed(s)).transpose()
    }

    pub fn format(&self) -> Format {
        self.global.get("format").and_then(|f| f.parse().ok()).unwrap_or(Format::Csv)
    }

    /// Typed access to a section; defaults used are recorded in the config.
    pub fn section(&mut self, name: &str) -> Section<'_> {
        let map = self.sections.entry(name.to_string()).or_default();
        Section { name: name.to_string(), map }
    }
}

pub fn parse_seed(s: &str) -> Result<u64, CliError> {
    let t = s.trim();
    let v = if let Some(h) = t.strip_prefix("0x") { u64::from_str_radix(h, 16) } else { t.parse() };
    v.map_err(|_| CliError::Validation(format!("seed must be a 64-bit unsigned integer, got `{s}`")))
}

pub struct Section<'a> {
    name: String,
    map: &'a mut BTreeMap<String, String>,
}

impl Section<'_> {
    fn bad(&self, key: &str, why: impl std::fmt::Display) -> CliError {
        CliError::Validation(format!("[{}] {key}: {why}", self.name))
    }

    fn raw(&mut self, key: &str, default: Option<&str>) -> Result<String, CliError> {
        if let Some(v) = self.map.get(key) {
            return Ok(v.clone());
        }
        match default {
            Some(d) => {
                self.map.insert(key.into(), d.into());
                Ok(d.into())
            }
            None => Err(CliError::Validation(format!("missing required key `{key}` in [{}]", self.name))),
        }
    }

    fn typed<T: FromStr>(&mut self, key: &str, default: Option<&str>) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key, default)?;
        v.parse().map_err(|e| self.bad(key, format!("cannot parse `{v}`: {e}")))
    }

    pub fn f64_req(&mut self, key: &str) -> Result<f64, CliError> {
        self.typed(key, None)
    }

    pub fn f64(&mut self, key: &str, default: &str) -> Result<f64, CliError> {
        self.typed(key, Some(default))
    }

    pub fn positive(&mut self, key: &str, default: &str) -> Result<f64, CliError> {
        let v: f64 = self.typed(key, Some(default))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.bad(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn usize(&mut self, key: &str, default: &str) -> Result<usize, CliError> {
        self.typed(key, Some(default))
    }

    pub fn count(&mut self, key: &str, default: &str) -> Result<usize, CliError> {
        let v: usize = self.typed(key, Some(default))?;
        if v == 0 {
            return Err(self.bad(key, "must be at least 1"));
        }
        Ok(v)
    }

    pub fn u32(&mut self, key: &str, default: &str) -> Result<u32, CliError> {
        self.typed(key, Some(default))
    }

    pub fn opt_usize(&mut self, key: &str) -> Result<Option<usize>, CliError> {
        match self.map.get(key).cloned() {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.bad(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        self.raw(key, Some(default))
    }

    pub fn choice(&mut self, key: &str, default: &str, allowed: &[&str]) -> Result<String, CliError> {
        let v = self.raw(key, Some(default))?;
        if !allowed.contains(&v.as_str()) {
            return Err(self.bad(key, format!("must be one of {allowed:?}, got `{v}`")));
        }
        Ok(v)
    }

    pub fn f64_list(&mut self, key: &str, default: &str) -> Result<Vec<f64>, CliError> {
        let v = self.raw(key, Some(default))?;
        v.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| self.bad(key, format!("cannot parse `{p}`: {e}")))).collect()
    }

    pub fn coefficients(&mut self, key: &str, default: &str) -> Result<CoefficientSequence, CliError> {
        let v = self.raw(key, Some(default))?;
        parse_coefficients(&v).map_err(|e| self.bad(key, e))
    }
}

/// `geometric C B` or `explicit v1,v2,… [repeat | power P]`.
pub fn parse_coefficients(text: &str) -> Result<CoefficientSequence, String> {
    let mut parts = text.split_whitespace();
    let kind = parts.next().ok_or("empty coefficient list")?;
    let num = |s: Option<&str>| -> Result<f64, String> {
        let s = s.ok_or("missing number")?;
        s.parse().map_err(|_| format!("cannot parse `{s}`"))
    };
    let seq = match kind {
        "geometric" => {
            let c = num(parts.next())?;
            let b = num(parts.next())?;
            CoefficientSequence::geometric(c, b).map_err(|e| e.to_string())?
        }
        "explicit" => {
            let values = parts
                .next()
                .ok_or("missing value list")?
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| format!("cannot parse `{p}`")))
                .collect::<Result<Vec<_>, _>>()?;
            let tail = match parts.next() {
                None => None,
                Some("repeat") => Some(TailRule::RepeatLastRatio),
                Some("power") => Some(TailRule::PowerLaw { exponent: num(parts.next())? }),
                Some(o) => return Err(format!("unknown tail rule `{o}`")),
            };
            CoefficientSequence::explicit(values, tail).map_err(|e| e.to_string())?
        }
        o => return Err(format!("unknown coefficient kind `{o}`")),
    };
    if parts.next().is_some() {
        return Err("trailing tokens after the coefficients".into());
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# a comment
experiment = spatial
seed = 0x2a
format = json

[spatial]
theta = 1   # density
n = 4
coefficients = geometric 1 2
";

    #[test]
    fn parses_and_types() {
        let mut c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.experiment(), Some("spatial"));
        assert_eq!(c.seed().unwrap(), Some(42));
        assert_eq!(c.format(), Format::Json);
        let mut s = c.section("spatial");
        assert_eq!(s.f64_req("theta").unwrap(), 1.0);
        assert_eq!(s.u32("n", "2").unwrap(), 4);
        assert_eq!(s.usize("depth", "4").unwrap(), 4);
        assert_eq!(c.sections["spatial"]["depth"], "4");
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let e = Config::parse("[spatial]\nthetta = 1\n").unwrap_err();
        assert!(e.to_string().contains("thetta"));
        assert!(Config::parse("[nowhere]\n").is_err());
        assert!(Config::parse("colour = red\n").is_err());
        assert!(Config::parse("experiment = dance\n").is_err());
        assert!(Config::parse("seed = -3\n").is_err());
        assert!(Config::parse("[spatial]\njust text\n").is_err());
    }

    #[test]
    fn missing_theta_is_named() {
        let mut c = Config::parse("[cascade]\n").unwrap();
        let e = c.section("cascade").f64_req("theta").unwrap_err();
        assert!(e.to_string().contains("`theta`"), "{e}");
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = Config::parse(SAMPLE).unwrap();
        let once = c.serialize();
        let again = Config::parse(&once).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.serialize(), once);
    }

    #[test]
    fn coefficient_syntax() {
        assert_eq!(parse_coefficients("geometric 1 2").unwrap(), CoefficientSequence::geometric(1.0, 2.0).unwrap());
        assert!(matches!(
            parse_coefficients("explicit 1,2,4 repeat").unwrap(),
            CoefficientSequence::Explicit { tail: Some(TailRule::RepeatLastRatio), .. }
        ));
        assert!(matches!(
            parse_coefficients("explicit 1 power 1.5").unwrap(),
            CoefficientSequence::Explicit { tail: Some(TailRule::PowerLaw { .. }), .. }
        ));
        assert!(parse_coefficients("geometric 1").is_err());
        assert!(parse_coefficients("explicit 1,x").is_err());
        assert!(parse_coefficients("spiral 1 2").is_err());
    }
}
