//! Flat `key = value` configuration files and their merge with flags.
//!
//! Keys are the long flag names; `_` and `-` are interchangeable and case is
//! ignored. Lines starting with `#` are comments. List values (`plant`) are
//! comma separated.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

pub const KNOWN_KEYS: &[&str] = &[
    "beta",
    "channels",
    "days",
    "dedup",
    "domain-size",
    "dummy",
    "eps-hh",
    "eps-olh",
    "exec",
    "export",
    "hubs",
    "input",
    "mean-daily",
    "meta",
    "noiseless",
    "olh-range",
    "output",
    "plant",
    "quiet-campaigns",
    "randomizer",
    "repeats",
    "rounds",
    "run",
    "seed",
    "start",
    "synth",
    "synth-seed",
    "tail-exponent",
    "tau",
    "threads",
    "users",
    "weekly-amplitude",
    "window",
    "wire",
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn normalize_key(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase().replace('_', "-");
    match k.as_str() {
        "t" => "rounds".to_string(),
        _ => k,
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", i + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}: expected key = value", at())))?;
        let key = normalize_key(k);
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("{}: unknown key {key:?}", at())));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("{}: duplicate key {key:?}", at())));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Resolves each setting from the command line, then the file, then the
/// default, and remembers the value that took effect.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Resolver {
            file,
            effective: BTreeMap::new(),
        }
    }

    fn from_file<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("key {key} = {raw:?}: {e}"))),
        }
    }

    pub fn get<T>(&mut self, key: &str, cli: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        let v = match cli {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn get_or<T>(&mut self, key: &str, cli: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.get(key, cli)?.unwrap_or(default);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn get_list<T>(&mut self, key: &str, cli: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = if !cli.is_empty() {
            cli
        } else {
            match self.file.get(key) {
                None => Vec::new(),
                Some(raw) => raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e| CliError::Config(format!("key {key} item {s:?}: {e}"))))
                    .collect::<Result<_, _>>()?,
            }
        };
        let shown: Vec<String> = v.iter().map(ToString::to_string).collect();
        self.effective.insert(key.to_string(), shown.join(","));
        Ok(v)
    }

    /// Record a value that has no flag of its own.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.effective
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes() {
        let m = parse_config("# run\nEPS_HH = 7\nT=2\n\nplant = 202:500:5, 303:150:2\n", "x").unwrap();
        assert_eq!(m["eps-hh"], "7");
        assert_eq!(m["rounds"], "2");
        assert_eq!(m["plant"], "202:500:5, 303:150:2");
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(parse_config("speed = 3\n", "x"), Err(CliError::Config(m)) if m.contains("x:1")));
        assert!(parse_config("tau = 1\ntau = 2\n", "x").is_err());
        assert!(parse_config("tau\n", "x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut r = Resolver::new(parse_config("tau = 151\neps-hh = 7\n", "x").unwrap());
        assert_eq!(r.get_or("tau", Some(161u32), 143).unwrap(), 161);
        assert_eq!(r.get_or("eps-hh", None, 8.8).unwrap(), 7.0);
        assert_eq!(r.get_or("beta", None, 0.751).unwrap(), 0.751);
        assert_eq!(r.effective()["tau"], "161");
        assert_eq!(r.effective()["beta"], "0.751");
    }

    #[test]
    fn bad_file_value_is_config_error() {
        let mut r = Resolver::new(parse_config("tau = many\n", "x").unwrap());
        assert!(matches!(r.get::<u32>("tau", None), Err(CliError::Config(_))));
    }
}
