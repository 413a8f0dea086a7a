//! Config-file defaults and list/grid parsing.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use textdate::eval::parse_key_values;

use crate::CliError;

/// Values from a flat `key = value` file. Keys are long flag names without dashes
/// (`seed`, `methods`, `mp-h`, ...). Command-line flags take precedence.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let values = parse_key_values(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
            .into_iter()
            .collect();
        Ok(Settings { values })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Settings {
            values: pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, else the parsed config value.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key:?}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// A switch is on when the flag is set or the config says `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.get::<bool>(None, key)?.unwrap_or(false))
    }
}

/// Parses `a,b,c`; errors name `flag`.
pub fn parse_list<T: FromStr>(text: &str, flag: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<&str> = text.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(CliError::Usage(format!("{flag}: malformed list {text:?}")));
    }
    items
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse {s:?} in {text:?}")))
        })
        .collect()
}

/// Grid of values per `method.parameter`, e.g. `mp.h=4,8,16;qr.q=0.1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grids {
    entries: BTreeMap<String, String>,
}

pub const GRID_KEYS: [&str; 10] = [
    "knn.k", "knn.m", "knn.h", "mp.k", "mp.h", "mp.nu", "mp.degree", "qr.k", "qr.q", "qr.h",
];

impl Grids {
    /// Entries are separated by `;` or whitespace. Errors name the `--grids` flag.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for part in text.split(|c: char| c == ';' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let Some((key, values)) = part.split_once('=') else {
                return Err(CliError::Usage(format!("--grids: expected method.param=v1,v2, got {part:?}")));
            };
            if !GRID_KEYS.contains(&key) {
                return Err(CliError::Usage(format!(
                    "--grids: unknown parameter {key:?} (known: {})",
                    GRID_KEYS.join(", ")
                )));
            }
            if values.is_empty() || values.split(',').any(|v| v.trim().is_empty()) {
                return Err(CliError::Usage(format!("--grids: malformed values for {key}: {values:?}")));
            }
            entries.insert(key.to_string(), values.to_string());
        }
        Ok(Grids { entries })
    }

    pub fn list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(v, &format!("--grids {key}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config() {
        let s = Settings::from_pairs([("seed", "7"), ("strict", "true"), ("bad", "x")]);
        assert_eq!(s.get(Some(3u64), "seed").unwrap(), Some(3));
        assert_eq!(s.get::<u64>(None, "seed").unwrap(), Some(7));
        assert_eq!(s.get::<u64>(None, "missing").unwrap(), None);
        assert!(s.get::<u64>(None, "bad").is_err());
        assert!(s.switch(false, "strict").unwrap());
    }

    #[test]
    fn grid_parsing() {
        let g = Grids::parse("mp.h=4,8;  qr.q=0.1").unwrap();
        assert_eq!(g.list::<f64>("mp.h", &[]).unwrap(), vec![4.0, 8.0]);
        assert_eq!(g.list::<f64>("mp.nu", &[3.0]).unwrap(), vec![3.0]);
        for bad in ["mp.h", "mp.h=", "mp.h=4,,8", "zz.q=1"] {
            let e = Grids::parse(bad).unwrap_err();
            assert!(e.to_string().contains("--grids"), "{e}");
        }
        let e = Grids::parse("mp.h=four").unwrap().list::<f64>("mp.h", &[]).unwrap_err();
        assert!(e.to_string().contains("--grids"));
    }
}
