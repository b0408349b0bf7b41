//! Run manifests: ordered `key=value` text.

use std::fmt::{self, Display};
use std::path::Path;

use super::IoError;

/// Key excluded from determinism comparisons.
pub const WALL_TIME_KEY: &str = "wall_time_s";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, prefix: &str, other: &Manifest) {
        for (k, v) in &other.entries {
            self.set(format!("{prefix}{k}"), v);
        }
    }

    /// Copy without wall-clock entries.
    pub fn without_timing(&self) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !(k == WALL_TIME_KEY || k.ends_with(".wall_time_s")))
                .cloned()
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Manifest, IoError> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IoError::Format(format!("manifest line {} has no '='", i + 1)))?;
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        super::csv::write_text(path, &self.to_string())
    }
}

impl Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_timing_filter() {
        let mut m = Manifest::new();
        m.set("gamma", 2.0);
        m.set("verdict.Sa", "strict_superset");
        m.set(WALL_TIME_KEY, 1.25);
        m.set("gamma", 5);
        let back = Manifest::parse(&m.to_string()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("gamma"), Some("5"));
        assert_eq!(m.without_timing().entries().len(), 2);
        assert!(Manifest::parse("novalue\n").is_err());
    }
}
