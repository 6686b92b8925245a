//! Configuration files and flag resolution.
//!
//! A configuration file is flat `key = value` text with optional section
//! headers. A command named `fit` reads keys from `[fit]`, then `[common]`,
//! then the lines before any header. Keys are the long flag names; `_` and
//! `-` are interchangeable. A flag given on the command line always wins.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

/// Environment variable consulted for the master seed when neither a flag
/// nor the configuration file sets one.
pub const SEED_ENV: &str = "ADDBART_SEED";

/// A failed run: exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn partial(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<addbart::Error> for Failure {
    fn from(e: addbart::Error) -> Self {
        // keep the diagnostic on one line
        Failure::usage(e.to_string().replace('\n', " "))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(format!("json error: {e}"))
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub struct FileConfig {
    ini: Option<Ini>,
    section: &'static str,
}

impl FileConfig {
    pub fn empty(section: &'static str) -> Self {
        Self { ini: None, section }
    }

    pub fn load(path: Option<&Path>, section: &'static str) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Self::empty(section));
        };
        let ini = Ini::load_from_file(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Ok(Self {
            ini: Some(ini),
            section,
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let ini = self.ini.as_ref()?;
        let alt = key.replace('-', "_");
        let sections = [Some(self.section), Some("common"), None];
        sections.iter().find_map(|s| {
            let props = ini.section(*s)?;
            props.get(key).or_else(|| props.get(&alt))
        })
    }

    /// Flag value if given, else the parsed file value.
    pub fn value<T>(&self, flag: Option<T>, key: &str) -> Outcome<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| Failure::usage(format!("config key `{key}` = `{s}`: {e}"))),
        }
    }

    pub fn value_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Outcome<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.value(flag, key)?.unwrap_or(default))
    }

    /// Boolean switches: on if the flag is present or the file says so.
    pub fn switch(&self, flag: bool, key: &str) -> Outcome<bool> {
        if flag {
            return Ok(true);
        }
        match self.raw(key).map(|s| s.trim().to_ascii_lowercase()) {
            None => Ok(false),
            Some(s) => match s.as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Failure::usage(format!("config key `{key}` = `{s}` is not a boolean"))),
            },
        }
    }

    /// Comma-separated lists.
    pub fn list<T>(&self, flag: Option<Vec<T>>, key: &str) -> Outcome<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        let Some(s) = self.raw(key) else {
            return Ok(None);
        };
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse()
                    .map_err(|e| Failure::usage(format!("config key `{key}` item `{p}`: {e}")))
            })
            .collect::<Outcome<Vec<T>>>()
            .map(Some)
    }

    /// Master seed: flag, file, then the environment, then zero.
    pub fn seed(&self, flag: Option<u64>) -> Outcome<u64> {
        if let Some(s) = self.value(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| Failure::usage(format!("{SEED_ENV} = `{v}`: {e}"))),
            Err(_) => Ok(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn section_then_common_then_general() {
        let f = write("trees = 10\n[common]\ntrees = 20\nburn = 5\n[fit]\ntrees = 30\n");
        let c = FileConfig::load(Some(f.path()), "fit").unwrap();
        assert_eq!(c.value::<usize>(None, "trees").unwrap(), Some(30));
        assert_eq!(c.value::<usize>(None, "burn").unwrap(), Some(5));
        assert_eq!(c.value::<usize>(Some(7), "trees").unwrap(), Some(7));
        let c = FileConfig::load(Some(f.path()), "compare").unwrap();
        assert_eq!(c.value::<usize>(None, "trees").unwrap(), Some(20));
    }

    #[test]
    fn lists_switches_and_underscores() {
        let f = write("[simulate]\ngamma = 0, 0.25,0.44\nospe = yes\nsplit_minus = a,b\n");
        let c = FileConfig::load(Some(f.path()), "simulate").unwrap();
        assert_eq!(c.list::<f64>(None, "gamma").unwrap(), Some(vec![0.0, 0.25, 0.44]));
        assert!(c.switch(false, "ospe").unwrap());
        assert!(!c.switch(false, "binary").unwrap());
        assert_eq!(
            c.list::<String>(None, "split-minus").unwrap(),
            Some(vec!["a".to_string(), "b".to_string()])
        );
    }

    #[test]
    fn bad_values_are_reported() {
        let f = write("trees = many\n");
        let c = FileConfig::load(Some(f.path()), "fit").unwrap();
        let e = c.value::<usize>(None, "trees").unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("trees"));
    }
}
