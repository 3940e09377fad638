//! Flat `key=value` documents: one pair per line, `#` starts a comment.
//! Every key must be known to the reader and may appear only once.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    File,
    Arguments,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Origin,
    /// 1-based line, or argument position.
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let place = match self.origin {
            Origin::File => "line",
            Origin::Arguments => "argument",
        };
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "{place} {l}, key `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "{place} {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key `{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Clone)]
pub struct ConfigDocument {
    origin: Origin,
    entries: Vec<Entry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::build(
            Origin::File,
            text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or(""))),
        )
    }

    /// `key=value` command-line arguments.
    pub fn from_args<S: AsRef<str>>(args: &[S]) -> Result<Self, ConfigError> {
        Self::build(Origin::Arguments, args.iter().enumerate().map(|(i, a)| (i + 1, a.as_ref())))
    }

    fn build<'a>(origin: Origin, lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Self, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        for (line, raw) in lines {
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let err = |key: Option<&str>, message: String| ConfigError {
                origin,
                line: Some(line),
                key: key.map(str::to_owned),
                message,
            };
            let Some((key, value)) = raw.split_once('=') else {
                return Err(err(None, format!("expected key=value, found `{raw}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !valid_key(key) {
                return Err(err(None, format!("`{key}` is not a valid key")));
            }
            if value.is_empty() {
                return Err(err(Some(key), "missing value".into()));
            }
            if let Some(first) = entries.iter().find(|e| e.key == key) {
                return Err(err(Some(key), format!("already set at {}", first.line)));
            }
            entries.push(Entry {
                key: key.to_owned(),
                value: value.to_owned(),
                line,
                used: false,
            });
        }
        Ok(Self { origin, entries })
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin,
            line: self.entries.iter().find(|e| e.key == key).map(|e| e.line),
            key: Some(key.to_owned()),
            message: message.into(),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|e| e.key == key)
    }

    /// The raw value of `key`, marking it consumed.
    pub fn raw(&mut self, key: &str) -> Option<String> {
        let e = self.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some(e.value.clone())
    }

    pub fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.error(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn parsed_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| ConfigError {
            origin: self.origin,
            line: None,
            key: Some(key.to_owned()),
            message: "required key is missing".into(),
        })
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().find(|e| !e.used) {
            None => Ok(()),
            Some(e) => Err(ConfigError {
                origin: self.origin,
                line: Some(e.line),
                key: Some(e.key),
                message: "unknown key".into(),
            }),
        }
    }
}

/// Inclusive `a..b`, or a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub fn is_range(&self) -> bool {
        self.start != self.end
    }

    pub fn values(&self) -> impl Iterator<Item = u64> {
        self.start..=self.end
    }
}

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
        match s.split_once("..") {
            None => {
                let v = num(s)?;
                Ok(Self { start: v, end: v })
            }
            Some((a, b)) => {
                let (start, end) = (num(a)?, num(b)?);
                if start > end {
                    return Err(format!("empty range {start}..{end}"));
                }
                Ok(Self { start, end })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let mut doc = ConfigDocument::parse("# header\n\nparties = 3  # inline\nmode=softmax\n").unwrap();
        assert_eq!(doc.parsed::<usize>("parties").unwrap(), Some(3));
        assert_eq!(doc.raw("mode").as_deref(), Some("softmax"));
        doc.finish().unwrap();
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = ConfigDocument::parse("a=1\nb=2\na=3\n").unwrap_err();
        assert_eq!(e.to_string(), "line 3, key `a`: already set at 1");
        let e = ConfigDocument::parse("ok=1\nnonsense\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = ConfigDocument::parse("a=\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("a"));

        let mut doc = ConfigDocument::parse("parties=3\npartys=4\n").unwrap();
        doc.parsed::<usize>("parties").unwrap();
        assert_eq!(doc.finish().unwrap_err().to_string(), "line 2, key `partys`: unknown key");

        let mut doc = ConfigDocument::parse("\nk=abc\n").unwrap();
        let e = doc.parsed::<usize>("k").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(2), Some("k")));

        let e = ConfigDocument::from_args(&["n=3", "k"]).unwrap_err();
        assert!(e.to_string().starts_with("argument 2:"));
    }

    #[test]
    fn spans() {
        assert_eq!("3".parse::<Span>().unwrap(), Span { start: 3, end: 3 });
        let s: Span = "2..10".parse().unwrap();
        assert!(s.is_range());
        assert_eq!(s.values().count(), 9);
        assert!("5..2".parse::<Span>().is_err());
        assert!("a..2".parse::<Span>().is_err());
    }
}
