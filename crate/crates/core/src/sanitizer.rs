//! Regex replacement rules applied to saved and computed output text before
//! they are compared.
//!
//! The configuration file is INI-like:
//!
//! ```text
//! # blank lines and comments are ignored
//! [timestamps]
//! regex: \d{2}:\d{2}:\d{2}
//! replace: TIMESTAMP
//! ```
//!
//! Every section contributes one rule. Rules run in file order and each one
//! replaces all non-overlapping matches; replacements are literal text.

use regex::{NoExpand, Regex};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SanitizerError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("section [{label}] (line {line}): missing `{key}:` entry")]
    MissingKey {
        label: String,
        line: usize,
        key: &'static str,
    },
    #[error("section [{label}] (line {line}): invalid regex: {message}")]
    InvalidPattern {
        label: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct SanitizerRule {
    pub label: String,
    pub pattern: Regex,
    pub replacement: String,
}

impl SanitizerRule {
    pub fn new(
        label: impl Into<String>,
        pattern: &str,
        replacement: impl Into<String>,
    ) -> Result<Self, regex::Error> {
        Ok(Self {
            label: label.into(),
            pattern: Regex::new(pattern)?,
            replacement: replacement.into(),
        })
    }
}

impl PartialEq for SanitizerRule {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.pattern.as_str() == other.pattern.as_str()
            && self.replacement == other.replacement
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SanitizerConfig {
    pub rules: Vec<SanitizerRule>,
}

impl SanitizerConfig {
    pub fn new(rules: Vec<SanitizerRule>) -> Self {
        Self { rules }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Runs every rule over `text` in order; later rules see earlier output.
    pub fn apply(&self, text: &str) -> String {
        let mut current = text.to_owned();
        for rule in &self.rules {
            if let std::borrow::Cow::Owned(replaced) = rule
                .pattern
                .replace_all(&current, NoExpand(&rule.replacement))
            {
                current = replaced;
            }
        }
        current
    }
}

struct PendingSection {
    label: String,
    line: usize,
    regex: Option<(String, usize)>,
    replace: Option<String>,
}

impl PendingSection {
    fn finish(self) -> Result<SanitizerRule, SanitizerError> {
        let Some((pattern, pattern_line)) = self.regex else {
            return Err(SanitizerError::MissingKey {
                label: self.label,
                line: self.line,
                key: "regex",
            });
        };
        let Some(replacement) = self.replace else {
            return Err(SanitizerError::MissingKey {
                label: self.label,
                line: self.line,
                key: "replace",
            });
        };
        let compiled = Regex::new(&pattern).map_err(|e| SanitizerError::InvalidPattern {
            label: self.label.clone(),
            line: pattern_line,
            message: e.to_string(),
        })?;
        Ok(SanitizerRule {
            label: self.label,
            pattern: compiled,
            replacement,
        })
    }
}

pub fn parse_sanitizer_file(text: &str) -> Result<SanitizerConfig, SanitizerError> {
    let mut rules = Vec::new();
    let mut section: Option<PendingSection> = None;

    for (offset, raw_line) in text.lines().enumerate() {
        let line_no = offset + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let label = header
                .strip_suffix(']')
                .ok_or_else(|| SanitizerError::Syntax {
                    line: line_no,
                    message: format!("unterminated section header {line:?}"),
                })?
                .trim();
            if let Some(done) = section.take() {
                rules.push(done.finish()?);
            }
            section = Some(PendingSection {
                label: label.to_owned(),
                line: line_no,
                regex: None,
                replace: None,
            });
            continue;
        }

        let Some(current) = section.as_mut() else {
            return Err(SanitizerError::Syntax {
                line: line_no,
                message: "entry outside of a [section]".into(),
            });
        };
        let Some(split) = line.find([':', '=']) else {
            return Err(SanitizerError::Syntax {
                line: line_no,
                message: format!("expected `key: value`, found {line:?}"),
            });
        };
        let key = line[..split].trim();
        let value = line[split + 1..].trim();
        let duplicate = || SanitizerError::Syntax {
            line: line_no,
            message: format!("duplicate `{key}` in section [{}]", current.label),
        };
        match key {
            "regex" => {
                if current.regex.is_some() {
                    return Err(duplicate());
                }
                current.regex = Some((value.to_owned(), line_no));
            }
            "replace" => {
                if current.replace.is_some() {
                    return Err(duplicate());
                }
                current.replace = Some(value.to_owned());
            }
            other => {
                return Err(SanitizerError::Syntax {
                    line: line_no,
                    message: format!("unknown key `{other}` in section [{}]", current.label),
                })
            }
        }
    }
    if let Some(done) = section {
        rules.push(done.finish()?);
    }
    Ok(SanitizerConfig { rules })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIMESTAMPS: &str = "[timestamps]\nregex: \\d{2}:\\d{2}:\\d{2}\nreplace: TIMESTAMP\n";

    #[test]
    fn parses_one_rule() {
        let config = parse_sanitizer_file(TIMESTAMPS).unwrap();
        assert_eq!(config.rules.len(), 1);
        assert_eq!(config.rules[0].label, "timestamps");
        assert_eq!(config.rules[0].pattern.as_str(), r"\d{2}:\d{2}:\d{2}");
        assert_eq!(config.rules[0].replacement, "TIMESTAMP");
    }

    #[test]
    fn empty_and_comment_only_files() {
        assert!(parse_sanitizer_file("").unwrap().is_empty());
        assert!(parse_sanitizer_file("\n# nothing\n; here\n\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn replaces_every_match() {
        let config = parse_sanitizer_file(TIMESTAMPS).unwrap();
        assert_eq!(config.apply("16:44:06"), "TIMESTAMP");
        assert_eq!(
            config.apply("at 16:44:06 and 17:01:02"),
            "at TIMESTAMP and TIMESTAMP"
        );
        assert_eq!(config.apply("no clock here"), "no clock here");
    }

    #[test]
    fn replacement_is_literal() {
        let config = SanitizerConfig::new(vec![SanitizerRule::new("d", r"(\d+)", "$1-N").unwrap()]);
        assert_eq!(config.apply("a 12 b"), "a $1-N b");
    }

    #[test]
    fn rules_run_in_order() {
        let text = "[a]\nregex: cat\nreplace: dog\n[b]\nregex: dog\nreplace: bird\n";
        assert_eq!(parse_sanitizer_file(text).unwrap().apply("cat"), "bird");
        let swapped = "[b]\nregex: dog\nreplace: bird\n[a]\nregex: cat\nreplace: dog\n";
        assert_eq!(parse_sanitizer_file(swapped).unwrap().apply("cat"), "dog");
    }

    #[test]
    fn empty_replacement_deletes() {
        let config = parse_sanitizer_file("[x]\nregex = \\s+$\nreplace =\n").unwrap();
        assert_eq!(config.apply("abc   "), "abc");
    }

    #[test]
    fn invalid_pattern_names_section() {
        let err = parse_sanitizer_file("\n[broken]\nregex: [unclosed\nreplace: X\n").unwrap_err();
        match &err {
            SanitizerError::InvalidPattern { label, line, .. } => {
                assert_eq!(label, "broken");
                assert_eq!(*line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("[broken]"));
    }

    #[test]
    fn missing_keys() {
        let err = parse_sanitizer_file("[only-regex]\nregex: a\n").unwrap_err();
        assert_eq!(
            err,
            SanitizerError::MissingKey {
                label: "only-regex".into(),
                line: 1,
                key: "replace"
            }
        );
        let err = parse_sanitizer_file("[a]\nreplace: b\n[c]\nregex: d\nreplace: e").unwrap_err();
        assert!(matches!(
            err,
            SanitizerError::MissingKey { key: "regex", .. }
        ));
    }

    #[test]
    fn syntax_errors() {
        for text in [
            "regex: a\n",
            "[a\nregex: b\nreplace: c",
            "[a]\njust words\n",
            "[a]\nregex: b\nregex: c\nreplace: d",
            "[a]\nflags: i\n",
        ] {
            assert!(
                matches!(
                    parse_sanitizer_file(text),
                    Err(SanitizerError::Syntax { .. })
                ),
                "{text}"
            );
        }
    }
}
