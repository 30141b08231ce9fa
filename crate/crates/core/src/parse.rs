//! Splitting of `Name(arg, arg, ...)` configuration strings.

use crate::error::{Error, Result};

/// A parsed `Name(arg1, arg2)` term. A bare `Name` has no arguments.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Term<'a> {
    pub name: &'a str,
    pub args: Vec<&'a str>,
}

pub(crate) fn term(text: &str) -> Result<Term<'_>> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        if text.is_empty() || text.contains(')') {
            return Err(Error::Config(format!("malformed term '{text}'")));
        }
        return Ok(Term { name: text, args: Vec::new() });
    };
    if !text.ends_with(')') {
        return Err(Error::Config(format!("missing ')' in '{text}'")));
    }
    let name = text[..open].trim();
    let inner = text[open + 1..text.len() - 1].trim();
    if name.is_empty() {
        return Err(Error::Config(format!("missing name in '{text}'")));
    }
    let args = if inner.is_empty() { Vec::new() } else { split_top_level(inner, ',') };
    Ok(Term { name, args })
}

/// Splits on `sep` outside of parentheses.
pub(crate) fn split_top_level(text: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                parts.push(text[start..i].trim());
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(text[start..].trim());
    parts
}

impl Term<'_> {
    pub fn is(&self, name: &str) -> bool {
        self.name.eq_ignore_ascii_case(name)
    }

    pub fn expect_args(&self, range: std::ops::RangeInclusive<usize>) -> Result<()> {
        if !range.contains(&self.args.len()) {
            return Err(Error::Config(format!(
                "{} expects {} argument(s), got {}",
                self.name,
                if range.start() == range.end() {
                    range.start().to_string()
                } else {
                    format!("{}..={}", range.start(), range.end())
                },
                self.args.len()
            )));
        }
        Ok(())
    }

    pub fn real(&self, index: usize) -> Result<f64> {
        let raw = self.args[index];
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("{}: '{raw}' is not a real number", self.name)))
    }

    pub fn count(&self, index: usize) -> Result<usize> {
        let raw = self.args[index];
        raw.parse::<usize>().map_err(|_| Error::Config(format!("{}: '{raw}' is not a count", self.name)))
    }
}

/// Shortest decimal text that parses back to exactly `v`.
pub(crate) fn real_text(v: f64) -> String {
    format!("{v}")
}
