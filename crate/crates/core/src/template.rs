//! Prompt templates with `{name}` placeholders.
//!
//! Templates are data: the shipped defaults can be replaced by text files. Rendering
//! is a single pass, so placeholder-like text inside substituted values is left alone.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    /// Parses `text`. Braces that do not enclose an identifier are literal.
    pub fn parse(text: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(after[..close].to_string()));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        PromptTemplate {
            source: text.to_string(),
            segments,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Errors unless every name in `required` appears and nothing outside
    /// `required ∪ optional` does.
    pub fn check(&self, label: &str, required: &[&str], optional: &[&str]) -> Result<()> {
        let present = self.placeholders();
        let mut problems = Vec::new();
        for r in required {
            if !present.contains(r) {
                problems.push(format!("{label} template is missing `{{{r}}}`"));
            }
        }
        for p in &present {
            if !required.contains(p) && !optional.contains(p) {
                problems.push(format!("{label} template has unknown placeholder `{{{p}}}`"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.source.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| {
                            Error::InvalidArgument(format!("no value for placeholder `{{{name}}}`"))
                        })?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }

    /// Recovers placeholder values from a rendered prompt by matching literal
    /// segments left to right. Returns `None` if the prompt does not fit the template.
    /// Values must not contain the literal text that follows their slot.
    pub fn extract(&self, rendered: &str) -> Option<HashMap<String, String>> {
        let mut values = HashMap::new();
        let mut rest = rendered;
        let mut pending: Option<&str> = None;
        for seg in &self.segments {
            match seg {
                Segment::Literal(lit) => {
                    match pending.take() {
                        Some(name) => {
                            let at = rest.find(lit.as_str())?;
                            values.insert(name.to_string(), rest[..at].to_string());
                            rest = &rest[at + lit.len()..];
                        }
                        None => rest = rest.strip_prefix(lit.as_str())?,
                    }
                }
                Segment::Slot(name) => {
                    if pending.is_some() {
                        // adjacent slots are ambiguous
                        return None;
                    }
                    pending = Some(name);
                }
            }
        }
        match pending {
            Some(name) => {
                values.insert(name.to_string(), rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(values)
    }
}
