//! Line-oriented `key = value` documents with `[section]` headers.
//!
//! Comments start with `#`. Every key a reader does not consume is an
//! error, so typos never silently fall back to defaults.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: &str) -> Section {
        Section {
            name: name.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Document> {
        let mut doc = Document::default();
        let mut current: Option<Section> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| CoreError::Config(format!("line {}: {m}", lineno + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(err("empty section name"));
                }
                if doc.sections.iter().any(|s| s.name == name)
                    || current.as_ref().is_some_and(|s| s.name == name)
                {
                    return Err(err(&format!("duplicate section [{name}]")));
                }
                if let Some(s) = current.take() {
                    doc.sections.push(s);
                }
                current = Some(Section::new(name));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err("empty key"));
            }
            let section = current
                .as_mut()
                .ok_or_else(|| err("key outside of any section"))?;
            if section.get(key).is_some() {
                return Err(err(&format!("duplicate key `{key}`")));
            }
            section
                .entries
                .push((key.to_string(), value.trim().to_string()));
        }
        if let Some(s) = current {
            doc.sections.push(s);
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn push(&mut self, section: Section) {
        self.sections.retain(|s| s.name != section.name);
        self.sections.push(section);
    }

    /// Fails if the document has a section outside `allowed`.
    pub fn check_sections(&self, allowed: &[&str]) -> Result<()> {
        for s in &self.sections {
            if !allowed.contains(&s.name.as_str()) {
                return Err(CoreError::Config(format!("unknown section [{}]", s.name)));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{}]\n", s.name));
            for (k, v) in &s.entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Typed access to a section that tracks which keys were read.
pub struct Reader<'a> {
    section: Option<&'a Section>,
    name: String,
    used: BTreeSet<String>,
}

impl<'a> Reader<'a> {
    pub fn new(section: Option<&'a Section>, name: &str) -> Reader<'a> {
        Reader {
            section,
            name: name.to_string(),
            used: BTreeSet::new(),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.section.and_then(|s| s.get(key))
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CoreError::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))
            }),
        }
    }

    pub fn get_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None | Some("") | Some("none") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                CoreError::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))
            }),
        }
    }

    pub fn get_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        CoreError::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))
                    })
                })
                .collect(),
        }
    }

    /// Errors on any key in the section that was never requested.
    pub fn finish(self) -> Result<()> {
        if let Some(s) = self.section {
            for (k, _) in &s.entries {
                if !self.used.contains(k) {
                    return Err(CoreError::Config(format!("[{}] unknown key `{k}`", self.name)));
                }
            }
        }
        Ok(())
    }
}

pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let text = "# comment\n[a]\nx = 1\ny = 2,3 # trailing\n\n[b]\nname = hello\n";
        let doc = Document::parse(text).unwrap();
        assert_eq!(doc.section("a").unwrap().get("y"), Some("2,3"));
        let again = Document::parse(&doc.render()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn rejects_malformed_and_unknown() {
        assert!(Document::parse("x = 1\n").is_err());
        assert!(Document::parse("[a\n").is_err());
        assert!(Document::parse("[a]\nx = 1\nx = 2\n").is_err());
        assert!(Document::parse("[a]\n[a]\n").is_err());
        assert!(Document::parse("[a]\njunk\n").is_err());
        let doc = Document::parse("[a]\nx = 1\ntypo = 2\n").unwrap();
        let mut r = Reader::new(doc.section("a"), "a");
        assert_eq!(r.get("x", 0usize).unwrap(), 1);
        assert!(r.finish().is_err());
        let mut r = Reader::new(doc.section("a"), "a");
        assert!(r.get::<f64>("typo", 0.0).is_ok());
        assert!(r.get::<bool>("x", false).is_err());
    }

    #[test]
    fn lists_and_options() {
        let doc = Document::parse("[s]\nl = 1, 2 ,3\nn = none\n").unwrap();
        let mut r = Reader::new(doc.section("s"), "s");
        assert_eq!(r.get_list::<usize>("l", vec![]).unwrap(), vec![1, 2, 3]);
        assert_eq!(r.get_opt::<usize>("n").unwrap(), None);
        assert_eq!(r.get_list::<usize>("missing", vec![9]).unwrap(), vec![9]);
        r.finish().unwrap();
    }
}
