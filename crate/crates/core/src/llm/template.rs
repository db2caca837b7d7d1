//! Prompt templates: a TOML header, a `---` line, then the body with `{slot}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub slots: Vec<String>,
    /// Slots that render as empty text when no value is supplied.
    pub optional: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub body: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    version: u32,
    #[serde(default)]
    slots: Vec<String>,
    #[serde(default)]
    optional: Vec<String>,
    #[serde(default)]
    temperature: f64,
    #[serde(default = "default_max_tokens")]
    max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    512
}

/// Start offset, end offset and name of every `{identifier}` placeholder.
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start
                && j < bytes.len()
                && bytes[j] == b'}'
                && !bytes[start].is_ascii_digit()
            {
                out.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.replace("\r\n", "\n");
        let (head, body) = text.split_once("\n---\n").ok_or_else(|| Error::Template {
            template: "<unknown>".into(),
            message: "missing `---` separator after header".into(),
        })?;
        let header: Header = toml::from_str(head).map_err(|e| Error::Template {
            template: "<unknown>".into(),
            message: e.to_string(),
        })?;
        let template = Self {
            name: header.name,
            version: header.version,
            slots: header.slots,
            optional: header.optional,
            temperature: header.temperature,
            max_tokens: header.max_tokens,
            body: body.trim_end_matches('\n').to_string(),
        };
        template.lint()?;
        Ok(template)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Template {
            template: self.name.clone(),
            message: message.into(),
        }
    }

    /// Every placeholder is a declared slot and every slot is used.
    pub fn lint(&self) -> Result<()> {
        let declared: BTreeSet<&str> = self.slots.iter().map(String::as_str).collect();
        if declared.len() != self.slots.len() {
            return Err(self.err("duplicate slot names"));
        }
        let used: BTreeSet<&str> = placeholders(&self.body).into_iter().map(|p| p.2).collect();
        if let Some(s) = used.difference(&declared).next() {
            return Err(self.err(format!("placeholder `{{{s}}}` is not a declared slot")));
        }
        if let Some(s) = declared.difference(&used).next() {
            return Err(self.err(format!("slot `{s}` never appears in the body")));
        }
        if let Some(s) = self.optional.iter().find(|s| !declared.contains(s.as_str())) {
            return Err(self.err(format!("optional slot `{s}` is not declared")));
        }
        Ok(())
    }

    /// Substitutes slot values in a single pass; braces inside values stay literal.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in values {
            if !self.slots.iter().any(|s| s == k) {
                return Err(self.err(format!("unknown slot `{k}`")));
            }
            map.insert(k, v);
        }
        for slot in &self.slots {
            if !map.contains_key(slot.as_str()) {
                if self.optional.contains(slot) {
                    map.insert(slot, "");
                } else {
                    return Err(self.err(format!("missing value for slot `{slot}`")));
                }
            }
        }
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, name) in placeholders(&self.body) {
            out.push_str(&self.body[last..start]);
            out.push_str(map[name]);
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

macro_rules! builtin {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../../templates/", $file)))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "f_ins.tmpl",
    "f_par.tmpl",
    "f_ent.tmpl",
    "f_rel.tmpl",
    "f_dis.tmpl",
    "f_con.tmpl",
    "cot_condense.tmpl",
    "query_onto.tmpl",
    "query_kg.tmpl",
    "name_cluster.tmpl",
    "synthesize_ontology.tmpl",
    "synthesize_kg.tmpl",
    "synthesize_text.tmpl",
);

/// Named templates: the shipped defaults, optionally overridden from a directory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(file, text)| {
                let t = PromptTemplate::parse(text)
                    .unwrap_or_else(|e| panic!("shipped template {file} is invalid: {e}"));
                (t.name.clone(), t)
            })
            .collect();
        Self { templates }
    }

    /// Built-ins overridden by every `*.tmpl` file found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tmpl"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let t = PromptTemplate::parse(&text)?;
            set.templates.insert(t.name.clone(), t);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate> {
        self.templates.get(name).ok_or_else(|| Error::Template {
            template: name.to_string(),
            message: "no such template".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// `name@version` for every template, recorded in build metadata.
    pub fn versions(&self) -> Vec<String> {
        self.templates
            .values()
            .map(|t| format!("{}@{}", t.name, t.version))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(slots: &[&str], body: &str) -> PromptTemplate {
        PromptTemplate {
            name: "t".into(),
            version: 1,
            slots: slots.iter().map(|s| s.to_string()).collect(),
            optional: vec![],
            temperature: 0.0,
            max_tokens: 16,
            body: body.into(),
        }
    }

    #[test]
    fn instance_prompt_wording() {
        let set = TemplateSet::builtin();
        let prompt = set
            .get("f_ins")
            .unwrap()
            .render(&[
                ("domain", "academic"),
                ("class", "staff"),
                ("property", "graduated_from"),
                ("paragraph", "Alice graduated from MIT."),
            ])
            .unwrap();
        assert!(prompt.contains("a class staff has the property of graduated_from"));
        assert!(prompt.contains("identify instances of the Ontology relationship"));
    }

    #[test]
    fn zero_slots_verbatim() {
        let t = template(&[], "no {placeholders} here? { nope }");
        assert!(t.lint().is_err());
        let t = template(&[], "plain text with { spaced } braces");
        assert_eq!(t.render(&[]).unwrap(), "plain text with { spaced } braces");
    }

    #[test]
    fn values_not_re_expanded() {
        let t = template(&["c", "a"], "class {c} property {a}");
        assert_eq!(
            t.render(&[("c", "{a}"), ("a", "x")]).unwrap(),
            "class {a} property x"
        );
    }

    #[test]
    fn missing_and_extra_slots() {
        let t = template(&["c"], "{c}");
        let missing = t.render(&[]).unwrap_err().to_string();
        assert!(missing.contains("`c`"), "{missing}");
        assert!(t.render(&[("c", "1"), ("d", "2")]).is_err());
    }

    #[test]
    fn every_shipped_template_renders() {
        let set = TemplateSet::builtin();
        assert_eq!(set.iter().count(), BUILTIN.len());
        for t in set.iter() {
            t.lint().unwrap();
            let values: Vec<(&str, &str)> =
                t.slots.iter().map(|s| (s.as_str(), "value")).collect();
            let out = t.render(&values).unwrap();
            assert!(!out.contains("{value}"));
        }
    }
}
