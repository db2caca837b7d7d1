use std::collections::HashSet;

use regex::Regex;
use std::sync::OnceLock;

use super::{
    DataProperty, LiteralKind, ObjectProperty, OntologyInstance, OntologySchema, ValueKind,
    Violation,
};

#[derive(Debug, Clone, Copy)]
pub enum PropertyRef<'a> {
    Object(&'a ObjectProperty),
    Data(&'a DataProperty),
}

fn violation(path: String, message: impl Into<String>) -> Violation {
    Violation {
        path,
        message: message.into(),
    }
}

/// Lists every structural problem in `schema`. An empty list means the schema is valid.
pub fn validate_schema(schema: &OntologySchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut classes = HashSet::new();
    for (i, class) in schema.classes.iter().enumerate() {
        if class.trim().is_empty() {
            out.push(violation(format!("classes[{i}]"), "empty class name"));
        } else if !classes.insert(class.as_str()) {
            out.push(violation(
                format!("classes[{i}]"),
                format!("duplicate class `{class}`"),
            ));
        }
    }

    let mut names: HashSet<(&str, &str)> = HashSet::new();
    for (i, p) in schema.object_properties.iter().enumerate() {
        let path = format!("object_properties[{i}]");
        if p.name.trim().is_empty() {
            out.push(violation(path.clone(), "empty property name"));
        }
        if !classes.contains(p.domain.as_str()) {
            out.push(violation(
                format!("{path}.domain"),
                format!("unknown class `{}`", p.domain),
            ));
        }
        if !classes.contains(p.range.as_str()) {
            out.push(violation(
                format!("{path}.range"),
                format!("unknown class `{}`", p.range),
            ));
        }
        if !names.insert((p.domain.as_str(), p.name.as_str())) {
            out.push(violation(
                path,
                format!("duplicate property `{}` on `{}`", p.name, p.domain),
            ));
        }
    }
    for (i, p) in schema.data_properties.iter().enumerate() {
        let path = format!("data_properties[{i}]");
        if p.name.trim().is_empty() {
            out.push(violation(path.clone(), "empty property name"));
        }
        if !classes.contains(p.domain.as_str()) {
            out.push(violation(
                format!("{path}.domain"),
                format!("unknown class `{}`", p.domain),
            ));
        }
        if !names.insert((p.domain.as_str(), p.name.as_str())) {
            out.push(violation(
                path,
                format!("duplicate property `{}` on `{}`", p.name, p.domain),
            ));
        }
    }
    out
}

fn date_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}(-\d{2}(-\d{2})?)?$").unwrap())
}

/// Whether `raw` is a well-formed literal of `kind`.
pub(crate) fn literal_matches(kind: ValueKind, raw: &str) -> bool {
    match kind {
        ValueKind::Text => !raw.trim().is_empty(),
        ValueKind::Number => raw.trim().parse::<f64>().is_ok_and(f64::is_finite),
        ValueKind::Date => date_pattern().is_match(raw.trim()),
    }
}

/// Reads a schema document and rejects it unless it validates cleanly.
pub fn load_schema(path: impl AsRef<std::path::Path>) -> crate::error::Result<OntologySchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))?;
    let schema: OntologySchema = serde_json::from_str(&text)?;
    let violations = validate_schema(&schema);
    if !violations.is_empty() {
        return Err(crate::error::Error::InvalidSchema(violations));
    }
    Ok(schema)
}

/// Checks one instance against the schema.
pub fn validate_instance(
    schema: &OntologySchema,
    instance: &OntologyInstance,
) -> Result<(), Violation> {
    let path = format!(
        "instance({}, {}, {})",
        instance.subject_id, instance.property, instance.value.raw
    );
    if instance.subject_id.trim().is_empty() {
        return Err(violation(path, "empty subject id"));
    }
    match schema.property(&instance.subject_class, &instance.property) {
        None => Err(violation(
            path,
            format!(
                "`{}` has no property `{}`",
                instance.subject_class, instance.property
            ),
        )),
        Some(PropertyRef::Object(_)) => {
            if instance.value.kind != LiteralKind::Entity || instance.value.raw.trim().is_empty() {
                Err(violation(path, "object property needs an entity value"))
            } else {
                Ok(())
            }
        }
        Some(PropertyRef::Data(p)) => {
            if instance.value.kind != LiteralKind::from(p.kind)
                || !literal_matches(p.kind, &instance.value.raw)
            {
                Err(violation(path, format!("value is not a valid {}", p.kind)))
            } else {
                Ok(())
            }
        }
    }
}
