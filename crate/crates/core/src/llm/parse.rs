use std::fmt;

use crate::model::FIELD_SEPARATOR;

/// Accepted items plus the raw lines that failed to parse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineParse<T> {
    pub accepted: Vec<T>,
    pub rejected: Vec<String>,
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line
        .strip_prefix("- ")
        .or_else(|| line.strip_prefix("* "))
        .or_else(|| line.strip_prefix("• "))
        .unwrap_or(line);
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    line.trim()
}

/// Non-empty lines with bullet or numbering markers removed.
pub fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn split_exact<'a>(line: &'a str, sep: char) -> Option<(&'a str, &'a str, &'a str)> {
    let parts: Vec<&str> = line.split(sep).map(str::trim).collect();
    match parts.as_slice() {
        [a, b, c] if !a.is_empty() && !b.is_empty() && !c.is_empty() => Some((a, b, c)),
        _ => None,
    }
}

/// Parses `head, relation, tail` lines. Each line must split on commas into
/// exactly three non-empty parts; anything else is kept as a reject.
pub fn parse_triplet_lines(text: &str) -> LineParse<(String, String, String)> {
    let mut out = LineParse::default();
    for raw in text.lines() {
        let line = strip_list_marker(raw);
        if line.is_empty() {
            continue;
        }
        let inner = line
            .strip_prefix('(')
            .and_then(|l| l.strip_suffix(')'))
            .unwrap_or(line);
        match split_exact(inner, FIELD_SEPARATOR) {
            Some((h, r, t)) => out
                .accepted
                .push((h.to_string(), r.to_string(), t.to_string())),
            None => out.rejected.push(raw.to_string()),
        }
    }
    out
}

/// Parses `subject | property | value` lines; a lone `NONE` means no instances.
pub fn parse_instance_lines(text: &str) -> LineParse<(String, String, String)> {
    let mut out = LineParse::default();
    for raw in text.lines() {
        let line = strip_list_marker(raw);
        if line.is_empty() || line.eq_ignore_ascii_case("none") {
            continue;
        }
        match split_exact(line, '|') {
            Some((s, p, v)) => out
                .accepted
                .push((s.to_string(), p.to_string(), v.to_string())),
            None => out.rejected.push(raw.to_string()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YesNoError(pub String);

impl fmt::Display for YesNoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot read a yes/no verdict from {:?}", self.0)
    }
}

impl std::error::Error for YesNoError {}

const FILLER: &[&str] = &[
    "the", "answer", "is", "my", "response", "final", "verdict", "justification", "i", "would",
    "say", "a", "clear",
];

/// Reads a yes/no verdict: the first non-filler word must be `yes` or `no`,
/// and the text must not contain both.
pub fn parse_yes_no(text: &str) -> Result<bool, YesNoError> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let has_yes = words.iter().any(|w| w == "yes");
    let has_no = words.iter().any(|w| w == "no");
    if has_yes == has_no {
        return Err(YesNoError(text.to_string()));
    }
    match words.iter().find(|w| !FILLER.contains(&w.as_str())) {
        Some(w) if w == "yes" => Ok(true),
        Some(w) if w == "no" => Ok(false),
        _ => Err(YesNoError(text.to_string())),
    }
}

/// Removes a surrounding Markdown code fence, if present.
pub fn strip_code_fence(text: &str) -> String {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
        let body = body.trim_end();
        let body = body.strip_suffix("```").unwrap_or(body);
        return body.trim().to_string();
    }
    trimmed.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triplet_line() {
        let p = parse_triplet_lines("Prof. A, works in, CS Department");
        assert_eq!(
            p.accepted,
            vec![("Prof. A".into(), "works in".into(), "CS Department".into())]
        );
        assert!(p.rejected.is_empty());
    }

    #[test]
    fn empty_text() {
        assert_eq!(parse_triplet_lines(""), LineParse::default());
    }

    #[test]
    fn four_parts_rejected() {
        let p = parse_triplet_lines("a, b, c, d\n1. x, y, z");
        assert_eq!(p.rejected, vec!["a, b, c, d".to_string()]);
        assert_eq!(p.accepted.len(), 1);
    }

    #[test]
    fn yes_no() {
        assert_eq!(parse_yes_no("Yes."), Ok(true));
        assert_eq!(parse_yes_no("no, the context lacks the key entity"), Ok(false));
        assert_eq!(parse_yes_no("The answer is: YES"), Ok(true));
        assert!(parse_yes_no("maybe").is_err());
        assert!(parse_yes_no("yes and no").is_err());
        assert!(parse_yes_no("It seems like yes").is_err());
    }

    #[test]
    fn instance_lines() {
        let p = parse_instance_lines("NONE");
        assert!(p.accepted.is_empty() && p.rejected.is_empty());
        let p = parse_instance_lines("Alice | graduated_from | MIT\nbroken line");
        assert_eq!(p.accepted.len(), 1);
        assert_eq!(p.rejected.len(), 1);
    }

    #[test]
    fn code_fence() {
        assert_eq!(
            strip_code_fence("```sparql\nSELECT ?s WHERE { ?s ?p ?o }\n```"),
            "SELECT ?s WHERE { ?s ?p ?o }"
        );
        assert_eq!(strip_code_fence("  SELECT ?s  "), "SELECT ?s");
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 .'-]{0,20}[A-Za-z0-9]".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn parse_inverts_line_serialization(
            triplets in prop::collection::vec((field(), field(), field()), 0..8)
        ) {
            let text: String = triplets
                .iter()
                .map(|(h, r, t)| format!("{h}, {r}, {t}\n"))
                .collect();
            let parsed = parse_triplet_lines(&text);
            prop_assert!(parsed.rejected.is_empty());
            prop_assert_eq!(parsed.accepted, triplets);
        }
    }
}
