use super::{Filter, FilterOp, SparqlError, SparqlQuery, Term, TriplePattern, TYPE_PREDICATE};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Var(String),
    Iri(String),
    /// `prefix:local`; only the local part is kept.
    PName(String),
    Literal(String),
    Number(String),
    Word(String),
    Punct(char),
    /// Operators and other symbols the subset does not evaluate.
    Other(String),
}

const UNSUPPORTED: &[&str] = &[
    "OPTIONAL", "UNION", "GRAPH", "MINUS", "ORDER", "GROUP", "HAVING", "BIND", "VALUES",
    "SERVICE", "ASK", "CONSTRUCT", "DESCRIBE", "INSERT", "DELETE", "OFFSET", "FROM", "EXISTS",
    "NOT", "COUNT", "SUM", "AVG", "MIN", "MAX", "SAMPLE", "GROUP_CONCAT", "REGEX", "STRSTARTS",
    "STRENDS", "LANG", "LANGMATCHES", "BOUND", "IF", "COALESCE", "REDUCED", "LOAD", "CLEAR",
];

fn malformed(msg: impl Into<String>) -> SparqlError {
    SparqlError::Malformed(msg.into())
}

fn local_name(iri: &str) -> String {
    iri.rsplit(['#', '/']).next().unwrap_or(iri).to_string()
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn tokenize(text: &str) -> Result<Vec<Tok>, SparqlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '?' || c == '$' {
            let start = i + 1;
            i = start;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            if i == start {
                return Err(malformed(format!("empty variable name at offset {start}")));
            }
            out.push(Tok::Var(chars[start..i].iter().collect()));
        } else if c == '<' {
            let start = i + 1;
            let end = chars[start..]
                .iter()
                .position(|&ch| ch == '>' || ch.is_whitespace())
                .map(|p| start + p);
            match end {
                Some(end) if chars[end] == '>' => {
                    out.push(Tok::Iri(chars[start..end].iter().collect()));
                    i = end + 1;
                }
                _ => {
                    let op = if chars.get(i + 1) == Some(&'=') { "<=" } else { "<" };
                    out.push(Tok::Other(op.into()));
                    i += op.len();
                }
            }
        } else if c == '"' || c == '\'' {
            let quote = c;
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(malformed("unterminated string literal")),
                    Some(&ch) if ch == quote => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars
                            .get(i + 1)
                            .ok_or_else(|| malformed("unterminated escape"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => *other,
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            // Language tags and datatypes do not change the lexical value.
            if chars.get(i) == Some(&'@') {
                i += 1;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '-') {
                    i += 1;
                }
            } else if chars.get(i) == Some(&'^') && chars.get(i + 1) == Some(&'^') {
                i += 2;
                if chars.get(i) == Some(&'<') {
                    while i < chars.len() && chars[i] != '>' {
                        i += 1;
                    }
                    i += 1;
                } else {
                    while i < chars.len() && (is_name_char(chars[i]) || chars[i] == ':') {
                        i += 1;
                    }
                }
            }
            out.push(Tok::Literal(s));
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                // A trailing dot ends the triple rather than starting a fraction.
                if chars[i] == '.' && !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    break;
                }
                i += 1;
            }
            out.push(Tok::Number(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' || c == ':' {
            let start = i;
            while i < chars.len() && (is_name_char(chars[i]) || chars[i] == ':' || chars[i] == '.')
            {
                i += 1;
            }
            while i > start && chars[i - 1] == '.' {
                i -= 1;
            }
            let word: String = chars[start..i].iter().collect();
            match word.split_once(':') {
                Some((_, local)) => out.push(Tok::PName(local.to_string())),
                None => out.push(Tok::Word(word)),
            }
        } else if "{}().,;*=".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = match two.as_str() {
                "!=" | ">=" | "&&" | "||" | "^^" => two,
                _ => c.to_string(),
            };
            i += op.chars().count();
            out.push(Tok::Other(op));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(word))
    }

    fn expect_punct(&mut self, c: char) -> Result<(), SparqlError> {
        match self.next() {
            Some(Tok::Punct(p)) if p == c => Ok(()),
            Some(t) => Err(unexpected(&t, &format!("`{c}`"))),
            None => Err(malformed(format!("expected `{c}`, found end of query"))),
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<(), SparqlError> {
        match self.next() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case(word) => Ok(()),
            Some(t) => Err(unexpected(&t, word)),
            None => Err(malformed(format!("expected {word}, found end of query"))),
        }
    }

    fn term(&mut self, predicate: bool) -> Result<Term, SparqlError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Iri(iri)) => Ok(Term::Const(local_name(&iri))),
            Some(Tok::PName(local)) if predicate && local == "type" => {
                Ok(Term::Const(TYPE_PREDICATE.into()))
            }
            Some(Tok::PName(local)) => Ok(Term::Const(local)),
            Some(Tok::Literal(s)) | Some(Tok::Number(s)) => Ok(Term::Const(s)),
            Some(Tok::Word(w)) if predicate && w == "a" => Ok(Term::Const(TYPE_PREDICATE.into())),
            Some(Tok::Word(w)) if is_unsupported(&w) => {
                Err(SparqlError::Unsupported(w.to_uppercase()))
            }
            // Bare names are read as schema-local constants.
            Some(Tok::Word(w)) if !is_keyword(&w) => Ok(Term::Const(w)),
            Some(t) => Err(unexpected(&t, "a term")),
            None => Err(malformed("expected a term, found end of query")),
        }
    }

    fn check_path(&self) -> Result<(), SparqlError> {
        match self.peek() {
            Some(Tok::Other(op)) if ["/", "|", "^", "+"].contains(&op.as_str()) => {
                Err(SparqlError::Unsupported("property path".into()))
            }
            Some(Tok::Punct('*')) => Err(SparqlError::Unsupported("property path".into())),
            _ => Ok(()),
        }
    }

    fn filter(&mut self) -> Result<Filter, SparqlError> {
        self.expect_punct('(')?;
        let filter = if self.is_word("CONTAINS") {
            self.pos += 1;
            self.expect_punct('(')?;
            self.expect_word("LCASE")?;
            self.expect_punct('(')?;
            let str_wrapped = self.is_word("STR");
            if str_wrapped {
                self.pos += 1;
                self.expect_punct('(')?;
            }
            let var = self.filter_var()?;
            if str_wrapped {
                self.expect_punct(')')?;
            }
            self.expect_punct(')')?;
            self.expect_punct(',')?;
            let literal = self.filter_literal()?;
            self.expect_punct(')')?;
            Filter {
                var,
                op: FilterOp::Contains,
                literal,
            }
        } else {
            let str_wrapped = self.is_word("STR");
            if str_wrapped {
                self.pos += 1;
                self.expect_punct('(')?;
            }
            let var = self.filter_var()?;
            if str_wrapped {
                self.expect_punct(')')?;
            }
            match self.next() {
                Some(Tok::Punct('=')) => {}
                Some(Tok::Other(op)) => return Err(SparqlError::Unsupported(op)),
                Some(t) => return Err(unexpected(&t, "`=`")),
                None => return Err(malformed("unterminated FILTER")),
            }
            Filter {
                var,
                op: FilterOp::Equals,
                literal: self.filter_literal()?,
            }
        };
        match self.next() {
            Some(Tok::Punct(')')) => Ok(filter),
            Some(Tok::Other(op)) if op == "&&" || op == "||" => Err(SparqlError::Unsupported(op)),
            Some(t) => Err(unexpected(&t, "`)`")),
            None => Err(malformed("unterminated FILTER")),
        }
    }

    fn filter_var(&mut self) -> Result<String, SparqlError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(v),
            Some(Tok::Word(w)) if is_unsupported(&w) => {
                Err(SparqlError::Unsupported(w.to_uppercase()))
            }
            Some(t) => Err(unexpected(&t, "a variable")),
            None => Err(malformed("expected a variable, found end of query")),
        }
    }

    fn filter_literal(&mut self) -> Result<String, SparqlError> {
        match self.next() {
            Some(Tok::Literal(s)) | Some(Tok::Number(s)) => Ok(s),
            Some(Tok::Iri(iri)) => Ok(local_name(&iri)),
            Some(Tok::PName(local)) => Ok(local),
            Some(Tok::Var(_)) => Err(SparqlError::Unsupported("variable comparison".into())),
            Some(t) => Err(unexpected(&t, "a literal")),
            None => Err(malformed("expected a literal, found end of query")),
        }
    }

    fn group(&mut self, q: &mut SparqlQuery) -> Result<(), SparqlError> {
        self.expect_punct('{')?;
        loop {
            match self.peek() {
                None => return Err(malformed("unbalanced `{`: missing `}`")),
                Some(Tok::Punct('}')) => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(Tok::Punct('.')) => self.pos += 1,
                Some(Tok::Punct('{')) => return Err(SparqlError::Unsupported("nested group".into())),
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("FILTER") => {
                    self.pos += 1;
                    let f = self.filter()?;
                    q.filters.push(f);
                }
                Some(Tok::Word(w)) if is_unsupported(w) => {
                    return Err(SparqlError::Unsupported(w.to_uppercase()))
                }
                Some(_) => self.triples(q)?,
            }
        }
    }

    /// One subject with its `;`-separated predicates and `,`-separated objects.
    fn triples(&mut self, q: &mut SparqlQuery) -> Result<(), SparqlError> {
        let subject = self.term(false)?;
        loop {
            let predicate = self.term(true)?;
            self.check_path()?;
            loop {
                let object = self.term(false)?;
                q.patterns.push(TriplePattern {
                    subject: subject.clone(),
                    predicate: predicate.clone(),
                    object,
                });
                if matches!(self.peek(), Some(Tok::Punct(','))) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            if matches!(self.peek(), Some(Tok::Punct(';'))) {
                self.pos += 1;
                if matches!(self.peek(), Some(Tok::Punct('.')) | Some(Tok::Punct('}'))) {
                    return Ok(());
                }
            } else {
                return Ok(());
            }
        }
    }
}

fn is_unsupported(word: &str) -> bool {
    UNSUPPORTED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn is_keyword(word: &str) -> bool {
    ["SELECT", "WHERE", "FILTER", "LIMIT", "DISTINCT", "PREFIX", "BASE", "CONTAINS", "LCASE"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(word))
}

fn unexpected(tok: &Tok, wanted: &str) -> SparqlError {
    let shown = match tok {
        Tok::Var(v) => format!("?{v}"),
        Tok::Iri(i) => format!("<{i}>"),
        Tok::PName(p) => p.clone(),
        Tok::Literal(s) => format!("{s:?}"),
        Tok::Number(n) | Tok::Word(n) | Tok::Other(n) => n.clone(),
        Tok::Punct(c) => c.to_string(),
    };
    if let Tok::Other(op) = tok {
        if ["!=", "<", ">", "<=", ">=", "&&", "||", "/", "|", "^", "+"].contains(&op.as_str()) {
            return SparqlError::Unsupported(op.clone());
        }
    }
    malformed(format!("expected {wanted}, found `{shown}`"))
}

/// Parses the supported subset. `PREFIX`/`BASE` declarations are skipped since
/// every IRI is reduced to its local name.
pub fn parse_sparql(text: &str) -> Result<SparqlQuery, SparqlError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    loop {
        if p.is_word("PREFIX") {
            p.pos += 1;
            match (p.next(), p.next()) {
                (Some(Tok::PName(_)), Some(Tok::Iri(_))) => {}
                _ => return Err(malformed("bad PREFIX declaration")),
            }
        } else if p.is_word("BASE") {
            p.pos += 1;
            match p.next() {
                Some(Tok::Iri(_)) => {}
                _ => return Err(malformed("bad BASE declaration")),
            }
        } else {
            break;
        }
    }
    match p.next() {
        Some(Tok::Word(w)) if w.eq_ignore_ascii_case("SELECT") => {}
        Some(Tok::Word(w)) if is_unsupported(&w) => {
            return Err(SparqlError::Unsupported(w.to_uppercase()))
        }
        Some(t) => return Err(unexpected(&t, "SELECT")),
        None => return Err(malformed("empty query")),
    }
    if p.is_word("DISTINCT") {
        p.pos += 1;
    }
    let mut q = SparqlQuery {
        select_vars: Vec::new(),
        patterns: Vec::new(),
        filters: Vec::new(),
        limit: None,
    };
    let mut star = false;
    loop {
        match p.peek() {
            Some(Tok::Var(v)) => {
                let v = v.clone();
                if !q.select_vars.contains(&v) {
                    q.select_vars.push(v);
                }
                p.pos += 1;
            }
            Some(Tok::Punct('*')) if !star && q.select_vars.is_empty() => {
                star = true;
                p.pos += 1;
            }
            Some(Tok::Punct('(')) => {
                return Err(SparqlError::Unsupported("projection expression".into()))
            }
            Some(Tok::Word(w)) if is_unsupported(w) => {
                return Err(SparqlError::Unsupported(w.to_uppercase()))
            }
            _ => break,
        }
    }
    if p.is_word("WHERE") {
        p.pos += 1;
    }
    p.group(&mut q)?;
    while let Some(tok) = p.next() {
        match tok {
            Tok::Word(w) if w.eq_ignore_ascii_case("LIMIT") && q.limit.is_none() => match p.next() {
                Some(Tok::Number(n)) => {
                    q.limit = Some(n.parse().map_err(|_| malformed(format!("bad LIMIT `{n}`")))?);
                }
                _ => return Err(malformed("LIMIT needs a number")),
            },
            Tok::Word(w) if is_unsupported(&w) => {
                return Err(SparqlError::Unsupported(w.to_uppercase()))
            }
            Tok::Punct('}') => return Err(malformed("unbalanced `}`")),
            t => return Err(unexpected(&t, "end of query")),
        }
    }
    if star {
        q.select_vars = q.pattern_vars();
    }
    q.check()?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pattern_query() {
        let q = parse_sparql(
            r#"SELECT ?s WHERE { ?s <past_affiliation> "MIT" . ?s <current_affiliation> "CS" }"#,
        )
        .unwrap();
        assert_eq!(q.patterns.len(), 2);
        assert_eq!(q.select_vars, vec!["s"]);
        assert_eq!(q.patterns[0].predicate, Term::Const("past_affiliation".into()));
        assert_eq!(q.patterns[1].object, Term::Const("CS".into()));
    }

    #[test]
    fn optional_is_unsupported() {
        let err = parse_sparql("SELECT ?s WHERE { ?s <p> ?o . OPTIONAL { ?s <q> ?x } }").unwrap_err();
        assert_eq!(err, SparqlError::Unsupported("OPTIONAL".into()));
    }

    #[test]
    fn unbalanced_brace_is_malformed() {
        let err = parse_sparql("SELECT ?s WHERE { ?s <p> ?o").unwrap_err();
        assert!(matches!(err, SparqlError::Malformed(_)), "{err:?}");
        let err = parse_sparql("SELECT ?s WHERE { ?s <p> ?o } }").unwrap_err();
        assert!(matches!(err, SparqlError::Malformed(_)), "{err:?}");
    }

    #[test]
    fn prefixes_types_and_filters() {
        let q = parse_sparql(
            "PREFIX ex: <http://example.org/uni#>\n\
             SELECT DISTINCT ?s ?t WHERE {\n\
               ?s a ex:Staff ;\n\
                  ex:title ?t .\n\
               FILTER(CONTAINS(LCASE(STR(?t)), \"lecturer\"))\n\
             } LIMIT 5",
        )
        .unwrap();
        assert_eq!(q.patterns.len(), 2);
        assert_eq!(q.patterns[0].predicate, Term::Const("type".into()));
        assert_eq!(q.patterns[0].object, Term::Const("Staff".into()));
        assert_eq!(q.patterns[1].predicate, Term::Const("title".into()));
        assert_eq!(q.filters[0].op, FilterOp::Contains);
        assert_eq!(q.limit, Some(5));
    }

    #[test]
    fn unsupported_constructs() {
        for (text, what) in [
            ("SELECT (COUNT(?s) AS ?n) WHERE { ?s <p> ?o }", "projection expression"),
            ("SELECT ?s WHERE { ?s <p>/<q> ?o }", "property path"),
            ("SELECT ?s WHERE { ?s <p> ?o FILTER(?o != \"x\") }", "!="),
            ("SELECT ?s WHERE { ?s <p> ?o } ORDER BY ?s", "ORDER"),
            ("ASK { ?s <p> ?o }", "ASK"),
        ] {
            assert_eq!(
                parse_sparql(text).unwrap_err(),
                SparqlError::Unsupported(what.into()),
                "{text}"
            );
        }
    }

    #[test]
    fn unbound_select_var() {
        assert!(matches!(
            parse_sparql("SELECT ?x WHERE { ?s <p> ?o }"),
            Err(SparqlError::Malformed(_))
        ));
    }

    #[test]
    fn star_selects_pattern_vars() {
        let q = parse_sparql("SELECT * WHERE { ?s <p> ?o . ?o <q> ?z }").unwrap();
        assert_eq!(q.select_vars, vec!["s", "o", "z"]);
    }

    #[test]
    fn numbers_and_trailing_dots() {
        let q = parse_sparql("SELECT ?c WHERE { ?c <credits> 4. }").unwrap();
        assert_eq!(q.patterns[0].object, Term::Const("4".into()));
    }
}
