//! Boolean keyword search formulas.
//!
//! Formulas combine terms with `and`/`or` and parentheses. A trailing `*`
//! marks a prefix wildcard. Bare input binds `and` tighter than `or`;
//! keywords are case-insensitive and terms are lowercased.
//!
//! ```
//! use landscaper::searchdsl::{parse_query, emit_sql, TargetField};
//!
//! let ast = parse_query("(virtual* or augment*) and ocean").unwrap();
//! assert_eq!(
//!     emit_sql(&ast, TargetField::Description),
//!     r#"((REGEXP_CONTAINS(description.text, " virtual%") or REGEXP_CONTAINS(description.text, " augment%")) and REGEXP_CONTAINS(description.text, " ocean "))"#
//! );
//! ```
//!
//! Emitted SQL pads each term with spaces the way the BigQuery patents
//! dataset queries do (`" ocean "`, `" virtual%"`). Local evaluation does not
//! copy that idiom: it tokenizes the text and compares whole tokens, which is
//! what the padding approximates.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryAst {
    And(Vec<QueryAst>),
    Or(Vec<QueryAst>),
    Term { text: String, prefix: bool },
}

impl QueryAst {
    pub fn term(text: &str, prefix: bool) -> Self {
        QueryAst::Term { text: text.to_lowercase(), prefix }
    }

    /// Every term in left-to-right order.
    pub fn terms(&self) -> Vec<(&str, bool)> {
        let mut out = Vec::new();
        self.visit_terms(&mut |t, p| out.push((t, p)));
        out
    }

    fn visit_terms<'a>(&'a self, f: &mut impl FnMut(&'a str, bool)) {
        match self {
            QueryAst::And(c) | QueryAst::Or(c) => c.iter().for_each(|n| n.visit_terms(f)),
            QueryAst::Term { text, prefix } => f(text, *prefix),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetField {
    #[default]
    Description,
    Abstract,
    Title,
}

impl TargetField {
    pub fn column(self) -> &'static str {
        match self {
            TargetField::Description => "description",
            TargetField::Abstract => "abstract",
            TargetField::Title => "title",
        }
    }
}

impl std::str::FromStr for TargetField {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "description" => Ok(TargetField::Description),
            "abstract" => Ok(TargetField::Abstract),
            "title" => Ok(TargetField::Title),
            other => Err(crate::Error::InvalidInput(format!("unknown field `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnbalancedParenthesis,
    EmptyTerm,
    TrailingOperator,
    /// Two operands with no operator between them, or an operator where an
    /// operand belongs.
    UnexpectedToken(String),
    InvalidTerm(String),
    EmptyQuery,
}

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("query parse error at byte {position}: {kind:?}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    And,
    Or,
    Word(String),
}

fn lex(input: &str) -> Vec<(Tok, usize)> {
    let mut out = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '(' => {
                out.push((Tok::Open, i));
                chars.next();
            }
            ')' => {
                out.push((Tok::Close, i));
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let start = i;
                let mut end = i;
                while let Some(&(j, c)) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' {
                        break;
                    }
                    end = j + c.len_utf8();
                    chars.next();
                }
                let word = &input[start..end];
                let tok = match word.to_ascii_lowercase().as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    _ => Tok::Word(word.to_string()),
                };
                out.push((tok, start));
            }
        }
    }
    out
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { kind, position: self.offset() }
    }

    fn expr(&mut self) -> Result<QueryAst, ParseError> {
        let mut items = vec![self.conjunction()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { QueryAst::Or(items) })
    }

    fn conjunction(&mut self) -> Result<QueryAst, ParseError> {
        let mut items = vec![self.operand()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            items.push(self.operand()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { QueryAst::And(items) })
    }

    fn operand(&mut self) -> Result<QueryAst, ParseError> {
        match self.peek().cloned() {
            None => {
                let kind = if self.pos == 0 {
                    ParseErrorKind::EmptyQuery
                } else if matches!(self.toks[self.pos - 1].0, Tok::And | Tok::Or) {
                    ParseErrorKind::TrailingOperator
                } else {
                    ParseErrorKind::UnbalancedParenthesis
                };
                Err(self.err(kind))
            }
            Some(Tok::Open) => {
                let open_at = self.offset();
                self.pos += 1;
                if self.peek() == Some(&Tok::Close) {
                    return Err(self.err(ParseErrorKind::EmptyTerm));
                }
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::Close) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    None => {
                        Err(ParseError { kind: ParseErrorKind::UnbalancedParenthesis, position: self.end.max(open_at) })
                    }
                    Some(t) => Err(self.err(ParseErrorKind::UnexpectedToken(format!("{t:?}")))),
                }
            }
            Some(Tok::Close) => Err(self.err(ParseErrorKind::UnbalancedParenthesis)),
            Some(Tok::And) | Some(Tok::Or) => {
                let what = if self.pos + 1 == self.toks.len() {
                    ParseErrorKind::TrailingOperator
                } else {
                    ParseErrorKind::UnexpectedToken("operator".into())
                };
                Err(self.err(what))
            }
            Some(Tok::Word(w)) => {
                let term = self.word(&w)?;
                self.pos += 1;
                Ok(term)
            }
        }
    }

    fn word(&self, raw: &str) -> Result<QueryAst, ParseError> {
        let (body, prefix) = match raw.strip_suffix('*') {
            Some(b) => (b, true),
            None => (raw, false),
        };
        if body.is_empty() {
            return Err(self.err(ParseErrorKind::EmptyTerm));
        }
        if let Some(bad) = body.chars().find(|&c| !(c.is_alphanumeric() || c == '-')) {
            return Err(self.err(ParseErrorKind::InvalidTerm(format!("`{raw}` contains `{bad}`"))));
        }
        Ok(QueryAst::term(body, prefix))
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    let toks = lex(text);
    let mut parser = Parser { toks, pos: 0, end: text.len() };
    let ast = parser.expr()?;
    match parser.peek() {
        None => Ok(ast),
        Some(Tok::Close) => Err(parser.err(ParseErrorKind::UnbalancedParenthesis)),
        Some(t) => {
            let t = format!("{t:?}");
            Err(parser.err(ParseErrorKind::UnexpectedToken(t)))
        }
    }
}

/// Lowercased tokens of `text`, split on anything that is neither
/// alphanumeric nor `-`.
pub fn search_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Evaluates a formula against one document's text.
///
/// `field` names where the text came from; matching is the same for every
/// field.
pub fn eval_query(ast: &QueryAst, text: &str, _field: TargetField) -> bool {
    let tokens = search_tokens(text);
    eval_tokens(ast, &tokens)
}

/// Evaluates against pre-tokenized text (see [`search_tokens`]).
pub fn eval_tokens(ast: &QueryAst, tokens: &[String]) -> bool {
    match ast {
        QueryAst::And(c) => c.iter().all(|n| eval_tokens(n, tokens)),
        QueryAst::Or(c) => c.iter().any(|n| eval_tokens(n, tokens)),
        QueryAst::Term { text, prefix: true } => tokens.iter().any(|t| t.starts_with(text.as_str())),
        QueryAst::Term { text, prefix: false } => tokens.iter().any(|t| t == text),
    }
}

/// Renders the formula as a BigQuery `REGEXP_CONTAINS` condition.
pub fn emit_sql(ast: &QueryAst, field: TargetField) -> String {
    let mut out = String::new();
    write_sql(ast, field.column(), &mut out);
    out
}

fn write_sql(ast: &QueryAst, column: &str, out: &mut String) {
    match ast {
        QueryAst::Term { text, prefix } => {
            let tail = if *prefix { "%" } else { " " };
            out.push_str(&format!("REGEXP_CONTAINS({column}.text, \" {text}{tail}\")"));
        }
        QueryAst::And(c) | QueryAst::Or(c) => {
            let op = if matches!(ast, QueryAst::And(_)) { " and " } else { " or " };
            out.push('(');
            for (i, child) in c.iter().enumerate() {
                if i > 0 {
                    out.push_str(op);
                }
                write_sql(child, column, out);
            }
            out.push(')');
        }
    }
}

/// Formula syntax. Compound children are always parenthesized, so
/// `parse_query(&ast.to_string()) == ast`.
impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryAst::Term { text, prefix } => {
                write!(f, "{text}{}", if *prefix { "*" } else { "" })
            }
            QueryAst::And(c) | QueryAst::Or(c) => {
                let op = if matches!(self, QueryAst::And(_)) { " and " } else { " or " };
                for (i, child) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    match child {
                        QueryAst::Term { .. } => write!(f, "{child}")?,
                        _ => write!(f, "({child})")?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> QueryAst {
        QueryAst::term(s, false)
    }

    #[test]
    fn wildcard_term() {
        assert_eq!(parse_query("real*").unwrap(), QueryAst::term("real", true));
    }

    #[test]
    fn grouping_and_precedence() {
        assert_eq!(
            parse_query("(a or b) and c").unwrap(),
            QueryAst::And(vec![QueryAst::Or(vec![t("a"), t("b")]), t("c")])
        );
        assert_eq!(
            parse_query("a or b AND c").unwrap(),
            QueryAst::Or(vec![t("a"), QueryAst::And(vec![t("b"), t("c")])])
        );
        assert_eq!(parse_query("FPSO").unwrap(), t("fpso"));
    }

    #[test]
    fn unbalanced_at_end() {
        let e = parse_query("(a or b").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnbalancedParenthesis);
        assert_eq!(e.position, 7);
        let e = parse_query("a)").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::UnbalancedParenthesis, 1));
    }

    #[test]
    fn other_errors() {
        assert_eq!(parse_query("a or").unwrap_err().kind, ParseErrorKind::TrailingOperator);
        assert_eq!(parse_query("a and *").unwrap_err().kind, ParseErrorKind::EmptyTerm);
        assert_eq!(parse_query("()").unwrap_err().kind, ParseErrorKind::EmptyTerm);
        assert_eq!(parse_query("  ").unwrap_err().kind, ParseErrorKind::EmptyQuery);
        assert!(matches!(parse_query("a b").unwrap_err().kind, ParseErrorKind::UnexpectedToken(_)));
        assert!(matches!(parse_query("a*b").unwrap_err().kind, ParseErrorKind::InvalidTerm(_)));
    }

    #[test]
    fn hyphenated_terms_stay_whole() {
        assert_eq!(parse_query("off-shore*").unwrap(), QueryAst::term("off-shore", true));
        assert!(eval_query(&parse_query("off-shore*").unwrap(), "an off-shore rig", TargetField::Description));
        assert!(!eval_query(&parse_query("shore").unwrap(), "an off-shore rig", TargetField::Description));
    }

    #[test]
    fn evaluation() {
        let f = TargetField::Description;
        assert!(eval_query(&QueryAst::term("augment", true), "an augmented reality display", f));
        assert!(!eval_query(&QueryAst::term("augment", false), "an augmented reality display", f));
        let both = QueryAst::And(vec![t("a"), t("b")]);
        assert!(!eval_query(&both, "only a here", f));
        assert!(!eval_query(&QueryAst::term("a", true), "", f));
    }

    #[test]
    fn sql_rendering() {
        let d = TargetField::Description;
        assert_eq!(emit_sql(&QueryAst::term("virtual", true), d), "REGEXP_CONTAINS(description.text, \" virtual%\")");
        assert_eq!(emit_sql(&t("ocean"), d), "REGEXP_CONTAINS(description.text, \" ocean \")");
        assert_eq!(
            emit_sql(&QueryAst::And(vec![t("x"), t("y")]), TargetField::Title),
            "(REGEXP_CONTAINS(title.text, \" x \") and REGEXP_CONTAINS(title.text, \" y \"))"
        );
    }

    #[test]
    fn printer() {
        let ast = parse_query("((a or b*) or c) and d").unwrap();
        assert_eq!(ast.to_string(), "((a or b*) or c) and d");
        assert_eq!(parse_query(&ast.to_string()).unwrap(), ast);
    }
}
