//! Access policy language.
//!
//! A policy is a monotone boolean formula over qualified attributes:
//!
//! ```text
//! or_expr  := and_expr ("or" and_expr)*
//! and_expr := primary ("and" primary)*
//! primary  := atom | "(" or_expr ")"
//! atom     := NAME "@" (AUTH_ID | INT "+")
//! ```
//!
//! `Manufacturer@A` requires the attribute certified by authority `A`;
//! `Supplier@2+` requires it from at least two authorities of the configured
//! universe. Policies are expanded into a [`NamespacedFormula`], a threshold
//! gate tree whose leaves are `name@authority` strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("invalid instance id {0:?}: must be a non-empty decimal string")]
    InvalidInstanceId(String),
    #[error("unknown authority {0:?}")]
    UnknownAuthority(String),
    #[error("threshold {threshold} for attribute {attribute:?} exceeds the {universe} configured authorities")]
    ThresholdTooLarge {
        attribute: String,
        threshold: usize,
        universe: usize,
    },
    #[error("empty policy file")]
    EmptyPolicyFile,
}

fn syntax(offset: usize, message: impl Into<String>) -> PolicyError {
    PolicyError::Syntax {
        offset,
        message: message.into(),
    }
}

/// Which authorities must certify an attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuthorityQualifier {
    Single(String),
    AtLeast(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub name: String,
    pub qualifier: AuthorityQualifier,
}

impl Atom {
    pub fn single(name: impl Into<String>, authority: impl Into<String>) -> Self {
        Atom {
            name: name.into(),
            qualifier: AuthorityQualifier::Single(authority.into()),
        }
    }

    pub fn at_least(name: impl Into<String>, n: usize) -> Self {
        Atom {
            name: name.into(),
            qualifier: AuthorityQualifier::AtLeast(n),
        }
    }
}

/// Parsed access policy. `And`/`Or` nodes always have at least two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyAst {
    And(Vec<PolicyAst>),
    Or(Vec<PolicyAst>),
    Atom(Atom),
}

impl PolicyAst {
    /// Evaluates the policy directly, reading `n+` as "certified by at least
    /// `n` distinct authorities". `certified` maps attribute names to the set
    /// of authorities that certified them.
    pub fn satisfied_by(&self, certified: &BTreeMap<String, BTreeSet<String>>) -> bool {
        match self {
            PolicyAst::And(children) => children.iter().all(|c| c.satisfied_by(certified)),
            PolicyAst::Or(children) => children.iter().any(|c| c.satisfied_by(certified)),
            PolicyAst::Atom(atom) => {
                let Some(authorities) = certified.get(&atom.name) else {
                    return false;
                };
                match &atom.qualifier {
                    AuthorityQualifier::Single(id) => authorities.contains(id),
                    AuthorityQualifier::AtLeast(n) => authorities.len() >= *n,
                }
            }
        }
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            PolicyAst::And(c) | PolicyAst::Or(c) => c.iter().for_each(|n| n.collect_atoms(out)),
            PolicyAst::Atom(a) => out.push(a),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            AuthorityQualifier::Single(id) => write!(f, "{}@{}", self.name, id),
            AuthorityQualifier::AtLeast(n) => write!(f, "{}@{}+", self.name, n),
        }
    }
}

/// Canonical text form. Compound children are always parenthesized, so the
/// output reparses to the same tree (including nested nodes of equal kind).
impl fmt::Display for PolicyAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (children, op) = match self {
            PolicyAst::Atom(a) => return a.fmt(f),
            PolicyAst::And(c) => (c, " and "),
            PolicyAst::Or(c) => (c, " or "),
        };
        for (i, child) in children.iter().enumerate() {
            if i > 0 {
                f.write_str(op)?;
            }
            match child {
                PolicyAst::Atom(a) => a.fmt(f)?,
                compound => write!(f, "({compound})")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    Word(&'a str),
    At,
    Plus,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok<'a>)>, PolicyError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(t) = lx.next_token()? {
            out.push(t);
        }
        Ok(out)
    }

    fn next_token(&mut self) -> Result<Option<(usize, Tok<'a>)>, PolicyError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&b) = bytes.get(self.pos) else {
            return Ok(None);
        };
        let tok = match b {
            b'@' => Tok::At,
            b'+' => Tok::Plus,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            c if is_word_byte(c) => {
                while self.pos < bytes.len() && is_word_byte(bytes[self.pos]) {
                    self.pos += 1;
                }
                return Ok(Some((start, Tok::Word(&self.src[start..self.pos]))));
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        };
        self.pos += 1;
        Ok(Some((start, tok)))
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn is_keyword(word: &str, kw: &str) -> bool {
    word.eq_ignore_ascii_case(kw)
}

/// Whether `s` can be used as an attribute or authority name in a policy.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(is_word_byte) && !is_keyword(s, "and") && !is_keyword(s, "or")
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    idx: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<(usize, Tok<'a>)> {
        let t = self.toks.get(self.idx).cloned();
        self.idx += 1;
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if is_keyword(w, kw))
    }

    fn or_expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut items = vec![self.and_expr()?];
        while self.peek_keyword("or") {
            self.bump();
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PolicyAst::Or(items)
        })
    }

    fn and_expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut items = vec![self.primary()?];
        while self.peek_keyword("and") {
            self.bump();
            items.push(self.primary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PolicyAst::And(items)
        })
    }

    fn primary(&mut self) -> Result<PolicyAst, PolicyError> {
        let offset = self.offset();
        match self.bump() {
            Some((_, Tok::LParen)) => {
                let inner = self.or_expr()?;
                match self.bump() {
                    Some((_, Tok::RParen)) => Ok(inner),
                    Some((o, _)) => Err(syntax(o, "expected ')'")),
                    None => Err(syntax(self.end, "unbalanced '(': expected ')'")),
                }
            }
            Some((o, Tok::Word(w))) if is_keyword(w, "and") || is_keyword(w, "or") => {
                Err(syntax(o, format!("dangling operator {w:?}")))
            }
            Some((_, Tok::Word(name))) => self.atom_tail(name).map(PolicyAst::Atom),
            Some((o, Tok::RParen)) => Err(syntax(o, "unexpected ')'")),
            Some((o, _)) => Err(syntax(o, "expected attribute or '('")),
            None => Err(syntax(offset, "expected attribute or '(' but input ended")),
        }
    }

    fn atom_tail(&mut self, name: &str) -> Result<Atom, PolicyError> {
        match self.bump() {
            Some((_, Tok::At)) => {}
            Some((o, _)) => {
                return Err(syntax(o, format!("malformed atom {name:?}: expected '@'")))
            }
            None => {
                return Err(syntax(
                    self.end,
                    format!("malformed atom {name:?}: expected '@'"),
                ))
            }
        }
        let (qoff, qual) = match self.bump() {
            Some((o, Tok::Word(w))) => (o, w),
            Some((o, _)) => return Err(syntax(o, "malformed atom: expected authority after '@'")),
            None => {
                return Err(syntax(
                    self.end,
                    "malformed atom: expected authority after '@'",
                ))
            }
        };
        if matches!(self.peek(), Some(Tok::Plus)) {
            self.bump();
            if !qual.bytes().all(|b| b.is_ascii_digit()) {
                return Err(syntax(
                    qoff,
                    format!("threshold {qual:?} is not an integer"),
                ));
            }
            let n: usize = qual
                .parse()
                .map_err(|_| syntax(qoff, format!("threshold {qual:?} out of range")))?;
            if n == 0 {
                return Err(syntax(qoff, "zero threshold"));
            }
            return Ok(Atom::at_least(name, n));
        }
        Ok(Atom::single(name, qual))
    }
}

/// Parses a policy. Keywords are case-insensitive; names are case-sensitive.
pub fn parse_policy(text: &str) -> Result<PolicyAst, PolicyError> {
    let toks = Lexer::tokens(text)?;
    if toks.is_empty() {
        return Err(syntax(0, "empty policy"));
    }
    let mut p = Parser {
        toks,
        idx: 0,
        end: text.len(),
    };
    let ast = p.or_expr()?;
    if let Some((o, t)) = p.toks.get(p.idx) {
        let msg = match t {
            Tok::RParen => "unbalanced ')'".to_string(),
            Tok::Word(w) => format!("unexpected {w:?}: expected 'and', 'or' or end of input"),
            _ => "unexpected trailing input".to_string(),
        };
        return Err(syntax(*o, msg));
    }
    Ok(ast)
}

/// Prefixes `instance_id@<universe_size>+ and (...)` to a policy, binding it
/// to one process instance that every authority must vouch for.
pub fn inject_instance_clause(
    ast: PolicyAst,
    instance_id: &str,
    universe_size: usize,
) -> Result<PolicyAst, PolicyError> {
    if instance_id.is_empty() || !instance_id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(PolicyError::InvalidInstanceId(instance_id.to_string()));
    }
    let clause = PolicyAst::Atom(Atom::at_least(instance_id, universe_size));
    if let PolicyAst::And(children) = &ast {
        if children.first() == Some(&clause) {
            return Ok(ast);
        }
    }
    Ok(PolicyAst::And(vec![clause, ast]))
}

/// Threshold gate tree with namespaced leaves (`name@authority`).
/// AND is `Threshold(n, n children)`, OR is `Threshold(1, ..)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NamespacedFormula {
    Leaf(String),
    Threshold {
        threshold: usize,
        children: Vec<NamespacedFormula>,
    },
}

impl NamespacedFormula {
    pub fn evaluate<S>(&self, owned: &BTreeSet<S>) -> bool
    where
        S: Ord + std::borrow::Borrow<str>,
    {
        match self {
            NamespacedFormula::Leaf(attr) => owned.contains(attr.as_str()),
            NamespacedFormula::Threshold {
                threshold,
                children,
            } => children.iter().filter(|c| c.evaluate(owned)).count() >= *threshold,
        }
    }

    /// Leaves in depth-first order (the LSSS row order).
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            NamespacedFormula::Leaf(a) => out.push(a),
            NamespacedFormula::Threshold { children, .. } => {
                children.iter().for_each(|c| c.collect_leaves(out))
            }
        }
    }
}

/// Boolean oracle: `≥ t` satisfied children at every gate, leaves by
/// membership in `owned`.
pub fn evaluate_formula(f: &NamespacedFormula, owned: &BTreeSet<String>) -> bool {
    f.evaluate(owned)
}

pub fn namespaced(name: &str, authority: &str) -> String {
    format!("{name}@{authority}")
}

/// Splits `name@authority` at the last `@`.
pub fn split_namespaced(attr: &str) -> Option<(&str, &str)> {
    attr.rsplit_once('@')
        .filter(|(n, a)| !n.is_empty() && !a.is_empty())
}

pub fn expand_policy(
    ast: &PolicyAst,
    universe: &[String],
) -> Result<NamespacedFormula, PolicyError> {
    match ast {
        PolicyAst::And(children) => Ok(NamespacedFormula::Threshold {
            threshold: children.len(),
            children: expand_all(children, universe)?,
        }),
        PolicyAst::Or(children) => Ok(NamespacedFormula::Threshold {
            threshold: 1,
            children: expand_all(children, universe)?,
        }),
        PolicyAst::Atom(atom) => match &atom.qualifier {
            AuthorityQualifier::Single(id) => {
                if !universe.contains(id) {
                    return Err(PolicyError::UnknownAuthority(id.clone()));
                }
                Ok(NamespacedFormula::Leaf(namespaced(&atom.name, id)))
            }
            AuthorityQualifier::AtLeast(n) => {
                if *n > universe.len() {
                    return Err(PolicyError::ThresholdTooLarge {
                        attribute: atom.name.clone(),
                        threshold: *n,
                        universe: universe.len(),
                    });
                }
                Ok(NamespacedFormula::Threshold {
                    threshold: *n,
                    children: universe
                        .iter()
                        .map(|id| NamespacedFormula::Leaf(namespaced(&atom.name, id)))
                        .collect(),
                })
            }
        },
    }
}

fn expand_all(
    children: &[PolicyAst],
    universe: &[String],
) -> Result<Vec<NamespacedFormula>, PolicyError> {
    children
        .iter()
        .map(|c| expand_policy(c, universe))
        .collect()
}

/// Reads a policy file: one policy per non-empty line, `#` starts a comment
/// line. Each returned policy has been checked to parse.
pub fn parse_policy_file(text: &str) -> Result<Vec<String>, PolicyError> {
    let mut policies = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            parse_policy(trimmed).map_err(|e| match e {
                PolicyError::Syntax { offset: o, message } => {
                    let lead = line.len() - line.trim_start().len();
                    syntax(offset + lead + o, message)
                }
                other => other,
            })?;
            policies.push(trimmed.to_string());
        }
        offset += line.len();
    }
    if policies.is_empty() {
        return Err(PolicyError::EmptyPolicyFile);
    }
    Ok(policies)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SLICE3: &str = "(43175279@4+ and ((Supplier@2+ and International@B) or Manufacturer@A))";

    fn universe() -> Vec<String> {
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect()
    }

    fn slice3_ast() -> PolicyAst {
        PolicyAst::And(vec![
            PolicyAst::Atom(Atom::at_least("43175279", 4)),
            PolicyAst::Or(vec![
                PolicyAst::And(vec![
                    PolicyAst::Atom(Atom::at_least("Supplier", 2)),
                    PolicyAst::Atom(Atom::single("International", "B")),
                ]),
                PolicyAst::Atom(Atom::single("Manufacturer", "A")),
            ]),
        ])
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn all_authorities(name: &str) -> Vec<String> {
        universe().iter().map(|a| namespaced(name, a)).collect()
    }

    #[test]
    fn parses_slice_three_policy() {
        assert_eq!(parse_policy(SLICE3).unwrap(), slice3_ast());
    }

    #[test]
    fn parses_single_atom() {
        assert_eq!(
            parse_policy("Manufacturer@A").unwrap(),
            PolicyAst::Atom(Atom::single("Manufacturer", "A"))
        );
    }

    #[test]
    fn rejects_zero_threshold() {
        let err = parse_policy("Customs@0+").unwrap_err();
        assert_eq!(
            err,
            PolicyError::Syntax {
                offset: 8,
                message: "zero threshold".into()
            }
        );
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let ast = parse_policy("a@A or b@A and c@A").unwrap();
        assert_eq!(
            ast,
            PolicyAst::Or(vec![
                PolicyAst::Atom(Atom::single("a", "A")),
                PolicyAst::And(vec![
                    PolicyAst::Atom(Atom::single("b", "A")),
                    PolicyAst::Atom(Atom::single("c", "A")),
                ]),
            ])
        );
    }

    #[test]
    fn keywords_are_case_insensitive_names_are_not() {
        let a = parse_policy("x@A AND y@B Or z@C").unwrap();
        let b = parse_policy("x@A and y@B or z@C").unwrap();
        assert_eq!(a, b);
        assert_ne!(parse_policy("X@A").unwrap(), parse_policy("x@A").unwrap());
    }

    #[test]
    fn whitespace_is_insignificant() {
        let a = parse_policy("( x @ A and\n\ty@2 + )").unwrap();
        assert_eq!(a, parse_policy("(x@A and y@2+)").unwrap());
    }

    #[test]
    fn syntax_errors_report_offsets() {
        let cases = [
            ("(a@A and b@B", 12),
            ("a@A and b@B)", 11),
            ("a@A and", 7),
            ("and a@A", 0),
            ("a@A or or b@B", 7),
            ("a@", 2),
            ("a", 1),
            ("a@A b@B", 4),
            ("a@x+", 2),
            ("a@A & b@B", 4),
            ("", 0),
            ("()", 1),
        ];
        for (text, expected) in cases {
            match parse_policy(text) {
                Err(PolicyError::Syntax { offset, .. }) => {
                    assert_eq!(offset, expected, "offset for {text:?}")
                }
                other => panic!("{text:?}: expected syntax error, got {other:?}"),
            }
        }
    }

    #[test]
    fn injects_instance_clause_idempotently() {
        let base = parse_policy("((Supplier@2+ and International@B) or Manufacturer@A)").unwrap();
        let once = inject_instance_clause(base, "43175279", 4).unwrap();
        assert_eq!(once, slice3_ast());
        let twice = inject_instance_clause(once.clone(), "43175279", 4).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn rejects_non_numeric_instance() {
        let ast = parse_policy("a@A").unwrap();
        assert_eq!(
            inject_instance_clause(ast.clone(), "abc", 4),
            Err(PolicyError::InvalidInstanceId("abc".into()))
        );
        assert!(inject_instance_clause(ast, "", 4).is_err());
    }

    #[test]
    fn expands_threshold_over_universe() {
        let f =
            expand_policy(&PolicyAst::Atom(Atom::at_least("Supplier", 2)), &universe()).unwrap();
        assert_eq!(
            f,
            NamespacedFormula::Threshold {
                threshold: 2,
                children: all_authorities("Supplier")
                    .into_iter()
                    .map(NamespacedFormula::Leaf)
                    .collect(),
            }
        );
        let leaf = expand_policy(
            &PolicyAst::Atom(Atom::single("Manufacturer", "A")),
            &universe(),
        )
        .unwrap();
        assert_eq!(leaf, NamespacedFormula::Leaf("Manufacturer@A".into()));
    }

    #[test]
    fn expansion_errors() {
        assert!(matches!(
            expand_policy(&PolicyAst::Atom(Atom::at_least("X", 5)), &universe()),
            Err(PolicyError::ThresholdTooLarge {
                threshold: 5,
                universe: 4,
                ..
            })
        ));
        assert_eq!(
            expand_policy(&PolicyAst::Atom(Atom::single("X", "E")), &universe()),
            Err(PolicyError::UnknownAuthority("E".into()))
        );
    }

    #[test]
    fn evaluates_slice_three() {
        let f = expand_policy(&slice3_ast(), &universe()).unwrap();
        let mut manufacturer = set(&["Manufacturer@A"]);
        manufacturer.extend(all_authorities("43175279"));
        assert!(evaluate_formula(&f, &manufacturer));

        let mut customs: BTreeSet<String> = all_authorities("Customs").into_iter().collect();
        customs.extend(all_authorities("43175279"));
        assert!(!evaluate_formula(&f, &customs));

        assert!(!evaluate_formula(&f, &BTreeSet::new()));
    }

    #[test]
    fn policy_file_skips_comments() {
        let text =
            "# export document\nManufacturer@A\n\n  # indented comment\nCustoms@2+ or Carrier@A\n";
        assert_eq!(
            parse_policy_file(text).unwrap(),
            vec![
                "Manufacturer@A".to_string(),
                "Customs@2+ or Carrier@A".into()
            ]
        );
        assert_eq!(
            parse_policy_file("# nothing\n\n"),
            Err(PolicyError::EmptyPolicyFile)
        );
        assert_eq!(
            parse_policy_file("a@A\nb@B and\n"),
            Err(PolicyError::Syntax {
                offset: 11,
                message: "expected attribute or '(' but input ended".into()
            })
        );
    }

    #[test]
    fn split_namespaced_uses_last_at() {
        assert_eq!(split_namespaced("Supplier@B"), Some(("Supplier", "B")));
        assert_eq!(split_namespaced("Supplier"), None);
        assert_eq!(split_namespaced("@B"), None);
    }
}
