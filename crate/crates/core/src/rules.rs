//! Keyword rule language for helpfulness scoring and candidate drop-rules.
//!
//! A rule file holds one clause per line:
//!
//! ```text
//! # superconductivity
//! @question	q17
//! 1	"温度"
//! 1	"抵抗"
//! 2	ANY("ゼロ", "0")
//! ALL("磁", NOT("電流"))
//! ```
//!
//! The optional leading `weight<TAB>` defaults to 1. Expressions are quoted
//! literals (`\"`, `\\`, `\t`, `\n` escapes) or `ALL(...)`, `ANY(...)` and
//! `NOT(...)` in prefix form. Drop-rule files use the same grammar; every
//! clause is a "drop when true" condition and weights are ignored.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{NormalizationRuleTable, NormalizedText};

#[derive(Debug, Clone, PartialEq)]
pub enum RuleExpr {
    Term(String),
    Any(Vec<RuleExpr>),
    All(Vec<RuleExpr>),
    Not(Box<RuleExpr>),
}

impl RuleExpr {
    pub fn term(s: impl Into<String>) -> Self {
        RuleExpr::Term(s.into())
    }

    /// Evaluates with a caller-supplied containment test for terms.
    pub fn eval_with(&self, contains: &mut impl FnMut(&str) -> bool) -> bool {
        match self {
            RuleExpr::Term(t) => contains(t),
            RuleExpr::Any(children) => children.iter().any(|c| c.eval_with(contains)),
            RuleExpr::All(children) => children.iter().all(|c| c.eval_with(contains)),
            RuleExpr::Not(child) => !child.eval_with(contains),
        }
    }

    pub fn eval_str(&self, text: &str) -> bool {
        self.eval_with(&mut |t| text.contains(t))
    }

    pub fn contains_not(&self) -> bool {
        match self {
            RuleExpr::Term(_) => false,
            RuleExpr::Any(c) | RuleExpr::All(c) => c.iter().any(RuleExpr::contains_not),
            RuleExpr::Not(_) => true,
        }
    }

    /// Every literal in the tree, depth-first.
    pub fn terms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_terms(&mut out);
        out
    }

    fn collect_terms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RuleExpr::Term(t) => out.push(t),
            RuleExpr::Any(c) | RuleExpr::All(c) => c.iter().for_each(|e| e.collect_terms(out)),
            RuleExpr::Not(c) => c.collect_terms(out),
        }
    }

    fn map_terms(&self, f: &impl Fn(&str) -> Result<String>) -> Result<RuleExpr> {
        Ok(match self {
            RuleExpr::Term(t) => RuleExpr::Term(f(t)?),
            RuleExpr::Any(c) => {
                RuleExpr::Any(c.iter().map(|e| e.map_terms(f)).collect::<Result<_>>()?)
            }
            RuleExpr::All(c) => {
                RuleExpr::All(c.iter().map(|e| e.map_terms(f)).collect::<Result<_>>()?)
            }
            RuleExpr::Not(c) => RuleExpr::Not(Box::new(c.map_terms(f)?)),
        })
    }
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, children: &[RuleExpr]| {
            write!(f, "{name}(")?;
            for (i, child) in children.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{child}")?;
            }
            f.write_str(")")
        };
        match self {
            RuleExpr::Term(t) => {
                f.write_str("\"")?;
                for c in t.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\t' => f.write_str("\\t")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            RuleExpr::Any(c) => list(f, "ANY", c),
            RuleExpr::All(c) => list(f, "ALL", c),
            RuleExpr::Not(c) => write!(f, "NOT({c})"),
        }
    }
}

/// TERM is substring containment in the normalized text.
pub fn eval_rule(expr: &RuleExpr, text: &NormalizedText) -> bool {
    expr.eval_str(text.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub weight: f64,
    pub expr: RuleExpr,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    /// Empty when the source carried no `@question` directive.
    pub question_id: String,
    pub clauses: Vec<Clause>,
}

impl RuleSet {
    pub fn total_weight(&self) -> f64 {
        self.clauses.iter().map(|c| c.weight).sum()
    }

    /// Weighted fraction of clauses for which `satisfied` holds. Both sums
    /// run in clause order.
    pub fn weighted_fraction(&self, mut satisfied: impl FnMut(&RuleExpr) -> bool) -> f64 {
        let total = self.total_weight();
        if total <= 0.0 {
            return 0.0;
        }
        let hit: f64 = self
            .clauses
            .iter()
            .filter(|c| satisfied(&c.expr))
            .map(|c| c.weight)
            .sum();
        hit / total
    }

    /// Rewrites every literal through the normalization table so terms and
    /// responses are compared in the same form.
    pub fn normalized_terms(&self, table: &NormalizationRuleTable) -> Result<RuleSet> {
        let clauses = self
            .clauses
            .iter()
            .map(|c| {
                let expr = c.expr.map_terms(&|t| {
                    let n = table.apply(t);
                    if n.is_empty() {
                        Err(Error::Config(format!(
                            "rules for {:?}: term {t:?} is empty after normalization",
                            self.question_id
                        )))
                    } else {
                        Ok(n)
                    }
                })?;
                Ok(Clause {
                    weight: c.weight,
                    expr,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RuleSet {
            question_id: self.question_id.clone(),
            clauses,
        })
    }

    /// Strict lint: helpfulness clauses limited to AND/OR.
    pub fn forbid_not(&self) -> Result<()> {
        match self.clauses.iter().position(|c| c.expr.contains_not()) {
            Some(i) => Err(Error::Config(format!(
                "rules for {:?}: clause {} uses NOT",
                self.question_id,
                i + 1
            ))),
            None => Ok(()),
        }
    }

    /// Canonical source form; parsing it yields an equal rule set.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        if !self.question_id.is_empty() {
            out.push_str(&format!("@question\t{}\n", self.question_id));
        }
        for clause in &self.clauses {
            out.push_str(&format!("{}\t{}\n", clause.weight, clause.expr));
        }
        out
    }
}

/// Σ weights of satisfied clauses / Σ all weights; 0 for an empty set.
pub fn rule_score(rules: &RuleSet, text: &NormalizedText) -> f64 {
    rules.weighted_fraction(|expr| eval_rule(expr, text))
}

/// A "drop the candidate when true" condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRule {
    pub question_id: String,
    pub expr: RuleExpr,
}

impl DropRule {
    pub fn matches(&self, text: &NormalizedText) -> bool {
        eval_rule(&self.expr, text)
    }
}

pub fn parse_rules(source: &str) -> Result<RuleSet> {
    let mut set = RuleSet::default();
    for (lineno, raw) in source.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("@question") {
            let id = rest.trim();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: 1,
                    message: "@question needs an id".into(),
                });
            }
            if !set.question_id.is_empty() && set.question_id != id {
                return Err(Error::Config(format!(
                    "line {}: conflicting @question {id:?} (already {:?})",
                    lineno + 1,
                    set.question_id
                )));
            }
            set.question_id = id.to_owned();
            continue;
        }
        let (weight, expr_src, expr_col) = match line.split_once('\t') {
            Some((w, rest)) => {
                let weight: f64 = w.trim().parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    column: 1,
                    message: format!("bad weight {:?}", w.trim()),
                })?;
                (weight, rest, w.chars().count() + 2)
            }
            None => (1.0, line, 1),
        };
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::Config(format!(
                "line {}: clause weight must be positive, got {weight}",
                lineno + 1
            )));
        }
        let expr = Parser::new(expr_src, lineno + 1, expr_col).parse_clause()?;
        set.clauses.push(Clause { weight, expr });
    }
    Ok(set)
}

pub fn parse_drop_rules(source: &str) -> Result<Vec<DropRule>> {
    let set = parse_rules(source)?;
    Ok(set
        .clauses
        .into_iter()
        .map(|c| DropRule {
            question_id: set.question_id.clone(),
            expr: c.expr,
        })
        .collect())
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col_offset: usize,
}

impl Parser {
    fn new(src: &str, line: usize, col_offset: usize) -> Self {
        Parser {
            chars: src.chars().collect(),
            pos: 0,
            line,
            col_offset,
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.col_offset + self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn parse_clause(mut self) -> Result<RuleExpr> {
        let expr = self.parse_expr()?;
        self.skip_ws();
        if self.pos < self.chars.len() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(expr)
    }

    fn parse_expr(&mut self) -> Result<RuleExpr> {
        self.skip_ws();
        match self.peek() {
            Some('"') => self.parse_term(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_operator(),
            Some(c) => Err(self.error(format!("unexpected {c:?}"))),
            None => Err(self.error("expected an expression")),
        }
    }

    fn parse_term(&mut self) -> Result<RuleExpr> {
        let start = self.pos;
        self.pos += 1;
        let mut literal = String::new();
        loop {
            match self.peek() {
                None => {
                    self.pos = start;
                    return Err(self.error("unterminated string"));
                }
                Some('"') => {
                    self.pos += 1;
                    break;
                }
                Some('\\') => {
                    self.pos += 1;
                    let escaped = match self.peek() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('t') => '\t',
                        Some('n') => '\n',
                        _ => return Err(self.error("unknown escape")),
                    };
                    literal.push(escaped);
                    self.pos += 1;
                }
                Some(c) => {
                    literal.push(c);
                    self.pos += 1;
                }
            }
        }
        if literal.is_empty() {
            self.pos = start;
            return Err(self.error("empty term"));
        }
        Ok(RuleExpr::Term(literal))
    }

    fn parse_operator(&mut self) -> Result<RuleExpr> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if !matches!(name.as_str(), "ALL" | "ANY" | "NOT") {
            self.pos = start;
            return Err(self.error(format!("unknown operator {name:?}")));
        }
        self.skip_ws();
        if self.peek() != Some('(') {
            return Err(self.error(format!("expected '(' after {name}")));
        }
        self.pos += 1;
        let mut children = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            return Err(self.error(format!("{name}() needs at least one operand")));
        }
        loop {
            children.push(self.parse_expr()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.error("expected ',' or ')'")),
            }
        }
        Ok(match name.as_str() {
            "ALL" => RuleExpr::All(children),
            "ANY" => RuleExpr::Any(children),
            _ => {
                if children.len() != 1 {
                    self.pos = start;
                    return Err(self.error("NOT takes exactly one operand"));
                }
                RuleExpr::Not(Box::new(children.pop().expect("length checked")))
            }
        })
    }
}

/// Loads every `*.<extension>` file in `dir`, keyed by question id (the
/// `@question` directive, else the file stem).
pub fn load_rule_dir(dir: &Path, extension: &str) -> Result<BTreeMap<String, RuleSet>> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == extension))
        .collect();
    paths.sort();
    for path in paths {
        let source = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut set = parse_rules(&source).map_err(|e| match e {
            Error::Parse {
                line,
                column,
                message,
            } => Error::Parse {
                line,
                column,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        if set.question_id.is_empty() {
            set.question_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        if out.contains_key(&set.question_id) {
            return Err(Error::Config(format!(
                "duplicate rules for question {:?} ({})",
                set.question_id,
                path.display()
            )));
        }
        out.insert(set.question_id.clone(), set);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::PunctuationSet;
    use proptest::prelude::*;

    fn nt(s: &str) -> NormalizedText {
        NormalizedText::from_normalized(s, &PunctuationSet::default())
    }

    fn term(s: &str) -> RuleExpr {
        RuleExpr::term(s)
    }

    #[test]
    fn parses_nested_expression() {
        let set = parse_rules("ALL(ANY(\"zero\",\"0\"), \"resistance\")\n").unwrap();
        assert_eq!(set.clauses.len(), 1);
        assert_eq!(set.clauses[0].weight, 1.0);
        assert_eq!(
            set.clauses[0].expr,
            RuleExpr::All(vec![
                RuleExpr::Any(vec![term("zero"), term("0")]),
                term("resistance")
            ])
        );
    }

    #[test]
    fn rejects_bad_input() {
        let err = parse_rules("ANY()\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(matches!(parse_rules("-1\t\"x\"\n"), Err(Error::Config(_))));
        assert!(matches!(parse_rules("0\t\"x\"\n"), Err(Error::Config(_))));
        let err = parse_rules("# c\n\nOR(\"a\")\n").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    line: 3,
                    column: 1,
                    ..
                }
            ),
            "{err}"
        );
        assert!(parse_rules("\"\"\n").is_err());
        assert!(parse_rules("NOT(\"a\", \"b\")\n").is_err());
        assert!(parse_rules("\"a\" \"b\"\n").is_err());
        assert!(parse_rules("\"abc\n").is_err());
        let err = parse_rules("2\tALL(\"a\",, \"b\")\n").unwrap_err();
        assert!(matches!(err, Error::Parse { column: 11, .. }), "{err}");
    }

    #[test]
    fn evaluation_semantics() {
        assert!(eval_rule(&term("x"), &nt("axb")));
        assert!(!eval_rule(&RuleExpr::Not(Box::new(term("x"))), &nt("axb")));
        let drop = parse_drop_rules("ANY(\"11\", \"23\")\n").unwrap();
        assert!(!drop[0].matches(&nt("1日に22回重なります。")));
        assert!(drop[0].matches(&nt("1日に23回重なります。")));
    }

    #[test]
    fn weighted_scores() {
        let four = parse_rules("\"温度\"\n\"抵抗\"\nANY(\"ゼロ\",\"0\")\n\"磁\"\n").unwrap();
        assert_eq!(rule_score(&four, &nt("低温度で電気抵抗が0になる")), 0.75);
        assert_eq!(rule_score(&four, &nt("温度 抵抗 ゼロ 磁場")), 1.0);
        let weighted = parse_rules("2\t\"a\"\n1\t\"b\"\n1\t\"c\"\n").unwrap();
        assert_eq!(rule_score(&weighted, &nt("a")), 0.5);
    }

    #[test]
    fn lint_and_term_normalization() {
        let set = parse_rules("ALL(\"a\", NOT(\"b\"))\n").unwrap();
        assert!(set.forbid_not().is_err());
        let set = parse_rules("\"ＡＢ\"\n").unwrap();
        let n = set
            .normalized_terms(&NormalizationRuleTable::default())
            .unwrap();
        assert_eq!(n.clauses[0].expr, term("AB"));
        let blank = parse_rules("\"　\"\n").unwrap();
        assert!(blank
            .normalized_terms(&NormalizationRuleTable::default())
            .is_err());
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("q1.rules"), "\"a\"\n").unwrap();
        std::fs::write(dir.path().join("other.rules"), "@question\tq2\n\"b\"\n").unwrap();
        std::fs::write(dir.path().join("ignored.txt"), "junk(\n").unwrap();
        let sets = load_rule_dir(dir.path(), "rules").unwrap();
        assert_eq!(sets.keys().collect::<Vec<_>>(), ["q1", "q2"]);
        std::fs::write(dir.path().join("zzz.rules"), "@question\tq1\n\"c\"\n").unwrap();
        assert!(matches!(
            load_rule_dir(dir.path(), "rules"),
            Err(Error::Config(_))
        ));
    }

    fn expr_strategy() -> impl Strategy<Value = RuleExpr> {
        let leaf = "[a-c\"\\\\\t 漢]{1,4}".prop_map(RuleExpr::Term);
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(RuleExpr::Any),
                prop::collection::vec(inner.clone(), 1..4).prop_map(RuleExpr::All),
                inner.prop_map(|e| RuleExpr::Not(Box::new(e))),
            ]
        })
    }

    fn negation_free() -> impl Strategy<Value = RuleExpr> {
        let leaf = "[ab]{1,2}".prop_map(RuleExpr::Term);
        leaf.prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(RuleExpr::Any),
                prop::collection::vec(inner, 1..4).prop_map(RuleExpr::All),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(
            exprs in prop::collection::vec(expr_strategy(), 1..5),
            weights in prop::collection::vec(0.01f64..100.0, 5),
        ) {
            let set = RuleSet {
                question_id: "q".into(),
                clauses: exprs
                    .into_iter()
                    .zip(weights)
                    .map(|(expr, weight)| Clause { weight, expr })
                    .collect(),
            };
            let parsed = parse_rules(&set.to_source()).unwrap();
            prop_assert_eq!(&parsed, &set);
            prop_assert_eq!(parse_rules(&parsed.to_source()).unwrap(), parsed);
        }

        #[test]
        fn negation_free_rules_are_monotone(expr in negation_free(), text in "[ab]{0,6}", tail in "[ab]{0,6}") {
            if expr.eval_str(&text) {
                let extended = format!("{text}{tail}");
                prop_assert!(expr.eval_str(&extended));
            }
        }

        #[test]
        fn clause_order_is_irrelevant(exprs in prop::collection::vec(negation_free(), 1..6), text in "[ab]{0,6}") {
            let set = RuleSet {
                question_id: String::new(),
                clauses: exprs.iter().cloned().map(|expr| Clause { weight: 1.0, expr }).collect(),
            };
            let mut reversed = set.clone();
            reversed.clauses.reverse();
            let t = nt(&text);
            prop_assert_eq!(rule_score(&set, &t), rule_score(&reversed, &t));
        }
    }
}
