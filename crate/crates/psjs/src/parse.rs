//! Parser for the textual model format.
//!
//! One statement per line:
//! - `# comment`
//! - `states: q r s`
//! - `start: X`
//! - `flags: branching degree3 normalised`
//! - `LHS -> RHS : PROB` where LHS is a basic name or `<q r>`, RHS is a
//!   symbol, `<S1 S2>`, or `<S1 S2 S3>`, and PROB is a decimal, an integer,
//!   or a fraction `num/den`.
//!
//! Names are bare tokens; names containing whitespace or reserved characters
//! are written in double quotes. Decimal probabilities are converted to exact
//! rationals (`0.5` becomes `1/2`).

use num::{BigInt, Zero};
use thiserror::Error;

use crate::model::{Diagnostic, ModelFlags, PsjsModel, Rational, Rhs, Rule, Symbol};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}, col {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid model:\n{}", .0.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Name(String),
    Open,   // <
    Close,  // >
    Arrow,  // ->
    Colon,  // :
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<(Token, usize)>, ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            _ if c.is_whitespace() => i += 1,
            '#' => break,
            '-' if chars.get(i + 1) == Some(&'>') => {
                tokens.push((Token::Arrow, col));
                i += 2;
            }
            '<' => {
                tokens.push((Token::Open, col));
                i += 1;
            }
            '>' => {
                tokens.push((Token::Close, col));
                i += 1;
            }
            ':' => {
                tokens.push((Token::Colon, col));
                i += 1;
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(syntax(line_no, col, "unterminated quoted name"));
                }
                tokens.push((Token::Name(chars[start..j].iter().collect()), col));
                i = j + 1;
            }
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '<' | '>' | ':' | '"' | '#')
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                tokens.push((Token::Name(word), col));
            }
        }
    }
    Ok(tokens)
}

struct LineParser<'a> {
    tokens: &'a [(Token, usize)],
    pos: usize,
    line: usize,
}

impl<'a> LineParser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map(|(_, c)| *c)
            .unwrap_or(1)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t);
        self.pos += 1;
        t
    }

    fn expect_name(&mut self) -> Result<String, ParseError> {
        let (line, col) = (self.line, self.col());
        match self.next() {
            Some(Token::Name(n)) => Ok(n.clone()),
            other => Err(syntax(line, col, format!("expected a name, found {other:?}"))),
        }
    }

    /// Parses a symbol occurrence: a name or `<elem elem>` used as a single
    /// symbol (which must denote a join of two names).
    fn parse_element(&mut self, sync: &dyn Fn(&str) -> bool) -> Result<Symbol, ParseError> {
        let (line, col) = (self.line, self.col());
        match self.next() {
            Some(Token::Name(n)) => {
                let n = n.clone();
                Ok(if sync(&n) {
                    Symbol::Sync(n)
                } else {
                    Symbol::Basic(n)
                })
            }
            Some(Token::Open) => {
                let a = self.expect_name()?;
                let b = self.expect_name()?;
                let (line, col) = (self.line, self.col());
                match self.next() {
                    Some(Token::Close) => Ok(Symbol::Join(a, b)),
                    _ => Err(syntax(line, col, "expected '>' closing a join symbol")),
                }
            }
            other => Err(syntax(
                line,
                col,
                format!("expected a symbol, found {other:?}"),
            )),
        }
    }

    fn parse_rhs(&mut self, sync: &dyn Fn(&str) -> bool) -> Result<Rhs, ParseError> {
        if self.peek() != Some(&Token::Open) {
            return Ok(Rhs::Single(self.parse_element(sync)?));
        }
        // `<...>` as rhs: two or three elements, where a 2-element group of
        // names may itself be a nested element of an outer group. Here at the
        // top level, parse the group and decide by arity.
        self.next(); // consume '<'
        let mut elems = Vec::new();
        loop {
            match self.peek() {
                Some(Token::Close) => {
                    self.next();
                    break;
                }
                None => {
                    return Err(syntax(self.line, self.col(), "expected '>' closing rhs"))
                }
                _ => elems.push(self.parse_element(sync)?),
            }
        }
        match elems.len() {
            1 => Ok(Rhs::Single(elems.pop().unwrap())),
            2 => {
                let b = elems.pop().unwrap();
                let a = elems.pop().unwrap();
                // `<q r>` over sync names denotes the same tree whether read
                // as a join symbol or a binary split; Pair is canonical.
                Ok(Rhs::Pair(a, b))
            }
            3 => {
                let c = elems.pop().unwrap();
                let b = elems.pop().unwrap();
                let a = elems.pop().unwrap();
                Ok(Rhs::Triple(a, b, c))
            }
            n => Err(syntax(
                self.line,
                self.col(),
                format!("rhs group must have 2 or 3 symbols, found {n}"),
            )),
        }
    }
}

/// Parses an exact rational probability: `num/den`, a decimal, or an integer.
pub fn parse_rational(text: &str) -> Option<Rational> {
    if let Some((num, den)) = text.split_once('/') {
        let num: BigInt = num.parse().ok()?;
        let den: BigInt = den.parse().ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(Rational::new(num, den));
    }
    if let Some((int_part, frac_part)) = text.split_once('.') {
        if !frac_part.chars().all(|c| c.is_ascii_digit()) || frac_part.is_empty() {
            return None;
        }
        let int_part: BigInt = if int_part.is_empty() {
            BigInt::zero()
        } else {
            int_part.parse().ok()?
        };
        let digits: BigInt = frac_part.parse().ok()?;
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        return Some(Rational::from(int_part) + Rational::new(digits, scale));
    }
    let n: BigInt = text.parse().ok()?;
    Some(Rational::from(n))
}

/// Parses and validates a model. Any validation diagnostic is an error.
pub fn parse_model(text: &str) -> Result<PsjsModel, ParseError> {
    // First pass: collect sync states and flags so rule symbols can be
    // classified regardless of statement order.
    let mut sync_states: Vec<String> = Vec::new();
    let mut flags = ModelFlags::default();
    let mut rule_lines: Vec<(usize, Vec<(Token, usize)>)> = Vec::new();
    let mut start_spec: Option<(usize, Vec<(Token, usize)>)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        let head = match &tokens[0].0 {
            Token::Name(n) if tokens.get(1).map(|(t, _)| t) == Some(&Token::Colon) => {
                Some(n.as_str())
            }
            _ => None,
        };
        match head {
            Some("states") => {
                for (t, col) in &tokens[2..] {
                    match t {
                        Token::Name(n) => sync_states.push(n.clone()),
                        _ => return Err(syntax(line_no, *col, "expected state names")),
                    }
                }
            }
            Some("flags") => {
                for (t, col) in &tokens[2..] {
                    match t {
                        Token::Name(n) if n == "branching" => flags.branching = true,
                        Token::Name(n) if n == "degree3" => flags.degree3 = true,
                        Token::Name(n) if n == "normalised" => flags.normalised = true,
                        _ => return Err(syntax(line_no, *col, "unknown flag")),
                    }
                }
            }
            Some("start") => start_spec = Some((line_no, tokens[2..].to_vec())),
            _ => rule_lines.push((line_no, tokens)),
        }
    }

    let sync_set: std::collections::HashSet<String> = sync_states.iter().cloned().collect();
    let is_sync = |n: &str| sync_set.contains(n);

    let mut rules = Vec::new();
    for (line_no, tokens) in &rule_lines {
        let mut p = LineParser {
            tokens,
            pos: 0,
            line: *line_no,
        };
        let lhs = p.parse_element(&is_sync)?;
        let lhs = match lhs {
            // A 2-group on the lhs is a join symbol.
            Symbol::Join(a, b) => Symbol::Join(a, b),
            other => other,
        };
        let (line, col) = (p.line, p.col());
        if p.next() != Some(&Token::Arrow) {
            return Err(syntax(line, col, "expected '->'"));
        }
        let rhs = p.parse_rhs(&is_sync)?;
        let (line, col) = (p.line, p.col());
        if p.next() != Some(&Token::Colon) {
            return Err(syntax(line, col, "expected ':' before the probability"));
        }
        let (line, col) = (p.line, p.col());
        let prob_text = match p.next() {
            Some(Token::Name(n)) => n.clone(),
            _ => return Err(syntax(line, col, "expected a probability")),
        };
        let prob = parse_rational(&prob_text)
            .ok_or_else(|| syntax(line, col, format!("invalid probability '{prob_text}'")))?;
        if p.peek().is_some() {
            return Err(syntax(*line_no, p.col(), "unexpected trailing tokens"));
        }
        rules.push(Rule { lhs, rhs, prob });
    }

    let start = match start_spec {
        Some((line_no, tokens)) => {
            let mut p = LineParser {
                tokens: &tokens,
                pos: 0,
                line: line_no,
            };
            let sym = p.parse_element(&is_sync)?;
            if p.peek().is_some() {
                return Err(syntax(line_no, p.col(), "unexpected trailing tokens"));
            }
            Some(sym)
        }
        None => None,
    };

    let model = PsjsModel::from_parts(sync_states, rules, flags, start);
    let diags = model.validate();
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The running example: X ->0.5 <X X>, X ->0.3 q, X ->0.2 r, <q r> ->1 X.
    pub const EX1: &str = "\
states: q r
start: X
X -> <X X> : 0.5
X -> q : 0.3
X -> r : 0.2
<q r> -> X : 1
";

    #[test]
    fn parses_ex1() {
        let m = parse_model(EX1).unwrap();
        assert_eq!(m.process_symbols().len(), 2);
        assert_eq!(m.sync_states().len(), 2);
        assert_eq!(m.rules().len(), 4);
        assert_eq!(m.rules()[0].prob, Rational::new(1.into(), 2.into()));
        assert!(m.validate().is_empty());
    }

    #[test]
    fn single_rule_model() {
        let m = parse_model("states: q\nX -> q : 1\n").unwrap();
        assert_eq!(m.rules().len(), 1);
    }

    #[test]
    fn sum_violation_rejected() {
        let err = parse_model("states: q\nX -> q : 0.4\n").unwrap_err();
        match err {
            ParseError::Invalid(diags) => {
                assert!(diags.iter().any(|d| d.message.contains("sum to 2/5")));
            }
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn join_of_undeclared_state_rejected() {
        let err = parse_model("states: q\nX -> <q r> : 1\n<q r> -> q : 1\n").unwrap_err();
        assert!(matches!(err, ParseError::Invalid(_)));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_model("states: q\nX -> : 1\n").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Syntax, got {other}"),
        }
    }

    #[test]
    fn render_round_trip_preserves_rules_and_rationals() {
        let m = parse_model(EX1).unwrap();
        let rendered = m.render();
        assert!(rendered.contains("X -> <X X> : 1/2"));
        let again = parse_model(&rendered).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn decimal_probabilities_are_exact() {
        assert_eq!(
            parse_rational("0.125").unwrap(),
            Rational::new(1.into(), 8.into())
        );
        assert_eq!(parse_rational("2/6").unwrap(), Rational::new(1.into(), 3.into()));
        assert!(parse_rational("1/0").is_none());
    }
}
