//! Core syntax of probabilistic split-join systems: symbols, rules, models,
//! and validation.
//!
//! A model consists of a set of synchronisation states `Q`, a set of process
//! symbols `Γ` (basic names or join pairs `<q r>` over sync states), and
//! probabilistic rewrite rules with exact rational probabilities. Rules with
//! the same left-hand side must have probabilities summing to exactly 1.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num::{BigRational, One, Zero};

/// Exact rational probability.
pub type Rational = BigRational;

/// An alphabet element: a basic process symbol, a synchronisation state, or a
/// join symbol `<q r>` over two sync states.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Basic(String),
    Sync(String),
    Join(String, String),
}

impl Symbol {
    pub fn basic(name: impl Into<String>) -> Self {
        Symbol::Basic(name.into())
    }

    pub fn sync(name: impl Into<String>) -> Self {
        Symbol::Sync(name.into())
    }

    pub fn join(left: impl Into<String>, right: impl Into<String>) -> Self {
        Symbol::Join(left.into(), right.into())
    }

    /// True for symbols that may carry rules (elements of Γ).
    pub fn is_process(&self) -> bool {
        matches!(self, Symbol::Basic(_) | Symbol::Join(_, _))
    }

    pub fn is_sync(&self) -> bool {
        matches!(self, Symbol::Sync(_))
    }
}

/// True if a bare (unquoted) token can represent this name in the model format.
fn name_is_bare(name: &str) -> bool {
    !name.is_empty()
        && !name.contains(|c: char| {
            c.is_whitespace() || matches!(c, '<' | '>' | '"' | ':' | '#')
        })
}

pub(crate) fn write_name(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if name_is_bare(name) {
        f.write_str(name)
    } else {
        write!(f, "\"{name}\"")
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Basic(n) | Symbol::Sync(n) => write_name(f, n),
            Symbol::Join(a, b) => {
                f.write_str("<")?;
                write_name(f, a)?;
                f.write_str(" ")?;
                write_name(f, b)?;
                f.write_str(">")
            }
        }
    }
}

/// Right-hand side of a rule: a single symbol, a binary split, or a ternary
/// split (degree-3 branching processes only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rhs {
    Single(Symbol),
    Pair(Symbol, Symbol),
    Triple(Symbol, Symbol, Symbol),
}

impl Rhs {
    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        match self {
            Rhs::Single(a) => vec![a].into_iter(),
            Rhs::Pair(a, b) => vec![a, b].into_iter(),
            Rhs::Triple(a, b, c) => vec![a, b, c].into_iter(),
        }
    }
}

impl fmt::Display for Rhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhs::Single(a) => write!(f, "{a}"),
            Rhs::Pair(a, b) => write!(f, "<{a} {b}>"),
            Rhs::Triple(a, b, c) => write!(f, "<{a} {b} {c}>"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub lhs: Symbol,
    pub rhs: Rhs,
    pub prob: Rational,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} : {}", self.lhs, self.rhs, self.prob)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelFlags {
    /// No join symbols in Γ; processes evolve independently.
    pub branching: bool,
    /// Ternary splits allowed (implies `branching`).
    pub degree3: bool,
    /// Every terminating run ends in a single sync state.
    pub normalised: bool,
}

/// A validated-on-construction probabilistic split-join system.
///
/// Immutable after construction; safe to share read-only between threads.
#[derive(Clone, Debug)]
pub struct PsjsModel {
    sync_states: Vec<String>,
    sync_set: HashSet<String>,
    process_symbols: Vec<Symbol>,
    rules: Vec<Rule>,
    lhs_rules: HashMap<Symbol, Vec<usize>>,
    pub flags: ModelFlags,
    pub start: Option<Symbol>,
}

impl PartialEq for PsjsModel {
    fn eq(&self, other: &Self) -> bool {
        self.sync_states == other.sync_states
            && self.rules == other.rules
            && self.flags == other.flags
            && self.start == other.start
    }
}

/// A validation finding: the violated invariant plus the offending item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn diag(message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        message: message.into(),
    }
}

impl PsjsModel {
    /// Assembles a model from declared sync states and rules. Γ is derived
    /// as the set of rule left-hand sides, in first-appearance order.
    /// `Single(Join(..))` right-hand sides are canonicalised to
    /// `Pair(Sync, Sync)`, which denotes the same configuration tree.
    pub fn from_parts(
        sync_states: Vec<String>,
        rules: Vec<Rule>,
        flags: ModelFlags,
        start: Option<Symbol>,
    ) -> Self {
        let rules: Vec<Rule> = rules
            .into_iter()
            .map(|r| Rule {
                rhs: match r.rhs {
                    Rhs::Single(Symbol::Join(a, b)) => {
                        Rhs::Pair(Symbol::Sync(a), Symbol::Sync(b))
                    }
                    other => other,
                },
                ..r
            })
            .collect();

        let sync_set: HashSet<String> = sync_states.iter().cloned().collect();
        let mut process_symbols = Vec::new();
        let mut lhs_rules: HashMap<Symbol, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            let slot = lhs_rules.entry(rule.lhs.clone()).or_insert_with(|| {
                process_symbols.push(rule.lhs.clone());
                Vec::new()
            });
            slot.push(i);
        }

        PsjsModel {
            sync_states,
            sync_set,
            process_symbols,
            rules,
            lhs_rules,
            flags,
            start,
        }
    }

    pub fn sync_states(&self) -> &[String] {
        &self.sync_states
    }

    pub fn is_sync_state(&self, name: &str) -> bool {
        self.sync_set.contains(name)
    }

    /// Γ, in first-appearance order of rule left-hand sides.
    pub fn process_symbols(&self) -> &[Symbol] {
        &self.process_symbols
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rules_for(&self, lhs: &Symbol) -> &[usize] {
        self.lhs_rules.get(lhs).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_rules(&self, sym: &Symbol) -> bool {
        self.lhs_rules.contains_key(sym)
    }

    /// True if `sym` is in the alphabet Σ = Γ ∪ Q.
    pub fn in_alphabet(&self, sym: &Symbol) -> bool {
        match sym {
            Symbol::Sync(n) => self.sync_set.contains(n),
            other => self.lhs_rules.contains_key(other),
        }
    }

    /// Join symbols of Γ, i.e. Γ ∩ ⟨QQ⟩.
    pub fn join_symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.process_symbols
            .iter()
            .filter(|s| matches!(s, Symbol::Join(_, _)))
    }

    /// Checks every model invariant, returning one diagnostic per violation.
    /// An empty list means the model is valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();

        for q in &self.sync_states {
            if q.is_empty() {
                out.push(diag("sync state name must be nonempty"));
            }
        }
        {
            let mut seen = HashSet::new();
            for q in &self.sync_states {
                if !seen.insert(q) {
                    out.push(diag(format!("sync state '{q}' declared twice")));
                }
            }
        }

        // Disjoint namespaces: a basic process name may not also be a state.
        for sym in &self.process_symbols {
            match sym {
                Symbol::Basic(n) => {
                    if n.is_empty() {
                        out.push(diag("basic symbol name must be nonempty"));
                    }
                    if self.sync_set.contains(n) {
                        out.push(diag(format!(
                            "'{n}' used both as sync state and process symbol"
                        )));
                    }
                }
                Symbol::Join(a, b) => {
                    for part in [a, b] {
                        if !self.sync_set.contains(part) {
                            out.push(diag(format!(
                                "join symbol {sym} refers to undeclared sync state '{part}'"
                            )));
                        }
                    }
                    if self.flags.branching {
                        out.push(diag(format!(
                            "branching process may not contain join symbol {sym}"
                        )));
                    }
                }
                Symbol::Sync(n) => {
                    out.push(diag(format!(
                        "lhs must be a process symbol, found sync state '{n}'"
                    )));
                }
            }
        }

        if self.flags.degree3 && !self.flags.branching {
            out.push(diag(
                "degree3 flag requires the branching flag (degree-3 branching process)",
            ));
        }

        for rule in &self.rules {
            if rule.prob <= Rational::zero() || rule.prob > Rational::one() {
                out.push(diag(format!(
                    "rule '{rule}' has probability outside (0,1]"
                )));
            }
            if matches!(rule.rhs, Rhs::Triple(..)) && !(self.flags.branching && self.flags.degree3)
            {
                out.push(diag(format!(
                    "rule '{rule}': Triple rhs requires degree-3 branching process"
                )));
            }
            for sym in rule.rhs.symbols() {
                let known = match sym {
                    Symbol::Sync(n) => self.sync_set.contains(n),
                    Symbol::Basic(_) | Symbol::Join(_, _) => self.lhs_rules.contains_key(sym),
                };
                if !known {
                    out.push(diag(format!(
                        "rule '{rule}' references unknown symbol {sym}"
                    )));
                }
            }
        }

        // Exact per-lhs probability sums.
        for sym in &self.process_symbols {
            let sum: Rational = self.rules_for(sym)
                .iter()
                .map(|&i| self.rules[i].prob.clone())
                .sum();
            if sum != Rational::one() {
                out.push(diag(format!(
                    "probabilities for {sym} sum to {sum}, expected 1"
                )));
            }
        }

        if let Some(start) = &self.start {
            if !self.in_alphabet(start) {
                out.push(diag(format!("start symbol {start} is not in the alphabet")));
            }
        }

        out
    }

    /// Renders the model in the textual format accepted by the parser.
    /// Probabilities are written as reduced fractions `num/den`.
    pub fn render(&self) -> String {
        use fmt::Write;
        let mut out = String::new();
        if !self.sync_states.is_empty() {
            out.push_str("states:");
            for q in &self.sync_states {
                write!(out, " {}", Symbol::Sync(q.clone())).unwrap();
            }
            out.push('\n');
        }
        {
            let mut flag_names = Vec::new();
            if self.flags.branching {
                flag_names.push("branching");
            }
            if self.flags.degree3 {
                flag_names.push("degree3");
            }
            if self.flags.normalised {
                flag_names.push("normalised");
            }
            if !flag_names.is_empty() {
                writeln!(out, "flags: {}", flag_names.join(" ")).unwrap();
            }
        }
        if let Some(start) = &self.start {
            writeln!(out, "start: {start}").unwrap();
        }
        for rule in &self.rules {
            writeln!(out, "{rule}").unwrap();
        }
        out
    }
}

/// Picks a name not present in `taken`, starting from `base` and appending
/// a numeric suffix on collision.
pub fn fresh_name(taken: &HashSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    for i in 2.. {
        let candidate = format!("{base}{i}");
        if !taken.contains(&candidate) {
            return candidate;
        }
    }
    unreachable!()
}

/// All names used anywhere in the model (sync states and basic symbols).
pub fn taken_names(model: &PsjsModel) -> HashSet<String> {
    let mut names: HashSet<String> = model.sync_states().iter().cloned().collect();
    for sym in model.process_symbols() {
        if let Symbol::Basic(n) = sym {
            names.insert(n.clone());
        }
    }
    for rule in model.rules() {
        for sym in rule.rhs.symbols() {
            if let Symbol::Basic(n) = sym {
                names.insert(n.clone());
            }
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    #[test]
    fn join_on_lhs_joins_gamma() {
        let m = parse_model("states: q r\nX -> <q r> : 1\n<q r> -> q : 1\n").unwrap();
        assert!(m.process_symbols().contains(&Symbol::join("q", "r")));
        assert!(m.validate().is_empty());
    }

    #[test]
    fn sync_lhs_is_flagged() {
        let rules = vec![Rule {
            lhs: Symbol::sync("q"),
            rhs: Rhs::Single(Symbol::sync("q")),
            prob: Rational::one(),
        }];
        let m = PsjsModel::from_parts(vec!["q".into()], rules, ModelFlags::default(), None);
        let diags = m.validate();
        assert!(diags.iter().any(|d| d.message.contains("lhs must be a process symbol")));
    }

    #[test]
    fn triple_requires_degree3() {
        let rules = vec![Rule {
            lhs: Symbol::basic("X"),
            rhs: Rhs::Triple(Symbol::sync("q"), Symbol::sync("q"), Symbol::sync("q")),
            prob: Rational::one(),
        }];
        let m = PsjsModel::from_parts(vec!["q".into()], rules, ModelFlags::default(), None);
        let diags = m.validate();
        assert!(diags.iter().any(|d| d.message.contains("Triple rhs requires degree-3")));
    }

    #[test]
    fn single_join_rhs_is_canonicalised() {
        let rules = vec![
            Rule {
                lhs: Symbol::basic("X"),
                rhs: Rhs::Single(Symbol::join("q", "q")),
                prob: Rational::one(),
            },
            Rule {
                lhs: Symbol::join("q", "q"),
                rhs: Rhs::Single(Symbol::sync("q")),
                prob: Rational::one(),
            },
        ];
        let m = PsjsModel::from_parts(vec!["q".into()], rules, ModelFlags::default(), None);
        assert_eq!(
            m.rules()[0].rhs,
            Rhs::Pair(Symbol::sync("q"), Symbol::sync("q"))
        );
        assert!(m.validate().is_empty());
    }

    #[test]
    fn quoted_names_round_trip() {
        let text = "states: q\n\"Max(0,4,2)\" -> q : 1\n";
        let m = parse_model(text).unwrap();
        let again = parse_model(&m.render()).unwrap();
        assert_eq!(m, again);
    }
}
