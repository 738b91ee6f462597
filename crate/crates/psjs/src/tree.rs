//! Configuration trees: the states of a model's Markov chain.
//!
//! A configuration is a leaf-labelled tree. Leaves carry alphabet symbols;
//! inner nodes are unlabelled and binary (ternary for degree-3 branching
//! processes). The *front* of a tree lists its active process symbols left to
//! right: basic leaves, join-symbol leaves, and join redexes — inner nodes
//! both of whose children are sync-state leaves forming a join symbol of Γ.

use std::fmt;

use crate::model::{PsjsModel, Symbol};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigTree {
    Leaf(Symbol),
    Node2(Box<ConfigTree>, Box<ConfigTree>),
    Node3(Box<ConfigTree>, Box<ConfigTree>, Box<ConfigTree>),
}

/// A path from the root: 0/1/2 select a child at each inner node.
pub type Path = Vec<u8>;

/// One front element: where it sits and which process symbol it exposes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrontElement {
    pub path: Path,
    pub symbol: Symbol,
    /// True if this element is a join redex (an inner node whose sync-leaf
    /// children form the join symbol), rather than a leaf.
    pub is_redex: bool,
}

impl ConfigTree {
    /// The initial configuration for a start symbol. A join symbol `<q r>`
    /// is identified with the depth-1 tree over its two states.
    pub fn from_symbol(sym: &Symbol) -> ConfigTree {
        match sym {
            Symbol::Join(a, b) => ConfigTree::Node2(
                Box::new(ConfigTree::Leaf(Symbol::sync(a.clone()))),
                Box::new(ConfigTree::Leaf(Symbol::sync(b.clone()))),
            ),
            other => ConfigTree::Leaf(other.clone()),
        }
    }

    /// True if the tree has at least one front element (short-circuits on
    /// the leftmost one). Iterative: run trees can be deep.
    pub fn has_front(&self, model: &PsjsModel) -> bool {
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if node.redex_symbol(model).is_some() {
                return true;
            }
            match node {
                ConfigTree::Leaf(sym) => {
                    if matches!(sym, Symbol::Basic(_)) {
                        return true;
                    }
                }
                ConfigTree::Node2(l, r) => {
                    stack.push(r);
                    stack.push(l);
                }
                ConfigTree::Node3(a, b, c) => {
                    stack.push(c);
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        false
    }

    /// Rewrites every front element left to right in one traversal, calling
    /// `rewrite` for the replacement subtree. Returns the number of rewrites
    /// and the change in leaf count. Replacements are not revisited, making
    /// this one synchronous step. Unlike `front` + `replace_at`, the cost is
    /// linear in the tree size.
    pub fn step_front(
        &mut self,
        model: &PsjsModel,
        rewrite: &mut impl FnMut(&Symbol) -> ConfigTree,
    ) -> (u64, i64) {
        let mut count = 0u64;
        let mut delta = 0i64;
        // Iterative left-to-right traversal: run trees can be deep.
        let mut stack: Vec<&mut ConfigTree> = vec![self];
        while let Some(node) = stack.pop() {
            if let Some(sym) = node.redex_symbol(model) {
                let repl = rewrite(&sym);
                delta += repl.leaf_count() as i64 - 2;
                *node = repl;
                count += 1;
                continue;
            }
            if let ConfigTree::Leaf(sym) = &*node {
                if matches!(sym, Symbol::Basic(_)) {
                    let sym = sym.clone();
                    let repl = rewrite(&sym);
                    delta += repl.leaf_count() as i64 - 1;
                    *node = repl;
                    count += 1;
                }
                continue;
            }
            match node {
                ConfigTree::Leaf(_) => unreachable!(),
                ConfigTree::Node2(l, r) => {
                    stack.push(r);
                    stack.push(l);
                }
                ConfigTree::Node3(a, b, c) => {
                    stack.push(c);
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        (count, delta)
    }

    /// The common sync state of all leaves, if there is one. For branching
    /// processes (where trees never shrink) termination in q means every
    /// process died in q.
    pub fn uniform_state(&self) -> Option<&str> {
        match self {
            ConfigTree::Leaf(Symbol::Sync(q)) => Some(q),
            ConfigTree::Leaf(_) => None,
            ConfigTree::Node2(l, r) => match (l.uniform_state(), r.uniform_state()) {
                (Some(a), Some(b)) if a == b => Some(a),
                _ => None,
            },
            ConfigTree::Node3(a, b, c) => {
                match (a.uniform_state(), b.uniform_state(), c.uniform_state()) {
                    (Some(x), Some(y), Some(z)) if x == y && y == z => Some(x),
                    _ => None,
                }
            }
        }
    }

    pub fn leaf_count(&self) -> u64 {
        match self {
            ConfigTree::Leaf(_) => 1,
            ConfigTree::Node2(l, r) => l.leaf_count() + r.leaf_count(),
            ConfigTree::Node3(a, b, c) => a.leaf_count() + b.leaf_count() + c.leaf_count(),
        }
    }

    /// If this node is a join redex for `model`, the join symbol it forms.
    fn redex_symbol(&self, model: &PsjsModel) -> Option<Symbol> {
        if let ConfigTree::Node2(l, r) = self {
            if let (ConfigTree::Leaf(Symbol::Sync(a)), ConfigTree::Leaf(Symbol::Sync(b))) =
                (l.as_ref(), r.as_ref())
            {
                let join = Symbol::join(a.clone(), b.clone());
                if model.has_rules(&join) {
                    return Some(join);
                }
            }
        }
        None
    }

    /// Front elements left to right. A terminal configuration has an empty
    /// front; a configuration with no applicable rule on some front element
    /// cannot occur, since every Γ-symbol carries at least one rule.
    pub fn front(&self, model: &PsjsModel) -> Vec<FrontElement> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect_front(model, &mut path, &mut out);
        out
    }

    fn collect_front(
        &self,
        model: &PsjsModel,
        path: &mut Path,
        out: &mut Vec<FrontElement>,
    ) {
        if let Some(join) = self.redex_symbol(model) {
            out.push(FrontElement {
                path: path.clone(),
                symbol: join,
                is_redex: true,
            });
            return;
        }
        match self {
            ConfigTree::Leaf(sym) => {
                if sym.is_process() {
                    out.push(FrontElement {
                        path: path.clone(),
                        symbol: sym.clone(),
                        is_redex: false,
                    });
                }
            }
            ConfigTree::Node2(l, r) => {
                for (i, child) in [l, r].into_iter().enumerate() {
                    path.push(i as u8);
                    child.collect_front(model, path, out);
                    path.pop();
                }
            }
            ConfigTree::Node3(a, b, c) => {
                for (i, child) in [a, b, c].into_iter().enumerate() {
                    path.push(i as u8);
                    child.collect_front(model, path, out);
                    path.pop();
                }
            }
        }
    }

    /// Replaces the subtree at `path` with `replacement`.
    pub fn replace_at(&mut self, path: &[u8], replacement: ConfigTree) {
        match path.split_first() {
            None => *self = replacement,
            Some((&step, rest)) => {
                let child = match self {
                    ConfigTree::Node2(l, r) => match step {
                        0 => l,
                        _ => r,
                    },
                    ConfigTree::Node3(a, b, c) => match step {
                        0 => a,
                        1 => b,
                        _ => c,
                    },
                    ConfigTree::Leaf(_) => panic!("path descends through a leaf"),
                };
                child.replace_at(rest, replacement);
            }
        }
    }

    /// True if no front element remains: either a single sync-state leaf or a
    /// deadlocked (frozen) tree whose remaining joins are not in Γ.
    pub fn is_terminal(&self, model: &PsjsModel) -> bool {
        self.front(model).is_empty()
    }

    /// If the tree is a single sync-state leaf, that state's name.
    pub fn terminal_state(&self) -> Option<&str> {
        match self {
            ConfigTree::Leaf(Symbol::Sync(q)) => Some(q),
            _ => None,
        }
    }
}

impl Drop for ConfigTree {
    fn drop(&mut self) {
        // The default drop glue recurses and overflows the stack on deep run
        // trees; drain children into a worklist instead.
        let mut work: Vec<ConfigTree> = Vec::new();
        let take = |child: &mut ConfigTree, work: &mut Vec<ConfigTree>| {
            work.push(std::mem::replace(child, ConfigTree::Leaf(Symbol::Sync(String::new()))));
        };
        match self {
            ConfigTree::Leaf(_) => return,
            ConfigTree::Node2(l, r) => {
                take(l, &mut work);
                take(r, &mut work);
            }
            ConfigTree::Node3(a, b, c) => {
                take(a, &mut work);
                take(b, &mut work);
                take(c, &mut work);
            }
        }
        while let Some(mut node) = work.pop() {
            match &mut node {
                ConfigTree::Leaf(_) => {}
                ConfigTree::Node2(l, r) => {
                    take(l, &mut work);
                    take(r, &mut work);
                }
                ConfigTree::Node3(a, b, c) => {
                    take(a, &mut work);
                    take(b, &mut work);
                    take(c, &mut work);
                }
            }
        }
    }
}

impl fmt::Display for ConfigTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigTree::Leaf(sym) => write!(f, "{sym}"),
            ConfigTree::Node2(l, r) => write!(f, "({l} {r})"),
            ConfigTree::Node3(a, b, c) => write!(f, "({a} {b} {c})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    fn ex1() -> PsjsModel {
        parse_model(
            "states: q r\nstart: X\nX -> <X X> : 0.5\nX -> q : 0.3\nX -> r : 0.2\n<q r> -> X : 1\n",
        )
        .unwrap()
    }

    fn leaf(sym: Symbol) -> ConfigTree {
        ConfigTree::Leaf(sym)
    }

    fn node2(l: ConfigTree, r: ConfigTree) -> ConfigTree {
        ConfigTree::Node2(Box::new(l), Box::new(r))
    }

    #[test]
    fn front_of_start_is_the_start_symbol() {
        let m = ex1();
        let t = ConfigTree::from_symbol(&Symbol::basic("X"));
        let front = t.front(&m);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].symbol, Symbol::basic("X"));
        assert!(!front[0].is_redex);
    }

    #[test]
    fn join_redex_appears_in_front() {
        let m = ex1();
        // (q r) is a redex for <q r>; (r q) is frozen.
        let t = node2(leaf(Symbol::sync("q")), leaf(Symbol::sync("r")));
        let front = t.front(&m);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].symbol, Symbol::join("q", "r"));
        assert!(front[0].is_redex);

        let frozen = node2(leaf(Symbol::sync("r")), leaf(Symbol::sync("q")));
        assert!(frozen.front(&m).is_empty());
        assert!(frozen.is_terminal(&m));
    }

    #[test]
    fn front_is_left_to_right() {
        let m = ex1();
        // ((q r) X): redex first, then the basic leaf.
        let t = node2(
            node2(leaf(Symbol::sync("q")), leaf(Symbol::sync("r"))),
            leaf(Symbol::basic("X")),
        );
        let front = t.front(&m);
        assert_eq!(front.len(), 2);
        assert_eq!(front[0].symbol, Symbol::join("q", "r"));
        assert_eq!(front[1].symbol, Symbol::basic("X"));
        assert_eq!(front[0].path, vec![0]);
        assert_eq!(front[1].path, vec![1]);
        assert_eq!(t.leaf_count(), 3);
    }

    #[test]
    fn replace_at_rewrites_subtree() {
        let m = ex1();
        let mut t = node2(leaf(Symbol::basic("X")), leaf(Symbol::sync("q")));
        t.replace_at(&[0], leaf(Symbol::sync("r")));
        // (r q) is frozen for EX1.
        assert!(t.is_terminal(&m));
        assert_eq!(t.terminal_state(), None);
    }

    #[test]
    fn terminal_state_of_single_leaf() {
        let t = leaf(Symbol::sync("q"));
        assert_eq!(t.terminal_state(), Some("q"));
    }
}
