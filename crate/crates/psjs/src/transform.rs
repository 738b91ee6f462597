//! Model transforms: normalisation, translation to and from probabilistic
//! pushdown systems (pPDSs), the finite-space transform, and the conditioned
//! branching process.

use std::collections::{BTreeMap, HashSet};

use num::{BigRational, One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::model::{fresh_name, taken_names, ModelFlags, PsjsModel, Rational, Rhs, Rule, Symbol};
use crate::solver::{TermMatrix, TermSystem};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("symbol {0} has zero termination probability in state '{1}'")]
    ZeroTermination(Symbol, String),
    #[error("conditioned branching process requires a normalised model")]
    NotNormalised,
}

/// Result of [`normalise`]: the normalised model and the fresh sink state.
pub struct Normalised {
    pub model: PsjsModel,
    /// The fresh state that absorbs previously-frozen join pairs.
    pub sink: String,
}

/// Adds a fresh state q̌ and rules `<r s> -> q̌` for every pair over the
/// extended state set whose join is not in Γ. Afterwards every terminating
/// run ends in a single sync state; termination probabilities of the original
/// symbols are unchanged, and time and work change by at most a factor 2.
pub fn normalise(model: &PsjsModel) -> Normalised {
    if model.flags.normalised {
        return Normalised {
            model: model.clone(),
            sink: String::new(),
        };
    }
    let taken = taken_names(model);
    let sink = fresh_name(&taken, "qk");

    let mut states: Vec<String> = model.sync_states().to_vec();
    states.push(sink.clone());

    let existing: HashSet<Symbol> = model.join_symbols().cloned().collect();
    let mut rules = model.rules().to_vec();
    for r in &states {
        for s in &states {
            let join = Symbol::join(r.clone(), s.clone());
            if !existing.contains(&join) {
                rules.push(Rule {
                    lhs: join,
                    rhs: Rhs::Single(Symbol::sync(sink.clone())),
                    prob: Rational::one(),
                });
            }
        }
    }

    let flags = ModelFlags {
        normalised: true,
        ..model.flags
    };
    let model = PsjsModel::from_parts(states, rules, flags, model.start.clone());
    debug_assert!(model.validate().is_empty());
    Normalised { model, sink }
}

/// A probabilistic pushdown system: control states, stack alphabet, and
/// rules `state top -> next_state push` with |push| ≤ 2 (top-of-stack first).
#[derive(Clone, Debug, Serialize)]
pub struct Ppds {
    pub states: Vec<String>,
    pub alphabet: Vec<String>,
    pub rules: Vec<PpdsRule>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PpdsRule {
    pub state: String,
    pub top: String,
    pub next_state: String,
    pub push: Vec<String>,
    /// Probability as a reduced fraction string, to keep it exact in JSON.
    pub prob: String,
}

/// Records how pSJS names map to pPDS names during serialisation.
#[derive(Clone, Debug, Serialize)]
pub struct SerialisationMap {
    /// The control state □ driving the evaluation.
    pub run_state: String,
    /// Per sync state q: the control state q̄ reached after popping q.
    pub popped_state: BTreeMap<String, String>,
    /// Per sync state q: the stack marker q̃ remembering a left result.
    pub marker: BTreeMap<String, String>,
    /// Per process symbol: its stack-alphabet name.
    pub stack_symbol: BTreeMap<String, String>,
}

fn stack_name(sym: &Symbol) -> String {
    sym.to_string()
}

/// Serialises a pSJS into a pPDS evaluating the tree depth-first:
/// splits push both children, a popped state q is remembered in the control
/// state, the right sibling is then evaluated with a marker q̃ below it, and
/// popping the marker recombines both results into the join symbol `<q r>`.
/// Runs from σ terminating in q correspond bijectively (preserving
/// probability) to pPDS runs from `□ σ` reaching control state q̄ with empty
/// stack.
pub fn serialise(model: &PsjsModel) -> (Ppds, SerialisationMap) {
    let mut taken = taken_names(model);
    for sym in model.process_symbols() {
        taken.insert(stack_name(sym));
    }
    let mut claim = |base: String| {
        let name = fresh_name(&taken, &base);
        taken.insert(name.clone());
        name
    };

    let run_state = claim("run".to_string());
    let mut popped_state = BTreeMap::new();
    let mut marker = BTreeMap::new();
    for q in model.sync_states() {
        popped_state.insert(q.clone(), claim(format!("{q}'pop")));
        marker.insert(q.clone(), claim(format!("{q}'mark")));
    }

    let mut states = vec![run_state.clone()];
    states.extend(model.sync_states().iter().map(|q| popped_state[q].clone()));

    let mut alphabet: Vec<String> = model.process_symbols().iter().map(stack_name).collect();
    alphabet.extend(model.sync_states().iter().cloned());
    alphabet.extend(model.sync_states().iter().map(|q| marker[q].clone()));

    // All of Σ as stack symbols, for the q̄-rules.
    let sigma: Vec<(String, &Symbol)> = model
        .process_symbols()
        .iter()
        .map(|s| (stack_name(s), s))
        .collect();

    let mut rules = Vec::new();
    // Rule application: □ a -> □ rhs.
    for rule in model.rules() {
        let (next_state, push) = match &rule.rhs {
            Rhs::Single(s) => (run_state.clone(), vec![stack_name(s)]),
            Rhs::Pair(s1, s2) => (run_state.clone(), vec![stack_name(s1), stack_name(s2)]),
            Rhs::Triple(..) => continue, // degree-3 models are not serialised
        };
        rules.push(PpdsRule {
            state: run_state.clone(),
            top: stack_name(&rule.lhs),
            next_state,
            push,
            prob: rule.prob.to_string(),
        });
    }
    for q in model.sync_states() {
        // Pop a finished state: □ q -> q̄ ε.
        rules.push(PpdsRule {
            state: run_state.clone(),
            top: q.clone(),
            next_state: popped_state[q].clone(),
            push: vec![],
            prob: "1".to_string(),
        });
        // Switch to the right sibling: q̄ σ -> □ σ q̃, for all σ ∈ Σ.
        let mut tops: Vec<String> = sigma.iter().map(|(n, _)| n.clone()).collect();
        tops.extend(model.sync_states().iter().cloned());
        for top in tops {
            rules.push(PpdsRule {
                state: popped_state[q].clone(),
                top: top.clone(),
                next_state: run_state.clone(),
                push: vec![top, marker[q].clone()],
                prob: "1".to_string(),
            });
        }
        // Recombine: r̄ q̃ -> □ <q r>, for all r.
        for r in model.sync_states() {
            rules.push(PpdsRule {
                state: popped_state[r].clone(),
                top: marker[q].clone(),
                next_state: run_state.clone(),
                push: vec![stack_name(&Symbol::join(q.clone(), r.clone()))],
                prob: "1".to_string(),
            });
        }
    }

    // `<q r>` stack symbols referenced by recombination may be new.
    let mut seen: HashSet<String> = alphabet.iter().cloned().collect();
    for rule in &rules {
        for s in rule.push.iter().chain([&rule.top]) {
            if seen.insert(s.clone()) {
                alphabet.push(s.clone());
            }
        }
    }

    let map = SerialisationMap {
        run_state,
        popped_state,
        marker,
        stack_symbol: model
            .process_symbols()
            .iter()
            .map(|s| (s.to_string(), stack_name(s)))
            .collect(),
    };
    (Ppds { states, alphabet, rules }, map)
}

/// Embeds a pPDS into a pSJS: sync states are control states plus stack
/// symbols, and the process symbol `<q a>` stands for the pPDS configuration
/// with control state q and a on top. Configurations without rules receive a
/// self-loop, which preserves termination probabilities (both never
/// terminate).
pub fn from_ppds(ppds: &Ppds) -> PsjsModel {
    let mut states: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for s in ppds.states.iter().chain(&ppds.alphabet) {
        if seen.insert(s.clone()) {
            states.push(s.clone());
        }
    }

    let mut rules = Vec::new();
    let mut with_rules: HashSet<Symbol> = HashSet::new();
    for r in &ppds.rules {
        let lhs = Symbol::join(r.state.clone(), r.top.clone());
        with_rules.insert(lhs.clone());
        let prob = crate::parse::parse_rational(&r.prob).expect("invalid pPDS probability");
        let rhs = match r.push.as_slice() {
            [] => Rhs::Single(Symbol::sync(r.next_state.clone())),
            [b] => Rhs::Pair(Symbol::sync(r.next_state.clone()), Symbol::sync(b.clone())),
            [b, c] => Rhs::Pair(
                Symbol::join(r.next_state.clone(), b.clone()),
                Symbol::sync(c.clone()),
            ),
            _ => panic!("pPDS rule pushes more than two symbols"),
        };
        rules.push(Rule { lhs, rhs, prob });
    }

    // Configurations without rules would deadlock the pPDS; give every such
    // control-state/stack-symbol pair a self-loop, which likewise never
    // terminates.
    for q in &ppds.states {
        for a in &ppds.alphabet {
            let sym = Symbol::join(q.clone(), a.clone());
            if !with_rules.contains(&sym) {
                rules.push(Rule {
                    lhs: sym.clone(),
                    rhs: Rhs::Single(sym),
                    prob: Rational::one(),
                });
            }
        }
    }

    let model = PsjsModel::from_parts(states, rules, ModelFlags::default(), None);
    debug_assert!(model.validate().is_empty(), "{:?}", model.validate());
    model
}

/// The set U of process symbols from which arbitrarily large configurations
/// are reachable with positive probability, computed exactly.
///
/// Uses the reachability relation σ1 ⇒ σ2 on Σ (closed under rule
/// application, where a split can be passed once both children can terminate
/// in states forming a join of Γ) and the decreasing sequence
/// U_{k+1} = {a | some split rule b → ⟨σ1 σ2⟩ with a ⇒ b has a child in U_k},
/// which stabilises after at most |Σ| steps.
pub fn unbounded_set(model: &PsjsModel) -> HashSet<Symbol> {
    let system = TermSystem::new(model);

    // All of Σ, indexed.
    let mut sigma: Vec<Symbol> = model.process_symbols().to_vec();
    sigma.extend(model.sync_states().iter().map(|q| Symbol::sync(q.clone())));
    let index: std::collections::HashMap<&Symbol, usize> =
        sigma.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let n = sigma.len();

    // reach[i] = set of j with sigma[i] ⇒ sigma[j].
    let mut reach: Vec<HashSet<usize>> = (0..n).map(|i| HashSet::from([i])).collect();
    loop {
        let mut changed = false;
        for rule in model.rules() {
            let i = index[&rule.lhs];
            let targets: Vec<usize> = match &rule.rhs {
                Rhs::Single(s) => index.get(s).map(|&j| reach[j].iter().copied().collect()).unwrap_or_default(),
                Rhs::Pair(s1, s2) => {
                    let mut acc = Vec::new();
                    for join in model.join_symbols() {
                        let Symbol::Join(q1, q2) = join else { unreachable!() };
                        if system.is_positive(s1, q1) && system.is_positive(s2, q2) {
                            acc.extend(reach[index[join]].iter().copied());
                        }
                    }
                    acc
                }
                Rhs::Triple(..) => Vec::new(),
            };
            for j in targets {
                if reach[i].insert(j) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // U_0 = Σ; iterate U_{k+1} until stable.
    let mut u: HashSet<usize> = (0..n).collect();
    loop {
        let mut next = HashSet::new();
        for (i, sym) in sigma.iter().enumerate() {
            if !sym.is_process() {
                continue;
            }
            'rules: for rule in model.rules() {
                if let Rhs::Pair(s1, s2) = &rule.rhs {
                    if !reach[i].contains(&index[&rule.lhs]) {
                        continue;
                    }
                    for child in [s1, s2] {
                        if index.get(child).is_some_and(|j| u.contains(j)) {
                            next.insert(i);
                            break 'rules;
                        }
                    }
                }
            }
        }
        if next == u {
            break;
        }
        u = next;
    }
    u.into_iter().map(|i| sigma[i].clone()).collect()
}

/// Result of the finite-space transform.
pub struct FiniteSpace {
    /// The modified (normalised) model.
    pub model: PsjsModel,
    /// The fresh state q̄ with P(S_a < ∞ = T_a | Run(a)) = [a↓q̄].
    pub space_sink: String,
    /// The normalisation sink added first (empty if already normalised).
    pub norm_sink: String,
    /// The bounded non-terminating symbols redirected to the sink.
    pub bounded: Vec<Symbol>,
}

/// Builds a normalised model with a fresh state q̄ such that for each
/// original process symbol a, the probability that a run from a uses finite
/// space but never terminates equals [a↓q̄] in the new model.
///
/// The construction normalises first, then redirects every symbol that can
/// neither grow unboundedly nor terminate (the set B) to q̄, and lets q̄
/// absorb in joins.
pub fn finite_space_transform(model: &PsjsModel) -> FiniteSpace {
    let Normalised { model: normed, sink: norm_sink } = normalise(model);

    let u = unbounded_set(&normed);
    let system = TermSystem::new(&normed);
    let bounded: Vec<Symbol> = normed
        .process_symbols()
        .iter()
        .filter(|a| !u.contains(a))
        .filter(|a| normed.sync_states().iter().all(|q| !system.is_positive(a, q)))
        .cloned()
        .collect();
    let bounded_set: HashSet<&Symbol> = bounded.iter().collect();

    let taken = taken_names(&normed);
    let space_sink = fresh_name(&taken, "qs");

    let mut states = normed.sync_states().to_vec();
    states.push(space_sink.clone());

    let mut rules: Vec<Rule> = normed
        .rules()
        .iter()
        .filter(|r| !bounded_set.contains(&r.lhs))
        .cloned()
        .collect();
    for b in &bounded {
        rules.push(Rule {
            lhs: b.clone(),
            rhs: Rhs::Single(Symbol::sync(space_sink.clone())),
            prob: Rational::one(),
        });
    }
    for r in &states {
        for (a, b) in [(r.clone(), space_sink.clone()), (space_sink.clone(), r.clone())] {
            let join = Symbol::join(a, b);
            if rules.iter().any(|ru| ru.lhs == join) {
                continue;
            }
            rules.push(Rule {
                lhs: join,
                rhs: Rhs::Single(Symbol::sync(space_sink.clone())),
                prob: Rational::one(),
            });
        }
    }

    let flags = ModelFlags { normalised: true, ..normed.flags };
    let out = PsjsModel::from_parts(states, rules, flags, normed.start.clone());
    debug_assert!(out.validate().is_empty(), "{:?}", out.validate());
    FiniteSpace { model: out, space_sink, norm_sink, bounded }
}

/// Result of the conditioned-branching-process transform.
pub struct ConditionedBp {
    /// A degree-3 branching process over symbols `a@q` with sync state `done`.
    pub model: PsjsModel,
    /// The single sync state of the branching process.
    pub done: String,
    /// Largest per-lhs deviation |1 − Σp| of the floating-point rule
    /// probabilities before exact renormalisation.
    pub renorm_defect: f64,
    /// Name of the conditioned symbol for (σ, q), where defined.
    pub names: BTreeMap<(Symbol, String), Symbol>,
}

fn rat_from_f64(x: f64) -> Rational {
    BigRational::from_float(x).unwrap_or_else(Rational::zero)
}

/// Builds the branching process whose runs are distributed like the runs of
/// `model` conditioned on termination in a given state: the symbol `a@q`
/// behaves like `a` conditioned on terminating in `q`. Work distributions
/// transfer exactly; the time distribution of the branching process
/// stochastically lower-bounds the conditional time. Every symbol of the
/// result terminates with probability 1.
///
/// Rule probabilities are derived from the floating-point termination
/// probabilities in `term` and then renormalised exactly per left-hand side;
/// the worst per-lhs deviation is reported in `renorm_defect`.
pub fn conditioned_bp(model: &PsjsModel, term: &TermMatrix) -> Result<ConditionedBp, TransformError> {
    if !model.flags.normalised {
        return Err(TransformError::NotNormalised);
    }
    let system = TermSystem::new(model);
    let taken = taken_names(model);
    let done = fresh_name(&taken, "done");

    // Conditioned symbol for (σ, q): `done` when σ is the state q itself.
    let cond_name = |sym: &Symbol, q: &str| -> Symbol {
        match sym {
            Symbol::Sync(n) => {
                debug_assert_eq!(n, q);
                Symbol::sync(done.clone())
            }
            _ => Symbol::basic(format!("{sym}@{q}")),
        }
    };

    let mut names = BTreeMap::new();
    let mut rules: Vec<Rule> = Vec::new();
    let mut defect = 0.0f64;

    for a in model.process_symbols() {
        for q in model.sync_states() {
            if !system.is_positive(a, q) {
                continue;
            }
            let lhs = cond_name(a, q);
            names.insert((a.clone(), q.clone()), lhs.clone());
            let denom = term.get(a, q);
            if denom <= 0.0 {
                return Err(TransformError::ZeroTermination(a.clone(), q.clone()));
            }

            let mut group: Vec<Rule> = Vec::new();
            let mut float_sum = 0.0f64;
            for &ri in model.rules_for(a) {
                let rule = &model.rules()[ri];
                let p = rule.prob.to_f64().unwrap_or(0.0);
                match &rule.rhs {
                    // In a branching process the children evolve
                    // independently and must all terminate in q.
                    rhs if model.flags.branching => {
                        let mut y = p;
                        for s in rhs.symbols() {
                            y *= term.get(s, q);
                        }
                        if y > 0.0 {
                            float_sum += y / denom;
                            let mapped = match rhs {
                                Rhs::Single(s) => Rhs::Single(cond_name(s, q)),
                                Rhs::Pair(s1, s2) => {
                                    Rhs::Pair(cond_name(s1, q), cond_name(s2, q))
                                }
                                Rhs::Triple(s1, s2, s3) => Rhs::Triple(
                                    cond_name(s1, q),
                                    cond_name(s2, q),
                                    cond_name(s3, q),
                                ),
                            };
                            group.push(Rule {
                                lhs: lhs.clone(),
                                rhs: mapped,
                                prob: rat_from_f64(y / denom),
                            });
                        }
                    }
                    Rhs::Single(s) => {
                        let y = p * term.get(s, q);
                        if y > 0.0 {
                            float_sum += y / denom;
                            group.push(Rule {
                                lhs: lhs.clone(),
                                rhs: Rhs::Single(cond_name(s, q)),
                                prob: rat_from_f64(y / denom),
                            });
                        }
                    }
                    Rhs::Pair(s1, s2) => {
                        for join in model.join_symbols() {
                            let Symbol::Join(q1, q2) = join else { unreachable!() };
                            let y = p
                                * term.get(s1, q1)
                                * term.get(s2, q2)
                                * term.get(join, q);
                            if y > 0.0 {
                                float_sum += y / denom;
                                group.push(Rule {
                                    lhs: lhs.clone(),
                                    rhs: Rhs::Triple(
                                        cond_name(s1, q1),
                                        cond_name(s2, q2),
                                        cond_name(join, q),
                                    ),
                                    prob: rat_from_f64(y / denom),
                                });
                            }
                        }
                    }
                    Rhs::Triple(..) => {
                        // Rejected by validation outside branching processes.
                    }
                }
            }
            defect = defect.max((1.0 - float_sum).abs());
            // Exact renormalisation so the group sums to exactly 1.
            let sum: Rational = group.iter().map(|r| r.prob.clone()).sum();
            if !sum.is_zero() {
                for r in &mut group {
                    r.prob /= sum.clone();
                }
            }
            rules.extend(group);
        }
    }

    let flags = ModelFlags { branching: true, degree3: true, normalised: true };
    let bp = PsjsModel::from_parts(vec![done.clone()], rules, flags, None);
    debug_assert!(bp.validate().is_empty(), "{:?}", bp.validate());
    Ok(ConditionedBp { model: bp, done, renorm_defect: defect, names })
}
