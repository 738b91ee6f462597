//! Case-study model generators: parallel divide-and-conquer integration and
//! game-tree evaluation (sequential alpha-beta, Young-Brothers-Wait, and
//! fully parallel evaluation), plus a parameter-sweep driver.

use num::{BigInt, One, Zero};
use serde::Serialize;

use crate::model::{ModelFlags, PsjsModel, Rational, Rhs, Rule, Symbol};
use crate::perf::{
    distributions, tail_expectation, Expectation, PerfError, Quantity,
};
use crate::solver::{Method, SolveOptions, TermMatrix, TermSystem};
use crate::transform::conditioned_bp;

/// A generated model together with its designated start symbol and the sync
/// state on which performance measures condition.
pub struct CaseStudyModel {
    pub model: PsjsModel,
    pub start: Symbol,
    pub target: String,
}

fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

fn binom(n: u32, k: u32) -> Rational {
    if k > n {
        return Rational::zero();
    }
    let mut acc = Rational::one();
    for i in 0..k {
        acc *= rat((n - i) as i64, (i + 1) as i64);
    }
    acc
}

struct Rules(Vec<Rule>);

impl Rules {
    fn add(&mut self, lhs: Symbol, rhs: Rhs, prob: Rational) {
        if !prob.is_zero() {
            self.0.push(Rule { lhs, rhs, prob });
        }
    }
}

/// The adaptive-integration model: symbol n stands for a subinterval with
/// oscillation n. Oscillation splits between the two halves with probability
/// p/2 each (and is dropped with probability 1−p); an interval with
/// oscillation 0 finishes immediately.
///
/// Q = {q}, Γ = {<q q>, 0, …, n_max}; rules 0 → q, <q q> → q, and
/// n → <n1 n2> with the multinomial probability
/// C(n,n1)·C(n−n1,n2)·(p/2)^n1·(p/2)^n2·(1−p)^(n−n1−n2).
pub fn divcon(n_max: u32, p: &Rational) -> CaseStudyModel {
    assert!(*p >= Rational::zero() && *p < Rational::one());
    let sym = |n: u32| Symbol::basic(n.to_string());
    let q = || Symbol::sync("q");
    let mut rules = Rules(Vec::new());

    rules.add(sym(0), Rhs::Single(q()), Rational::one());
    rules.add(Symbol::join("q", "q"), Rhs::Single(q()), Rational::one());

    let half = p / rat(2, 1);
    let rest = Rational::one() - p;
    for n in 1..=n_max {
        for n1 in 0..=n {
            for n2 in 0..=(n - n1) {
                let prob = binom(n, n1)
                    * binom(n - n1, n2)
                    * num::pow::pow(half.clone(), n1 as usize)
                    * num::pow::pow(half.clone(), n2 as usize)
                    * num::pow::pow(rest.clone(), (n - n1 - n2) as usize);
                rules.add(sym(n), Rhs::Pair(sym(n1), sym(n2)), prob);
            }
        }
    }

    let flags = ModelFlags { normalised: true, ..Default::default() };
    let model = PsjsModel::from_parts(vec!["q".into()], rules.0, flags, Some(sym(n_max)));
    debug_assert!(model.validate().is_empty(), "{:?}", model.validate());
    CaseStudyModel { model, start: sym(n_max), target: "q".into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GameVariant {
    /// Sequential alpha-beta pruning.
    Seq,
    /// Young-Brothers-Wait: first child sequentially, brothers in parallel.
    Ybw,
    /// All three children in parallel, no pruning.
    Par,
}

impl GameVariant {
    pub fn name(self) -> &'static str {
        match self {
            GameVariant::Seq => "seq",
            GameVariant::Ybw => "ybw",
            GameVariant::Par => "par",
        }
    }
}

const EMAX: u32 = 4;

fn esub(e: u32, d: u32) -> u32 {
    e.saturating_sub(d)
}

fn eadd(e: u32, d: u32) -> u32 {
    (e + d).min(EMAX)
}

/// Leaf-value probability x(k) = (1−p)·C(4,k)·(e/4)^k·(1−e/4)^(4−k).
fn leaf_prob(p: &Rational, e: u32, k: u32) -> Rational {
    let up = rat(e as i64, 4);
    let down = rat((4 - e) as i64, 4);
    (Rational::one() - p)
        * binom(4, k)
        * num::pow::pow(up, k as usize)
        * num::pow::pow(down, (4 - k) as usize)
}

/// Node polarity: whose turn it is at the node being evaluated.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Max,
    Min,
}

impl Op {
    fn tag(self) -> &'static str {
        match self {
            Op::Max => "or",
            Op::Min => "and",
        }
    }

    fn flip(self) -> Op {
        match self {
            Op::Max => Op::Min,
            Op::Min => Op::Max,
        }
    }

    /// Child parameter drift: a max-node's children have parameters
    /// e, e⊖1, e⊖2; a min-node's e, e⊕1, e⊕2.
    fn drift(self, e: u32, d: u32) -> u32 {
        match self {
            Op::Max => esub(e, d),
            Op::Min => eadd(e, d),
        }
    }

    /// The bound whose attainment by the first child causes a cut-off
    /// (β for max-nodes, α for min-nodes).
    fn cut(self, alpha: u32, beta: u32) -> u32 {
        match self {
            Op::Max => beta,
            Op::Min => alpha,
        }
    }

    fn best(self, a: u32, b: u32) -> u32 {
        match self {
            Op::Max => a.max(b),
            Op::Min => a.min(b),
        }
    }
}

fn val(v: u32) -> Symbol {
    Symbol::sync(v.to_string())
}

/// Adds the clamped leaf rules shared by all alpha-beta node symbols:
/// values ≤ α return α, values ≥ β return β, values in between return
/// themselves.
fn leaf_rules(rules: &mut Rules, lhs: &Symbol, p: &Rational, alpha: u32, beta: u32, e: u32) {
    let low: Rational = (0..=alpha).map(|k| leaf_prob(p, e, k)).sum();
    let high: Rational = (beta..=EMAX).map(|k| leaf_prob(p, e, k)).sum();
    rules.add(lhs.clone(), Rhs::Single(val(alpha)), low);
    rules.add(lhs.clone(), Rhs::Single(val(beta)), high);
    for k in (alpha + 1)..beta {
        rules.add(lhs.clone(), Rhs::Single(val(k)), leaf_prob(p, e, k));
    }
}

/// The young-brothers-wait model: the first child runs alone; if it fails to
/// cut off, the two younger brothers run in parallel and the results are
/// combined through q(a,b) and q(∨)/q(∧).
fn ybw_rules(p: &Rational) -> Vec<Rule> {
    let mut rules = Rules(Vec::new());
    let node = |op: Op, a: u32, b: u32, e: u32| -> Symbol {
        let name = if op == Op::Max { "Max" } else { "Min" };
        Symbol::basic(format!("{name}({a},{b},{e})"))
    };
    let node2 = |op: Op, a: u32, b: u32, e: u32| -> Symbol {
        let name = if op == Op::Max { "Max2" } else { "Min2" };
        Symbol::basic(format!("{name}({a},{b},{e})"))
    };
    let cont = |op: Op, a: u32, b: u32, e: u32| -> String {
        format!("q({a},{b},{},{e})", op.tag())
    };
    let qop = |op: Op| -> String { format!("q{}", op.tag()) };
    let qpair = |a: u32, b: u32| -> String { format!("q({a},{b})") };

    for op in [Op::Max, Op::Min] {
        for alpha in 0..EMAX {
            for beta in (alpha + 1)..=EMAX {
                for e in 0..=EMAX {
                    let lhs = node(op, alpha, beta, e);
                    leaf_rules(&mut rules, &lhs, p, alpha, beta, e);
                    // First child, with the brothers' parameter stored in
                    // the continuation state.
                    rules.add(
                        lhs,
                        Rhs::Pair(
                            node(op.flip(), alpha, beta, e),
                            Symbol::sync(cont(op, alpha, beta, op.drift(e, 1))),
                        ),
                        p.clone(),
                    );
                    // Cut-off, or evaluation of the two brothers. For
                    // max-nodes the first child's value γ tightens α; for
                    // min-nodes it tightens β.
                    let cut = op.cut(alpha, beta);
                    rules.add(
                        Symbol::join(cut.to_string(), cont(op, alpha, beta, e)),
                        Rhs::Single(val(cut)),
                        Rational::one(),
                    );
                    for gamma in alpha..=beta {
                        if gamma == cut {
                            continue;
                        }
                        let (na, nb) = match op {
                            Op::Max => (gamma, beta),
                            Op::Min => (alpha, gamma),
                        };
                        rules.add(
                            Symbol::join(gamma.to_string(), cont(op, alpha, beta, e)),
                            Rhs::Pair(node2(op, na, nb, e), Symbol::sync(qop(op))),
                            Rational::one(),
                        );
                    }
                    rules.add(
                        node2(op, alpha, beta, e),
                        Rhs::Pair(
                            node(op.flip(), alpha, beta, e),
                            node(op.flip(), alpha, beta, op.drift(e, 1)),
                        ),
                        Rational::one(),
                    );
                }
            }
        }
    }
    for a in 0..=EMAX {
        for b in 0..=EMAX {
            rules.add(
                Symbol::join(a.to_string(), b.to_string()),
                Rhs::Single(Symbol::sync(qpair(a, b))),
                Rational::one(),
            );
            for op in [Op::Max, Op::Min] {
                rules.add(
                    Symbol::join(qpair(a, b), qop(op)),
                    Rhs::Single(val(op.best(a, b))),
                    Rational::one(),
                );
            }
        }
    }
    rules.0
}

/// Our sequential alpha-beta model, mirroring the YBW step structure so the
/// work of the two programs differs only by actual pruning: the second child
/// goes through a dedicated node symbol like YBW's Max2, and the third child
/// value passes a final q(∨)/q(∧) combination step.
fn seq_rules(p: &Rational) -> Vec<Rule> {
    let mut rules = Rules(Vec::new());
    let node = |op: Op, a: u32, b: u32, e: u32| -> Symbol {
        let name = if op == Op::Max { "Max" } else { "Min" };
        Symbol::basic(format!("{name}({a},{b},{e})"))
    };
    let node2 = |op: Op, a: u32, b: u32, e: u32| -> Symbol {
        let name = if op == Op::Max { "Max2" } else { "Min2" };
        Symbol::basic(format!("{name}({a},{b},{e})"))
    };
    let cont1 = |op: Op, a: u32, b: u32, e: u32| format!("s1({a},{b},{},{e})", op.tag());
    let cont2 = |op: Op, a: u32, b: u32, e: u32| format!("s2({a},{b},{},{e})", op.tag());
    let qop = |op: Op| -> String { format!("q{}", op.tag()) };

    for op in [Op::Max, Op::Min] {
        for alpha in 0..EMAX {
            for beta in (alpha + 1)..=EMAX {
                for e in 0..=EMAX {
                    let lhs = node(op, alpha, beta, e);
                    leaf_rules(&mut rules, &lhs, p, alpha, beta, e);
                    rules.add(
                        lhs,
                        Rhs::Pair(
                            node(op.flip(), alpha, beta, e),
                            Symbol::sync(cont1(op, alpha, beta, op.drift(e, 1))),
                        ),
                        p.clone(),
                    );
                    let cut = op.cut(alpha, beta);
                    rules.add(
                        Symbol::join(cut.to_string(), cont1(op, alpha, beta, e)),
                        Rhs::Single(val(cut)),
                        Rational::one(),
                    );
                    for gamma in alpha..=beta {
                        if gamma == cut {
                            continue;
                        }
                        let (na, nb) = match op {
                            Op::Max => (gamma, beta),
                            Op::Min => (alpha, gamma),
                        };
                        rules.add(
                            Symbol::join(gamma.to_string(), cont1(op, alpha, beta, e)),
                            Rhs::Pair(node2(op, na, nb, e), Symbol::sync(qop(op))),
                            Rational::one(),
                        );
                    }
                    // Second child runs alone; its continuation remembers the
                    // third child's parameter.
                    rules.add(
                        node2(op, alpha, beta, e),
                        Rhs::Pair(
                            node(op.flip(), alpha, beta, e),
                            Symbol::sync(cont2(op, alpha, beta, op.drift(e, 1))),
                        ),
                        Rational::one(),
                    );
                    rules.add(
                        Symbol::join(cut.to_string(), cont2(op, alpha, beta, e)),
                        Rhs::Single(val(cut)),
                        Rational::one(),
                    );
                    // Third child as a tail call with the tightened window.
                    for gamma in alpha..=beta {
                        if gamma == cut {
                            continue;
                        }
                        let (na, nb) = match op {
                            Op::Max => (gamma, beta),
                            Op::Min => (alpha, gamma),
                        };
                        rules.add(
                            Symbol::join(gamma.to_string(), cont2(op, alpha, beta, e)),
                            Rhs::Single(node(op.flip(), na, nb, e)),
                            Rational::one(),
                        );
                    }
                }
            }
        }
    }
    // The third child's (or a cut-off) value meets the pending q(∨)/q(∧).
    for v in 0..=EMAX {
        for op in [Op::Max, Op::Min] {
            rules.add(
                Symbol::join(v.to_string(), qop(op)),
                Rhs::Single(val(v)),
                Rational::one(),
            );
        }
    }
    rules.0
}

/// The fully parallel model: all three children start (after a one-step
/// fan-out) simultaneously; results combine through v∨(a)/q(b,c).
fn par_rules(p: &Rational) -> Vec<Rule> {
    let mut rules = Rules(Vec::new());
    let node = |op: Op, e: u32| -> Symbol {
        Symbol::basic(format!("{}({e})", if op == Op::Max { "PMax" } else { "PMin" }))
    };
    let first = |op: Op, e: u32| -> Symbol {
        Symbol::basic(format!("{}1({e})", if op == Op::Max { "PMax" } else { "PMin" }))
    };
    let brothers = |op: Op, e: u32| -> Symbol {
        Symbol::basic(format!("{}YB({e})", if op == Op::Max { "PMax" } else { "PMin" }))
    };
    let qop = |op: Op| -> String { format!("q{}", op.tag()) };
    let vop = |op: Op, a: u32| -> String { format!("v{}({a})", op.tag()) };
    let qpair = |a: u32, b: u32| -> String { format!("q({a},{b})") };

    for op in [Op::Max, Op::Min] {
        for e in 0..=EMAX {
            let lhs = node(op, e);
            // Unclamped leaf values: par does not prune.
            for k in 0..=EMAX {
                rules.add(lhs.clone(), Rhs::Single(val(k)), leaf_prob(p, e, k));
            }
            rules.add(lhs, Rhs::Pair(first(op, e), brothers(op, e)), p.clone());
            rules.add(
                first(op, e),
                Rhs::Pair(node(op.flip(), e), Symbol::sync(qop(op))),
                Rational::one(),
            );
            rules.add(
                brothers(op, e),
                Rhs::Pair(node(op.flip(), op.drift(e, 1)), node(op.flip(), op.drift(e, 2))),
                Rational::one(),
            );
        }
    }
    for a in 0..=EMAX {
        for op in [Op::Max, Op::Min] {
            rules.add(
                Symbol::join(a.to_string(), qop(op)),
                Rhs::Single(Symbol::sync(vop(op, a))),
                Rational::one(),
            );
        }
        for b in 0..=EMAX {
            rules.add(
                Symbol::join(a.to_string(), b.to_string()),
                Rhs::Single(Symbol::sync(qpair(a, b))),
                Rational::one(),
            );
            for op in [Op::Max, Op::Min] {
                for c in 0..=EMAX {
                    rules.add(
                        Symbol::join(vop(op, c), qpair(a, b)),
                        Rhs::Single(val(op.best(c, op.best(a, b)))),
                        Rational::one(),
                    );
                }
            }
        }
    }
    rules.0
}

/// Generates the game-tree evaluation model for a variant. The start symbol
/// is the root max-node with the full window [0,4] and parameter 2; measures
/// condition on the tree value 2.
pub fn game_tree(variant: GameVariant, p: &Rational) -> CaseStudyModel {
    assert!(*p >= Rational::zero() && *p < Rational::one());
    let (rules, start) = match variant {
        GameVariant::Seq => (seq_rules(p), Symbol::basic("Max(0,4,2)")),
        GameVariant::Ybw => (ybw_rules(p), Symbol::basic("Max(0,4,2)")),
        GameVariant::Par => (par_rules(p), Symbol::basic("PMax(2)")),
    };

    let mut states: Vec<String> = (0..=EMAX).map(|v| v.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = states.iter().cloned().collect();
    for rule in &rules {
        let mut note = |name: &str| {
            if seen.insert(name.to_string()) {
                states.push(name.to_string());
            }
        };
        if let Symbol::Join(a, b) = &rule.lhs {
            note(a);
            note(b);
        }
        for s in rule.rhs.symbols() {
            if let Symbol::Sync(n) = s {
                note(n);
            }
        }
    }

    // Every join redex that can form during a run has a rule, so terminating
    // runs always end in a single state: the model is normalised as built.
    let flags = ModelFlags { normalised: true, ..Default::default() };
    let model = PsjsModel::from_parts(states, rules, flags, Some(start.clone()));
    debug_assert!(model.validate().is_empty(), "{:?}", model.validate());
    CaseStudyModel { model, start, target: "2".into() }
}

/// Solves termination probabilities, preferring Kleene and falling back to
/// Newton when Kleene fails to converge (near-critical models).
pub fn solve_term(model: &PsjsModel) -> TermMatrix {
    let system = TermSystem::new(model);
    let kleene = system.kleene(SolveOptions { tol: 1e-12, max_iter: 50_000 });
    if kleene.converged {
        kleene
    } else {
        system.newton(SolveOptions::newton())
    }
}

/// E[Work | termination in the target state], via the conditioned branching
/// process and its linear system.
pub fn conditional_work(cs: &CaseStudyModel) -> Result<Expectation, PerfError> {
    let term = solve_term(&cs.model);
    if term.total(&cs.start) < 1.0 - 1e-9 {
        return Ok(Expectation::Infinite);
    }
    let bp = conditioned_bp(&cs.model, &term)?;
    let Some(name) = bp.names.get(&(cs.start.clone(), cs.target.clone())) else {
        return Err(PerfError::ZeroConditioning(cs.start.clone(), cs.target.clone()));
    };
    crate::perf::expected_work_bp(&bp.model, name)
}

/// Lower bound on E[Time | termination in the target state] from the
/// truncated distribution, with its convergence flag.
pub fn conditional_time(cs: &CaseStudyModel, k_max: usize) -> Result<(f64, bool), PerfError> {
    let table = distributions(&cs.model, Quantity::Time, k_max, (Method::Newton, SolveOptions::newton()));
    let pmf = table.pmf(&cs.start, &cs.target)?;
    Ok(tail_expectation(&pmf, pmf.cond_prob))
}

/// One row of the divide-and-conquer sweep over oscillation values.
#[derive(Clone, Debug, Serialize)]
pub struct DivconRow {
    pub n: u32,
    pub work: f64,
    pub time_lb: f64,
    pub time_converged: bool,
    /// E W_n / E T_n, the average parallelism.
    pub ratio: f64,
}

/// Expected work and time of the integration model for every starting
/// oscillation 1..=n_max.
pub fn divcon_rows(
    n_max: u32,
    p: &Rational,
    k_max: usize,
) -> Result<Vec<DivconRow>, PerfError> {
    let cs = divcon(n_max, p);
    let term = solve_term(&cs.model);
    let bp = conditioned_bp(&cs.model, &term)?;
    let table = distributions(
        &cs.model,
        Quantity::Time,
        k_max,
        (Method::Newton, SolveOptions::newton()),
    );
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let sym = Symbol::basic(n.to_string());
        let Some(name) = bp.names.get(&(sym.clone(), "q".to_string())) else {
            return Err(PerfError::ZeroConditioning(sym, "q".into()));
        };
        let work = match crate::perf::expected_work_bp(&bp.model, name)? {
            Expectation::Finite(w) => w,
            Expectation::Infinite => f64::INFINITY,
        };
        let pmf = table.pmf(&sym, "q")?;
        let (time_lb, time_converged) = tail_expectation(&pmf, pmf.cond_prob);
        rows.push(DivconRow {
            n,
            work,
            time_lb,
            time_converged,
            ratio: work / time_lb,
        });
    }
    Ok(rows)
}

/// One row of a case-study sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub variant: String,
    pub p: f64,
    pub work: Option<f64>,
    pub work_finite: bool,
    pub time_lb: f64,
    pub time_converged: bool,
}

/// Computes work and time for the given variants and parameters.
/// Points are independent; with the `parallel` feature they run concurrently.
pub fn game_tree_sweep(
    variants: &[GameVariant],
    ps: &[Rational],
    k_max: usize,
) -> Result<Vec<SweepRow>, PerfError> {
    let points: Vec<(GameVariant, Rational)> = variants
        .iter()
        .flat_map(|&v| ps.iter().map(move |p| (v, p.clone())))
        .collect();

    let run = |(variant, p): &(GameVariant, Rational)| -> Result<SweepRow, PerfError> {
        let cs = game_tree(*variant, p);
        let work = conditional_work(&cs)?;
        let (time_lb, time_converged) = match work {
            Expectation::Infinite => (f64::INFINITY, false),
            Expectation::Finite(_) => conditional_time(&cs, k_max)?,
        };
        Ok(SweepRow {
            variant: variant.name().to_string(),
            p: num::ToPrimitive::to_f64(p).unwrap_or(f64::NAN),
            work: match work {
                Expectation::Finite(w) => Some(w),
                Expectation::Infinite => None,
            },
            work_finite: work.is_finite(),
            time_lb,
            time_converged,
        })
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{estimate, Budgets};

    #[test]
    fn divcon_zero_oscillation_is_immediate() {
        let cs = divcon(3, &rat(4, 5));
        assert!(cs.model.validate().is_empty());
        // 0 terminates in one step with probability 1.
        let term = solve_term(&cs.model);
        assert!((term.get(&Symbol::basic("0"), "q") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn divcon_terminates_almost_surely() {
        let cs = divcon(5, &rat(4, 5));
        let term = solve_term(&cs.model);
        assert!((term.total(&cs.start) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn game_tree_models_validate() {
        let p = rat(1, 5);
        for variant in [GameVariant::Seq, GameVariant::Ybw, GameVariant::Par] {
            let cs = game_tree(variant, &p);
            assert!(cs.model.validate().is_empty(), "{variant:?}");
            assert!(cs.model.has_rules(&cs.start), "{variant:?}");
        }
    }

    #[test]
    fn game_tree_runs_never_freeze() {
        // The models are built normalised: simulated runs must end in a
        // single state, never in a frozen tree.
        let p = rat(3, 10);
        for variant in [GameVariant::Seq, GameVariant::Ybw, GameVariant::Par] {
            let cs = game_tree(variant, &p);
            let report = estimate(
                &cs.model,
                &cs.start,
                3000,
                11,
                Budgets { max_steps: 10_000, max_space: 100_000 },
            );
            assert_eq!(report.frozen, 0, "{variant:?}");
            assert_eq!(report.cut_off, 0, "{variant:?}");
        }
    }

    #[test]
    fn seq_work_equals_time() {
        // The sequential program has exactly one active process at any step.
        let cs = game_tree(GameVariant::Seq, &rat(1, 10));
        let report =
            estimate(&cs.model, &cs.start, 2000, 5, Budgets { max_steps: 10_000, max_space: 100_000 });
        let c = report.conditional.unwrap();
        assert!((c.mean_work - c.mean_time).abs() < 1e-12);
    }

    #[test]
    fn seq_work_at_p_zero_limit() {
        // At very small p the tree is almost surely a leaf: W ≈ 1.
        let cs = game_tree(GameVariant::Seq, &rat(1, 1000));
        match conditional_work(&cs).unwrap() {
            Expectation::Finite(w) => assert!((w - 1.0).abs() < 0.05, "{w}"),
            Expectation::Infinite => panic!("should be finite"),
        }
    }
}
