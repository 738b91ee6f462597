//! Seeded Monte Carlo simulation of the configuration-tree Markov chain.
//!
//! A run starts from the model's start symbol and performs synchronous steps:
//! every front element is rewritten by one of its rules, chosen independently
//! with the rule's probability. The run ends when the front is empty (the
//! tree is a single sync state, or frozen on joins outside Γ) or when a step
//! or space budget is exceeded.
//!
//! Estimates are reproducible: each run draws from its own ChaCha8 stream
//! derived from `(seed, run_index)`, so results do not depend on thread
//! scheduling or on whether the `parallel` feature is enabled.

use std::collections::BTreeMap;

use num::{One, ToPrimitive};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{PsjsModel, Rational, Rhs, Rule, Symbol};
use crate::tree::{ConfigTree, FrontElement};

/// Limits guarding against non-terminating or space-divergent runs.
#[derive(Clone, Copy, Debug)]
pub struct Budgets {
    pub max_steps: u64,
    pub max_space: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        // Divergent runs in supercritical models pay on the order of the
        // space budget in work before they are cut off, so generous caps
        // make estimates on such models very expensive.
        Budgets {
            max_steps: 10_000,
            max_space: 100_000,
        }
    }
}

/// How a single run ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// Single sync-state leaf.
    Terminated { state: String },
    /// Nonempty tree with an empty front (joins outside Γ remain).
    Frozen,
    /// A budget was exceeded before the run could finish.
    CutOff,
}

/// Statistics of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunStats {
    pub outcome: Outcome,
    /// Number of synchronous steps (T).
    pub time: u64,
    /// Total front elements rewritten over all steps (W).
    pub work: u64,
    /// Maximum leaf count over all visited configurations (S).
    pub space: u64,
    /// Natural log of the run's probability.
    pub log_prob: f64,
}

fn rhs_to_tree(rhs: &Rhs) -> ConfigTree {
    let sub = |s: &Symbol| Box::new(ConfigTree::from_symbol(s));
    match rhs {
        Rhs::Single(a) => ConfigTree::from_symbol(a),
        Rhs::Pair(a, b) => ConfigTree::Node2(sub(a), sub(b)),
        Rhs::Triple(a, b, c) => ConfigTree::Node3(sub(a), sub(b), sub(c)),
    }
}

/// Performs one synchronous step, picking a rule for each front element via
/// `choose`. Returns the applied rules, or `None` if the front is empty.
pub fn step_with<'a>(
    model: &'a PsjsModel,
    tree: &mut ConfigTree,
    mut choose: impl FnMut(&FrontElement, &[usize]) -> usize,
) -> Option<Vec<&'a Rule>> {
    let front = tree.front(model);
    if front.is_empty() {
        return None;
    }
    let mut applied = Vec::with_capacity(front.len());
    for elem in &front {
        let candidates = model.rules_for(&elem.symbol);
        debug_assert!(!candidates.is_empty(), "front symbol without rules");
        let idx = choose(elem, candidates);
        let rule = &model.rules()[idx];
        tree.replace_at(&elem.path, rhs_to_tree(&rule.rhs));
        applied.push(rule);
    }
    Some(applied)
}

/// The outcome of a run whose front became empty. For branching processes a
/// terminal tree never shrinks to one leaf; it terminates in q when all its
/// processes died in q.
fn terminal_outcome(model: &PsjsModel, tree: &ConfigTree) -> Outcome {
    let state = if model.flags.branching {
        tree.uniform_state()
    } else {
        tree.terminal_state()
    };
    match state {
        Some(q) => Outcome::Terminated { state: q.to_string() },
        None => Outcome::Frozen,
    }
}

/// Precomputed per-symbol samplers so the hot loop avoids rational math.
struct RuleSamplers {
    by_symbol: std::collections::HashMap<Symbol, WeightedIndex<f64>>,
}

impl RuleSamplers {
    fn new(model: &PsjsModel) -> Self {
        let mut by_symbol = std::collections::HashMap::new();
        for sym in model.process_symbols() {
            let weights: Vec<f64> = model
                .rules_for(sym)
                .iter()
                .map(|&i| model.rules()[i].prob.to_f64().unwrap_or(0.0))
                .collect();
            by_symbol.insert(sym.clone(), WeightedIndex::new(weights).unwrap());
        }
        RuleSamplers { by_symbol }
    }

    fn sample(&self, sym: &Symbol, candidates: &[usize], rng: &mut impl Rng) -> usize {
        if candidates.len() == 1 {
            candidates[0]
        } else {
            candidates[self.by_symbol[sym].sample(rng)]
        }
    }
}

/// Simulates one run from `start` and reports its statistics.
pub fn simulate_run(
    model: &PsjsModel,
    start: &Symbol,
    rng: &mut impl Rng,
    budgets: Budgets,
) -> RunStats {
    let samplers = RuleSamplers::new(model);
    simulate_run_with(model, start, rng, budgets, &samplers)
}

fn simulate_run_with(
    model: &PsjsModel,
    start: &Symbol,
    rng: &mut impl Rng,
    budgets: Budgets,
    samplers: &RuleSamplers,
) -> RunStats {
    let mut tree = ConfigTree::from_symbol(start);
    let mut time = 0u64;
    let mut work = 0u64;
    let mut leaves = tree.leaf_count() as i64;
    let mut space = leaves as u64;
    let mut log_prob = 0.0f64;

    loop {
        if !tree.has_front(model) {
            let outcome = terminal_outcome(model, &tree);
            return RunStats { outcome, time, work, space, log_prob };
        }
        if time >= budgets.max_steps || space > budgets.max_space {
            return RunStats { outcome: Outcome::CutOff, time, work, space, log_prob };
        }
        let (count, delta) = tree.step_front(model, &mut |sym| {
            let candidates = model.rules_for(sym);
            let idx = samplers.sample(sym, candidates, rng);
            let rule = &model.rules()[idx];
            log_prob += rule.prob.to_f64().unwrap_or(0.0).ln();
            rhs_to_tree(&rule.rhs)
        });
        time += 1;
        work += count;
        leaves += delta;
        space = space.max(leaves as u64);
    }
}

/// Replays a run under a fixed script of rule choices (indices into each
/// front element's candidate list, consumed left to right, step by step).
/// Also returns the run's exact probability. Intended for worked examples
/// and tests.
pub fn scripted_run(
    model: &PsjsModel,
    start: &Symbol,
    script: &[usize],
    budgets: Budgets,
) -> (RunStats, Rational) {
    let mut tree = ConfigTree::from_symbol(start);
    let mut time = 0u64;
    let mut work = 0u64;
    let mut space = tree.leaf_count();
    let mut log_prob = 0.0f64;
    let mut exact = Rational::one();
    let mut cursor = 0usize;

    loop {
        let front = tree.front(model);
        if front.is_empty() {
            let outcome = terminal_outcome(model, &tree);
            return (RunStats { outcome, time, work, space, log_prob }, exact);
        }
        if time >= budgets.max_steps || space > budgets.max_space || cursor >= script.len() {
            return (
                RunStats { outcome: Outcome::CutOff, time, work, space, log_prob },
                exact,
            );
        }
        for elem in &front {
            let candidates = model.rules_for(&elem.symbol);
            let choice = script.get(cursor).copied().unwrap_or(0);
            cursor += 1;
            let rule = &model.rules()[candidates[choice]];
            tree.replace_at(&elem.path, rhs_to_tree(&rule.rhs));
            log_prob += rule.prob.to_f64().unwrap_or(0.0).ln();
            exact *= rule.prob.clone();
        }
        time += 1;
        work += front.len() as u64;
        space = space.max(tree.leaf_count());
    }
}

/// Summary statistics of time/work/space over a set of runs.
#[derive(Clone, Debug, Serialize)]
pub struct SampleSummary {
    pub mean_time: f64,
    pub mean_work: f64,
    pub mean_space: f64,
    pub se_time: f64,
    pub se_work: f64,
    pub se_space: f64,
    /// Medians, from the empirical distribution.
    pub median_time: u64,
    pub median_work: u64,
    pub median_space: u64,
}

fn mean_se(values: &[u64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &mut [u64]) -> u64 {
    values.sort_unstable();
    values[values.len() / 2]
}

fn summarise(mut times: Vec<u64>, mut works: Vec<u64>, mut spaces: Vec<u64>) -> SampleSummary {
    let (mean_time, se_time) = mean_se(&times);
    let (mean_work, se_work) = mean_se(&works);
    let (mean_space, se_space) = mean_se(&spaces);
    SampleSummary {
        mean_time,
        mean_work,
        mean_space,
        se_time,
        se_work,
        se_space,
        median_time: median(&mut times),
        median_work: median(&mut works),
        median_space: median(&mut spaces),
    }
}

/// Frequency of one terminal state among all runs.
#[derive(Clone, Debug, Serialize)]
pub struct StateEstimate {
    pub count: u64,
    pub freq: f64,
    /// Standard error of `freq` (binomial).
    pub se: f64,
}

/// Aggregated Monte Carlo estimate.
#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloReport {
    pub runs: u64,
    pub seed: u64,
    /// Per terminal sync state: frequency estimate of P(terminate in q).
    pub terminated: BTreeMap<String, StateEstimate>,
    pub frozen: u64,
    pub cut_off: u64,
    /// Time/work/space summary over runs that terminated (in any state).
    pub conditional: Option<SampleSummary>,
}

fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// Runs `runs` independent simulations and aggregates the results. The output
/// is a pure function of `(model, start, runs, seed, budgets)`.
pub fn estimate(
    model: &PsjsModel,
    start: &Symbol,
    runs: u64,
    seed: u64,
    budgets: Budgets,
) -> MonteCarloReport {
    let samplers = RuleSamplers::new(model);
    let simulate = |i: u64| {
        let mut rng = run_rng(seed, i);
        simulate_run_with(model, start, &mut rng, budgets, &samplers)
    };

    #[cfg(feature = "parallel")]
    let stats: Vec<RunStats> = {
        use rayon::prelude::*;
        (0..runs).into_par_iter().map(simulate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<RunStats> = (0..runs).map(simulate).collect();

    aggregate(stats, runs, seed)
}

/// Sequential variant of [`estimate`], available regardless of features so
/// the two execution strategies can be compared directly.
pub fn estimate_sequential(
    model: &PsjsModel,
    start: &Symbol,
    runs: u64,
    seed: u64,
    budgets: Budgets,
) -> MonteCarloReport {
    let samplers = RuleSamplers::new(model);
    let stats: Vec<RunStats> = (0..runs)
        .map(|i| {
            let mut rng = run_rng(seed, i);
            simulate_run_with(model, start, &mut rng, budgets, &samplers)
        })
        .collect();
    aggregate(stats, runs, seed)
}

fn aggregate(stats: Vec<RunStats>, runs: u64, seed: u64) -> MonteCarloReport {
    let mut terminated_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut frozen = 0u64;
    let mut cut_off = 0u64;
    let mut times = Vec::new();
    let mut works = Vec::new();
    let mut spaces = Vec::new();

    for s in &stats {
        match &s.outcome {
            Outcome::Terminated { state } => {
                *terminated_counts.entry(state.clone()).or_insert(0) += 1;
                times.push(s.time);
                works.push(s.work);
                spaces.push(s.space);
            }
            Outcome::Frozen => frozen += 1,
            Outcome::CutOff => cut_off += 1,
        }
    }

    let n = runs as f64;
    let terminated = terminated_counts
        .into_iter()
        .map(|(state, count)| {
            let freq = count as f64 / n;
            let se = (freq * (1.0 - freq) / n).sqrt();
            (state, StateEstimate { count, freq, se })
        })
        .collect();

    let conditional = if times.is_empty() {
        None
    } else {
        Some(summarise(times, works, spaces))
    };

    MonteCarloReport {
        runs,
        seed,
        terminated,
        frozen,
        cut_off,
        conditional,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    const EX1: &str = "\
states: q r
start: X
X -> <X X> : 0.5
X -> q : 0.3
X -> r : 0.2
<q r> -> X : 1
";

    fn ex1() -> PsjsModel {
        parse_model(EX1).unwrap()
    }

    #[test]
    fn scripted_direct_termination() {
        let m = ex1();
        // X -> q in one step: T=1, W=1, S=1, prob 0.3.
        let (stats, prob) = scripted_run(&m, &Symbol::basic("X"), &[1], Budgets::default());
        assert_eq!(stats.outcome, Outcome::Terminated { state: "q".into() });
        assert_eq!((stats.time, stats.work, stats.space), (1, 1, 1));
        assert_eq!(prob, Rational::new(3.into(), 10.into()));
    }

    #[test]
    fn estimate_is_deterministic_for_a_seed() {
        let m = ex1();
        // Small budgets: EX1 is critical, so occasional runs grow very large
        // under the defaults. Determinism is what is under test here.
        let budgets = Budgets { max_steps: 2_000, max_space: 20_000 };
        let a = estimate(&m, &Symbol::basic("X"), 2000, 7, budgets);
        let b = estimate(&m, &Symbol::basic("X"), 2000, 7, budgets);
        let c = estimate_sequential(&m, &Symbol::basic("X"), 2000, 7, budgets);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn step_with_applies_one_rule_per_front_element() {
        let m = ex1();
        let mut tree = ConfigTree::from_symbol(&Symbol::basic("X"));
        // Split, then terminate both children in q and r.
        let applied = step_with(&m, &mut tree, |_, c| c[0]).unwrap();
        assert_eq!(applied.len(), 1);
        let applied = step_with(&m, &mut tree, |elem, c| {
            if elem.path == vec![0] {
                c[1] // X -> q
            } else {
                c[2] // X -> r
            }
        })
        .unwrap();
        assert_eq!(applied.len(), 2);
        // (q r) is now a redex.
        let front = tree.front(&m);
        assert_eq!(front.len(), 1);
        assert!(front[0].is_redex);
    }

    #[test]
    fn cut_off_on_step_budget() {
        // X -> <X X> always: diverges.
        let m = parse_model("states: q\nX -> <X X> : 1\n<q q> -> q : 1\n").unwrap();
        let mut rng = run_rng(1, 0);
        let stats = simulate_run(
            &m,
            &Symbol::basic("X"),
            &mut rng,
            Budgets { max_steps: 10, max_space: 1 << 20 },
        );
        assert_eq!(stats.outcome, Outcome::CutOff);
    }
}
