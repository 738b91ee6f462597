//! Performance analysis: time/work distributions, tail expectations,
//! the characteristic matrix, subcriticality, expected work, finite-space
//! probability, and the joint finiteness decision for expected work/time.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::model::{PsjsModel, Rational, Rhs, Symbol};
use crate::solver::{Method, SolveOptions, TermMatrix, TermSystem};
use crate::transform::{conditioned_bp, finite_space_transform, normalise};

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("'{0}' is not a sync state of the original model")]
    UnknownState(String),
    #[error("symbol {0} is not a process symbol of the model")]
    UnknownSymbol(Symbol),
    #[error("termination probability of {0} in '{1}' is zero; nothing to condition on")]
    ZeroConditioning(Symbol, String),
    #[error("operation requires a branching process")]
    NotBranching,
    #[error(transparent)]
    Transform(#[from] crate::transform::TransformError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Quantity {
    Time,
    Work,
}

/// A (generally defective) probability mass function truncated at K.
/// `mass` sums to at most `cond_prob`, the probability of the conditioning
/// event; `tail` is the mass beyond K relative to it.
#[derive(Clone, Debug, Serialize)]
pub struct Pmf {
    pub mass: Vec<f64>,
    pub cond_prob: f64,
    pub tail: f64,
}

impl Pmf {
    pub fn k_max(&self) -> usize {
        self.mass.len().saturating_sub(1)
    }

    /// Conditional CDF value P(Z ≤ k | event), clipped to [0,1].
    pub fn conditional_cdf(&self, k: usize) -> f64 {
        if self.cond_prob <= 0.0 {
            return 0.0;
        }
        let s: f64 = self.mass.iter().take(k + 1).sum();
        (s / self.cond_prob).min(1.0)
    }
}

/// Where a distribution pmf occurrence points: an already-finished subtree
/// (point mass at 0) or another table variable.
#[derive(Clone, Copy, Debug)]
enum Occ {
    Done,
    Var(usize),
}

#[derive(Clone, Debug)]
enum Prod {
    Unary { p: f64, child: Occ },
    Split { p: f64, left: Occ, right: Occ, join: usize },
    Branch { p: f64, children: Vec<Occ> },
}

/// All conditional time/work PMFs of a normalised model up to K, computed in
/// one dynamic program over k.
pub struct DistTable {
    /// The model the table was computed on (normalised).
    pub model: PsjsModel,
    /// True if the input had to be normalised first.
    pub normalised_applied: bool,
    /// Sync states of the original input (valid conditioning targets).
    pub original_states: Vec<String>,
    pub quantity: Quantity,
    vars: Vec<(Symbol, String)>,
    var_index: HashMap<(Symbol, String), usize>,
    /// mass[v][k]; defective PMFs summing to [a↓q].
    mass: Vec<Vec<f64>>,
    term: TermMatrix,
}

impl DistTable {
    /// The PMF of the quantity for runs from `a` conditioned on terminating
    /// in `q` (mass is unconditional; divide by `cond_prob` to condition).
    pub fn pmf(&self, a: &Symbol, q: &str) -> Result<Pmf, PerfError> {
        if !self.original_states.iter().any(|s| s == q) {
            return Err(PerfError::UnknownState(q.to_string()));
        }
        if !self.model.has_rules(a) {
            return Err(PerfError::UnknownSymbol(a.clone()));
        }
        let cond_prob = self.term.get(a, q);
        let mass = match self.var_index.get(&(a.clone(), q.to_string())) {
            Some(&v) => self.mass[v].clone(),
            None => {
                return Err(PerfError::ZeroConditioning(a.clone(), q.to_string()));
            }
        };
        let tail = (cond_prob - mass.iter().sum::<f64>()).max(0.0);
        Ok(Pmf { mass, cond_prob, tail })
    }

    pub fn term(&self) -> &TermMatrix {
        &self.term
    }

    pub fn vars(&self) -> &[(Symbol, String)] {
        &self.vars
    }
}

/// Computes all conditional PMFs of `quantity` up to `k_max`.
///
/// Non-normalised inputs are normalised first (reported via
/// `normalised_applied`); conditioning targets stay restricted to the
/// original sync states. The split recurrences are:
/// time: T_a↓q(k) = Σ p·Σ_{max(ℓ1,ℓ2)+ℓ3=k−1} T1(ℓ1)T2(ℓ2)T3(ℓ3) + Σ p·T'(k−1),
/// work: D_a↓q(n) = Σ p·Σ_{1+i+j+l=n} D1(i)D2(j)D3(l) + Σ p·D'(n−1),
/// with the max-convolution realised through CDF products in O(K²) per rule.
pub fn distributions(
    model: &PsjsModel,
    quantity: Quantity,
    k_max: usize,
    term_opts: (Method, SolveOptions),
) -> DistTable {
    let original_states = model.sync_states().to_vec();
    let (normed, normalised_applied) = if model.flags.normalised {
        (model.clone(), false)
    } else {
        (normalise(model).model, true)
    };

    let system = TermSystem::new(&normed);
    let term = system.solve(term_opts.0, term_opts.1);

    // Variables: positive (a, q) pairs.
    let mut vars: Vec<(Symbol, String)> = Vec::new();
    let mut var_index: HashMap<(Symbol, String), usize> = HashMap::new();
    for a in normed.process_symbols() {
        for q in normed.sync_states() {
            if system.is_positive(a, q) {
                var_index.insert((a.clone(), q.clone()), vars.len());
                vars.push((a.clone(), q.clone()));
            }
        }
    }

    // occ(σ, q): Err(()) when [σ↓q] = 0 (the production contributes nothing).
    let occ = |s: &Symbol, q: &str| -> Result<Occ, ()> {
        match s {
            Symbol::Sync(n) => {
                if n == q {
                    Ok(Occ::Done)
                } else {
                    Err(())
                }
            }
            _ => var_index
                .get(&(s.clone(), q.to_string()))
                .map(|&v| Occ::Var(v))
                .ok_or(()),
        }
    };

    let joins: Vec<(&str, &str, &Symbol)> = normed
        .join_symbols()
        .map(|j| match j {
            Symbol::Join(a, b) => (a.as_str(), b.as_str(), j),
            _ => unreachable!(),
        })
        .collect();

    let mut prods: Vec<Vec<Prod>> = vec![Vec::new(); vars.len()];
    for (v, (a, q)) in vars.iter().enumerate() {
        for &ri in normed.rules_for(a) {
            let rule = &normed.rules()[ri];
            let p = rule.prob.to_f64().unwrap_or(0.0);
            match (&rule.rhs, normed.flags.branching) {
                (Rhs::Single(s), _) => {
                    if let Ok(child) = occ(s, q) {
                        prods[v].push(Prod::Unary { p, child });
                    }
                }
                (Rhs::Pair(s1, s2), false) => {
                    for &(q1, q2, join) in &joins {
                        let (l, r, j) = (occ(s1, q1), occ(s2, q2), occ(join, q));
                        if let (Ok(left), Ok(right), Ok(Occ::Var(join))) = (l, r, j) {
                            prods[v].push(Prod::Split { p, left, right, join });
                        }
                    }
                }
                (rhs, true) => {
                    let children: Result<Vec<Occ>, ()> =
                        rhs.symbols().map(|s| occ(s, q)).collect();
                    if let Ok(children) = children {
                        prods[v].push(Prod::Branch { p, children });
                    }
                }
                (Rhs::Triple(..), false) => {}
            }
        }
    }

    let mass = match quantity {
        Quantity::Time => time_dp(&vars, &prods, k_max),
        Quantity::Work => work_dp(&vars, &prods, k_max),
    };

    DistTable {
        model: normed,
        normalised_applied,
        original_states,
        quantity,
        vars,
        var_index,
        mass,
        term,
    }
}

fn time_dp(vars: &[(Symbol, String)], prods: &[Vec<Prod>], k_max: usize) -> Vec<Vec<f64>> {
    let n = vars.len();
    let mut mass = vec![vec![0.0; k_max + 1]; n];
    let mut cdf = vec![vec![0.0; k_max + 1]; n];

    // CDF of an occurrence at index m (Done is the point mass at 0).
    let occ_cdf = |cdf: &[Vec<f64>], o: Occ, m: isize| -> f64 {
        if m < 0 {
            return 0.0;
        }
        match o {
            Occ::Done => 1.0,
            Occ::Var(v) => cdf[v][m as usize],
        }
    };
    let occ_pmf = |mass: &[Vec<f64>], o: Occ, m: usize| -> f64 {
        match o {
            Occ::Done => {
                if m == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Occ::Var(v) => mass[v][m],
        }
    };

    // maxconv[prod-id][m] = P(max(left, right) = m), filled as k grows.
    let mut max_pmf: Vec<Vec<Vec<f64>>> = prods
        .iter()
        .map(|ps| ps.iter().map(|_| Vec::with_capacity(k_max)).collect())
        .collect();

    for k in 1..=k_max {
        let m_new = k - 1;
        // Values at index m_new use PMF/CDF entries strictly below k.
        for v in 0..n {
            let mut acc = 0.0;
            for (pi, prod) in prods[v].iter().enumerate() {
                match prod {
                    Prod::Unary { p, child } => {
                        acc += p * occ_pmf(&mass, *child, m_new);
                    }
                    Prod::Split { p, left, right, join } => {
                        let cache = &mut max_pmf[v][pi];
                        let here = occ_cdf(&cdf, *left, m_new as isize)
                            * occ_cdf(&cdf, *right, m_new as isize)
                            - occ_cdf(&cdf, *left, m_new as isize - 1)
                                * occ_cdf(&cdf, *right, m_new as isize - 1);
                        cache.push(here);
                        let mut conv = 0.0;
                        for (m, &pm) in cache.iter().enumerate() {
                            conv += pm * mass[*join][m_new - m];
                        }
                        acc += p * conv;
                    }
                    Prod::Branch { p, children } => {
                        let prod_at = |m: isize| -> f64 {
                            children.iter().map(|&c| occ_cdf(&cdf, c, m)).product()
                        };
                        acc += p * (prod_at(m_new as isize) - prod_at(m_new as isize - 1));
                    }
                }
            }
            mass[v][k] = acc;
        }
        for v in 0..n {
            cdf[v][k] = cdf[v][k - 1] + mass[v][k];
        }
    }
    mass
}

fn work_dp(vars: &[(Symbol, String)], prods: &[Vec<Prod>], k_max: usize) -> Vec<Vec<f64>> {
    let n = vars.len();
    let mut mass = vec![vec![0.0; k_max + 1]; n];

    let occ_pmf = |mass: &[Vec<f64>], o: Occ, m: usize| -> f64 {
        match o {
            Occ::Done => {
                if m == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Occ::Var(v) => mass[v][m],
        }
    };

    // Incrementally grown pairwise convolutions per production:
    // conv2 = first ⊛ second; conv3 = conv2 ⊛ third (only for 3 factors).
    let mut conv2: Vec<Vec<Vec<f64>>> = prods
        .iter()
        .map(|ps| ps.iter().map(|_| Vec::with_capacity(k_max)).collect())
        .collect();
    let mut conv3: Vec<Vec<Vec<f64>>> = prods
        .iter()
        .map(|ps| ps.iter().map(|_| Vec::with_capacity(k_max)).collect())
        .collect();

    for k in 1..=k_max {
        let m_new = k - 1;
        for v in 0..n {
            let mut acc = 0.0;
            for (pi, prod) in prods[v].iter().enumerate() {
                let (p, factors): (f64, Vec<Occ>) = match prod {
                    Prod::Unary { p, child } => {
                        acc += p * occ_pmf(&mass, *child, m_new);
                        continue;
                    }
                    Prod::Split { p, left, right, join } => {
                        (*p, vec![*left, *right, Occ::Var(*join)])
                    }
                    Prod::Branch { p, children } => (*p, children.clone()),
                };
                // Grow conv2 to index m_new.
                let c2 = &mut conv2[v][pi];
                let mut val = 0.0;
                for i in 0..=m_new {
                    val += occ_pmf(&mass, factors[0], i) * occ_pmf(&mass, factors[1], m_new - i);
                }
                c2.push(val);
                let point = if factors.len() == 2 {
                    c2[m_new]
                } else {
                    let c3 = &mut conv3[v][pi];
                    let mut val = 0.0;
                    for i in 0..=m_new {
                        val += c2[i] * occ_pmf(&mass, factors[2], m_new - i);
                    }
                    c3.push(val);
                    c3[m_new]
                };
                acc += p * point;
            }
            mass[v][k] = acc;
        }
    }
    mass
}

/// Tail expectation Σ_{k≤K} P(Z > k | event): a certified lower bound on the
/// conditional expectation, `converged` iff the final tail term is below
/// 1e-9.
pub fn tail_expectation(pmf: &Pmf, cond_prob: f64) -> (f64, bool) {
    assert!(cond_prob > 0.0, "conditioning probability must be positive");
    let mut sum = 0.0;
    let mut acc = 0.0;
    let mut last_tail = 1.0;
    for &m in &pmf.mass {
        acc += m;
        last_tail = (1.0 - acc / cond_prob).max(0.0);
        sum += last_tail;
    }
    (sum, last_tail < 1e-9)
}

/// The characteristic matrix A of a branching process: A[X][Y] is the
/// expected number of Y-processes after one step from a single X.
#[derive(Clone, Debug)]
pub struct CharMatrix {
    pub symbols: Vec<Symbol>,
    /// Row-major exact entries.
    pub entries: Vec<Rational>,
}

impl CharMatrix {
    pub fn dim(&self) -> usize {
        self.symbols.len()
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.entries[i * n + j].to_f64().unwrap_or(0.0))
    }
}

pub fn characteristic_matrix(bp: &PsjsModel) -> Result<CharMatrix, PerfError> {
    if !bp.flags.branching {
        return Err(PerfError::NotBranching);
    }
    let symbols: Vec<Symbol> = bp.process_symbols().to_vec();
    let index: HashMap<&Symbol, usize> = symbols.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let n = symbols.len();
    let mut entries = vec![Rational::zero(); n * n];
    for rule in bp.rules() {
        let i = index[&rule.lhs];
        for s in rule.rhs.symbols() {
            if let Some(&j) = index.get(s) {
                entries[i * n + j] += rule.prob.clone();
            }
        }
    }
    Ok(CharMatrix { symbols, entries })
}

/// Removes process symbols unreachable from `x0` through positive-probability
/// rule applications, yielding a reduced branching process.
pub fn reduce_bp(bp: &PsjsModel, x0: &Symbol) -> Result<PsjsModel, PerfError> {
    if !bp.has_rules(x0) {
        return Err(PerfError::UnknownSymbol(x0.clone()));
    }
    let mut reachable: std::collections::HashSet<Symbol> = std::collections::HashSet::new();
    let mut queue = vec![x0.clone()];
    reachable.insert(x0.clone());
    while let Some(sym) = queue.pop() {
        for &ri in bp.rules_for(&sym) {
            for s in bp.rules()[ri].rhs.symbols() {
                if s.is_process() && reachable.insert(s.clone()) {
                    queue.push(s.clone());
                }
            }
        }
    }
    let rules = bp
        .rules()
        .iter()
        .filter(|r| reachable.contains(&r.lhs))
        .cloned()
        .collect();
    Ok(PsjsModel::from_parts(
        bp.sync_states().to_vec(),
        rules,
        bp.flags,
        Some(x0.clone()),
    ))
}

/// Verdict of the subcriticality test ρ(A) < 1.
#[derive(Clone, Debug, Serialize)]
pub struct SubcriticalReport {
    pub subcritical: bool,
    /// Power-iteration estimate of the spectral radius.
    pub rho_estimate: f64,
    /// True when the estimate sits within 1e-6 of the phase transition.
    pub near_critical: bool,
    /// True when the verdict was computed in exact rational arithmetic.
    pub exact: bool,
}

/// Decides ρ(A) < 1 for a nonnegative matrix. For A of dimension ≤ 50 this
/// runs in exact rational arithmetic via the M-matrix criterion — ρ(A) < 1
/// iff all leading principal minors of I − A are positive, checked through
/// pivots of an elimination without row exchanges; larger matrices use the
/// same test in floating point with tolerance 1e-9. A power-iteration
/// estimate of ρ(A) is reported alongside as a consistency check.
pub fn is_subcritical(a: &CharMatrix) -> SubcriticalReport {
    let n = a.dim();
    let rho_estimate = power_iteration_rho(&a.to_f64());
    let near_critical = (rho_estimate - 1.0).abs() <= 1e-6;

    let subcritical = if n == 0 {
        true
    } else if n <= 50 {
        exact_minors_positive(a)
    } else {
        float_minors_positive(&a.to_f64(), 1e-9)
    };

    SubcriticalReport {
        subcritical,
        rho_estimate,
        near_critical,
        exact: n <= 50,
    }
}

fn exact_minors_positive(a: &CharMatrix) -> bool {
    let n = a.dim();
    // b = I − A.
    let mut b: Vec<Rational> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let base = if i == j { Rational::one() } else { Rational::zero() };
            base - a.entries[idx].clone()
        })
        .collect();
    for k in 0..n {
        let pivot = b[k * n + k].clone();
        if pivot <= Rational::zero() {
            return false;
        }
        for i in (k + 1)..n {
            let factor = &b[i * n + k] / &pivot;
            if factor.is_zero() {
                continue;
            }
            for j in k..n {
                let sub = &factor * &b[k * n + j];
                b[i * n + j] -= sub;
            }
        }
    }
    true
}

fn float_minors_positive(a: &DMatrix<f64>, tol: f64) -> bool {
    let n = a.nrows();
    let mut b = DMatrix::<f64>::identity(n, n) - a;
    for k in 0..n {
        let pivot = b[(k, k)];
        if pivot <= tol {
            return false;
        }
        for i in (k + 1)..n {
            let factor = b[(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                b[(i, j)] -= factor * b[(k, j)];
            }
        }
    }
    true
}

fn power_iteration_rho(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Iterate on A + I: for nonnegative A the Perron root shifts to ρ + 1,
    // and the shift makes periodic matrices (e.g. [[0,2],[1/2,0]], ρ = 1)
    // converge where plain power iteration would oscillate.
    let shifted = a + DMatrix::<f64>::identity(n, n);
    let mut x = DVector::<f64>::from_element(n, 1.0);
    let mut rho = 1.0;
    for _ in 0..1000 {
        let y = &shifted * &x;
        let norm = y.amax();
        if norm == 0.0 {
            return 0.0;
        }
        rho = norm;
        x = y / norm;
    }
    (rho - 1.0).max(0.0)
}

/// A finite value or a proof-backed infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Expectation {
    Finite(f64),
    Infinite,
}

impl Expectation {
    pub fn is_finite(&self) -> bool {
        matches!(self, Expectation::Finite(_))
    }
}

/// Expected total work of a branching process from `x0`: infinite iff the
/// reduced characteristic matrix is not subcritical, otherwise the
/// x0-component of (I−A)⁻¹·1.
pub fn expected_work_bp(bp: &PsjsModel, x0: &Symbol) -> Result<Expectation, PerfError> {
    let reduced = reduce_bp(bp, x0)?;
    let a = characteristic_matrix(&reduced)?;
    if !is_subcritical(&a).subcritical {
        return Ok(Expectation::Infinite);
    }
    let n = a.dim();
    let m = DMatrix::<f64>::identity(n, n) - a.to_f64();
    let ones = DVector::<f64>::from_element(n, 1.0);
    let w = m
        .lu()
        .solve(&ones)
        .expect("I−A is a nonsingular M-matrix for subcritical A");
    let idx = a.symbols.iter().position(|s| s == x0).unwrap();
    Ok(Expectation::Finite(w[idx]))
}

/// Probabilities of the space trichotomy for runs from `a`.
#[derive(Clone, Debug, Serialize)]
pub struct SpaceReport {
    /// P(S_a < ∞): terminating or bounded non-terminating.
    pub p_finite: f64,
    /// P(run terminates).
    pub p_terminate: f64,
    /// P(S_a < ∞ and the run never terminates).
    pub p_bounded_nonterm: f64,
}

/// Computes the probability of finite space via the finite-space transform:
/// in the transformed model, [a↓q̄] for the fresh state q̄ is exactly the
/// probability of a bounded non-terminating run.
pub fn space_probability(model: &PsjsModel, a: &Symbol) -> Result<SpaceReport, PerfError> {
    if !model.has_rules(a) {
        return Err(PerfError::UnknownSymbol(a.clone()));
    }
    let fs = finite_space_transform(model);
    let term = crate::solver::termination_matrix(&fs.model, Method::Newton, SolveOptions::newton());
    let p_bounded_nonterm = term.get(a, &fs.space_sink);
    let p_terminate: f64 = fs
        .model
        .sync_states()
        .iter()
        .filter(|q| **q != fs.space_sink)
        .map(|q| term.get(a, q))
        .sum();
    Ok(SpaceReport {
        p_finite: (p_terminate + p_bounded_nonterm).min(1.0),
        p_terminate,
        p_bounded_nonterm,
    })
}

/// Expected total work of a pSJS from `a` (of the normalised model when
/// normalisation is applied internally). Infinite when the run fails to
/// terminate with probability 1; otherwise Σ_q [a↓q]·E W of the conditioned
/// branching process started at a@q.
pub fn expected_work_psjs(model: &PsjsModel, a: &Symbol) -> Result<Expectation, PerfError> {
    if !model.has_rules(a) {
        return Err(PerfError::UnknownSymbol(a.clone()));
    }
    let normed = if model.flags.normalised {
        model.clone()
    } else {
        normalise(model).model
    };
    let term = crate::solver::termination_matrix(&normed, Method::Newton, SolveOptions::newton());
    if term.total(a) < 1.0 - 1e-9 {
        return Ok(Expectation::Infinite);
    }
    let bp = conditioned_bp(&normed, &term)?;
    let mut total = 0.0;
    for q in normed.sync_states() {
        let weight = term.get(a, q);
        let Some(name) = bp.names.get(&(a.clone(), q.clone())) else {
            continue;
        };
        match expected_work_bp(&bp.model, name)? {
            Expectation::Infinite => return Ok(Expectation::Infinite),
            Expectation::Finite(w) => total += weight * w,
        }
    }
    Ok(Expectation::Finite(total))
}

/// Joint verdict on E[Work] and E[Time], which are finite or infinite
/// together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Finiteness {
    pub work_finite: bool,
    pub time_finite: bool,
}

pub fn finiteness(model: &PsjsModel, a: &Symbol) -> Result<Finiteness, PerfError> {
    let finite = expected_work_psjs(model, a)?.is_finite();
    Ok(Finiteness {
        work_finite: finite,
        time_finite: finite,
    })
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

    fn doubler_psjs(num: u32, den: u32) -> PsjsModel {
        // X -> <X X> : p, X -> q : 1-p, <q q> -> q : 1. Normalised once all
        // join pairs exist; with one state it already is.
        parse_model(&format!(
            "states: q\nflags: normalised\nX -> <X X> : {num}/{den}\nX -> q : {rest}/{den}\n<q q> -> q : 1\n",
            rest = den - num
        ))
        .unwrap()
    }

    fn doubler_bp(num: u32, den: u32) -> PsjsModel {
        parse_model(&format!(
            "states: q\nflags: branching normalised\nX -> <X X> : {num}/{den}\nX -> q : {rest}/{den}\n",
            rest = den - num
        ))
        .unwrap()
    }

    fn opts() -> (Method, SolveOptions) {
        (Method::Newton, SolveOptions::newton())
    }

    #[test]
    fn ex1_time_mass_one_step() {
        let m = parse_model(EX1).unwrap();
        let table = distributions(&m, Quantity::Time, 10, opts());
        assert!(table.normalised_applied);
        let pmf = table.pmf(&Symbol::basic("X"), "q").unwrap();
        assert!((pmf.mass[1] - 0.3).abs() < 1e-12);
        assert!((pmf.mass[0]).abs() < 1e-12);
    }

    #[test]
    fn trivial_rule_time_and_work() {
        let m = parse_model("states: q\nflags: normalised\nX -> q : 1\n<q q> -> q : 1\n").unwrap();
        for quantity in [Quantity::Time, Quantity::Work] {
            let table = distributions(&m, quantity, 5, opts());
            let pmf = table.pmf(&Symbol::basic("X"), "q").unwrap();
            assert!((pmf.mass[1] - 1.0).abs() < 1e-12);
            assert!(pmf.tail < 1e-12);
            let (e, converged) = tail_expectation(&pmf, pmf.cond_prob);
            assert!(converged);
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn time_mass_converges_to_termination_probability() {
        let m = parse_model(EX1).unwrap();
        let table = distributions(&m, Quantity::Time, 60, opts());
        let pmf = table.pmf(&Symbol::basic("X"), "q").unwrap();
        let total: f64 = pmf.mass.iter().sum();
        assert!((total - pmf.cond_prob).abs() < 1e-6, "gap {}", total - pmf.cond_prob);
    }

    #[test]
    fn work_dominates_time_pathwise() {
        let m = parse_model(EX1).unwrap();
        let time = distributions(&m, Quantity::Time, 30, opts());
        let work = distributions(&m, Quantity::Work, 30, opts());
        for q in ["q", "r"] {
            let t = time.pmf(&Symbol::basic("X"), q).unwrap();
            let w = work.pmf(&Symbol::basic("X"), q).unwrap();
            let mut ct = 0.0;
            let mut cw = 0.0;
            for k in 0..=30 {
                ct += t.mass[k];
                cw += w.mass[k];
                assert!(cw <= ct + 1e-12, "k={k}: work cdf {cw} > time cdf {ct}");
            }
        }
    }

    #[test]
    fn ex1_work_five_contains_the_example_run() {
        // The §2-style runs with work 5 include one of probability 0.009.
        let m = parse_model(EX1).unwrap();
        let table = distributions(&m, Quantity::Work, 10, opts());
        let pmf = table.pmf(&Symbol::basic("X"), "q").unwrap();
        assert!(pmf.mass[5] >= 0.009 - 1e-12);
    }

    #[test]
    fn characteristic_matrix_of_doubler() {
        let bp = doubler_bp(1, 4);
        let a = characteristic_matrix(&bp).unwrap();
        assert_eq!(a.dim(), 1);
        assert_eq!(a.entries[0], Rational::new(1.into(), 2.into()));
    }

    #[test]
    fn two_symbol_char_matrix() {
        let bp = parse_model(
            "states: q\nflags: branching\nX -> <Y Y> : 1\nY -> X : 1/2\nY -> q : 1/2\n",
        )
        .unwrap();
        let a = characteristic_matrix(&bp).unwrap();
        assert_eq!(a.entries[1], Rational::from_integer(2.into())); // A[X][Y]
        assert_eq!(a.entries[2], Rational::new(1.into(), 2.into())); // A[Y][X]
        let rep = is_subcritical(&a);
        assert!(!rep.subcritical); // ρ = 1
        assert!((rep.rho_estimate - 1.0).abs() < 1e-6);
    }

    #[test]
    fn doubler_expected_work_formula() {
        for (num, den) in [(1u32, 10u32), (1, 4), (2, 5), (49, 100)] {
            let p = num as f64 / den as f64;
            let bp = doubler_bp(num, den);
            let got = expected_work_bp(&bp, &Symbol::basic("X")).unwrap();
            let want = 1.0 / (1.0 - 2.0 * p);
            match got {
                Expectation::Finite(w) => assert!((w - want).abs() < 1e-9, "p={p}: {w} vs {want}"),
                Expectation::Infinite => panic!("p={p} should be finite"),
            }
        }
        let bp = doubler_bp(1, 2);
        assert_eq!(
            expected_work_bp(&bp, &Symbol::basic("X")).unwrap(),
            Expectation::Infinite
        );
    }

    #[test]
    fn expected_work_psjs_counts_join_steps() {
        // Unlike the branching process, the pSJS also pays one unit of work
        // per join step: E W = N + pN with N = 1/(1-2p) X-leaves, so 2.5 at
        // p = 1/4.
        let m = doubler_psjs(1, 4);
        match expected_work_psjs(&m, &Symbol::basic("X")).unwrap() {
            Expectation::Finite(w) => assert!((w - 2.5).abs() < 1e-6, "{w}"),
            Expectation::Infinite => panic!("should be finite"),
        }
        let m = doubler_psjs(3, 4);
        assert_eq!(
            expected_work_psjs(&m, &Symbol::basic("X")).unwrap(),
            Expectation::Infinite
        );
    }

    #[test]
    fn space_probability_of_bounded_loop() {
        let m = parse_model("states: q\nb -> b : 1\n<q q> -> q : 1\n").unwrap();
        let rep = space_probability(&m, &Symbol::basic("b")).unwrap();
        assert!((rep.p_finite - 1.0).abs() < 1e-9);
        assert!(rep.p_terminate.abs() < 1e-9);
        assert!((rep.p_bounded_nonterm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn speedup_ratio_grows_toward_critical() {
        // E W / E T for the doubler family increases as p → 1/2.
        let mut last = 0.0;
        for (num, den) in [(30u32, 100u32), (40, 100), (45, 100), (48, 100)] {
            let m = doubler_psjs(num, den);
            let w = match expected_work_psjs(&m, &Symbol::basic("X")).unwrap() {
                Expectation::Finite(w) => w,
                Expectation::Infinite => panic!("subcritical"),
            };
            let table = distributions(&m, Quantity::Time, 4000, opts());
            let pmf = table.pmf(&Symbol::basic("X"), "q").unwrap();
            let (t, _) = tail_expectation(&pmf, pmf.cond_prob);
            let ratio = w / t;
            assert!(ratio > last, "ratio {ratio} not above {last}");
            last = ratio;
        }
    }

    #[test]
    fn reduce_drops_isolated_symbols() {
        let bp = parse_model(
            "states: q\nflags: branching\nX -> q : 1\nZ -> <Z Z> : 1\n",
        )
        .unwrap();
        let r = reduce_bp(&bp, &Symbol::basic("X")).unwrap();
        assert_eq!(r.process_symbols(), &[Symbol::basic("X")]);
    }
}
