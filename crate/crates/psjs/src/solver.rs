//! Termination-probability solvers.
//!
//! For a model with process symbols Γ and sync states Q, the termination
//! probabilities [a↓q] — probability that a run from `a` ends as the single
//! leaf `q` — form the least nonnegative solution of a polynomial fixpoint
//! system:
//!
//! - v(q, q) = 1 and v(r, q) = 0 for sync states r ≠ q,
//! - v(a, q) = Σ over unary rules a →p σ' of p·v(σ', q)
//!           + Σ over split rules a →p ⟨σ1 σ2⟩ and joins ⟨q1 q2⟩ ∈ Γ of
//!             p·v(σ1, q1)·v(σ2, q2)·v(⟨q1 q2⟩, q).
//!
//! For branching processes (no joins) the split children evolve
//! independently and must all terminate in the same state:
//! v(a, q) = Σ p·Π v(σi, q).
//!
//! The exact *zero set* — which v(a, q) are zero — is computed first as a
//! boolean least fixpoint; numeric iteration then runs only over the
//! positive variables, which both shrinks the system and makes the least
//! fixpoint the unique limit of iteration from 0.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num::ToPrimitive;
use serde::Serialize;

use crate::model::{PsjsModel, Rational, Rhs, Symbol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Kleene,
    Newton,
}

/// Solver configuration. Defaults: tolerance 1e-12; 1e6 Kleene iterations;
/// 200 Newton iterations.
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u64,
}

impl SolveOptions {
    pub fn kleene() -> Self {
        SolveOptions { tol: 1e-12, max_iter: 1_000_000 }
    }

    pub fn newton() -> Self {
        SolveOptions { tol: 1e-12, max_iter: 200 }
    }
}

/// A monomial c·x_{f1}·…·x_{fk} in one equation's right-hand side.
#[derive(Clone, Debug)]
struct Monomial {
    coef: f64,
    /// The coefficient as given in the model, kept exact for the refined
    /// defect evaluation near critical fixpoints.
    exact: Rational,
    factors: Vec<u32>,
}

/// The fixpoint system for one model, restricted to its positive variables.
pub struct TermSystem {
    symbols: Vec<Symbol>,
    sym_index: HashMap<Symbol, usize>,
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    /// Positivity of each (symbol, state) pair, row-major.
    positive: Vec<bool>,
    /// Maps a positive pair index to its variable id.
    var_of_pair: Vec<Option<u32>>,
    /// Pair index of each variable.
    pair_of_var: Vec<usize>,
    equations: Vec<Vec<Monomial>>,
}

impl TermSystem {
    pub fn new(model: &PsjsModel) -> Self {
        let symbols: Vec<Symbol> = model.process_symbols().to_vec();
        let sym_index: HashMap<Symbol, usize> =
            symbols.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let states: Vec<String> = model.sync_states().to_vec();
        let state_index: HashMap<String, usize> =
            states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

        let positive = compute_positive(model, &symbols, &sym_index, &states, &state_index);

        let nq = states.len();
        let mut var_of_pair = vec![None; symbols.len() * nq];
        let mut pair_of_var = Vec::new();
        for (pair, &pos) in positive.iter().enumerate() {
            if pos {
                var_of_pair[pair] = Some(pair_of_var.len() as u32);
                pair_of_var.push(pair);
            }
        }

        let mut system = TermSystem {
            symbols,
            sym_index,
            states,
            state_index,
            positive,
            var_of_pair,
            pair_of_var,
            equations: Vec::new(),
        };
        system.equations = system.build_equations(model);
        system
    }

    fn pair(&self, sym_idx: usize, q_idx: usize) -> usize {
        sym_idx * self.states.len() + q_idx
    }

    /// Variable id of (σ, q) if σ is a process symbol with positive value;
    /// `Ok(None)` means the occurrence is the constant 1 (a matching sync
    /// state); `Err(())` means the occurrence is the constant 0.
    fn factor_of(&self, sym: &Symbol, q_idx: usize) -> Result<Option<u32>, ()> {
        match sym {
            Symbol::Sync(n) => {
                if self.state_index.get(n) == Some(&q_idx) {
                    Ok(None)
                } else {
                    Err(())
                }
            }
            _ => {
                let si = *self.sym_index.get(sym).ok_or(())?;
                match self.var_of_pair[self.pair(si, q_idx)] {
                    Some(v) => Ok(Some(v)),
                    None => Err(()),
                }
            }
        }
    }

    fn build_equations(&self, model: &PsjsModel) -> Vec<Vec<Monomial>> {
        let joins: Vec<(usize, usize, &Symbol)> = model
            .join_symbols()
            .map(|j| match j {
                Symbol::Join(a, b) => (self.state_index[a], self.state_index[b], j),
                _ => unreachable!(),
            })
            .collect();

        let mut equations: Vec<Vec<Monomial>> = vec![Vec::new(); self.pair_of_var.len()];
        for (var, &pair) in self.pair_of_var.iter().enumerate() {
            let sym_idx = pair / self.states.len();
            let q_idx = pair % self.states.len();
            let lhs = &self.symbols[sym_idx];
            for &ri in model.rules_for(lhs) {
                let rule = &model.rules()[ri];
                let coef = rule.prob.to_f64().unwrap_or(0.0);
                let exact = &rule.prob;
                match (&rule.rhs, model.flags.branching) {
                    (Rhs::Single(s), _) => {
                        if let Ok(f) = self.factor_of(s, q_idx) {
                            equations[var].push(Monomial {
                                coef,
                                exact: exact.clone(),
                                factors: f.into_iter().collect(),
                            });
                        }
                    }
                    (Rhs::Pair(s1, s2), false) => {
                        for &(q1, q2, join) in &joins {
                            let f1 = self.factor_of(s1, q1);
                            let f2 = self.factor_of(s2, q2);
                            let f3 = self.factor_of(join, q_idx);
                            if let (Ok(f1), Ok(f2), Ok(f3)) = (f1, f2, f3) {
                                equations[var].push(Monomial {
                                    coef,
                                    exact: exact.clone(),
                                    factors: [f1, f2, f3].into_iter().flatten().collect(),
                                });
                            }
                        }
                    }
                    (rhs, true) => {
                        let mut factors = Vec::new();
                        let mut dead = false;
                        for s in rhs.symbols() {
                            match self.factor_of(s, q_idx) {
                                Ok(Some(v)) => factors.push(v),
                                Ok(None) => {}
                                Err(()) => {
                                    dead = true;
                                    break;
                                }
                            }
                        }
                        if !dead {
                            equations[var].push(Monomial { coef, exact: exact.clone(), factors });
                        }
                    }
                    (Rhs::Triple(..), false) => {
                        // Rejected by validation; unreachable on valid models.
                    }
                }
            }
        }
        equations
    }

    pub fn num_vars(&self) -> usize {
        self.pair_of_var.len()
    }

    /// Exact answer to "[σ ↓ q] > 0?". Sync states are positive only on
    /// themselves; unknown symbols are zero everywhere.
    pub fn is_positive(&self, sym: &Symbol, q: &str) -> bool {
        let Some(&qi) = self.state_index.get(q) else {
            return false;
        };
        match sym {
            Symbol::Sync(n) => n == q,
            _ => match self.sym_index.get(sym) {
                Some(&si) => self.positive[self.pair(si, qi)],
                None => false,
            },
        }
    }

    /// The (symbol, state) pairs with [σ↓q] = 0, computed exactly.
    pub fn zero_set(&self) -> Vec<(Symbol, String)> {
        let mut out = Vec::new();
        for (si, sym) in self.symbols.iter().enumerate() {
            for (qi, q) in self.states.iter().enumerate() {
                if !self.positive[self.pair(si, qi)] {
                    out.push((sym.clone(), q.clone()));
                }
            }
        }
        out
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (var, eq) in self.equations.iter().enumerate() {
            let mut acc = 0.0;
            for m in eq {
                let mut term = m.coef;
                for &f in &m.factors {
                    term *= x[f as usize];
                }
                acc += term;
            }
            out[var] = acc;
        }
    }

    /// The defect f(x) − x evaluated in exact rational arithmetic (each f64
    /// entry of x is an exact dyadic rational). Near a critical fixpoint the
    /// f64 difference is pure cancellation noise, while the exact defect
    /// still carries the direction and magnitude a Newton step needs.
    fn eval_defect_exact(&self, x: &[f64], out: &mut [f64]) {
        use num::Zero;
        let xr: Vec<Rational> = x
            .iter()
            .map(|&v| Rational::from_float(v).unwrap_or_else(Rational::zero))
            .collect();
        for (var, eq) in self.equations.iter().enumerate() {
            let mut acc = -xr[var].clone();
            for m in eq {
                let mut term = m.exact.clone();
                for &f in &m.factors {
                    term *= xr[f as usize].clone();
                }
                acc += term;
            }
            out[var] = acc.to_f64().unwrap_or(0.0);
        }
    }

    /// Kleene iteration from 0. Monotonically nondecreasing by construction;
    /// each iterate is clamped and asserted nondecreasing up to rounding.
    pub fn kleene(&self, opts: SolveOptions) -> TermMatrix {
        let n = self.num_vars();
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut iterations = 0;
        let mut converged = false;
        let mut residual = f64::INFINITY;
        while iterations < opts.max_iter {
            self.eval_into(&x, &mut next);
            residual = 0.0f64;
            for i in 0..n {
                debug_assert!(
                    next[i] >= x[i] - 1e-15,
                    "Kleene iteration must be monotone"
                );
                next[i] = next[i].clamp(x[i], 1.0);
                residual = residual.max(next[i] - x[i]);
            }
            std::mem::swap(&mut x, &mut next);
            iterations += 1;
            if residual <= opts.tol {
                converged = true;
                break;
            }
        }
        self.matrix_from(x, Method::Kleene, iterations, converged, residual)
    }

    /// Damped Newton iteration on g(x) = f(x) − x, clamped to [0,1]^n.
    /// Components that a Newton step would push below the plain Kleene update
    /// take the Kleene update instead, preserving approach from below.
    pub fn newton(&self, opts: SolveOptions) -> TermMatrix {
        let n = self.num_vars();
        if n == 0 {
            return self.matrix_from(Vec::new(), Method::Newton, 0, true, 0.0);
        }
        let mut x = DVector::<f64>::zeros(n);
        let mut fx = vec![0.0; n];
        let mut iterations = 0;
        let mut converged = false;
        let mut residual = f64::INFINITY;

        while iterations < opts.max_iter {
            self.eval_into(x.as_slice(), &mut fx);
            let mut g = DVector::from_fn(n, |i, _| fx[i] - x[i]);
            residual = g.amax();
            if residual <= 1e-6 {
                // Close to the fixpoint, recompute the defect exactly so the
                // near-singular solve at critical points is not fed noise.
                let mut exact = vec![0.0; n];
                self.eval_defect_exact(x.as_slice(), &mut exact);
                g = DVector::from_vec(exact);
                residual = g.amax();
            }

            // Jacobian of f at x.
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for (var, eq) in self.equations.iter().enumerate() {
                for m in eq {
                    for (k, &fk) in m.factors.iter().enumerate() {
                        let mut term = m.coef;
                        for (l, &fl) in m.factors.iter().enumerate() {
                            if l != k {
                                term *= x[fl as usize];
                            }
                        }
                        jac[(var, fk as usize)] += term;
                    }
                }
            }
            // Solve (I - J) dx = f(x) - x; x' = x + dx.
            let mut a = -jac;
            for i in 0..n {
                a[(i, i)] += 1.0;
            }
            let step = a.lu().solve(&g);

            let mut next = DVector::<f64>::zeros(n);
            match step {
                Some(dx) => {
                    for i in 0..n {
                        let candidate = (x[i] + dx[i]).clamp(0.0, 1.0);
                        // Never fall behind the Kleene update.
                        next[i] = candidate.max(fx[i].min(1.0));
                    }
                }
                None => {
                    // Singular Jacobian: fall back to a plain Kleene sweep.
                    for i in 0..n {
                        next[i] = fx[i].min(1.0);
                    }
                }
            }
            let moved = (0..n).map(|i| (next[i] - x[i]).abs()).fold(0.0, f64::max);
            x = next;
            iterations += 1;
            // At a critical fixpoint the defect is quadratically smaller
            // than the true error while Newton gains only one bit per step,
            // so a small defect alone is not convergence: the step must be
            // small too.
            if residual <= opts.tol && moved <= opts.tol {
                converged = true;
                break;
            }
        }
        self.matrix_from(x.as_slice().to_vec(), Method::Newton, iterations, converged, residual)
    }

    pub fn solve(&self, method: Method, opts: SolveOptions) -> TermMatrix {
        match method {
            Method::Kleene => self.kleene(opts),
            Method::Newton => self.newton(opts),
        }
    }

    fn matrix_from(
        &self,
        x: Vec<f64>,
        method: Method,
        iterations: u64,
        converged: bool,
        residual: f64,
    ) -> TermMatrix {
        let nq = self.states.len();
        let mut values = vec![0.0; self.symbols.len() * nq];
        for (var, &pair) in self.pair_of_var.iter().enumerate() {
            values[pair] = x[var];
        }
        TermMatrix {
            symbols: self.symbols.clone(),
            sym_index: self.sym_index.clone(),
            states: self.states.clone(),
            state_index: self.state_index.clone(),
            values,
            method,
            iterations,
            converged,
            residual,
        }
    }
}

/// Boolean least fixpoint for positivity of v(σ, q).
fn compute_positive(
    model: &PsjsModel,
    symbols: &[Symbol],
    sym_index: &HashMap<Symbol, usize>,
    states: &[String],
    state_index: &HashMap<String, usize>,
) -> Vec<bool> {
    let nq = states.len();
    let mut pos = vec![false; symbols.len() * nq];
    let joins: Vec<(usize, usize, usize)> = model
        .join_symbols()
        .map(|j| match j {
            Symbol::Join(a, b) => (state_index[a], state_index[b], sym_index[j]),
            _ => unreachable!(),
        })
        .collect();

    // posval(σ, q): sync states are positive exactly on themselves.
    let posval = |pos: &[bool], sym: &Symbol, qi: usize| -> bool {
        match sym {
            Symbol::Sync(n) => state_index.get(n) == Some(&qi),
            _ => sym_index
                .get(sym)
                .map(|&si| pos[si * nq + qi])
                .unwrap_or(false),
        }
    };

    loop {
        let mut changed = false;
        for rule in model.rules() {
            let si = sym_index[&rule.lhs];
            match (&rule.rhs, model.flags.branching) {
                (Rhs::Single(s), _) => {
                    for qi in 0..nq {
                        if !pos[si * nq + qi] && posval(&pos, s, qi) {
                            pos[si * nq + qi] = true;
                            changed = true;
                        }
                    }
                }
                (Rhs::Pair(s1, s2), false) => {
                    for &(q1, q2, ji) in &joins {
                        if posval(&pos, s1, q1) && posval(&pos, s2, q2) {
                            for qi in 0..nq {
                                if !pos[si * nq + qi] && pos[ji * nq + qi] {
                                    pos[si * nq + qi] = true;
                                    changed = true;
                                }
                            }
                        }
                    }
                }
                (rhs, true) => {
                    for qi in 0..nq {
                        if !pos[si * nq + qi] && rhs.symbols().all(|s| posval(&pos, s, qi)) {
                            pos[si * nq + qi] = true;
                            changed = true;
                        }
                    }
                }
                (Rhs::Triple(..), false) => {}
            }
        }
        if !changed {
            break;
        }
    }
    pos
}

/// The computed termination-probability matrix [σ↓q].
#[derive(Clone, Debug)]
pub struct TermMatrix {
    symbols: Vec<Symbol>,
    sym_index: HashMap<Symbol, usize>,
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    /// Row-major over (symbols × states).
    values: Vec<f64>,
    pub method: Method,
    pub iterations: u64,
    pub converged: bool,
    /// Final sup-norm residual ‖f(x) − x‖ (Newton) or last increase (Kleene).
    pub residual: f64,
}

impl TermMatrix {
    /// [σ↓q]. Sync states give 1 on themselves and 0 elsewhere; unknown
    /// symbols give 0.
    pub fn get(&self, sym: &Symbol, q: &str) -> f64 {
        let Some(&qi) = self.state_index.get(q) else {
            return 0.0;
        };
        match sym {
            Symbol::Sync(n) => {
                if n == q {
                    1.0
                } else {
                    0.0
                }
            }
            _ => match self.sym_index.get(sym) {
                Some(&si) => self.values[si * self.states.len() + qi],
                None => 0.0,
            },
        }
    }

    /// Σ_q [σ↓q]: total termination probability of σ.
    pub fn total(&self, sym: &Symbol) -> f64 {
        self.states.iter().map(|q| self.get(sym, q)).sum()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }
}

/// Builds the system for `model` and solves it.
pub fn termination_matrix(model: &PsjsModel, method: Method, opts: SolveOptions) -> TermMatrix {
    TermSystem::new(model).solve(method, opts)
}
