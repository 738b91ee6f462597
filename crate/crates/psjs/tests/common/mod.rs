use num::BigInt;
use psjs::model::{ModelFlags, PsjsModel, Rational, Rhs, Rule, Symbol};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Generates a small valid pSJS (≤ 6 process symbols, ≤ 3 sync states) with
/// exact rational probabilities summing to 1 per left-hand side. Purely a
/// function of the seed.
pub fn random_model(seed: u64) -> PsjsModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_states = rng.gen_range(1..=3usize);
    let states: Vec<String> = (0..n_states).map(|i| format!("q{i}")).collect();
    let n_basic = rng.gen_range(1..=4usize);
    let mut alphabet: Vec<Symbol> =
        (0..n_basic).map(|i| Symbol::basic(format!("A{i}"))).collect();
    for a in 0..n_states {
        for b in 0..n_states {
            if alphabet.len() < 6 && rng.gen_bool(0.3) {
                alphabet.push(Symbol::join(states[a].clone(), states[b].clone()));
            }
        }
    }

    // Right-hand-side element: a process symbol or a sync state, so every
    // referenced symbol has rules.
    let element = |rng: &mut ChaCha8Rng| -> Symbol {
        if rng.gen_bool(0.4) {
            Symbol::sync(states[rng.gen_range(0..n_states)].clone())
        } else {
            alphabet[rng.gen_range(0..alphabet.len())].clone()
        }
    };

    let mut rules = Vec::new();
    for lhs in alphabet.clone() {
        let n_rules = rng.gen_range(1..=3usize);
        let weights: Vec<u64> = (0..n_rules).map(|_| rng.gen_range(1..=9)).collect();
        let total: u64 = weights.iter().sum();
        for w in weights {
            let rhs = if rng.gen_bool(0.45) {
                Rhs::Pair(element(&mut rng), element(&mut rng))
            } else {
                // A single sync state terminates; a single join would be
                // canonicalised into a pair anyway.
                Rhs::Single(element(&mut rng))
            };
            rules.push(Rule {
                lhs: lhs.clone(),
                rhs,
                prob: Rational::new(BigInt::from(w), BigInt::from(total)),
            });
        }
    }

    let start = alphabet[0].clone();
    let model = PsjsModel::from_parts(states, rules, ModelFlags::default(), Some(start));
    assert!(model.validate().is_empty(), "generator produced an invalid model");
    model
}
