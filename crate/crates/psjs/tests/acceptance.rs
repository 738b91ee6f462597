//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS line on success (visible with `--nocapture`).

mod common;

use std::time::Instant;

use psjs::casestudy::{
    conditional_time, conditional_work, divcon_rows, game_tree, GameVariant,
};
use psjs::model::{PsjsModel, Rational, Symbol};
use psjs::parse::parse_model;
use psjs::perf::{
    distributions, expected_work_bp, finiteness, space_probability,
    tail_expectation, Expectation, Quantity,
};
use psjs::sim::{estimate, scripted_run, Budgets, Outcome};
use psjs::solver::{termination_matrix, Method, SolveOptions, TermSystem};
use psjs::transform::{conditioned_bp, from_ppds, normalise, serialise, Ppds, PpdsRule};

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

fn doubler_bp(num: u32, den: u32) -> PsjsModel {
    parse_model(&format!(
        "states: q\nflags: branching normalised\nstart: X\nX -> <X X> : {num}/{den}\nX -> q : {rest}/{den}\n",
        rest = den - num
    ))
    .unwrap()
}

fn rw_image(num: u32, den: u32) -> PsjsModel {
    // The random walk as a pPDS: Z -> ZZ with probability p, pop otherwise.
    from_ppds(&Ppds {
        states: vec!["q".into()],
        alphabet: vec!["Z".into()],
        rules: vec![
            PpdsRule {
                state: "q".into(),
                top: "Z".into(),
                next_state: "q".into(),
                push: vec!["Z".into(), "Z".into()],
                prob: format!("{num}/{den}"),
            },
            PpdsRule {
                state: "q".into(),
                top: "Z".into(),
                next_state: "q".into(),
                push: vec![],
                prob: format!("{}/{den}", den - num),
            },
        ],
    })
}

fn rat(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

fn newton(model: &PsjsModel) -> psjs::solver::TermMatrix {
    termination_matrix(model, Method::Newton, SolveOptions::newton())
}

#[test]
fn criterion_01_worked_example_runs() {
    let start = Instant::now();
    let m = ex1();
    let x = Symbol::basic("X");

    // Left run of the worked example: X => <X X> => <q r> => X => q.
    let (stats, prob) = scripted_run(&m, &x, &[0, 1, 2, 0, 1], Budgets::default());
    assert_eq!(stats.outcome, Outcome::Terminated { state: "q".into() });
    assert_eq!(prob, rat(9, 1000), "run probability must be exactly 0.009");
    assert_eq!((stats.time, stats.work, stats.space), (4, 5, 2));

    // Right run: X => <X X> => <q <X X>> => <q <r q>> (frozen).
    let (stats, _) = scripted_run(&m, &x, &[0, 1, 0, 2, 1], Budgets::default());
    assert_eq!(stats.outcome, Outcome::Frozen);
    assert_eq!((stats.time, stats.work, stats.space), (3, 5, 3));

    assert!(start.elapsed().as_secs_f64() < 1.0, "criterion 1 exceeded 1s");
    println!("acceptance criterion 1: PASS — worked-example runs match exactly (prob 9/1000; T/W/S 4/5/2 and 3/5/3)");
}

#[test]
fn criterion_02_sequential_alpha_beta_work_row() {
    let start = Instant::now();
    let expected = [1.00, 1.43, 1.96, 2.63, 3.50, 4.68, 6.33];
    let mut got = Vec::new();
    for i in 0..7u32 {
        let p = rat(i as i64, 20); // 0, 0.05, ..., 0.30
        let cs = game_tree(GameVariant::Seq, &p);
        match conditional_work(&cs).unwrap() {
            Expectation::Finite(w) => got.push((w * 100.0).round() / 100.0),
            Expectation::Infinite => panic!("W(seq,{i}/20) must be finite"),
        }
    }
    assert_eq!(got, expected, "W(seq,p) row after 2-decimal rounding");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 took {elapsed:.1}s (> 60s)");
    println!("acceptance criterion 2: PASS — W(seq,p) = {got:?} in {elapsed:.1}s");
}

#[test]
fn criterion_03_finiteness_boundary_at_one_third() {
    let start = Instant::now();
    let p = rat(1, 3);

    let par = game_tree(GameVariant::Par, &p);
    let verdict = finiteness(&par.model, &par.start).unwrap();
    assert!(!verdict.work_finite && !verdict.time_finite, "par at 1/3 must be infinite");

    let seq = game_tree(GameVariant::Seq, &p);
    let verdict = finiteness(&seq.model, &seq.start).unwrap();
    assert!(verdict.work_finite && verdict.time_finite, "seq at 1/3 must be finite");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 3 took {elapsed:.1}s (> 30s)");
    println!("acceptance criterion 3: PASS — par(1/3) infinite, seq(1/3) finite in {elapsed:.1}s");
}

#[test]
fn criterion_04_doubler_speedup_family() {
    let start = Instant::now();
    let x = Symbol::basic("X");

    for (num, den) in [(1u32, 10u32), (1, 4), (2, 5), (49, 100)] {
        let p = num as f64 / den as f64;
        let m = doubler_bp(num, den);
        match expected_work_bp(&m, &x).unwrap() {
            Expectation::Finite(w) => {
                let want = 1.0 / (1.0 - 2.0 * p);
                assert!((w - want).abs() < 1e-9, "E W at p={p}: {w} vs {want}");
            }
            Expectation::Infinite => panic!("DOUBLER({p}) must have finite work"),
        }
    }

    // Average parallelism E W / E T grows towards criticality.
    let mut ratios = Vec::new();
    for (num, den) in [(30u32, 100u32), (40, 100), (45, 100), (48, 100)] {
        let m = doubler_bp(num, den);
        let w = match expected_work_bp(&m, &x).unwrap() {
            Expectation::Finite(w) => w,
            Expectation::Infinite => unreachable!(),
        };
        let table = distributions(&m, Quantity::Time, 4000, (Method::Newton, SolveOptions::newton()));
        let pmf = table.pmf(&x, "q").unwrap();
        let (t, converged) = tail_expectation(&pmf, pmf.cond_prob);
        assert!(converged, "E T truncation must converge at p={num}/{den}");
        ratios.push(w / t);
    }
    assert!(
        ratios.windows(2).all(|w| w[1] > w[0]),
        "work/time ratio must increase: {ratios:?}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 4 took {elapsed:.1}s (> 30s)");
    println!("acceptance criterion 4: PASS — E W = 1/(1-2p) within 1e-9; ratios {ratios:?}");
}

#[test]
fn criterion_05_random_walk_space_criterion() {
    let start = Instant::now();
    let sym = Symbol::join("q", "Z");
    for (num, den, finite) in [(3u32, 10u32, true), (1, 2, true), (3, 5, false), (3, 4, false)] {
        let m = rw_image(num, den);
        let report = space_probability(&m, &sym).unwrap();
        if finite {
            assert!(report.p_finite > 1.0 - 1e-10, "RW({num}/{den}): p_finite {}", report.p_finite);
        } else {
            assert!(report.p_finite < 1.0 - 1e-10, "RW({num}/{den}): p_finite {}", report.p_finite);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 5 took {elapsed:.1}s (> 10s)");
    println!("acceptance criterion 5: PASS — RW space verdicts stable at 1e-10 in {elapsed:.1}s");
}

#[test]
fn criterion_06_serialisation_round_trip() {
    for seed in 0..20u64 {
        let m = common::random_model(seed);
        let (ppds, map) = serialise(&m);
        let back = from_ppds(&ppds);
        let orig = newton(&m);
        let ser = newton(&back);
        for sym in m.process_symbols() {
            let image = Symbol::join(map.run_state.clone(), map.stack_symbol[&sym.to_string()].clone());
            for q in m.sync_states() {
                let want = orig.get(sym, q);
                let got = ser.get(&image, &map.popped_state[q]);
                assert!(
                    (want - got).abs() < 1e-10,
                    "seed {seed}: [{sym} -> {q}] = {want} vs round-trip {got}"
                );
            }
        }
    }
    println!("acceptance criterion 6: PASS — 20 serialise/from_ppds round trips within 1e-10");
}

#[test]
fn criterion_07_distribution_transfer() {
    const K: usize = 40;
    let opts = (Method::Newton, SolveOptions::newton());
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 10 {
        seed += 1;
        let m = normalise(&common::random_model(seed)).model;
        let term = newton(&m);
        let Ok(bp) = conditioned_bp(&m, &term) else { continue };
        let work = distributions(&m, Quantity::Work, K, opts);
        let time = distributions(&m, Quantity::Time, K, opts);
        let bp_work = distributions(&bp.model, Quantity::Work, K, opts);
        let bp_time = distributions(&bp.model, Quantity::Time, K, opts);

        let mut used = false;
        for a in m.process_symbols() {
            for q in m.sync_states() {
                let cond = term.get(a, q);
                if cond < 1e-6 {
                    continue;
                }
                let image = &bp.names[&(a.clone(), q.clone())];
                // Work PMF transfers exactly (Prop.-style equality).
                let orig = work.pmf(a, q).unwrap();
                let img = bp_work.pmf(image, &bp.done).unwrap();
                for k in 0..=K {
                    let want = orig.mass[k] / cond;
                    let got = img.mass[k] / img.cond_prob;
                    assert!(
                        (want - got).abs() < 1e-8,
                        "seed {seed}, {a}->{q}, work k={k}: {want} vs {got}"
                    );
                }
                // The conditioned process is at most as fast.
                let orig = time.pmf(a, q).unwrap();
                let img = bp_time.pmf(image, &bp.done).unwrap();
                for k in 0..=K {
                    assert!(
                        orig.conditional_cdf(k) <= img.conditional_cdf(k) + 1e-8,
                        "seed {seed}, {a}->{q}, time cdf k={k}"
                    );
                }
                used = true;
            }
        }
        if used {
            checked += 1;
        }
    }
    println!("acceptance criterion 7: PASS — work PMF transfer (1e-8, K=40) and time-CDF domination on 10 models");
}

/// Conditional expected work over all original states: Σ_q [a↓q]·E[W|↓q],
/// divided by the total termination probability.
fn analytic_conditional_work(model: &PsjsModel, start: &Symbol) -> f64 {
    let normed = normalise(model).model;
    let term = newton(&normed);
    let bp = conditioned_bp(&normed, &term).unwrap();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for q in model.sync_states() {
        let w = term.get(start, q);
        if w <= 0.0 {
            continue;
        }
        match expected_work_bp(&bp.model, &bp.names[&(start.clone(), q.clone())]).unwrap() {
            Expectation::Finite(ew) => {
                weighted += w * ew;
                total += w;
            }
            Expectation::Infinite => panic!("infinite conditional work"),
        }
    }
    weighted / total
}

#[test]
fn criterion_08_monte_carlo_consistency() {
    const RUNS: u64 = 1_000_000;
    const SEED: u64 = 45;

    // EX1 runs diverge with positive probability and run sizes have a heavy
    // tail, so a tight budget keeps the million runs cheap. Large cut-off
    // trees almost never come back to terminate (they freeze or diverge), so
    // the termination frequencies and conditional work stay unbiased.
    let ex1_budgets = Budgets { max_steps: 10_000, max_space: 2_000 };
    let mut targets: Vec<(String, PsjsModel, Symbol, Budgets)> = vec![
        ("EX1".into(), ex1(), Symbol::basic("X"), ex1_budgets),
        ("DOUBLER(1/4)".into(), doubler_bp(1, 4), Symbol::basic("X"), Budgets::default()),
        ("DOUBLER(2/5)".into(), doubler_bp(2, 5), Symbol::basic("X"), Budgets::default()),
    ];
    let p = rat(1, 5);
    for variant in [GameVariant::Seq, GameVariant::Ybw, GameVariant::Par] {
        let cs = game_tree(variant, &p);
        targets.push((
            format!("gametree {} p=0.2", variant.name()),
            cs.model,
            cs.start,
            Budgets::default(),
        ));
    }

    for (name, model, start, budgets) in &targets {
        let term = newton(model);
        let report = estimate(model, start, RUNS, SEED, *budgets);

        // Divergent runs never terminate or freeze, so they hit the budget:
        // the cut-off fraction must match the analytic divergence mass
        // (1 minus total termination of the normalised model, where freezing
        // becomes termination in the fresh state).
        let normed =
            if model.flags.normalised { model.clone() } else { normalise(model).model };
        let divergent = 1.0 - newton(&normed).total(start);
        let cut_frac = report.cut_off as f64 / RUNS as f64;
        let se_cut = (divergent * (1.0 - divergent) / RUNS as f64).sqrt();
        assert!(
            (cut_frac - divergent).abs() <= 3.0 * se_cut + 2e-3,
            "{name}: cut-off fraction {cut_frac} vs divergence {divergent}"
        );

        for q in model.sync_states() {
            let want = term.get(start, q);
            let (freq, se) = report
                .terminated
                .get(q)
                .map_or((0.0, 0.0), |e| (e.freq, e.se));
            assert!(
                (freq - want).abs() <= 3.0 * se + 1e-5,
                "{name}: P(down {q}) analytic {want} vs MC {freq} (se {se})"
            );
        }

        let analytic = analytic_conditional_work(model, start);
        let c = report.conditional.as_ref().unwrap();
        assert!(
            (c.mean_work - analytic).abs() <= 3.0 * c.se_work,
            "{name}: E[W | term] analytic {analytic} vs MC {} (se {})",
            c.mean_work,
            c.se_work
        );
    }
    println!("acceptance criterion 8: PASS — Monte Carlo within 3 SE on {} models", targets.len());
}

#[test]
fn criterion_09_figure_trends() {
    // Divide-and-conquer: average parallelism grows with the oscillation.
    let rows = divcon_rows(10, &rat(4, 5), 600).unwrap();
    assert!(rows.iter().all(|r| r.time_converged));
    assert!(
        rows.windows(2).all(|w| w[1].ratio > w[0].ratio),
        "divcon W/T must increase with n: {:?}",
        rows.iter().map(|r| r.ratio).collect::<Vec<_>>()
    );

    // YBW is at least as fast as sequential alpha-beta, at work overhead
    // within [0%, 0.5%].
    for i in [2i64, 4, 6] {
        let p = rat(i, 20);
        let seq = game_tree(GameVariant::Seq, &p);
        let ybw = game_tree(GameVariant::Ybw, &p);

        let (t_seq, c1) = conditional_time(&seq, 600).unwrap();
        let (t_ybw, c2) = conditional_time(&ybw, 600).unwrap();
        assert!(c1 && c2, "time truncation must converge at p={i}/20");
        assert!(
            t_ybw <= t_seq + 1e-9,
            "T(ybw,{i}/20) = {t_ybw} must not exceed T(seq) = {t_seq}"
        );

        let w = |cs| match conditional_work(&cs).unwrap() {
            Expectation::Finite(w) => w,
            Expectation::Infinite => panic!("finite work expected"),
        };
        let increase = 100.0 * (w(ybw) / w(seq) - 1.0);
        assert!(
            (-1e-6..=0.5).contains(&increase),
            "ybw work increase at p={i}/20: {increase}%"
        );
    }
    println!("acceptance criterion 9: PASS — divcon parallelism increases; T(ybw) <= T(seq); work overhead in [0%, 0.5%]");
}

#[test]
fn criterion_10_solver_cross_validation() {
    let mut corpus: Vec<PsjsModel> = vec![
        ex1(),
        doubler_bp(1, 4),
        doubler_bp(2, 5),
        rw_image(3, 10),
        rw_image(3, 5),
        psjs::casestudy::divcon(4, &rat(4, 5)).model,
    ];
    for seed in 100..120u64 {
        corpus.push(common::random_model(seed));
    }

    for (i, m) in corpus.iter().enumerate() {
        let system = TermSystem::new(m);
        let kleene = system.kleene(SolveOptions { tol: 1e-13, max_iter: 1_000_000 });
        let newton = system.newton(SolveOptions::newton());
        assert!(kleene.converged && newton.converged, "model {i} must converge");
        let zero: std::collections::HashSet<_> = system.zero_set().into_iter().collect();
        for sym in kleene.symbols() {
            for q in kleene.states() {
                let a = kleene.get(sym, q);
                let b = newton.get(sym, q);
                assert!((a - b).abs() < 1e-10, "model {i}, [{sym} -> {q}]: kleene {a} vs newton {b}");
                // Zero pairs are excluded from the numeric system, so their
                // value is exactly 0; positive pairs exceed their cheapest
                // terminating derivation's probability.
                let is_zero = zero.contains(&(sym.clone(), q.clone()));
                assert_eq!(is_zero, a <= 0.0, "model {i}, zero set vs kleene at [{sym} -> {q}] = {a}");
            }
        }
    }
    println!("acceptance criterion 10: PASS — Kleene/Newton agree within 1e-10 and zero sets are consistent on {} models", corpus.len());
}
