use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use psjs::casestudy::{game_tree, GameVariant};
use psjs::model::{PsjsModel, Rational, Symbol};
use psjs::parse::parse_model;
use psjs::sim::{estimate, estimate_sequential, Budgets};

const EX1: &str = "\
states: q r
start: X
X -> <X X> : 0.5
X -> q : 0.3
X -> r : 0.2
<q r> -> X : 1
";

fn targets() -> Vec<(&'static str, PsjsModel, Symbol)> {
    let cs = game_tree(GameVariant::Ybw, &Rational::new(1.into(), 5.into()));
    vec![
        ("ex1", parse_model(EX1).unwrap(), Symbol::basic("X")),
        ("gametree-ybw-0.2", cs.model, cs.start),
    ]
}

fn bench_estimate(c: &mut Criterion) {
    let budgets = Budgets { max_steps: 10_000, max_space: 100_000 };
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, model, start) in targets() {
        group.bench_with_input(BenchmarkId::new("parallel", name), &(), |b, _| {
            b.iter(|| estimate(&model, &start, 20_000, 7, budgets))
        });
        group.bench_with_input(BenchmarkId::new("sequential", name), &(), |b, _| {
            b.iter(|| estimate_sequential(&model, &start, 20_000, 7, budgets))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_estimate);
criterion_main!(benches);
