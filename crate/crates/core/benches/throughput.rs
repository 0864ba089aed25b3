//! Parallel versus sequential execution for the CPU-bound stages: parsing and
//! scoring a batch of model outputs, and a Monte-Carlo random baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vstrank::exec::{self, Execution};
use vstrank::metrics::{aggregate_users, score_instance};
use vstrank::parser::{complete_ranking, parse_ranking, CandidateSet};
use vstrank::synthetic::{generate, SyntheticSpec};

const KS: [usize; 3] = [5, 10, 20];

struct Case {
    candidates: Vec<String>,
    text: String,
    target: usize,
}

fn cases(count: usize) -> Vec<Case> {
    let titles: Vec<String> = generate(&SyntheticSpec {
        users: 0,
        items: 2000,
        ..SyntheticSpec::default()
    })
    .catalog
    .into_iter()
    .map(|i| i.title)
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..count)
        .map(|_| {
            let candidates: Vec<String> = titles.choose_multiple(&mut rng, 10).cloned().collect();
            let mut order: Vec<usize> = (0..10).collect();
            order.shuffle(&mut rng);
            let mut text = String::from("Based on your purchase history, here is my ranking:\n\n");
            for (pos, &i) in order.iter().enumerate() {
                text.push_str(&format!(
                    "{}. **{}** - a good match.\n",
                    pos + 1,
                    candidates[i]
                ));
            }
            Case {
                candidates,
                text,
                target: 0,
            }
        })
        .collect()
}

fn modes() -> Vec<Execution> {
    let mut m = vec![Execution::Sequential];
    if Execution::available() == Execution::Parallel {
        m.push(Execution::Parallel);
    }
    m
}

fn parse_and_score(c: &mut Criterion) {
    let batch = cases(2000);
    let mut group = c.benchmark_group("parse_and_score");
    group.throughput(Throughput::Elements(batch.len() as u64));
    for mode in modes() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &batch,
            |b, batch| {
                b.iter(|| {
                    let scores = exec::map(mode, batch, |case| {
                        let set = CandidateSet::new(&case.candidates);
                        let parsed = parse_ranking(&case.text, &set);
                        let order = complete_ranking(&parsed, set.len()).order;
                        score_instance(&order, case.target, &KS).expect("permutation")
                    });
                    aggregate_users(&scores, &KS).expect("non-empty")
                })
            },
        );
    }
    group.finish();
}

fn random_baseline(c: &mut Criterion) {
    let trials: Vec<u64> = (0..20_000).collect();
    let mut group = c.benchmark_group("random_baseline");
    group.throughput(Throughput::Elements(trials.len() as u64));
    for mode in modes() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &trials,
            |b, trials| {
                b.iter(|| {
                    let scores = exec::map(mode, trials, |&seed| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let mut order: Vec<usize> = (0..10).collect();
                        order.shuffle(&mut rng);
                        score_instance(&order, 0, &KS).expect("permutation")
                    });
                    aggregate_users(&scores, &KS).expect("non-empty")
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, parse_and_score, random_baseline);
criterion_main!(benches);
