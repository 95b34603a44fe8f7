use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pmlam::data::Csr;
use pmlam::distance::DistanceKind;
use pmlam::embeddings::Theta;
use pmlam::evaluator;
use pmlam::exec;
use pmlam::losses::{batch_pass, Margin, PassOptions, Relation, Side, TripletBatch};
use pmlam::margin_net::{IndicatorMode, MarginNetParams};
use pmlam::simgraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: usize = 50;
const USERS: usize = 1000;
const ITEMS: usize = 1500;

fn setup() -> (Theta, TripletBatch, MarginNetParams, Vec<f64>, Csr, Csr) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = Theta::init_with_std(USERS, ITEMS, H, &mut rng, 0.1, 0.1);
    let mut batch = TripletBatch::new(Relation::UserItem);
    for _ in 0..10_000 {
        batch.push(
            rng.random_range(0..USERS as u32),
            rng.random_range(0..ITEMS as u32),
            rng.random_range(0..ITEMS as u32),
        );
    }
    let mode = IndicatorMode::SquaredDiff;
    let net = MarginNetParams::init(mode.input_dim(H), 50, &mut rng);
    let noise = (0..batch.len() * 3 * H).map(|_| rng.sample(StandardNormal)).collect();
    let rows = |p: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<u32>> {
        (0..USERS)
            .map(|_| (0..ITEMS as u32).filter(|_| rng.random_bool(p)).collect())
            .collect()
    };
    let train = Csr::from_rows(&rows(0.05, &mut rng), ITEMS);
    let test = Csr::from_rows(&rows(0.01, &mut rng), ITEMS);
    (theta, batch, net, noise, train, test)
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn bench(c: &mut Criterion) {
    let (theta, batch, net, noise, train, test) = setup();
    let margin = Margin::Adaptive {
        net: &net,
        mode: IndicatorMode::SquaredDiff,
        noise: &noise,
    };
    let opts = PassOptions {
        distance_grad: true,
        margin_grad: true,
        phi_grad: true,
    };

    let mut g = c.benchmark_group("batch_pass");
    g.sample_size(10);
    for (name, on) in modes() {
        exec::set_parallel(on);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_pass(&batch, &theta, DistanceKind::W2Squared, margin, opts))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, on) in modes() {
        exec::set_parallel(on);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluator::evaluate_sets(&theta, &train, &test, 0, &[10], DistanceKind::W2Squared))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("neighbor_sets");
    g.sample_size(10);
    for (name, on) in modes() {
        exec::set_parallel(on);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simgraph::build(&train, 0.2, Side::Users))
        });
    }
    g.finish();
    exec::set_parallel(true);
}

criterion_group!(benches, bench);
criterion_main!(benches);
