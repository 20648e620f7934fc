use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hrc_core::envsim::{EnvState, EpisodeOptions};
use hrc_core::harness::dataset::{training_set, DatasetConfig};
use hrc_core::planner::dtw_distance;
use hrc_core::predictor::{train, TrainConfig};
use hrc_core::{NodeId, Scenario};

fn dtw(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seq = |n: usize| (0..n).map(|_| NodeId(rng.random_range(1..=7))).collect::<Vec<_>>();
    let (a, b) = (seq(64), seq(64));
    c.bench_function("dtw_64x64", |bch| bch.iter(|| dtw_distance(black_box(&a), black_box(&b)).unwrap()));
}

fn predictor(c: &mut Criterion) {
    let scenario = Arc::new(Scenario::toycar());
    let samples = training_set(&scenario, &DatasetConfig::default()).unwrap();
    let model = train(&samples[..256], &TrainConfig { epochs: 50, ..Default::default() }).unwrap();
    let window = &samples[0].window;
    c.bench_function("predict_and_classify", |bch| {
        bch.iter(|| {
            let traj = model.predict_trajectory(black_box(window));
            model.classify(window, &traj)
        })
    });
}

fn env_step(c: &mut Criterion) {
    let scenario = Arc::new(Scenario::toycar());
    let opts = EpisodeOptions { autopilot: true, ..Default::default() };
    let mut env = EnvState::new(Arc::clone(&scenario), 0, opts.clone()).unwrap();
    c.bench_function("env_step", |bch| {
        bch.iter(|| {
            if !env.operator().is_busy() {
                env = EnvState::new(Arc::clone(&scenario), 0, opts.clone()).unwrap();
            }
            env.step_mut().unwrap()
        })
    });
}

criterion_group!(benches, dtw, predictor, env_step);
criterion_main!(benches);
