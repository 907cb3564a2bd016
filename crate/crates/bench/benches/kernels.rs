use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdpg::diffcore::kernels::{dense_forward, lstm_forward, Activation};
use rdpg::env::{Corridor, EnvConfig};
use rdpg::harness::gradcheck::random_episode;
use rdpg::networks::{Agent, NetConfig};
use rdpg::replay::{make_slice, Origin, SliceBatch};
use rdpg::tdlearn::{update_on_batch, TdConfig};

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (i, o) = (64, 64);
    let x = uniform(&mut rng, i);
    let w = uniform(&mut rng, i * o);
    let b = uniform(&mut rng, o);
    let mut out = vec![0.0; o];
    c.bench_function("dense_forward 64x64 relu", |bch| {
        bch.iter(|| dense_forward(black_box(&x), &w, &b, Activation::Relu, &mut out))
    });

    let h = 80;
    let x = uniform(&mut rng, h);
    let hs = uniform(&mut rng, h);
    let cs = uniform(&mut rng, h);
    let wx = uniform(&mut rng, 4 * h * h);
    let wh = uniform(&mut rng, 4 * h * h);
    let bb = uniform(&mut rng, 4 * h);
    let (mut ho, mut co) = (vec![0.0; h], vec![0.0; h]);
    c.bench_function("lstm_forward 80 in / 80 hidden", |bch| {
        bch.iter(|| lstm_forward(black_box(&x), &hs, &cs, &wx, &wh, &bb, &mut ho, &mut co))
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = NetConfig::default();
    let agent = Agent::new(&cfg, 1e-4, 1e-3, &mut rng, 1).unwrap();
    let obs = uniform(&mut rng, cfg.obs_dim());
    let act = uniform(&mut rng, cfg.action_dim);
    let sa = agent.actor.zero_state();
    let sc = agent.critic.zero_state();
    c.bench_function("actor_step desk", |bch| {
        bch.iter(|| agent.actor.step(&agent.actor_params, black_box(&obs), &sa).unwrap())
    });
    c.bench_function("critic_step desk", |bch| {
        bch.iter(|| agent.critic.step(&agent.critic_params, black_box(&obs), &act, &sc).unwrap())
    });
}

fn updates(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = NetConfig::default();
    let agent = Agent::new(&cfg, 1e-4, 1e-3, &mut rng, 2).unwrap();
    let mut group = c.benchmark_group("update");
    group.sample_size(10);
    for (name, td) in [
        ("l8 u8 s24 n32", TdConfig::default()),
        ("td0 n32", TdConfig { l: 1, u: 1, s: 0, ..TdConfig::default() }),
    ] {
        let slices = (0..td.batch_size)
            .map(|k| {
                let ep = random_episode(&mut rng, &cfg, 64, false);
                let start = rng.random_range(0..=ep.len() - td.l);
                make_slice(&ep, Origin::Native, k, start, td.s, td.l)
            })
            .collect();
        let batch = SliceBatch { slices, l: td.l };
        group.bench_function(name, |bch| {
            bch.iter_batched(
                || agent.clone(),
                |mut a| update_on_batch(&batch, &mut a, &td).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn environment(c: &mut Criterion) {
    let mut env = Corridor::generated(EnvConfig { difficulty: 1.0, ..EnvConfig::default() }, 3).unwrap();
    env.reset();
    c.bench_function("corridor step (difficulty 1)", |bch| {
        bch.iter(|| {
            let r = env.step(black_box(&[0.3, 0.0])).unwrap();
            if r.done {
                env.reset();
            }
        })
    });
}

criterion_group!(benches, kernels, networks, updates, environment);
criterion_main!(benches);
