//! Acceptance criteria 1-10. Every test prints exactly one
//! `criterion N: PASS|FAIL ...` line before asserting.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rdpg::diffcore::Tape;
use rdpg::env::{BodyState, Cause, Corridor, EnvConfig, TerrainBuilder};
use rdpg::explore::{
    apply_param_noise, ou_step, remove_param_noise, OuConfig, OuProcess, ParamNoiseStash,
};
use rdpg::harness::gradcheck::{random_episode, run_suite, tiny_net};
use rdpg::harness::{self, RunConfig, UpdateCount};
use rdpg::networks::{Agent, NetConfig};
use rdpg::replay::{make_slice, window_starts, Episode, EpisodeStore, Origin, ReplayConfig, SliceBatch};
use rdpg::tdlearn::{
    backup_length, critic_update, interp_weights, multi_step_td, tail_target_q, update_on_batch,
    TdConfig,
};

fn report(n: u32, ok: bool, detail: impl AsRef<str>) {
    println!(
        "criterion {n}: {} {}",
        if ok { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    net: &NetConfig,
    n: usize,
    s: usize,
    l: usize,
) -> SliceBatch {
    let slices = (0..n)
        .map(|k| {
            let len = rng.random_range(l..l + 20);
            let terminal = rng.random_bool(0.3);
            let ep = random_episode(rng, net, len, terminal);
            let start = rng.random_range(window_starts(ep.len(), l));
            make_slice(&ep, Origin::Native, k, start, s, l)
        })
        .collect();
    SliceBatch { slices, l }
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    let checks = run_suite(0).expect("suite runs");
    let secs = t0.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    let covers = ["dense", "conv1d", "lstm", "critic-loss", "actor"]
        .iter()
        .all(|k| names.iter().any(|n| n.contains(k)));
    let ok = failed.is_empty() && covers && secs < 60.0;
    report(
        1,
        ok,
        format!(
            "{} checks, worst rel err {worst:.2e}, {secs:.1} s, failed {failed:?}",
            checks.len()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_02_td_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();

    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let lambda = rng.random_range(1e-3..=1.0);
        let u = rng.random_range(1..=64);
        let w = interp_weights(lambda, u);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    if worst_sum > 1e-12 {
        problems.push(format!("weight sum off by {worst_sum:e}"));
    }

    let net = tiny_net();
    let agent = Agent::new(&net, 1e-3, 1e-3, &mut rng, 2).unwrap();
    let (l, s) = (5, 3);

    // lambda = 1: the uniform-weight multi-step loss, evaluated from values
    // produced independently of the batch update.
    let batch = random_batch(&mut rng, &net, 6, s, l);
    let cfg = TdConfig { lambda: 1.0, l, u: l, s, ..TdConfig::default() };
    let (_, rep) = critic_update(&batch, &agent, &cfg).unwrap();
    let mut sum = 0.0;
    for slice in &batch.slices {
        let mut h = agent.critic.zero_state();
        for t in &slice.prefix {
            h = agent.critic.step(&agent.critic_params, &t.o, &t.a, &h).unwrap().1;
        }
        let mut q = Vec::new();
        for t in &slice.window {
            let (v, next) = agent.critic.step(&agent.critic_params, &t.o, &t.a, &h).unwrap();
            q.push(v);
            h = next;
        }
        let q_tar = if slice.done_at_tail {
            0.0
        } else {
            tail_target_q(slice, &agent.actor, &agent.critic, &agent.actor_target, &agent.critic_target)
                .unwrap()
                .0
        };
        let rewards: Vec<f64> = slice.window.iter().map(|t| t.r).collect();
        let w = 1.0 / l as f64;
        let mut part = 0.0;
        for i in 0..l {
            let mut ret = 0.0;
            for k in i..l {
                ret += cfg.gamma.powi((k - i) as i32) * rewards[k];
            }
            let td = ret + cfg.gamma.powi((l - i) as i32) * q_tar - q[i];
            part += w * td * td;
        }
        sum += part;
    }
    let uniform = sum / batch.len() as f64;
    if rep.loss.to_bits() != uniform.to_bits() {
        problems.push(format!("lambda=1 loss {} vs uniform {}", rep.loss, uniform));
    }

    // u = 1: the single longest backup
    let cfg1 = TdConfig { lambda: 0.7, l, u: 1, s, ..TdConfig::default() };
    let (_, rep1) = critic_update(&batch, &agent, &cfg1).unwrap();
    let mut sum1 = 0.0;
    for td in &rep1.td {
        sum1 += td[0] * td[0];
    }
    let longest = sum1 / batch.len() as f64;
    if rep1.loss.to_bits() != longest.to_bits() {
        problems.push(format!("u=1 loss {} vs longest-backup {}", rep1.loss, longest));
    }
    if rep1.td != rep.td {
        problems.push("TD values depend on u".into());
    }

    // gamma = 0
    let cfg0 = TdConfig { gamma: 0.0, l, u: l, s, ..TdConfig::default() };
    let (_, rep0) = critic_update(&batch, &agent, &cfg0).unwrap();
    for (n, slice) in batch.slices.iter().enumerate() {
        for (i, t) in slice.window.iter().enumerate() {
            if rep0.td[n][i] != t.r - rep0.q_beh[n][i] {
                problems.push(format!("gamma=0 slice {n} position {i}"));
            }
        }
    }
    for _ in 0..100 {
        let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let i = rng.random_range(0..8);
        let (qb, qt) = (rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
        if multi_step_td(&rewards, i, qb, qt, 0.0) != rewards[i] - qb {
            problems.push(format!("gamma=0 scalar case at i={i}"));
        }
    }

    let ok = problems.is_empty();
    report(2, ok, format!("max |sum w - 1| = {worst_sum:.1e}; {problems:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_03_backup_length_coverage() {
    let mut cases = 0;
    let mut bad = Vec::new();
    for len in 1..=12usize {
        for l in 1..=5usize.min(len) {
            // interior steps are those contained in l windows
            for t in (l - 1)..=(len - l) {
                let mut seen: Vec<usize> = window_starts(len, l)
                    .filter(|&st| st <= t && t < st + l)
                    .map(|st| backup_length(l, t - st))
                    .collect();
                seen.sort_unstable();
                cases += 1;
                if seen != (1..=l).collect::<Vec<_>>() {
                    bad.push((len, l, t, seen));
                }
            }
        }
    }
    let ok = bad.is_empty() && cases > 0;
    report(3, ok, format!("{cases} (T, l, t) cases enumerated, {} mismatches", bad.len()));
    assert!(ok, "{bad:?}");
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_04_scan_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = NetConfig::default();
    let agent = Agent::new(&net, 1e-4, 1e-3, &mut rng, 4).unwrap();
    let (actor, critic) = (&agent.actor, &agent.critic);
    let mut mismatches = 0;
    let mut target_checks = 0;

    for _ in 0..50 {
        let len = rng.random_range(2..40);
        let terminal = rng.random_bool(0.2);
        let ep = random_episode(&mut rng, &net, len, terminal);
        let split = rng.random_range(0..len);

        // full forward pass on a single tape
        let mut tape = Tape::new(&agent.actor_params);
        let mut state = tape.leaf(actor.zero_state().flat());
        let mut full_a = Vec::new();
        for t in &ep.transitions {
            let st = actor.record_step(&mut tape, &t.o, state).unwrap();
            full_a.push(tape.value(st.action).to_vec());
            state = st.state;
        }
        let mut tape = Tape::new(&agent.critic_params);
        let mut state = tape.leaf(critic.zero_state().flat());
        let mut full_q = Vec::new();
        for t in &ep.transitions {
            let st = critic.record_step(&mut tape, &t.o, &t.a, state).unwrap();
            full_q.push(tape.value(st.q)[0]);
            state = st.state;
        }

        // scan the prefix, step the rest
        let mut ha = actor
            .scan(&agent.actor_params, ep.transitions[..split].iter().map(|t| t.o.as_slice()))
            .unwrap();
        let mut hc = critic
            .scan(
                &agent.critic_params,
                ep.transitions[..split].iter().map(|t| (t.o.as_slice(), t.a.as_slice())),
            )
            .unwrap();
        for (k, t) in ep.transitions[split..].iter().enumerate() {
            let (a, h) = actor.step(&agent.actor_params, &t.o, &ha).unwrap();
            let (q, g) = critic.step(&agent.critic_params, &t.o, &t.a, &hc).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            if bits(&a) != bits(&full_a[split + k]) || q.to_bits() != full_q[split + k].to_bits() {
                mismatches += 1;
            }
            ha = h;
            hc = g;
        }

        // tail target against stepping the target networks from the
        // prefix start
        let l = rng.random_range(1..=len);
        let start = rng.random_range(window_starts(len, l));
        let s = rng.random_range(0..=start + 2);
        let slice = make_slice(&ep, Origin::Native, 0, start, s, l);
        let (q_tar, masked) =
            tail_target_q(&slice, actor, critic, &agent.actor_target, &agent.critic_target).unwrap();
        let from = start - s.min(start);
        let mut ha = actor.zero_state();
        let mut hc = critic.zero_state();
        for t in &ep.transitions[from..start + l] {
            ha = actor.step(&agent.actor_target, &t.o, &ha).unwrap().1;
            hc = critic.step(&agent.critic_target, &t.o, &t.a, &hc).unwrap().1;
        }
        let last = &ep.transitions[start + l - 1];
        let oracle = if last.done {
            0.0
        } else {
            let (a, _) = actor.step(&agent.actor_target, &last.o_next, &ha).unwrap();
            critic.step(&agent.critic_target, &last.o_next, &a, &hc).unwrap().0
        };
        target_checks += 1;
        if q_tar.to_bits() != oracle.to_bits() || masked != last.done {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    report(
        4,
        ok,
        format!("50 episodes, {target_checks} tail targets, {mismatches} bitwise mismatches"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

/// Hand-written RDPG critic loss: critic state starts at zero at the window
/// start, target networks step over the window then evaluate the tail.
fn reference_loss(batch: &SliceBatch, agent: &Agent, gamma: f64, lambda: f64, u: usize) -> f64 {
    let l = batch.l;
    let raw: Vec<f64> = (0..u).map(|i| lambda.powi(i as i32)).collect();
    let z: f64 = raw.iter().sum();
    let mut total = 0.0;
    for slice in &batch.slices {
        assert!(slice.prefix.is_empty());
        let mut hc = agent.critic.zero_state();
        let mut q = Vec::new();
        for t in &slice.window {
            let (v, h) = agent.critic.step(&agent.critic_params, &t.o, &t.a, &hc).unwrap();
            q.push(v);
            hc = h;
        }
        let q_tar = if slice.done_at_tail {
            0.0
        } else {
            let mut ha = agent.actor.zero_state();
            let mut hc = agent.critic.zero_state();
            for t in &slice.window {
                ha = agent.actor.step(&agent.actor_target, &t.o, &ha).unwrap().1;
                hc = agent.critic.step(&agent.critic_target, &t.o, &t.a, &hc).unwrap().1;
            }
            let (a, _) = agent.actor.step(&agent.actor_target, &slice.tail_obs, &ha).unwrap();
            agent.critic.step(&agent.critic_target, &slice.tail_obs, &a, &hc).unwrap().0
        };
        let mut part = 0.0;
        for i in 0..u {
            let mut ret = 0.0;
            for k in i..l {
                ret += gamma.powi((k - i) as i32) * slice.window[k].r;
            }
            let td = ret + gamma.powi((l - i) as i32) * q_tar - q[i];
            part += raw[i] / z * td * td;
        }
        total += part;
    }
    total / batch.len() as f64
}

/// The plain one-step form, `y = r + gamma Q'(o', mu'(o'))`.
fn one_step_reference(batch: &SliceBatch, agent: &Agent, gamma: f64) -> f64 {
    let mut total = 0.0;
    for slice in &batch.slices {
        let t = &slice.window[0];
        let z = agent.critic.zero_state();
        let (q, hc) = agent.critic.step(&agent.critic_params, &t.o, &t.a, &z).unwrap();
        let _ = hc;
        let y = if t.done {
            t.r + gamma * 0.0
        } else {
            let ha = agent.actor.step(&agent.actor_target, &t.o, &agent.actor.zero_state()).unwrap().1;
            let hc = agent.critic.step(&agent.critic_target, &t.o, &t.a, &z).unwrap().1;
            let (a, _) = agent.actor.step(&agent.actor_target, &t.o_next, &ha).unwrap();
            t.r + gamma * agent.critic.step(&agent.critic_target, &t.o_next, &a, &hc).unwrap().0
        };
        let td = y - q;
        total += td * td;
    }
    total / batch.len() as f64
}

#[test]
fn criterion_05_baseline_collapse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut run = RunConfig::default();
    let mut details = Vec::new();
    let mut ok = true;

    for (flag, key) in [("td0_baseline", "td0"), ("scan_off", "scan_off")] {
        run.td0_baseline = false;
        run.scan_off = false;
        run.set(flag, "true").unwrap();
        let td = run.effective_td();
        let net = run.effective_net();
        let mut agent = Agent::new(&net, td.actor_lr, td.critic_lr, &mut rng, 5).unwrap();
        // targets distinct from the behavioural nets
        agent.actor_target.add_scaled(&agent.actor_params, 0.25);
        agent.critic_target.add_scaled(&agent.critic_params, -0.25);

        let mut store = EpisodeStore::new(ReplayConfig::default(), net.obs_dim(), net.action_dim).unwrap();
        for _ in 0..6 {
            let len = rng.random_range(10..30);
            let terminal = rng.random_bool(0.5);
            for t in random_episode(&mut rng, &net, len, terminal).transitions {
                store.push(t).unwrap();
            }
            store.end_episode();
        }
        let batch = store.sample_batch(td.batch_size, td.s, td.l, &mut rng).unwrap();
        let expected = if key == "td0" {
            one_step_reference(&batch, &agent, td.gamma)
        } else {
            reference_loss(&batch, &agent, td.gamma, td.lambda, td.u)
        };
        let mut a = agent.clone();
        let got = update_on_batch(&batch, &mut a, &td).unwrap().critic_loss;
        let same = got.to_bits() == expected.to_bits()
            && batch.slices.iter().all(|s| s.prefix.is_empty() && s.window.len() == td.l);
        ok &= same;
        details.push(format!("{flag}: l={} u={} s={} loss {got} vs {expected}", td.l, td.u, td.s));
    }
    report(5, ok, details.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_06_noise_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut problems = Vec::new();

    let net = NetConfig::default();
    let agent = Agent::new(&net, 1e-4, 1e-3, &mut rng, 6).unwrap();
    let clean = agent.actor_params.clone();
    let bits = |p: &rdpg::ParamSet| -> Vec<u64> {
        p.arrays().flat_map(|a| a.data().iter().map(|v| v.to_bits())).collect()
    };
    let mut params = clean.clone();
    let mut stash = ParamNoiseStash::new(0.1);
    apply_param_noise(&mut params, &mut stash, &mut rng).unwrap();
    let moved = bits(&params) != bits(&clean);
    remove_param_noise(&mut params, &mut stash).unwrap();
    if !moved || bits(&params) != bits(&clean) {
        problems.push("parameter noise round trip".to_string());
    }
    let mut stash0 = ParamNoiseStash::new(0.0);
    apply_param_noise(&mut params, &mut stash0, &mut rng).unwrap();
    if bits(&params) != bits(&clean) {
        problems.push("sigma_p = 0 perturbed".into());
    }
    remove_param_noise(&mut params, &mut stash0).unwrap();

    // fast-mixing chain so 1e5 samples pin the variance well inside 5%
    let cfg = OuConfig { theta: 0.5, sigma: 0.3, mu: 0.0, dt: 1.0 };
    let mut ou = OuProcess::new(1, cfg);
    let target = ou.stationary_variance();
    for _ in 0..1000 {
        ou_step(&mut ou, &mut rng);
    }
    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = ou_step(&mut ou, &mut rng)[0];
        s1 += x;
        s2 += x * x;
    }
    let mean = s1 / n as f64;
    let var = s2 / n as f64 - mean * mean;
    let rel = (var / target - 1.0).abs();
    if rel > 0.05 {
        problems.push(format!("OU variance {var} vs {target}"));
    }

    let mut still = OuProcess::new(3, OuConfig { sigma: 0.0, mu: 0.3, ..OuConfig::default() });
    for _ in 0..1000 {
        if ou_step(&mut still, &mut rng) != vec![0.3; 3] {
            problems.push("sigma = 0 OU left its mean".into());
            break;
        }
    }
    let mut decay = OuProcess::new(1, OuConfig { sigma: 0.0, theta: 0.5, dt: 1.0, mu: 0.0 });
    decay.x[0] = 1.0;
    for k in 1..=10 {
        if ou_step(&mut decay, &mut rng)[0] != 0.5f64.powi(k) {
            problems.push("sigma = 0 OU decay is not geometric".into());
            break;
        }
    }

    let ok = problems.is_empty();
    report(
        6,
        ok,
        format!("OU variance {var:.5} vs closed form {target:.5} (rel {rel:.4}); {problems:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn random_actions(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(-0.3..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

#[test]
fn criterion_07_environment() {
    let mut problems = Vec::new();
    let cfg = EnvConfig { difficulty: 0.8, ..EnvConfig::default() };

    let mut episodes = 0;
    for seed in 0..20u64 {
        let actions = random_actions(seed, cfg.max_steps);
        let play = || {
            let mut env = Corridor::generated(cfg.clone(), seed).unwrap();
            let x0 = env.body().x;
            let mut trace = Vec::new();
            let mut displacement = 0.0;
            for a in &actions {
                let r = env.step(a).unwrap();
                displacement += r.progress / env.config().rate();
                trace.extend(r.obs.to_vec().iter().map(|v| v.to_bits()));
                trace.push(r.reward.to_bits());
                if r.done {
                    break;
                }
            }
            (trace, displacement, env.body().x - x0)
        };
        let (ta, da, xa) = play();
        let (tb, _, _) = play();
        episodes += 1;
        if ta != tb {
            problems.push(format!("seed {seed}: replay differs"));
        }
        if da != xa {
            problems.push(format!("seed {seed}: progress sums to {da}, displacement {xa}"));
        }
    }

    // A hurdle further away than the ray range is invisible.
    let mut b = TerrainBuilder::new();
    b.flat(30.0).hurdle(0.5, 1.0).flat(40.0);
    let hurdle = b.build(0, 0.0, 60.0);
    let mut b = TerrainBuilder::new();
    b.flat(70.5);
    let flat = b.build(0, 0.0, 60.0);
    let with = Corridor::new(EnvConfig::default(), hurdle).unwrap();
    let without = Corridor::new(EnvConfig::default(), flat).unwrap();
    let range = EnvConfig::default().range_max;
    let mut poses = 0;
    for k in 0..200 {
        let x = 1.0 + k as f64 * (30.0 - range - 1.5) / 200.0;
        for (y, vx, vy, grounded) in [(0.0, 2.0, 0.0, true), (0.7, 3.0, -1.0, false)] {
            let body = BodyState { x, y, vx, vy, grounded };
            poses += 1;
            if with.observe_at(&body) != without.observe_at(&body) {
                problems.push(format!("hurdle visible from x={x}"));
            }
        }
    }
    let near = BodyState { x: 27.0, y: 0.0, vx: 0.0, vy: 0.0, grounded: true };
    if with.observe_at(&near) == without.observe_at(&near) {
        problems.push("hurdle within range not visible".into());
    }

    let ok = problems.is_empty();
    report(
        7,
        ok,
        format!("{episodes} replayed episodes, {poses} far poses; {problems:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_08_injection_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = tiny_net();
    let episodes: Vec<Episode> = (0..20).map(|_| random_episode(&mut rng, &net, 12, false)).collect();
    let mut store = EpisodeStore::new(ReplayConfig::default(), net.obs_dim(), net.action_dim).unwrap();
    for ep in &episodes {
        for t in &ep.transitions {
            store.push(t.clone()).unwrap();
        }
        store.end_episode();
    }
    store.inject(episodes).unwrap();

    let draws = 10_000;
    let count = |store: &EpisodeStore, rng: &mut ChaCha8Rng| -> usize {
        let batch = store.sample_batch(draws, 0, 4, rng).unwrap();
        batch.slices.iter().filter(|s| s.origin == Origin::Injected).count()
    };
    store.set_anneal_factor(1.0);
    let injected = count(&store, &mut rng);
    let expected = draws as f64 / 2.0;
    let native = draws - injected;
    let stat = ((injected as f64 - expected).powi(2) + (native as f64 - expected).powi(2)) / expected;
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);

    store.set_anneal_factor(0.0);
    let injected_off = count(&store, &mut rng);

    let ok = p > 0.01 && injected_off == 0;
    report(
        8,
        ok,
        format!(
            "anneal 1: {injected}/{draws} injected (chi2 {stat:.3}, p {p:.3}); anneal 0: {injected_off} injected"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

const SMOKE_EPISODES: u64 = 1500;
const SMOKE_MARGIN: f64 = 20.0;

fn smoke_config(seed: u64, td0: bool) -> RunConfig {
    let mut cfg = RunConfig {
        episodes: SMOKE_EPISODES,
        seed,
        td0_baseline: td0,
        // one update per episode keeps the six runs inside the time budget
        updates_per_episode: UpdateCount::Fixed(1),
        ..RunConfig::default()
    };
    cfg.env.difficulty = 0.0;
    cfg
}

fn zero_action_return(cfg: &RunConfig) -> f64 {
    let terrain = harness::episode_terrain(cfg, cfg.terrain_seed, 0).unwrap();
    let mut env = Corridor::new(cfg.env.clone(), terrain).unwrap();
    env.reset();
    let mut ret = 0.0;
    loop {
        let r = env.step(&[0.0, 0.0]).unwrap();
        ret += r.reward;
        if r.done {
            assert_eq!(r.cause, Cause::Timeout);
            return ret;
        }
    }
}

#[test]
fn criterion_09_learning_smoke() {
    let t0 = Instant::now();
    let runs: Vec<(u64, bool)> = (0..3).flat_map(|s| [(s, false), (s, true)]).collect();
    let finals: Vec<f64> = runs
        .par_iter()
        .map(|&(seed, td0)| {
            let out = harness::train(&smoke_config(seed, td0), None).unwrap();
            out.metrics.last().unwrap().r100ma
        })
        .collect();
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let zero = zero_action_return(&smoke_config(0, false));

    let mut wins = 0;
    let mut above = true;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (full, td0) = (finals[2 * seed], finals[2 * seed + 1]);
        above &= full >= zero + SMOKE_MARGIN;
        if full > td0 {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {full:.2} vs td0 {td0:.2}"));
    }
    let ok = above && wins >= 2 && minutes <= 45.0;
    report(
        9,
        ok,
        format!(
            "zero-action {zero:.2}; {}; beats td0 on {wins}/3; {minutes:.1} min",
            lines.join(", ")
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_10_training_determinism() {
    let mut cfg = RunConfig {
        episodes: 12,
        seed: 10,
        updates_per_episode: UpdateCount::Fixed(2),
        checkpoint_every: 5,
        ..RunConfig::default()
    };
    cfg.env.difficulty = 0.5;
    cfg.env.max_steps = 300;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        harness::train(&cfg, Some(d.path())).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.jsonl")).unwrap();
    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    let updated = String::from_utf8_lossy(&a).matches("\"critic_loss\":null").count() < lines;
    let ckpt = |d: &tempfile::TempDir| std::fs::read(d.path().join("last.bin")).unwrap();
    let ok = a == b && lines == 12 && updated && ckpt(&dirs[0]) == ckpt(&dirs[1]);
    report(
        10,
        ok,
        format!("{lines} metric lines, {} bytes, identical={}", a.len(), a == b),
    );
    assert!(ok);
}
