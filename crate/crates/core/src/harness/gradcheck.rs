//! Finite-difference checks of every analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{
    finite_diff_grad, relative_error, Activation, Array, ConvRef, DenseRef, LstmRef, ParamSet, Tape, Var,
};
use crate::error::Result;
use crate::networks::{Agent, NetConfig};
use crate::replay::{make_slice, Episode, Origin, Transition};
use crate::tdlearn::{interp_weights, slice_actor_gradient, slice_critic_loss};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, for gradients near zero.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub name: String,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Default)]
struct Tally {
    checked: usize,
    worst: f64,
}

impl Tally {
    fn compare(&mut self, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            self.checked += 1;
            let e = relative_error(*a, *n, FLOOR);
            // NaN must fail, so compare with a negated test
            if !(e <= self.worst) {
                self.worst = e;
            }
        }
    }

    fn finish(self, name: &str) -> GradCheck {
        GradCheck {
            name: name.to_string(),
            checked: self.checked,
            max_rel_err: self.worst,
            passed: self.checked > 0 && self.worst < TOLERANCE,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_params(rng: &mut ChaCha8Rng, shapes: &[(&str, Vec<usize>)]) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        p.insert(*name, Array::from_vec(shape, uniform(rng, n, 0.8)).expect("shape"))
            .expect("unique");
    }
    p
}

type Build = dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// Checks parameter and input gradients of `sum_k c_k y_k` for a graph.
fn check_graph(
    name: &str,
    params: &ParamSet,
    inputs: &[Vec<f64>],
    build: &Build,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheck> {
    let eval = |p: &ParamSet, xs: &[Vec<f64>], c: &[f64]| -> Result<f64> {
        let mut tape = Tape::new(p);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = build(&mut tape, &vars)?;
        Ok(tape.value(y).iter().zip(c).map(|(a, b)| a * b).sum())
    };

    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = build(&mut tape, &vars)?;
    let c = uniform(rng, tape.value(y).len(), 1.0);
    let mut grads = params.zeros_like();
    let node_grads = tape.backward(&[(y, &c)], &mut grads);

    let mut tally = Tally::default();
    for (pname, arr) in params.iter() {
        let fd = finite_diff_grad(
            |x| {
                let mut p = params.clone();
                *p.by_name_mut(pname).expect("present") = x.clone();
                eval(&p, inputs, &c).expect("graph built once already")
            },
            arr,
            EPS,
        );
        tally.compare(grads.by_name(pname).expect("present").data(), fd.data());
    }
    for (k, x) in inputs.iter().enumerate() {
        let fd = finite_diff_grad(
            |v| {
                let mut xs = inputs.to_vec();
                xs[k] = v.data().to_vec();
                eval(params, &xs, &c).expect("graph built once already")
            },
            &Array::vector(x.clone()),
            EPS,
        );
        let zero = vec![0.0; x.len()];
        let an = node_grads.get(vars[k]).unwrap_or(&zero);
        tally.compare(an, fd.data());
    }
    Ok(tally.finish(name))
}

fn dense_case(act: Activation, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let params = random_params(rng, &[("w", vec![4, 5]), ("b", vec![4])]);
    let layer = DenseRef {
        w: params.id("w").expect("w"),
        b: params.id("b").expect("b"),
        act,
    };
    let x = uniform(rng, 5, 1.0);
    let name = format!("dense/{act:?}").to_lowercase();
    check_graph(&name, &params, &[x], &move |t, v| t.dense(v[0], layer), rng)
}

fn composed_case(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let params = random_params(
        rng,
        &[("w1", vec![6, 4]), ("b1", vec![6]), ("w2", vec![3, 6]), ("b2", vec![3])],
    );
    let l1 = DenseRef {
        w: params.id("w1").expect("w1"),
        b: params.id("b1").expect("b1"),
        act: Activation::Tanh,
    };
    let l2 = DenseRef {
        w: params.id("w2").expect("w2"),
        b: params.id("b2").expect("b2"),
        act: Activation::Identity,
    };
    let x = uniform(rng, 4, 1.0);
    check_graph(
        "dense-tanh-dense",
        &params,
        &[x],
        &move |t, v| {
            let h = t.dense(v[0], l1)?;
            t.dense(h, l2)
        },
        rng,
    )
}

fn conv_case(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let params = random_params(rng, &[("w", vec![3, 3]), ("b", vec![3])]);
    let layer = ConvRef {
        w: params.id("w").expect("w"),
        b: params.id("b").expect("b"),
        width: 3,
    };
    let x = uniform(rng, 8, 2.0);
    check_graph("conv1d-maxpool-relu", &params, &[x], &move |t, v| t.conv1d_pool(v[0], layer), rng)
}

fn lstm_case(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (i, h) = (3, 4);
    let params = random_params(
        rng,
        &[("wx", vec![4 * h, i]), ("wh", vec![4 * h, h]), ("b", vec![4 * h])],
    );
    let cell = LstmRef {
        wx: params.id("wx").expect("wx"),
        wh: params.id("wh").expect("wh"),
        b: params.id("b").expect("b"),
    };
    let inputs = vec![uniform(rng, i, 1.0), uniform(rng, i, 1.0), uniform(rng, 2 * h, 0.5)];
    // two chained steps, so gradients cross the recurrent state
    check_graph(
        "lstm-2-steps",
        &params,
        &inputs,
        &move |t, v| {
            let s1 = t.lstm(v[0], v[2], cell)?;
            t.lstm(v[1], s1, cell)
        },
        rng,
    )
}

/// Width-4 networks used by the assembled-loss checks.
pub fn tiny_net() -> NetConfig {
    NetConfig {
        visual_dim: 6,
        proprio_dim: 3,
        action_dim: 2,
        conv_channels: 4,
        conv_width: 2,
        visual_width: 4,
        proprio_width: 4,
        action_width: 4,
        actor_core: 4,
        critic_core: 4,
        recurrent: true,
    }
}

/// A random episode shaped for `cfg`.
pub fn random_episode(rng: &mut ChaCha8Rng, cfg: &NetConfig, len: usize, terminal: bool) -> Episode {
    let mut o = uniform(rng, cfg.obs_dim(), 1.0);
    let mut transitions = Vec::with_capacity(len);
    for t in 0..len {
        let o_next = uniform(rng, cfg.obs_dim(), 1.0);
        transitions.push(Transition {
            o: std::mem::replace(&mut o, o_next.clone()),
            a: uniform(rng, cfg.action_dim, 1.0),
            r: rng.random_range(-1.0..1.0),
            o_next,
            done: terminal && t + 1 == len,
        });
    }
    Episode { transitions }
}

fn critic_loss_case(rng: &mut ChaCha8Rng, seed: u64) -> Result<GradCheck> {
    let net = tiny_net();
    let agent = Agent::new(&net, 1e-3, 1e-3, rng, seed)?;
    let (l, u, s, lambda, gamma) = (3, 2, 2, 0.9, 0.99);
    let weights = interp_weights(lambda, u);
    let mut tally = Tally::default();
    for k in 0..3 {
        let ep = random_episode(rng, &net, 8, k == 0);
        let start = rng.random_range(0..=ep.len() - l);
        let slice = make_slice(&ep, Origin::Native, k, start, s, l);
        let h0 = agent.critic.scan(
            &agent.critic_params,
            slice.prefix.iter().map(|t| (t.o.as_slice(), t.a.as_slice())),
        )?;
        let q_tar = rng.random_range(-1.0..1.0);
        let sl = slice_critic_loss(&slice, &agent.critic, &agent.critic_params, &h0, q_tar, &weights, gamma)?;
        for (pname, arr) in agent.critic_params.iter() {
            let fd = finite_diff_grad(
                |x| {
                    let mut p = agent.critic_params.clone();
                    *p.by_name_mut(pname).expect("present") = x.clone();
                    slice_critic_loss(&slice, &agent.critic, &p, &h0, q_tar, &weights, gamma)
                        .map(|r| r.loss)
                        .unwrap_or(f64::NAN)
                },
                arr,
                EPS,
            );
            tally.compare(sl.grads.by_name(pname).expect("present").data(), fd.data());
        }
    }
    Ok(tally.finish("critic-loss l=3 u=2 lambda=0.9"))
}

fn actor_case(rng: &mut ChaCha8Rng, seed: u64) -> Result<GradCheck> {
    let net = tiny_net();
    let agent = Agent::new(&net, 1e-3, 1e-3, rng, seed)?;
    let l = 3;
    let ep = random_episode(rng, &net, 8, false);
    let slice = make_slice(&ep, Origin::Native, 0, 4, 2, l);
    let ha0 = agent.actor.scan(&agent.actor_params, slice.prefix.iter().map(|t| t.o.as_slice()))?;
    let hc0 = agent.critic.scan(
        &agent.critic_params,
        slice.prefix.iter().map(|t| (t.o.as_slice(), t.a.as_slice())),
    )?;
    let mut has = vec![ha0.clone()];
    let mut hcs = vec![hc0.clone()];
    for t in &slice.window {
        has.push(agent.actor.step(&agent.actor_params, &t.o, has.last().expect("seeded"))?.1);
        hcs.push(agent.critic.step(&agent.critic_params, &t.o, &t.a, hcs.last().expect("seeded"))?.1);
    }
    let (g, _) = slice_actor_gradient(
        &slice,
        (&agent.actor, &agent.actor_params),
        (&agent.critic, &agent.critic_params),
        ha0,
        hc0,
    )?;
    // states held at their current values: the truncated objective
    let objective = |p: &ParamSet| -> f64 {
        let mut total = 0.0;
        for (i, t) in slice.window.iter().enumerate() {
            let Ok((a, _)) = agent.actor.step(p, &t.o, &has[i]) else {
                return f64::NAN;
            };
            match agent.critic.step(&agent.critic_params, &t.o, &a, &hcs[i]) {
                Ok((q, _)) => total += q,
                Err(_) => return f64::NAN,
            }
        }
        total
    };
    let mut tally = Tally::default();
    for (pname, arr) in agent.actor_params.iter() {
        let fd = finite_diff_grad(
            |x| {
                let mut p = agent.actor_params.clone();
                *p.by_name_mut(pname).expect("present") = x.clone();
                objective(&p)
            },
            arr,
            EPS,
        );
        tally.compare(g.by_name(pname).expect("present").data(), fd.data());
    }
    Ok(tally.finish("actor-gradient truncated"))
}

/// Runs every check with randomness drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        dense_case(Activation::Identity, &mut rng)?,
        dense_case(Activation::Relu, &mut rng)?,
        dense_case(Activation::Tanh, &mut rng)?,
        composed_case(&mut rng)?,
        conv_case(&mut rng)?,
        lstm_case(&mut rng)?,
        critic_loss_case(&mut rng, seed)?,
        actor_case(&mut rng, seed)?,
    ])
}
