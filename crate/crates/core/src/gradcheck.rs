//! Central finite-difference checks of every analytic derivative: dynamics
//! Jacobians, cost gradients and Hessians, network input gradients, the
//! critic loss parameter gradient (through the input-gradient path), and the
//! actor loss parameter gradient.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::{
    actor_loss_and_param_grad, sobolev_loss_and_param_grad, Activation, MlpNetwork, NetworkArch, SobolevBatch,
};
use crate::rng::{substream, Stream};
use crate::task::{AugmentedState, TaskKind, TaskModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random probes (points or batches) per suite.
    pub probes: usize,
    pub tolerance: f64,
    /// Test hook: perturbs the analytic dynamics Jacobian before comparing.
    pub corrupt_jacobian: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            probes: 50,
            tolerance: 1e-5,
            corrupt_jacobian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub comparisons: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Largest entrywise relative error. Entries below 1% of the largest
/// magnitude in the vector are judged against that 1% floor, where
/// finite-difference roundoff would otherwise dominate.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-10);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

/// Central difference of a scalar function, step `1e-6 * max(1, |x_j|)`.
pub fn fd_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-6 * x[j].abs().max(1.0);
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

struct Suite {
    name: String,
    worst: f64,
    count: usize,
}

impl Suite {
    fn new(name: String) -> Self {
        Suite {
            name,
            worst: 0.0,
            count: 0,
        }
    }

    fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.worst = self.worst.max(max_rel_error(analytic, numeric));
        self.count += analytic.len();
    }

    fn finish(self, tolerance: f64) -> SuiteReport {
        SuiteReport {
            name: self.name,
            max_rel_error: self.worst,
            tolerance,
            comparisons: self.count,
        }
    }
}

fn random_point<R: Rng>(task: &TaskModel, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let x = task
        .state_low
        .iter()
        .zip(&task.state_high)
        .map(|(lo, hi)| rng.gen_range(*lo..*hi))
        .collect();
    let u = task.u_max.iter().map(|m| rng.gen_range(-m..*m)).collect();
    (x, u)
}

fn task_suites(task: &TaskModel, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<SuiteReport>> {
    let name = task.kind.name();
    let (n, m) = (task.n(), task.m());
    let mut jac = Suite::new(format!("dynamics_jacobian/{name}"));
    let mut grad = Suite::new(format!("cost_gradient/{name}"));
    let mut hess = Suite::new(format!("cost_hessian/{name}"));
    for _ in 0..opts.probes {
        let (x, u) = random_point(task, rng);
        let (mut fx, fu) = task.dynamics_jacobians(&x, &u)?;
        if opts.corrupt_jacobian {
            fx[(0, n - 1)] += 1e-2;
        }
        let xu: Vec<f64> = x.iter().chain(&u).copied().collect();
        for i in 0..n {
            let analytic: Vec<f64> = (0..n).map(|j| fx[(i, j)]).chain((0..m).map(|j| fu[(i, j)])).collect();
            let numeric = fd_gradient(&xu, |z| task.step(&z[..n], &z[n..]).map_or(f64::NAN, |v| v[i]));
            jac.record(&analytic, &numeric);
        }

        for terminal in [false, true] {
            let d = task.cost_derivatives(&x, &u, terminal)?;
            let cost = |z: &[f64]| -> f64 {
                if terminal {
                    task.terminal_cost(&z[..n]).unwrap_or(f64::NAN)
                } else {
                    task.running_cost(&z[..n], &z[n..]).unwrap_or(f64::NAN)
                }
            };
            let analytic: Vec<f64> = d.l_x.iter().chain(d.l_u.iter()).copied().collect();
            grad.record(&analytic, &fd_gradient(&xu, cost));

            // Hessian rows against differences of the analytic gradient.
            for r in 0..n + m {
                let row: Vec<f64> = (0..n + m)
                    .map(|c| match (r < n, c < n) {
                        (true, true) => d.l_xx[(r, c)],
                        (false, false) => d.l_uu[(r - n, c - n)],
                        (false, true) => d.l_ux[(r - n, c)],
                        (true, false) => d.l_ux[(c - n, r)],
                    })
                    .collect();
                let numeric = fd_gradient(&xu, |z| {
                    task.cost_derivatives(&z[..n], &z[n..], terminal)
                        .map_or(f64::NAN, |g| if r < n { g.l_x[r] } else { g.l_u[r - n] })
                });
                hess.record(&row, &numeric);
            }
        }
    }
    Ok(vec![
        jac.finish(opts.tolerance),
        grad.finish(opts.tolerance),
        hess.finish(opts.tolerance),
    ])
}

fn small_net(activation: Activation, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> MlpNetwork {
    let depth = rng.gen_range(1..=2);
    let hidden = (0..depth).map(|_| rng.gen_range(2..=8)).collect();
    let mut net = NetworkArch {
        hidden,
        activation,
        omega_first: if activation == Activation::Sine { 30.0 } else { 1.0 },
        omega_hidden: 1.0,
    }
    .build(d_in, d_out, rng);
    // Nonzero biases so every branch of the activations is exercised.
    for layer in &mut net.layers {
        for b in layer.bias.iter_mut() {
            *b += rng.gen_range(-0.5..0.5);
        }
    }
    net
}

fn net_suites(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    for act in [Activation::Sine, Activation::Elu, Activation::Relu] {
        let mut input = Suite::new(format!("input_gradient/{}", act.name()));
        let mut sobolev = Suite::new(format!("sobolev_param_grad/{}", act.name()));
        for _ in 0..opts.probes {
            let d_in = rng.gen_range(2..=4);
            let net = small_net(act, d_in, 1, rng);
            let z: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = net.input_gradient(&z)?;
            let numeric = fd_gradient(&z, |p| net.forward(p).map_or(f64::NAN, |v| v[0]));
            input.record(analytic.as_slice(), &numeric);

            let size = rng.gen_range(1..=6);
            let n = d_in - 1;
            let batch = SobolevBatch {
                inputs: DMatrix::from_fn(d_in, size, |_, _| rng.gen_range(-1.0..1.0)),
                value_targets: (0..size).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                grad_targets: DMatrix::from_fn(n, size, |_, _| rng.gen_range(-5.0..5.0)),
            };
            let scale: Vec<f64> = (0..d_in).map(|_| rng.gen_range(0.05..2.0)).collect();
            let k_s = rng.gen_range(0.1..10.0);
            let loss = sobolev_loss_and_param_grad(&net, &batch, k_s, &scale)?;
            let theta = net.params();
            let mut probe = net.clone();
            let numeric = fd_gradient(&theta, |p| {
                probe.set_params(p).unwrap();
                sobolev_loss_and_param_grad(&probe, &batch, k_s, &scale).map_or(f64::NAN, |l| l.loss)
            });
            sobolev.record(&loss.grads.flat(), &numeric);
        }
        out.push(input.finish(opts.tolerance));
        out.push(sobolev.finish(opts.tolerance));
    }
    Ok(out)
}

fn actor_suites(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    for act in [Activation::Relu, Activation::Elu] {
        let mut suite = Suite::new(format!("actor_param_grad/{}", act.name()));
        for probe_idx in 0..opts.probes {
            let kind = [TaskKind::SingleIntegrator, TaskKind::DoubleIntegrator, TaskKind::Dubins][probe_idx % 3];
            let task = TaskModel::new(kind);
            let actor = small_net(act, task.n() + 1, task.m(), rng);
            let critic = small_net(Activation::Sine, task.n() + 1, 1, rng);
            let states: Vec<AugmentedState> = (0..rng.gen_range(1..=4))
                .map(|_| AugmentedState {
                    x: random_point(&task, rng).0,
                    t: rng.gen_range(0..task.horizon),
                })
                .collect();
            let loss = actor_loss_and_param_grad(&actor, &critic, &task, &states)?;
            let mut probe = actor.clone();
            let numeric = fd_gradient(&actor.params(), |p| {
                probe.set_params(p).unwrap();
                actor_loss_and_param_grad(&probe, &critic, &task, &states).map_or(f64::NAN, |l| l.loss)
            });
            suite.record(&loss.grads.flat(), &numeric);
        }
        out.push(suite.finish(opts.tolerance));
    }
    Ok(out)
}

/// Runs every suite once, in a fixed order.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    let mut rng = substream(opts.seed, Stream::Misc, 1);
    let mut out = Vec::new();
    for kind in [TaskKind::SingleIntegrator, TaskKind::DoubleIntegrator, TaskKind::Dubins] {
        out.extend(task_suites(&TaskModel::new(kind), opts, &mut rng)?);
    }
    out.extend(net_suites(opts, &mut rng)?);
    out.extend(actor_suites(opts, &mut rng)?);
    Ok(out)
}

/// Only the critic-loss parameter-gradient suites, on fresh draws from `seed`.
pub fn sobolev_suites(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(net_suites(opts, &mut rng)?
        .into_iter()
        .filter(|s| s.name.starts_with("sobolev"))
        .collect())
}
