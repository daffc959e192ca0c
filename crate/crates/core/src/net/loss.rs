use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::net::mlp::{MlpNetwork, ParamGrads};
use crate::task::{AugmentedState, TaskModel};

/// Symmetric logarithm: `ln(1 + x)` for `x >= 0`, `-ln(1 - x)` otherwise.
pub fn logsym(x: f64) -> f64 {
    if x >= 0.0 {
        x.ln_1p()
    } else {
        -(-x).ln_1p()
    }
}

/// Derivative of [`logsym`], `1 / (1 + |x|)`.
pub fn logsym_derivative(x: f64) -> f64 {
    1.0 / (1.0 + x.abs())
}

/// One critic minibatch. Inputs are normalized network inputs (one column per
/// sample); gradient targets are in physical units and cover only the `n`
/// physical state components.
#[derive(Debug, Clone)]
pub struct SobolevBatch {
    pub inputs: DMatrix<f64>,
    pub value_targets: Vec<f64>,
    pub grad_targets: DMatrix<f64>,
}

impl SobolevBatch {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct SobolevLoss {
    /// `value_loss + k_s * grad_loss`
    pub loss: f64,
    /// Batch mean of `(V_target - V)^2`.
    pub value_loss: f64,
    /// Batch mean of `|logsym(V_x) - logsym(S_x dV/dx)|^2`, unweighted.
    pub grad_loss: f64,
    pub grads: ParamGrads,
}

/// Critic loss
/// `1/S sum_i (Vbar_i - V(x_i))^2 + k_s |logsym(V_x,i) - logsym(S_x dV/dx(x_i))|^2`
/// and its exact parameter gradient.
///
/// `input_scale[j]` is `d(input_j) / d(physical_j)`, so the network's input
/// gradient is compared in physical units. The last input (time) is never
/// compared.
pub fn sobolev_loss_and_param_grad(
    net: &MlpNetwork,
    batch: &SobolevBatch,
    k_s: f64,
    input_scale: &[f64],
) -> Result<SobolevLoss> {
    if !(k_s >= 0.0) {
        return Err(Error::InvalidArgument(format!("k_s must be nonnegative, got {k_s}")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty critic batch".into()));
    }
    let d_in = net.input_dim();
    let size = batch.len();
    let n = batch.grad_targets.nrows();
    check_dim("critic input", d_in, batch.inputs.nrows())?;
    check_dim("critic output", 1, net.output_dim())?;
    check_dim("value targets", size, batch.value_targets.len())?;
    check_dim("gradient targets", size, batch.grad_targets.ncols())?;
    check_dim("input scale", d_in, input_scale.len())?;
    if n >= d_in {
        return Err(Error::Dimension {
            what: "gradient targets",
            expected: d_in - 1,
            got: n,
        });
    }

    let inv = 1.0 / size as f64;
    let cache = net.forward_cache(batch.inputs.clone());
    let out = cache.output();
    let mut out_grad = DMatrix::zeros(1, size);
    let mut value_loss = 0.0;
    for i in 0..size {
        let r = batch.value_targets[i] - out[(0, i)];
        value_loss += r * r;
        out_grad[(0, i)] = -2.0 * r * inv;
    }
    value_loss *= inv;

    if k_s == 0.0 {
        // Still report the gradient mismatch for monitoring.
        let grad_loss = if n > 0 {
            let seed = DMatrix::from_element(1, size, 1.0);
            let (_, g) = net.backward_deltas(&cache, seed);
            gradient_mismatch(&g, &batch.grad_targets, input_scale).0 * inv
        } else {
            0.0
        };
        return Ok(SobolevLoss {
            loss: value_loss,
            value_loss,
            grad_loss,
            grads: net.backprop_output(&cache, &out_grad),
        });
    }

    let seed = DMatrix::from_element(1, size, 1.0);
    let (deltas, g) = net.backward_deltas(&cache, seed);
    let (mismatch, residuals) = gradient_mismatch(&g, &batch.grad_targets, input_scale);
    let grad_loss = mismatch * inv;

    let mut g_bar = DMatrix::zeros(d_in, size);
    for i in 0..size {
        for j in 0..n {
            let phys = input_scale[j] * g[(j, i)];
            g_bar[(j, i)] = -2.0 * k_s * inv * residuals[(j, i)] * logsym_derivative(phys) * input_scale[j];
        }
    }
    let grads = net.backprop_with_input_grad(&cache, &out_grad, &deltas, &g_bar);
    Ok(SobolevLoss {
        loss: value_loss + k_s * grad_loss,
        value_loss,
        grad_loss,
        grads,
    })
}

/// Sum of squared logsym residuals and the residual matrix.
fn gradient_mismatch(
    g: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    input_scale: &[f64],
) -> (f64, DMatrix<f64>) {
    let residuals = DMatrix::from_fn(targets.nrows(), targets.ncols(), |j, i| {
        logsym(targets[(j, i)]) - logsym(input_scale[j] * g[(j, i)])
    });
    (residuals.norm_squared(), residuals)
}

/// Control of a deterministic policy network: `u = u_max .* actor([x, t])`.
pub fn actor_control(actor: &MlpNetwork, task: &TaskModel, x: &[f64], t: usize) -> Result<DVector<f64>> {
    let out = actor.forward(&task.normalize_input(x, t as f64))?;
    check_dim("actor output", task.m(), out.len())?;
    Ok(DVector::from_iterator(
        task.m(),
        out.iter().zip(&task.u_max).map(|(a, m)| a * m),
    ))
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: ParamGrads,
}

/// Actor loss `1/S sum_i l(x_i, mu(x_i)) + V(f(x_i, mu(x_i)), t_i + 1)` and its
/// gradient with respect to the actor parameters. The critic's time input is
/// held constant.
pub fn actor_loss_and_param_grad(
    actor: &MlpNetwork,
    critic: &MlpNetwork,
    task: &TaskModel,
    states: &[AugmentedState],
) -> Result<ActorLoss> {
    let (n, m) = (task.n(), task.m());
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty actor batch".into()));
    }
    check_dim("actor input", n + 1, actor.input_dim())?;
    check_dim("actor output", m, actor.output_dim())?;
    check_dim("critic input", n + 1, critic.input_dim())?;
    for s in states {
        check_dim("state", n, s.x.len())?;
        if s.t >= task.horizon {
            return Err(Error::InvalidArgument(format!(
                "actor batch state at t = {} has no control (horizon {})",
                s.t, task.horizon
            )));
        }
    }

    let size = states.len();
    let inv = 1.0 / size as f64;
    let mut inputs = DMatrix::zeros(n + 1, size);
    for (i, s) in states.iter().enumerate() {
        inputs.set_column(i, &DVector::from_vec(task.normalize_input(&s.x, s.t as f64)));
    }
    let cache = actor.forward_cache(inputs);
    let raw = cache.output().clone();

    let mut next_inputs = DMatrix::zeros(n + 1, size);
    let mut controls = Vec::with_capacity(size);
    let mut running = 0.0;
    for (i, s) in states.iter().enumerate() {
        let u: Vec<f64> = (0..m).map(|j| raw[(j, i)] * task.u_max[j]).collect();
        running += task.running_cost(&s.x, &u)?;
        let next = task.step(&s.x, &u)?;
        next_inputs.set_column(i, &DVector::from_vec(task.normalize_input(next.as_slice(), (s.t + 1) as f64)));
        controls.push(u);
    }
    let values = critic.forward_batch(&next_inputs)?;
    let value_grads = critic.input_gradient_batch(&next_inputs)?;
    let scale = task.input_scale();

    let mut out_grad = DMatrix::zeros(m, size);
    for (i, s) in states.iter().enumerate() {
        let d = task.cost_derivatives(&s.x, &controls[i], false)?;
        let (_, fu) = task.dynamics_jacobians(&s.x, &controls[i])?;
        let vx = DVector::from_fn(n, |j, _| scale[j] * value_grads[(j, i)]);
        let du = d.l_u + fu.transpose() * vx;
        for j in 0..m {
            out_grad[(j, i)] = inv * du[j] * task.u_max[j];
        }
    }
    let loss = inv * (running + values.sum());
    Ok(ActorLoss {
        loss,
        grads: actor.backprop_output(&cache, &out_grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::{Activation, Layer, NetworkArch};
    use crate::task::{CostParams, TaskKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logsym_values() {
        assert_eq!(logsym(0.0), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((logsym(e1) - 1.0).abs() < 1e-12);
        assert!((logsym(-e1) + 1.0).abs() < 1e-12);
    }

    fn tiny_critic(act: Activation, seed: u64) -> MlpNetwork {
        NetworkArch {
            hidden: vec![6],
            activation: act,
            omega_first: 2.0,
            omega_hidden: 1.0,
        }
        .build(3, 1, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_batch(rng: &mut ChaCha8Rng, size: usize) -> SobolevBatch {
        SobolevBatch {
            inputs: DMatrix::from_fn(3, size, |_, _| rng.gen_range(-1.0..1.0)),
            value_targets: (0..size).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            grad_targets: DMatrix::from_fn(2, size, |_, _| rng.gen_range(-3.0..3.0)),
        }
    }

    #[test]
    fn rejects_negative_weight() {
        let net = tiny_critic(Activation::Sine, 1);
        let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(1), 4);
        assert!(sobolev_loss_and_param_grad(&net, &batch, -1.0, &[1.0; 3]).is_err());
    }

    #[test]
    fn zero_weight_is_plain_mse() {
        let net = tiny_critic(Activation::Elu, 2);
        let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(2), 8);
        let res = sobolev_loss_and_param_grad(&net, &batch, 0.0, &[1.0; 3]).unwrap();
        let cache = net.forward_cache(batch.inputs.clone());
        let out = cache.output();
        let grad_out = DMatrix::from_fn(1, 8, |_, i| -2.0 * (batch.value_targets[i] - out[(0, i)]) / 8.0);
        let plain = net.backprop_output(&cache, &grad_out);
        let a = res.grads.flat();
        let b = plain.flat();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        assert_eq!(res.loss, res.value_loss);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let net = tiny_critic(Activation::Sine, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch = random_batch(&mut rng, 5);
        let scale = [0.5, 2.0, 1.0];
        batch.value_targets = net.forward_batch(&batch.inputs).unwrap().iter().copied().collect();
        let g = net.input_gradient_batch(&batch.inputs).unwrap();
        batch.grad_targets = DMatrix::from_fn(2, 5, |j, i| scale[j] * g[(j, i)]);
        let res = sobolev_loss_and_param_grad(&net, &batch, 1e3, &scale).unwrap();
        assert!(res.loss.abs() < 1e-20);
        assert!(res.grads.flat().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn permutation_invariant() {
        let net = tiny_critic(Activation::Sine, 4);
        let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(4), 6);
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted = SobolevBatch {
            inputs: DMatrix::from_fn(3, 6, |j, i| batch.inputs[(j, perm[i])]),
            value_targets: perm.iter().map(|&i| batch.value_targets[i]).collect(),
            grad_targets: DMatrix::from_fn(2, 6, |j, i| batch.grad_targets[(j, perm[i])]),
        };
        let a = sobolev_loss_and_param_grad(&net, &batch, 10.0, &[1.0; 3]).unwrap();
        let b = sobolev_loss_and_param_grad(&net, &permuted, 10.0, &[1.0; 3]).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12 * a.loss.abs().max(1.0));
    }

    fn quadratic_di_task() -> TaskModel {
        let mut task = TaskModel::new(TaskKind::DoubleIntegrator);
        task.cost = CostParams {
            w_d: 0.0,
            w_p: 0.0,
            w_ob: 0.0,
            w_u: 0.3,
            w_bound: 0.0,
            obstacles: vec![],
            ..CostParams::default()
        };
        task
    }

    #[test]
    fn zero_actor_and_critic_give_zero_loss() {
        let task = quadratic_di_task();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut actor = NetworkArch::actor_default().build(5, 2, &mut rng);
        let mut critic = NetworkArch::critic_default().build(5, 1, &mut rng);
        actor.set_params(&vec![0.0; actor.param_count()]).unwrap();
        critic.set_params(&vec![0.0; critic.param_count()]).unwrap();
        let states = vec![AugmentedState { x: vec![1.0, 2.0, 0.0, 0.0], t: 3 }];
        let res = actor_loss_and_param_grad(&actor, &critic, &task, &states).unwrap();
        assert_eq!(res.loss, 0.0);
        assert!(res.grads.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_critic_closed_form() {
        // Linear actor a = A z + a0, linear critic V = c . z'.
        // dL/dA = sum_i [2 w_u u_i + f_u^T (c .* s)[..n]] .* u_max  z_i^T / S
        let task = quadratic_di_task();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = Layer::zeros(5, 2, Activation::Linear, 1.0);
        for w in a.weights.iter_mut().chain(a.bias.iter_mut()) {
            *w = rng.gen_range(-0.5..0.5);
        }
        let mut c = Layer::zeros(5, 1, Activation::Linear, 1.0);
        for w in c.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let actor = MlpNetwork::new(vec![a.clone()]).unwrap();
        let critic = MlpNetwork::new(vec![c.clone()]).unwrap();
        let states: Vec<_> = (0..4)
            .map(|i| AugmentedState {
                x: (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                t: 10 * i,
            })
            .collect();
        let res = actor_loss_and_param_grad(&actor, &critic, &task, &states).unwrap();
        let scale = task.input_scale();
        let dt = task.dt;
        let mut expect = DMatrix::zeros(2, 5);
        for s in &states {
            let z = DVector::from_vec(task.normalize_input(&s.x, s.t as f64));
            let raw = &a.weights * &z + &a.bias;
            let mut du = DVector::zeros(2);
            for j in 0..2 {
                let u = raw[j] * task.u_max[j];
                // velocity component j+2 receives dt * u_j
                let dv = c.weights[(0, j + 2)] * scale[j + 2] * dt;
                du[j] = (2.0 * 0.3 * u + dv) * task.u_max[j];
            }
            expect += du * z.transpose() / states.len() as f64;
        }
        assert!((&res.grads.weights[0] - expect).amax() < 1e-12);
    }

    #[test]
    fn rejects_terminal_states() {
        let task = quadratic_di_task();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let actor = NetworkArch::actor_default().build(5, 2, &mut rng);
        let critic = NetworkArch::critic_default().build(5, 1, &mut rng);
        let states = vec![AugmentedState { x: vec![0.0; 4], t: task.horizon }];
        assert!(actor_loss_and_param_grad(&actor, &critic, &task, &states).is_err());
    }
}
