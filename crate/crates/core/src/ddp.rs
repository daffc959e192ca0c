//! Single-shooting DDP (iLQR flavour) with Levenberg-Marquardt regularization
//! on `Q_uu` and a backtracking Armijo line search.
//!
//! The backward pass drops the second-order dynamics terms (Gauss-Newton).
//! After the last accepted iterate one more backward pass is run and its
//! value gradients `V_x,t` are stored on the trajectory; they exclude the
//! derivative with respect to time.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::task::TaskModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DdpSettings {
    pub max_iters: usize,
    /// Stop when the relative cost decrease of an accepted step drops below this.
    pub cost_tol: f64,
    /// Stop when `max_t |Q_u,t|_inf` drops below this.
    pub grad_tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    pub line_search_steps: usize,
    pub line_search_factor: f64,
    pub armijo: f64,
}

impl Default for DdpSettings {
    fn default() -> Self {
        DdpSettings {
            max_iters: 100,
            cost_tol: 1e-6,
            grad_tol: 1e-6,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
            reg_factor: 10.0,
            line_search_steps: 10,
            line_search_factor: 0.5,
            armijo: 1e-4,
        }
    }
}

impl DdpSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cost_tol,
            self.grad_tol,
            self.reg_init,
            self.reg_min,
            self.reg_max,
            self.line_search_factor,
            self.armijo,
        ];
        if self.max_iters == 0
            || self.line_search_steps == 0
            || positive.iter().any(|v| !(*v > 0.0))
            || !(self.reg_factor > 1.0)
            || !(self.line_search_factor < 1.0)
        {
            return Err(Error::InvalidArgument("ddp settings must be positive".into()));
        }
        if !(self.reg_min <= self.reg_init && self.reg_init <= self.reg_max) {
            return Err(Error::InvalidArgument(
                "ddp regularization must satisfy reg_min <= reg_init <= reg_max".into(),
            ));
        }
        Ok(())
    }
}

/// A dynamically consistent state/control sequence with per-step costs and
/// value gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Time index of `states[0]` within the task horizon.
    pub start_time: usize,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// `l_0 .. l_{H-1}` followed by the terminal cost `l_H`.
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    /// `V_x,0 .. V_x,H`; empty until a backward pass has been run.
    pub value_grads: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No step length gave a sufficient decrease even at maximal regularization.
    NoDescent,
    /// `Q_uu` could not be made positive definite below `reg_max`.
    BackwardPassFailed,
}

impl SolveStatus {
    pub fn is_failure(self) -> bool {
        matches!(self, SolveStatus::BackwardPassFailed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iters",
            SolveStatus::NoDescent => "no_descent",
            SolveStatus::BackwardPassFailed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub regularization: f64,
    /// Accepted step length, or 0 for a rejected iteration.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub status: SolveStatus,
    /// Number of accepted steps.
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
    pub value_grads: Vec<DVector<f64>>,
    pub value_hessians: Vec<DMatrix<f64>>,
    /// Linear and quadratic coefficients of the predicted cost change:
    /// `dJ(a) = a * expected[0] + a^2 / 2 * expected[1]`.
    pub expected: [f64; 2],
    pub max_qu: f64,
}

/// Rolls `controls` out from `x0`, returning states and the stage costs with
/// the terminal cost appended. `None` if anything becomes non-finite.
pub fn rollout(
    task: &TaskModel,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Option<(Vec<DVector<f64>>, Vec<f64>)> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut costs = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for u in controls {
        let x = states.last().unwrap();
        let l = task.stage_cost_unchecked(x.as_slice(), Some(u.as_slice()));
        let next = task.step_unchecked(x.as_slice(), u.as_slice());
        if !l.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        costs.push(l);
        states.push(next);
    }
    let lt = task.stage_cost_unchecked(states.last().unwrap().as_slice(), None);
    if !lt.is_finite() {
        return None;
    }
    costs.push(lt);
    Some((states, costs))
}

fn check_rollout_dims(task: &TaskModel, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Result<()> {
    check_dim("states", controls.len() + 1, states.len())?;
    for x in states {
        check_dim("state", task.n(), x.len())?;
        check_finite("state", x.as_slice())?;
    }
    for u in controls {
        check_dim("control", task.m(), u.len())?;
        check_finite("control", u.as_slice())?;
    }
    Ok(())
}

/// Riccati-like backward recursion around `(states, controls)` with `reg`
/// added to the diagonal of `Q_uu` for the gains.
pub fn backward_pass(
    task: &TaskModel,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    reg: f64,
) -> Result<BackwardPass> {
    check_rollout_dims(task, states, controls)?;
    backward_pass_unchecked(task, states, controls, reg)
        .ok_or_else(|| Error::Numerical(format!("Q_uu not positive definite at regularization {reg:e}")))
}

fn backward_pass_unchecked(
    task: &TaskModel,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    reg: f64,
) -> Option<BackwardPass> {
    let horizon = controls.len();
    let m = task.m();
    let terminal = task.cost_derivatives_unchecked(states[horizon].as_slice(), None);
    let mut vx = terminal.l_x;
    let mut vxx = terminal.l_xx;

    let mut feedforward = vec![DVector::zeros(m); horizon];
    let mut feedback = vec![DMatrix::zeros(m, task.n()); horizon];
    let mut value_grads = vec![DVector::zeros(task.n()); horizon + 1];
    let mut value_hessians = vec![DMatrix::zeros(task.n(), task.n()); horizon + 1];
    value_grads[horizon] = vx.clone();
    value_hessians[horizon] = vxx.clone();
    let mut expected = [0.0, 0.0];
    let mut max_qu: f64 = 0.0;

    for t in (0..horizon).rev() {
        let x = states[t].as_slice();
        let u = controls[t].as_slice();
        let d = task.cost_derivatives_unchecked(x, Some(u));
        let (fx, fu) = task.jacobians_unchecked(x);

        let fu_t_vxx = fu.transpose() * &vxx;
        let qx = &d.l_x + fx.transpose() * &vx;
        let qu = &d.l_u + fu.transpose() * &vx;
        let qxx = &d.l_xx + fx.transpose() * &vxx * &fx;
        let quu = &d.l_uu + &fu_t_vxx * &fu;
        let qux = &d.l_ux + &fu_t_vxx * &fx;

        let mut quu_reg = quu.clone();
        for i in 0..m {
            quu_reg[(i, i)] += reg;
        }
        let chol = quu_reg.cholesky()?;
        let k = -chol.solve(&qu);
        let big_k = -chol.solve(&qux);

        max_qu = max_qu.max(qu.amax());
        expected[0] += k.dot(&qu);
        expected[1] += k.dot(&(&quu * &k));

        let kt = big_k.transpose();
        vx = &qx + &kt * (&quu * &k) + &kt * &qu + qux.transpose() * &k;
        let v = &qxx + &kt * &quu * &big_k + &kt * &qux + qux.transpose() * &big_k;
        vxx = 0.5 * (&v + v.transpose());
        if vx.iter().chain(vxx.iter()).any(|v| !v.is_finite()) {
            return None;
        }

        value_grads[t] = vx.clone();
        value_hessians[t] = vxx.clone();
        feedforward[t] = k;
        feedback[t] = big_k;
    }

    Some(BackwardPass {
        feedforward,
        feedback,
        value_grads,
        value_hessians,
        expected,
        max_qu,
    })
}

/// States, controls and stage costs of a rollout.
pub type Rollout = (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<f64>);

/// Candidate rollout `u'_t = u_t + alpha k_t + K_t (x'_t - x_t)`.
/// Returns `None` when the rollout leaves the finite range.
pub fn forward_pass(
    task: &TaskModel,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    feedforward: &[DVector<f64>],
    feedback: &[DMatrix<f64>],
    alpha: f64,
) -> Option<Rollout> {
    let horizon = controls.len();
    let mut new_states = Vec::with_capacity(horizon + 1);
    let mut new_controls = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon + 1);
    new_states.push(states[0].clone());
    for t in 0..horizon {
        let x = &new_states[t];
        let u = &controls[t] + alpha * &feedforward[t] + &feedback[t] * (x - &states[t]);
        let l = task.stage_cost_unchecked(x.as_slice(), Some(u.as_slice()));
        let next = task.step_unchecked(x.as_slice(), u.as_slice());
        if !l.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        costs.push(l);
        new_controls.push(u);
        new_states.push(next);
    }
    let lt = task.stage_cost_unchecked(new_states[horizon].as_slice(), None);
    if !lt.is_finite() {
        return None;
    }
    costs.push(lt);
    Some((new_states, new_controls, costs))
}

/// Minimizes the penalty-form optimal control problem from `x0` over
/// `horizon` steps, starting from `warm_controls`. Single shooting makes any
/// warm-start state sequence redundant; only the controls are used.
pub fn solve(
    task: &TaskModel,
    x0: &[f64],
    horizon: usize,
    warm_controls: &[DVector<f64>],
    settings: &DdpSettings,
) -> Result<Solution> {
    check_dim("state", task.n(), x0.len())?;
    check_finite("initial state", x0)?;
    check_dim("warm start controls", horizon, warm_controls.len())?;
    for u in warm_controls {
        check_dim("control", task.m(), u.len())?;
        check_finite("warm start control", u.as_slice())?;
    }
    settings.validate()?;

    let x0 = DVector::from_column_slice(x0);
    let (mut states, mut costs) = rollout(task, &x0, warm_controls)
        .ok_or_else(|| Error::Numerical("warm start rollout is not finite".into()))?;
    let mut controls = warm_controls.to_vec();
    let mut cost: f64 = costs.iter().sum();

    let mut reg = settings.reg_init;
    let mut status = SolveStatus::MaxIterations;
    let mut accepted = 0;
    let mut trace = Vec::new();

    for iteration in 0..settings.max_iters {
        let bp = match backward_pass_unchecked(task, &states, &controls, reg) {
            Some(bp) => bp,
            None => {
                reg *= settings.reg_factor;
                trace.push(TraceRow {
                    iteration,
                    cost,
                    regularization: reg,
                    step: 0.0,
                });
                if reg > settings.reg_max {
                    status = SolveStatus::BackwardPassFailed;
                    break;
                }
                continue;
            }
        };
        let full_decrease = -(bp.expected[0] + 0.5 * bp.expected[1]);
        if bp.max_qu < settings.grad_tol || full_decrease < 1e-12 * (1.0 + cost.abs()) {
            status = SolveStatus::Converged;
            break;
        }

        let mut alpha = 1.0;
        let mut candidate = None;
        for _ in 0..settings.line_search_steps {
            if let Some((xs, us, ls)) =
                forward_pass(task, &states, &controls, &bp.feedforward, &bp.feedback, alpha)
            {
                let new_cost: f64 = ls.iter().sum();
                let predicted = -(alpha * bp.expected[0] + 0.5 * alpha * alpha * bp.expected[1]);
                let actual = cost - new_cost;
                if actual > 0.0 && actual >= settings.armijo * predicted {
                    candidate = Some((xs, us, ls, new_cost));
                    break;
                }
            }
            alpha *= settings.line_search_factor;
        }

        match candidate {
            Some((xs, us, ls, new_cost)) => {
                let rel = (cost - new_cost) / cost.abs().max(1e-12);
                states = xs;
                controls = us;
                costs = ls;
                cost = new_cost;
                accepted += 1;
                reg = (reg / settings.reg_factor).max(settings.reg_min);
                trace.push(TraceRow {
                    iteration,
                    cost,
                    regularization: reg,
                    step: alpha,
                });
                if rel < settings.cost_tol {
                    status = SolveStatus::Converged;
                    break;
                }
            }
            None => {
                reg *= settings.reg_factor;
                trace.push(TraceRow {
                    iteration,
                    cost,
                    regularization: reg,
                    step: 0.0,
                });
                if reg > settings.reg_max {
                    status = SolveStatus::NoDescent;
                    break;
                }
            }
        }
    }

    // Value gradients from one last pass at the accepted solution.
    let mut final_reg = settings.reg_min;
    let value_grads = loop {
        if let Some(bp) = backward_pass_unchecked(task, &states, &controls, final_reg) {
            break bp.value_grads;
        }
        final_reg *= settings.reg_factor;
        if final_reg > settings.reg_max {
            status = SolveStatus::BackwardPassFailed;
            break costate(task, &states, &controls);
        }
    };

    Ok(Solution {
        trajectory: Trajectory {
            start_time: 0,
            states,
            controls,
            stage_costs: costs,
            total_cost: cost,
            value_grads,
        },
        status,
        iterations: accepted,
        trace,
    })
}

/// First-order adjoint recursion `lambda_t = l_x + f_x^T lambda_{t+1}`; the
/// value gradient at a stationary point, used when no backward pass succeeds.
fn costate(task: &TaskModel, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let horizon = controls.len();
    let mut out = vec![DVector::zeros(task.n()); horizon + 1];
    out[horizon] = task.cost_derivatives_unchecked(states[horizon].as_slice(), None).l_x;
    for t in (0..horizon).rev() {
        let d = task.cost_derivatives_unchecked(states[t].as_slice(), Some(controls[t].as_slice()));
        let (fx, _) = task.jacobians_unchecked(states[t].as_slice());
        out[t] = d.l_x + fx.transpose() * &out[t + 1];
    }
    out
}

/// Zero controls for `horizon` steps: the initial-condition warm start keeps a
/// system at rest where it started.
pub fn zero_controls(task: &TaskModel, horizon: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(task.m()); horizon]
}
