//! Benchmark systems: discrete-time dynamics with analytic Jacobians and the
//! goal-reaching / obstacle-avoidance running cost with analytic derivatives.
//!
//! The running cost is the sum of five terms:
//!
//! * `l1 = w_d |p - p_g|^2`
//! * `l2 = -(w_p / a1) ln(exp(-a1 (sqrt(dx^2 + c2) + sqrt(dy^2 + c3) + c4)) + 1)`
//! * `l3 = (w_ob / a2) sum_i ln(exp(-a2 (dx_i^2 / (a_i/2)^2 + dy_i^2 / (b_i/2)^2 - 1)) + 1)`
//! * `l4 = w_u |u|^2`
//! * `l5 = w_bound |u ./ u_max|^10`
//!
//! The terminal cost keeps only `l1 + l2 + l3`. All systems are integrated
//! with explicit Euler, so their Jacobians are exact.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};

/// Physical state plus the discrete time index it occurs at.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// State `[x, y]`, control `[v_x, v_y]`.
    SingleIntegrator,
    /// State `[x, y, v_x, v_y]`, control `[a_x, a_y]`.
    DoubleIntegrator,
    /// State `[x, y, theta, v, a]`, control `[omega, jerk]`.
    Dubins,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SingleIntegrator => "single_integrator",
            TaskKind::DoubleIntegrator => "double_integrator",
            TaskKind::Dubins => "dubins",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "single_integrator" => Some(TaskKind::SingleIntegrator),
            "double_integrator" => Some(TaskKind::DoubleIntegrator),
            "dubins" => Some(TaskKind::Dubins),
            _ => None,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            TaskKind::SingleIntegrator => 2,
            TaskKind::DoubleIntegrator => 4,
            TaskKind::Dubins => 5,
        }
    }

    pub fn control_dim(self) -> usize {
        2
    }
}

/// Ellipse with full axis lengths `axes = (a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub axes: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub w_d: f64,
    pub w_p: f64,
    pub w_ob: f64,
    pub w_u: f64,
    /// Multiplier on the control-bound penalty `l5`; 1 reproduces the plain sum.
    pub w_bound: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub obstacles: Vec<Obstacle>,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            w_d: 1e-3,
            w_p: 5.0,
            w_ob: 10.0,
            w_u: 1e-2,
            w_bound: 1.0,
            alpha1: 50.0,
            alpha2: 50.0,
            c2: 1e-4,
            c3: 1e-4,
            c4: 0.0,
            obstacles: default_obstacles(),
        }
    }
}

/// C-shaped trap opening towards +x: a vertical cap at x = 4 and two
/// horizontal bars at y = +-3 reaching to x = 12.5.
pub fn default_obstacles() -> Vec<Obstacle> {
    vec![
        Obstacle {
            center: [4.0, 0.0],
            axes: [1.5, 7.5],
        },
        Obstacle {
            center: [8.0, 3.0],
            axes: [9.0, 1.5],
        },
        Obstacle {
            center: [8.0, -3.0],
            axes: [9.0, 1.5],
        },
    ]
}

/// The five additive pieces of the running cost, in order `l1..l5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub distance: f64,
    pub valley: f64,
    pub obstacles: f64,
    pub effort: f64,
    pub bound_penalty: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.distance + self.valley + self.obstacles + self.effort + self.bound_penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostDerivatives {
    pub l: f64,
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
    /// `m x n`
    pub l_ux: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub kind: TaskKind,
    pub dt: f64,
    /// Maximum horizon `T` in steps.
    pub horizon: usize,
    pub u_max: Vec<f64>,
    pub goal: [f64; 2],
    pub cost: CostParams,
    /// Lower/upper bounds of the initial-state distribution; also used to
    /// scale network inputs.
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
}

impl TaskModel {
    pub fn new(kind: TaskKind) -> Self {
        let (u_max, state_low, state_high) = match kind {
            TaskKind::SingleIntegrator => (
                vec![2.0, 2.0],
                vec![-15.0, -15.0],
                vec![15.0, 15.0],
            ),
            TaskKind::DoubleIntegrator => (
                vec![2.0, 2.0],
                vec![-15.0, -15.0, -2.0, -2.0],
                vec![15.0, 15.0, 2.0, 2.0],
            ),
            TaskKind::Dubins => (
                vec![2.0, 5.0],
                vec![-15.0, -15.0, -std::f64::consts::PI, -2.0, -2.0],
                vec![15.0, 15.0, std::f64::consts::PI, 2.0, 2.0],
            ),
        };
        TaskModel {
            kind,
            dt: 0.05,
            horizon: 200,
            u_max,
            goal: [-7.0, 0.0],
            cost: CostParams::default(),
            state_low,
            state_high,
        }
    }

    pub fn n(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn m(&self) -> usize {
        self.kind.control_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        check_dim("u_max", self.m(), self.u_max.len())?;
        if self.u_max.iter().any(|&u| !(u > 0.0)) {
            return bad("u_max components must be positive");
        }
        check_dim("state_low", self.n(), self.state_low.len())?;
        check_dim("state_high", self.n(), self.state_high.len())?;
        if self
            .state_low
            .iter()
            .zip(&self.state_high)
            .any(|(lo, hi)| !(lo < hi))
        {
            return bad("state bounds must satisfy low < high");
        }
        let c = &self.cost;
        if !(c.alpha1 > 0.0 && c.alpha2 > 0.0) {
            return bad("softmax sharpness must be positive");
        }
        if [c.w_d, c.w_p, c.w_ob, c.w_u, c.w_bound].iter().any(|&w| !(w >= 0.0)) {
            return bad("cost weights must be nonnegative");
        }
        if c.obstacles.iter().any(|o| !(o.axes[0] > 0.0 && o.axes[1] > 0.0)) {
            return bad("obstacle axes must be positive");
        }
        Ok(())
    }

    fn check_xu(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_dim("state", self.n(), x.len())?;
        check_dim("control", self.m(), u.len())?;
        check_finite("state", x)?;
        check_finite("control", u)
    }

    /// One explicit-Euler step of the continuous model.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check_xu(x, u)?;
        Ok(self.step_unchecked(x, u))
    }

    pub(crate) fn step_unchecked(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let dt = self.dt;
        match self.kind {
            TaskKind::SingleIntegrator => {
                DVector::from_vec(vec![x[0] + dt * u[0], x[1] + dt * u[1]])
            }
            TaskKind::DoubleIntegrator => DVector::from_vec(vec![
                x[0] + dt * x[2],
                x[1] + dt * x[3],
                x[2] + dt * u[0],
                x[3] + dt * u[1],
            ]),
            TaskKind::Dubins => {
                let (s, c) = x[2].sin_cos();
                DVector::from_vec(vec![
                    x[0] + dt * x[3] * c,
                    x[1] + dt * x[3] * s,
                    x[2] + dt * u[0],
                    x[3] + dt * x[4],
                    x[4] + dt * u[1],
                ])
            }
        }
    }

    /// Exact Jacobians `(f_x, f_u)` of [`TaskModel::step`].
    pub fn dynamics_jacobians(
        &self,
        x: &[f64],
        u: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_xu(x, u)?;
        Ok(self.jacobians_unchecked(x))
    }

    pub(crate) fn jacobians_unchecked(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m, dt) = (self.n(), self.m(), self.dt);
        let mut fx = DMatrix::identity(n, n);
        let mut fu = DMatrix::zeros(n, m);
        match self.kind {
            TaskKind::SingleIntegrator => {
                fu[(0, 0)] = dt;
                fu[(1, 1)] = dt;
            }
            TaskKind::DoubleIntegrator => {
                fx[(0, 2)] = dt;
                fx[(1, 3)] = dt;
                fu[(2, 0)] = dt;
                fu[(3, 1)] = dt;
            }
            TaskKind::Dubins => {
                let (s, c) = x[2].sin_cos();
                let v = x[3];
                fx[(0, 2)] = -dt * v * s;
                fx[(0, 3)] = dt * c;
                fx[(1, 2)] = dt * v * c;
                fx[(1, 3)] = dt * s;
                fx[(3, 4)] = dt;
                fu[(2, 0)] = dt;
                fu[(4, 1)] = dt;
            }
        }
        (fx, fu)
    }

    /// Planar end-effector position.
    pub fn end_effector(&self, x: &[f64]) -> [f64; 2] {
        [x[0], x[1]]
    }

    pub fn cost_terms(&self, x: &[f64], u: Option<&[f64]>) -> Result<CostTerms> {
        check_dim("state", self.n(), x.len())?;
        check_finite("state", x)?;
        if let Some(u) = u {
            check_dim("control", self.m(), u.len())?;
            check_finite("control", u)?;
        }
        Ok(self.cost_terms_unchecked(x, u))
    }

    fn cost_terms_unchecked(&self, x: &[f64], u: Option<&[f64]>) -> CostTerms {
        let c = &self.cost;
        let p = self.end_effector(x);
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];
        let distance = c.w_d * (dx * dx + dy * dy);
        let s = (dx * dx + c.c2).sqrt() + (dy * dy + c.c3).sqrt() + c.c4;
        let valley = -(c.w_p / c.alpha1) * softplus(-c.alpha1 * s);
        let obstacles = c
            .obstacles
            .iter()
            .map(|o| (c.w_ob / c.alpha2) * softplus(-c.alpha2 * ellipse_level(o, p)))
            .sum();
        let (effort, bound_penalty) = match u {
            Some(u) => {
                let effort = c.w_u * u.iter().map(|v| v * v).sum::<f64>();
                let q: f64 = u
                    .iter()
                    .zip(&self.u_max)
                    .map(|(v, m)| (v / m) * (v / m))
                    .sum();
                (effort, c.w_bound * q.powi(5))
            }
            None => (0.0, 0.0),
        };
        CostTerms {
            distance,
            valley,
            obstacles,
            effort,
            bound_penalty,
        }
    }

    pub fn running_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_xu(x, u)?;
        Ok(self.cost_terms_unchecked(x, Some(u)).total())
    }

    pub fn terminal_cost(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cost_terms(x, None)?.total())
    }

    pub(crate) fn stage_cost_unchecked(&self, x: &[f64], u: Option<&[f64]>) -> f64 {
        self.cost_terms_unchecked(x, u).total()
    }

    /// Analytic first and second derivatives of the running cost, or of the
    /// terminal cost when `terminal` is set (in which case `u` is ignored and
    /// the control blocks are zero).
    pub fn cost_derivatives(&self, x: &[f64], u: &[f64], terminal: bool) -> Result<CostDerivatives> {
        if terminal {
            check_dim("state", self.n(), x.len())?;
            check_finite("state", x)?;
        } else {
            self.check_xu(x, u)?;
        }
        Ok(self.cost_derivatives_unchecked(x, if terminal { None } else { Some(u) }))
    }

    pub(crate) fn cost_derivatives_unchecked(&self, x: &[f64], u: Option<&[f64]>) -> CostDerivatives {
        let (n, m) = (self.n(), self.m());
        let c = &self.cost;
        let mut l_x = DVector::zeros(n);
        let mut l_xx = DMatrix::zeros(n, n);
        let mut l_u = DVector::zeros(m);
        let mut l_uu = DMatrix::zeros(m, m);

        let p = self.end_effector(x);
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];

        // Position gradient/Hessian accumulated in (g, h), mapped to x[0], x[1].
        let mut g = [2.0 * c.w_d * dx, 2.0 * c.w_d * dy];
        let mut h = [[2.0 * c.w_d, 0.0], [0.0, 2.0 * c.w_d]];

        // valley: l2 = -(w_p/a1) softplus(-a1 s)
        let rx = (dx * dx + c.c2).sqrt();
        let ry = (dy * dy + c.c3).sqrt();
        let s = rx + ry + c.c4;
        let sig = sigmoid(-c.alpha1 * s);
        let d1 = c.w_p * sig;
        let d2 = -c.w_p * c.alpha1 * sig * (1.0 - sig);
        let sx = dx / rx;
        let sy = dy / ry;
        g[0] += d1 * sx;
        g[1] += d1 * sy;
        h[0][0] += d2 * sx * sx + d1 * c.c2 / (rx * rx * rx);
        h[1][1] += d2 * sy * sy + d1 * c.c3 / (ry * ry * ry);
        h[0][1] += d2 * sx * sy;
        h[1][0] += d2 * sx * sy;

        // obstacles: (w_ob/a2) softplus(-a2 e)
        for o in &c.obstacles {
            let e = ellipse_level(o, p);
            let ha = 0.5 * o.axes[0];
            let hb = 0.5 * o.axes[1];
            let ex = 2.0 * (p[0] - o.center[0]) / (ha * ha);
            let ey = 2.0 * (p[1] - o.center[1]) / (hb * hb);
            let sig = sigmoid(-c.alpha2 * e);
            let d1 = -c.w_ob * sig;
            let d2 = c.w_ob * c.alpha2 * sig * (1.0 - sig);
            g[0] += d1 * ex;
            g[1] += d1 * ey;
            h[0][0] += d2 * ex * ex + d1 * 2.0 / (ha * ha);
            h[1][1] += d2 * ey * ey + d1 * 2.0 / (hb * hb);
            h[0][1] += d2 * ex * ey;
            h[1][0] += d2 * ex * ey;
        }

        l_x[0] = g[0];
        l_x[1] = g[1];
        for i in 0..2 {
            for j in 0..2 {
                l_xx[(i, j)] = h[i][j];
            }
        }

        if let Some(u) = u {
            for j in 0..m {
                l_u[j] = 2.0 * c.w_u * u[j];
                l_uu[(j, j)] = 2.0 * c.w_u;
            }
            // l5 = w (sum (u_j/m_j)^2)^5
            let q: f64 = u
                .iter()
                .zip(&self.u_max)
                .map(|(v, mx)| (v / mx) * (v / mx))
                .sum();
            if q > 0.0 && c.w_bound > 0.0 {
                let dq: Vec<f64> = u
                    .iter()
                    .zip(&self.u_max)
                    .map(|(v, mx)| 2.0 * v / (mx * mx))
                    .collect();
                let q3 = q * q * q;
                let q4 = q3 * q;
                for j in 0..m {
                    l_u[j] += c.w_bound * 5.0 * q4 * dq[j];
                    for k in 0..m {
                        l_uu[(j, k)] += c.w_bound * 20.0 * q3 * (dq[j] * dq[k]);
                    }
                    l_uu[(j, j)] += c.w_bound * 5.0 * q4 * 2.0 / (self.u_max[j] * self.u_max[j]);
                }
            }
        }

        CostDerivatives {
            l: self.cost_terms_unchecked(x, u).total(),
            l_x,
            l_u,
            l_xx,
            l_uu,
            l_ux: DMatrix::zeros(m, n),
        }
    }

    /// Maps an augmented state `[x, t]` to network inputs in roughly `[-1, 1]`.
    pub fn normalize_input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() + 1);
        for ((v, lo), hi) in x.iter().zip(&self.state_low).zip(&self.state_high) {
            out.push((v - 0.5 * (lo + hi)) * 2.0 / (hi - lo));
        }
        let half_t = 0.5 * self.horizon as f64;
        out.push((t - half_t) / half_t);
        out
    }

    /// `d(normalized input) / d(augmented state)` per component.
    pub fn input_scale(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .state_low
            .iter()
            .zip(&self.state_high)
            .map(|(lo, hi)| 2.0 / (hi - lo))
            .collect();
        out.push(2.0 / self.horizon as f64);
        out
    }
}

fn ellipse_level(o: &Obstacle, p: [f64; 2]) -> f64 {
    let ha = 0.5 * o.axes[0];
    let hb = 0.5 * o.axes[1];
    let ex = p[0] - o.center[0];
    let ey = p[1] - o.center[1];
    ex * ex / (ha * ha) + ey * ey / (hb * hb) - 1.0
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
