//! Evaluation: solver cost from a grid of initial positions when warm-started
//! by a policy rollout or from rest, run aggregation, and the critic
//! activation comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::buffer::{trajectory_transitions, Transition};
use crate::ddp::{self, DdpSettings, SolveStatus};
use crate::error::{Error, Result};
use crate::net::{adam_step, sobolev_loss_and_param_grad, Activation, AdamState, MlpNetwork, NetworkArch};
use crate::rng::{substream, Stream};
use crate::task::{TaskKind, TaskModel};
use crate::trainer::{self, critic_batch, policy_rollout, TrainerConfig};

/// Initial positions on a regular mesh, both ends included, at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub mesh: f64,
    /// Seeds the per-point Dubins headings.
    pub heading_seed: u64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid {
            x_range: [0.0, 15.0],
            y_range: [-5.0, 5.0],
            mesh: 1.0,
            heading_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub position: [f64; 2],
    /// Zero except for the Dubins car.
    pub heading: f64,
    pub state: Vec<f64>,
}

fn axis(range: [f64; 2], mesh: f64) -> Vec<f64> {
    let count = ((range[1] - range[0]) / mesh + 1e-9).floor() as usize + 1;
    (0..count).map(|i| range[0] + i as f64 * mesh).collect()
}

impl EvalGrid {
    /// Points in x-major order. Dubins headings are drawn once per point from
    /// the heading seed, so every method sees the same starts.
    pub fn points(&self, task: &TaskModel) -> Result<Vec<GridPoint>> {
        if !(self.mesh > 0.0) || !(self.x_range[1] >= self.x_range[0]) || !(self.y_range[1] >= self.y_range[0]) {
            return Err(Error::InvalidArgument("invalid evaluation grid".into()));
        }
        let mut out = Vec::new();
        for x in axis(self.x_range, self.mesh) {
            for y in axis(self.y_range, self.mesh) {
                let idx = out.len() as u64;
                let mut state = vec![0.0; task.n()];
                state[0] = x;
                state[1] = y;
                let heading = if task.kind == TaskKind::Dubins {
                    let h = substream(self.heading_seed, Stream::EvalHeading, idx)
                        .gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                    state[2] = h;
                    h
                } else {
                    0.0
                };
                out.push(GridPoint {
                    position: [x, y],
                    heading,
                    state,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: GridPoint,
    pub cost: f64,
    pub status: SolveStatus,
    /// The solve failed; `cost` is the warm start's own cost.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub points: Vec<PointResult>,
    pub mean_cost: f64,
}

fn evaluate_with<F>(task: &TaskModel, grid: &EvalGrid, settings: &DdpSettings, warm: F) -> Result<EvalResult>
where
    F: Fn(&GridPoint) -> Result<Vec<DVector<f64>>> + Sync,
{
    let points = grid.points(task)?;
    let results = points
        .into_par_iter()
        .map(|p| {
            let controls = warm(&p)?;
            let x0 = DVector::from_column_slice(&p.state);
            let warm_cost = ddp::rollout(task, &x0, &controls).map_or(f64::INFINITY, |(_, c)| c.iter().sum());
            match ddp::solve(task, &p.state, task.horizon, &controls, settings) {
                Ok(sol) if !sol.status.is_failure() => Ok(PointResult {
                    point: p,
                    cost: sol.trajectory.total_cost,
                    status: sol.status,
                    failed: false,
                }),
                Ok(sol) => Ok(PointResult {
                    point: p,
                    cost: warm_cost,
                    status: sol.status,
                    failed: true,
                }),
                Err(Error::Numerical(_)) => Ok(PointResult {
                    point: p,
                    cost: warm_cost,
                    status: SolveStatus::BackwardPassFailed,
                    failed: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_cost = results.iter().map(|r| r.cost).sum::<f64>() / results.len().max(1) as f64;
    Ok(EvalResult {
        points: results,
        mean_cost,
    })
}

/// Solver cost from each grid point, warm-started by the actor's rollout over
/// the full horizon.
pub fn evaluate_policy(
    task: &TaskModel,
    actor: &MlpNetwork,
    grid: &EvalGrid,
    settings: &DdpSettings,
) -> Result<EvalResult> {
    evaluate_with(task, grid, settings, |p| {
        policy_rollout(
            task,
            actor,
            &crate::task::AugmentedState {
                x: p.state.clone(),
                t: 0,
            },
        )
    })
}

/// Same protocol with the system held at rest as warm start.
pub fn baseline_ics(task: &TaskModel, grid: &EvalGrid, settings: &DdpSettings) -> Result<EvalResult> {
    evaluate_with(task, grid, settings, |_| Ok(ddp::zero_controls(task, task.horizon)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise median and quartiles across runs.
pub fn aggregate_runs(curves: &[Vec<f64>]) -> Result<Vec<Quartiles>> {
    let len = match curves.first() {
        Some(c) => c.len(),
        None => return Err(Error::InvalidArgument("no runs to aggregate".into())),
    };
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidArgument("runs have different curve lengths".into()));
    }
    Ok((0..len)
        .map(|i| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            col.sort_by(f64::total_cmp);
            Quartiles {
                q1: quantile(&col, 0.25),
                median: quantile(&col, 0.5),
                q3: quantile(&col, 0.75),
            }
        })
        .collect())
}

pub const GRID_HEADER: &str = "x0,y0,heading,cost_policy,cost_ics,solver_status";

/// `eval_grid.csv` contents. The status column reads `policy/ics`.
pub fn grid_csv(policy: &EvalResult, ics: &EvalResult) -> Result<String> {
    if policy.points.len() != ics.points.len() {
        return Err(Error::InvalidArgument("evaluations cover different grids".into()));
    }
    let mut s = format!("{GRID_HEADER}\n");
    for (p, b) in policy.points.iter().zip(&ics.points) {
        let status = |r: &PointResult| {
            if r.failed {
                format!("failed:{}", r.status.as_str())
            } else {
                r.status.as_str().to_string()
            }
        };
        writeln!(
            s,
            "{},{},{},{},{},{}/{}",
            p.point.position[0],
            p.point.position[1],
            p.point.heading,
            p.cost,
            b.cost,
            status(p),
            status(b)
        )
        .unwrap();
    }
    Ok(s)
}

/// `curve.csv` contents from `(episodes_done, mean_cost)` pairs.
pub fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("episodes_done,mean_cost\n");
    for (e, c) in curve {
        writeln!(s, "{e},{c}").unwrap();
    }
    s
}

/// Settings of the critic activation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStudy {
    pub activations: Vec<Activation>,
    /// Update counts at which heatmaps and held-out losses are recorded.
    pub checkpoints: Vec<usize>,
    pub k_s: f64,
    /// Episodes in the shared training set.
    pub dataset_episodes: usize,
    pub held_out_episodes: usize,
    /// TD lookahead for the dataset; at or above the horizon every target is
    /// a full Monte-Carlo cost-to-go.
    pub lookahead: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    /// Hidden layers of every compared critic.
    pub hidden: Vec<usize>,
    pub omega_first: f64,
    pub omega_hidden: f64,
    pub ddp: DdpSettings,
    /// Heatmap sample spacing over the task's position bounds, at `t = 0`.
    pub heatmap_mesh: f64,
}

impl Default for ActivationStudy {
    fn default() -> Self {
        let critic = NetworkArch::critic_default();
        ActivationStudy {
            activations: vec![Activation::Relu, Activation::Elu, Activation::Sine],
            checkpoints: vec![1000, 5000, 10000],
            k_s: 1e3,
            dataset_episodes: 200,
            held_out_episodes: 40,
            lookahead: usize::MAX,
            batch_size: 64,
            lr: 5e-4,
            tau: 0.005,
            hidden: critic.hidden,
            omega_first: critic.omega_first,
            omega_hidden: critic.omega_hidden,
            ddp: DdpSettings::default(),
            heatmap_mesh: 1.0,
        }
    }
}

/// Offset of held-out episode indices, far past any training set.
pub const HELD_OUT_FIRST_EPISODE: usize = 1 << 40;

/// Transitions of `episodes` solver episodes with initial-condition warm
/// starts, using episode indices `first..first + episodes`.
pub fn transition_dataset(
    task: &TaskModel,
    first: usize,
    episodes: usize,
    lookahead: usize,
    ddp: &DdpSettings,
    seed: u64,
) -> Result<Vec<Transition>> {
    let cfg = TrainerConfig {
        warm_start_switch: Some(usize::MAX),
        ddp: ddp.clone(),
        ..TrainerConfig::default()
    };
    // The actor is never consulted on the initial-condition branch.
    let unused = NetworkArch {
        hidden: vec![],
        ..NetworkArch::actor_default()
    }
    .build(task.n() + 1, task.m(), &mut substream(seed, Stream::Misc, 0));
    let episodes: Vec<_> = (0..episodes)
        .into_par_iter()
        .map(|i| trainer::generate_episode(task, &unused, &cfg, seed, first + i))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for ep in &episodes {
        out.extend(trajectory_transitions(&ep.trajectory, lookahead)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCheckpoint {
    pub updates: usize,
    /// Held-out mean of `|logsym(V_x) - logsym(dV/dx)|^2`.
    pub held_out_grad_loss: f64,
    pub held_out_value_loss: f64,
    /// `(x, y, t, V)` samples.
    pub heatmap: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRun {
    pub activation: Activation,
    pub checkpoints: Vec<StudyCheckpoint>,
}

fn heatmap(task: &TaskModel, critic: &MlpNetwork, mesh: f64) -> Result<Vec<[f64; 4]>> {
    let xs = axis([task.state_low[0], task.state_high[0]], mesh);
    let ys = axis([task.state_low[1], task.state_high[1]], mesh);
    let mut inputs = DMatrix::zeros(task.n() + 1, xs.len() * ys.len());
    let mut coords = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            let mut state = vec![0.0; task.n()];
            state[0] = x;
            state[1] = y;
            inputs.set_column(coords.len(), &DVector::from_vec(task.normalize_input(&state, 0.0)));
            coords.push((x, y));
        }
    }
    let v = critic.forward_batch(&inputs)?;
    Ok(coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| [x, y, 0.0, v[(0, i)]])
        .collect())
}

/// Trains one critic per activation on the same transitions with the same
/// minibatch sequence; records held-out losses and value heatmaps at each
/// checkpoint. The actor plays no part.
pub fn compare_activations(task: &TaskModel, study: &ActivationStudy, seed: u64) -> Result<Vec<ActivationRun>> {
    if study.checkpoints.is_empty() || study.activations.is_empty() {
        return Err(Error::InvalidArgument("activation study needs checkpoints and activations".into()));
    }
    let lookahead = study.lookahead.max(1);
    let train = transition_dataset(task, 0, study.dataset_episodes, lookahead, &study.ddp, seed)?;
    let held_out = transition_dataset(
        task,
        HELD_OUT_FIRST_EPISODE,
        study.held_out_episodes,
        usize::MAX,
        &study.ddp,
        seed,
    )?;
    if train.len() < study.batch_size || held_out.is_empty() {
        return Err(Error::InvalidArgument("activation study dataset is too small".into()));
    }
    let scale = task.input_scale();
    let max_updates = *study.checkpoints.iter().max().unwrap();

    study
        .activations
        .iter()
        .map(|&activation| {
            let arch = NetworkArch {
                hidden: study.hidden.clone(),
                activation,
                omega_first: study.omega_first,
                omega_hidden: study.omega_hidden,
            };
            let mut critic = arch.build(task.n() + 1, 1, &mut substream(seed, Stream::CriticInit, 0));
            let mut target = critic.clone();
            let mut opt = AdamState::new(&critic, study.lr);
            let mut rng = substream(seed, Stream::Update, 0);
            let held_refs: Vec<&Transition> = held_out.iter().collect();
            let mut checkpoints = Vec::new();
            for k in 1..=max_updates {
                let batch: Vec<&Transition> = (0..study.batch_size)
                    .map(|_| &train[rng.gen_range(0..train.len())])
                    .collect();
                let cb = critic_batch(task, &target, &batch)?;
                let loss = sobolev_loss_and_param_grad(&critic, &cb, study.k_s, &scale)?;
                if !loss.loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "{} critic diverged at update {k}",
                        activation.name()
                    )));
                }
                adam_step(&mut critic, &loss.grads, &mut opt)?;
                crate::net::polyak_update(&mut target, &critic, study.tau)?;
                if study.checkpoints.contains(&k) {
                    let hb = critic_batch(task, &target, &held_refs)?;
                    let h = sobolev_loss_and_param_grad(&critic, &hb, 0.0, &scale)?;
                    checkpoints.push(StudyCheckpoint {
                        updates: k,
                        held_out_grad_loss: h.grad_loss,
                        held_out_value_loss: h.value_loss,
                        heatmap: heatmap(task, &critic, study.heatmap_mesh)?,
                    });
                }
            }
            Ok(ActivationRun {
                activation,
                checkpoints,
            })
        })
        .collect()
}

/// Writes `heatmap_<activation>_<updates>.csv` for every run and checkpoint.
pub fn write_heatmaps(dir: &Path, runs: &[ActivationRun]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for run in runs {
        for c in &run.checkpoints {
            let mut s = String::from("x,y,t,V\n");
            for [x, y, t, v] in &c.heatmap {
                writeln!(s, "{x},{y},{t},{v}").unwrap();
            }
            let path = dir.join(format!("heatmap_{}_{}.csv", run.activation.name(), c.updates));
            fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn short(kind: TaskKind, horizon: usize) -> TaskModel {
        let mut t = TaskModel::new(kind);
        t.horizon = horizon;
        t
    }

    fn small_grid() -> EvalGrid {
        EvalGrid {
            x_range: [0.0, 10.0],
            y_range: [-5.0, 5.0],
            mesh: 5.0,
            heading_seed: 3,
        }
    }

    fn actor(task: &TaskModel, seed: u64) -> MlpNetwork {
        NetworkArch {
            hidden: vec![8],
            ..NetworkArch::actor_default()
        }
        .build(task.n() + 1, task.m(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn default_grid_has_176_points() {
        let task = TaskModel::new(TaskKind::DoubleIntegrator);
        let pts = EvalGrid::default().points(&task).unwrap();
        assert_eq!(pts.len(), 176);
        assert_eq!(pts[0].state, vec![0.0, -5.0, 0.0, 0.0]);
        assert_eq!(pts[175].position, [15.0, 5.0]);
    }

    #[test]
    fn dubins_headings_are_seeded() {
        let task = TaskModel::new(TaskKind::Dubins);
        let a = EvalGrid::default().points(&task).unwrap();
        let b = EvalGrid::default().points(&task).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.state[2] == p.heading && p.heading.abs() <= std::f64::consts::PI));
        assert!(a[0].heading != a[1].heading);
        let other = EvalGrid {
            heading_seed: 1,
            ..EvalGrid::default()
        };
        assert_ne!(other.points(&task).unwrap()[0].heading, a[0].heading);
    }

    #[test]
    fn zero_policy_matches_baseline() {
        let task = short(TaskKind::DoubleIntegrator, 30);
        let mut zero = actor(&task, 1);
        zero.set_params(&vec![0.0; zero.param_count()]).unwrap();
        let s = DdpSettings::default();
        let p = evaluate_policy(&task, &zero, &small_grid(), &s).unwrap();
        let b = baseline_ics(&task, &small_grid(), &s).unwrap();
        assert_eq!(p, b);
        assert_eq!(b, baseline_ics(&task, &small_grid(), &s).unwrap());
        assert_eq!(p.points.len(), 9);
    }

    #[test]
    fn single_point_equals_direct_solve() {
        let task = short(TaskKind::SingleIntegrator, 25);
        let grid = EvalGrid {
            x_range: [6.0, 6.0],
            y_range: [1.0, 1.0],
            ..small_grid()
        };
        let s = DdpSettings::default();
        let r = baseline_ics(&task, &grid, &s).unwrap();
        assert_eq!(r.points.len(), 1);
        let direct = ddp::solve(&task, &[6.0, 1.0], 25, &ddp::zero_controls(&task, 25), &s).unwrap();
        assert_eq!(r.mean_cost, direct.trajectory.total_cost);
    }

    #[test]
    fn convex_cost_makes_warm_start_irrelevant() {
        let mut task = short(TaskKind::DoubleIntegrator, 30);
        task.cost.w_ob = 0.0;
        task.cost.w_p = 0.0;
        task.cost.w_d = 0.05;
        let s = DdpSettings {
            cost_tol: 1e-12,
            ..DdpSettings::default()
        };
        let p = evaluate_policy(&task, &actor(&task, 7), &small_grid(), &s).unwrap();
        let b = baseline_ics(&task, &small_grid(), &s).unwrap();
        for (x, y) in p.points.iter().zip(&b.points) {
            assert!(!x.failed && !y.failed);
            assert!((x.cost - y.cost).abs() <= 1e-6 * y.cost.abs().max(1.0), "{} vs {}", x.cost, y.cost);
        }
    }

    #[test]
    fn quartiles_of_five_runs() {
        let curves: Vec<Vec<f64>> = [3.0, 1.0, 5.0, 2.0, 4.0].iter().map(|&v| vec![v, 7.0]).collect();
        let q = aggregate_runs(&curves).unwrap();
        assert_eq!(q[0], Quartiles { q1: 2.0, median: 3.0, q3: 4.0 });
        assert_eq!(q[1], Quartiles { q1: 7.0, median: 7.0, q3: 7.0 });
        assert!(aggregate_runs(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn quartiles_match_independent_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for runs in 1..9 {
            let curves: Vec<Vec<f64>> = (0..runs)
                .map(|_| (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect())
                .collect();
            let q = aggregate_runs(&curves).unwrap();
            for i in 0..4 {
                let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
                // Insertion sort and explicit weights, kept apart from `quantile`.
                for a in 1..col.len() {
                    let mut b = a;
                    while b > 0 && col[b - 1] > col[b] {
                        col.swap(b - 1, b);
                        b -= 1;
                    }
                }
                let at = |p: f64| {
                    let h = (col.len() as f64 - 1.0) * p;
                    let j = h as usize;
                    let w = h - j as f64;
                    if j + 1 < col.len() {
                        (1.0 - w) * col[j] + w * col[j + 1]
                    } else {
                        col[j]
                    }
                };
                assert!((q[i].q1 - at(0.25)).abs() < 1e-12);
                assert!((q[i].median - at(0.5)).abs() < 1e-12);
                assert!((q[i].q3 - at(0.75)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_layouts() {
        let task = short(TaskKind::SingleIntegrator, 10);
        let b = baseline_ics(&task, &small_grid(), &DdpSettings::default()).unwrap();
        let csv = grid_csv(&b, &b).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], GRID_HEADER);
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("0,-5,0,"));
        assert_eq!(curve_csv(&[(50, 1.5), (100, -2.0)]), "episodes_done,mean_cost\n50,1.5\n100,-2\n");
    }

    fn tiny_study() -> ActivationStudy {
        ActivationStudy {
            checkpoints: vec![2, 5],
            dataset_episodes: 4,
            held_out_episodes: 2,
            batch_size: 8,
            hidden: vec![8],
            heatmap_mesh: 10.0,
            ..ActivationStudy::default()
        }
    }

    #[test]
    fn activation_study_is_reproducible() {
        let task = short(TaskKind::SingleIntegrator, 20);
        let a = compare_activations(&task, &tiny_study(), 4).unwrap();
        let b = compare_activations(&task, &tiny_study(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].activation, Activation::Sine);
        assert_eq!(a[0].checkpoints.iter().map(|c| c.updates).collect::<Vec<_>>(), vec![2, 5]);

        let dir = tempfile::tempdir().unwrap();
        write_heatmaps(dir.path(), &a).unwrap();
        let text = fs::read_to_string(dir.path().join("heatmap_sine_5.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,t,V");
        assert_eq!(lines.len(), 1 + 16);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    }
}
