//! The training loop: solver episodes from random initial states fill a replay
//! buffer, then the critic (value plus gradient matching) and actor are
//! updated in cycles of growing length.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::buffer::{ReplayBuffer, Transition, DEFAULT_CAPACITY};
use crate::ddp::{self, DdpSettings, SolveStatus, Trajectory};
use crate::error::{Error, Result};
use crate::net::{
    actor_control, actor_loss_and_param_grad, adam_step, checkpoint, polyak_update, sobolev_loss_and_param_grad,
    AdamState, MlpNetwork, NetworkArch, SobolevBatch,
};
use crate::rng::{substream, Stream};
use crate::task::{AugmentedState, TaskModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Total solver episodes `M`.
    pub episodes: usize,
    /// TD lookahead `L`.
    pub lookahead: usize,
    /// Minibatch size `S`.
    pub batch_size: usize,
    /// Episodes between update cycles.
    pub episodes_per_update: usize,
    /// Episodes before this index use the initial-condition warm start;
    /// `None` means `episodes_per_update`.
    pub warm_start_switch: Option<usize>,
    /// Updates per cycle; the last entry repeats.
    pub k_list: Vec<usize>,
    /// Weight of the gradient-matching term.
    pub k_s: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    /// Stop once this many network updates have been made.
    pub update_budget: usize,
    pub buffer_capacity: usize,
    pub critic_arch: NetworkArch,
    pub actor_arch: NetworkArch,
    pub ddp: DdpSettings,
    /// Redraws allowed per episode when the solver fails.
    pub max_resamples: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episodes: 10_000,
            lookahead: 50,
            batch_size: 64,
            episodes_per_update: 200,
            warm_start_switch: None,
            k_list: vec![1000, 2000, 4000, 8000, 15000],
            k_s: 1e3,
            tau: 0.005,
            critic_lr: 5e-4,
            actor_lr: 1e-4,
            update_budget: 50_000,
            buffer_capacity: DEFAULT_CAPACITY,
            critic_arch: NetworkArch::critic_default(),
            actor_arch: NetworkArch::actor_default(),
            ddp: DdpSettings::default(),
            max_resamples: 20,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.lookahead < 1 {
            return bad("lookahead L must be at least 1");
        }
        if self.batch_size == 0 || self.episodes_per_update == 0 {
            return bad("batch size and episodes per update must be positive");
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("K list must be nonempty with positive entries");
        }
        if !(self.k_s >= 0.0) {
            return bad("k_s must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.critic_lr > 0.0 && self.actor_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer capacity must be positive");
        }
        self.ddp.validate()
    }

    pub fn switch_index(&self) -> usize {
        self.warm_start_switch.unwrap_or(self.episodes_per_update)
    }

    /// Updates scheduled for cycle `c`.
    pub fn updates_in_cycle(&self, c: usize) -> usize {
        self.k_list[c.min(self.k_list.len() - 1)]
    }
}

/// Live networks with their optimizer state.
#[derive(Debug, Clone)]
pub struct Networks {
    pub actor: MlpNetwork,
    pub critic: MlpNetwork,
    pub target_critic: MlpNetwork,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Networks {
    pub fn init(task: &TaskModel, cfg: &TrainerConfig, seed: u64) -> Self {
        let d_in = task.n() + 1;
        let actor = cfg.actor_arch.build(d_in, task.m(), &mut substream(seed, Stream::ActorInit, 0));
        let critic = cfg.critic_arch.build(d_in, 1, &mut substream(seed, Stream::CriticInit, 0));
        Networks {
            actor_opt: AdamState::new(&actor, cfg.actor_lr),
            critic_opt: AdamState::new(&critic, cfg.critic_lr),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// All states at the initial state, all controls zero.
    InitialCondition,
    PolicyRollout,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub index: usize,
    pub warm_start: WarmStart,
    pub trajectory: Trajectory,
    pub status: SolveStatus,
    /// Initial states redrawn after solver failures.
    pub discarded: usize,
}

/// Uniform initial augmented state: state inside the task bounds (Dubins
/// heading in `[-pi, pi)`), start time in `0..T`.
pub fn sample_initial_state<R: Rng>(task: &TaskModel, rng: &mut R) -> AugmentedState {
    let x = task
        .state_low
        .iter()
        .zip(&task.state_high)
        .map(|(lo, hi)| rng.gen_range(*lo..*hi))
        .collect();
    AugmentedState {
        x,
        t: rng.gen_range(0..task.horizon),
    }
}

/// Controls of the policy rolled out from `start` to the end of the horizon.
pub fn policy_rollout(task: &TaskModel, actor: &MlpNetwork, start: &AugmentedState) -> Result<Vec<DVector<f64>>> {
    let mut x = start.x.clone();
    let mut controls = Vec::with_capacity(task.horizon.saturating_sub(start.t));
    for t in start.t..task.horizon {
        let u = actor_control(actor, task, &x, t)?;
        x = task.step(&x, u.as_slice())?.as_slice().to_vec();
        controls.push(u);
    }
    Ok(controls)
}

/// Solves one episode from a random initial state, warm-started from rest or
/// from the actor's rollout. Failed solves are redrawn from the same stream.
pub fn generate_episode(
    task: &TaskModel,
    actor: &MlpNetwork,
    cfg: &TrainerConfig,
    seed: u64,
    index: usize,
) -> Result<Episode> {
    let mut rng = substream(seed, Stream::Episode, index as u64);
    let warm_start = if index < cfg.switch_index() {
        WarmStart::InitialCondition
    } else {
        WarmStart::PolicyRollout
    };
    for discarded in 0..=cfg.max_resamples {
        let start = sample_initial_state(task, &mut rng);
        let horizon = task.horizon - start.t;
        let warm = match warm_start {
            WarmStart::InitialCondition => ddp::zero_controls(task, horizon),
            WarmStart::PolicyRollout => policy_rollout(task, actor, &start)?,
        };
        let solution = match ddp::solve(task, &start.x, horizon, &warm, &cfg.ddp) {
            Ok(s) => s,
            Err(Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        };
        if solution.status.is_failure() {
            continue;
        }
        let mut trajectory = solution.trajectory;
        trajectory.start_time = start.t;
        return Ok(Episode {
            index,
            warm_start,
            trajectory,
            status: solution.status,
            discarded,
        });
    }
    Err(Error::Numerical(format!(
        "episode {index}: solver failed on {} consecutive initial states",
        cfg.max_resamples + 1
    )))
}

/// Bootstrapped critic targets: `V` for terminal transitions, otherwise
/// `V + V'(x_next)` with the target critic `V'`.
pub fn td_targets(task: &TaskModel, target_critic: &MlpNetwork, batch: &[&Transition]) -> Result<Vec<f64>> {
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    let mut out: Vec<f64> = batch.iter().map(|t| t.value).collect();
    if open.is_empty() {
        return Ok(out);
    }
    let mut inputs = DMatrix::zeros(task.n() + 1, open.len());
    for (c, &i) in open.iter().enumerate() {
        let nx = &batch[i].next;
        inputs.set_column(c, &DVector::from_vec(task.normalize_input(&nx.x, nx.t as f64)));
    }
    let v = target_critic.forward_batch(&inputs)?;
    for (c, &i) in open.iter().enumerate() {
        out[i] += v[(0, c)];
    }
    Ok(out)
}

/// Critic minibatch with bootstrapped targets.
pub fn critic_batch(task: &TaskModel, target_critic: &MlpNetwork, batch: &[&Transition]) -> Result<SobolevBatch> {
    let n = task.n();
    let mut inputs = DMatrix::zeros(n + 1, batch.len());
    let mut grads = DMatrix::zeros(n, batch.len());
    for (i, tr) in batch.iter().enumerate() {
        inputs.set_column(i, &DVector::from_vec(task.normalize_input(&tr.state.x, tr.state.t as f64)));
        for j in 0..n {
            grads[(j, i)] = tr.value_grad[j];
        }
    }
    Ok(SobolevBatch {
        inputs,
        value_targets: td_targets(task, target_critic, batch)?,
        grad_targets: grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub cycle: usize,
    /// Global update counter, starting at 0.
    pub update_idx: usize,
    pub critic_value_loss: f64,
    pub critic_grad_loss: f64,
    /// `NaN` when the batch held no state with a control.
    pub actor_loss: f64,
    pub buffer_size: usize,
    pub episodes_done: usize,
}

/// One critic step, one actor step and one target-critic average per
/// iteration, `count` times.
#[allow(clippy::too_many_arguments)]
pub fn update_cycle(
    task: &TaskModel,
    nets: &mut Networks,
    buffer: &ReplayBuffer,
    cfg: &TrainerConfig,
    cycle: usize,
    count: usize,
    first_update: usize,
    episodes_done: usize,
    seed: u64,
) -> Result<Vec<UpdateMetrics>> {
    let mut rng = substream(seed, Stream::Update, cycle as u64);
    let scale = task.input_scale();
    let mut metrics = Vec::with_capacity(count);
    for k in 0..count {
        let batch = buffer.sample(cfg.batch_size, &mut rng)?;
        let cb = critic_batch(task, &nets.target_critic, &batch)?;
        let critic = sobolev_loss_and_param_grad(&nets.critic, &cb, cfg.k_s, &scale)?;
        if !critic.loss.is_finite() || !critic.grads.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite critic loss at update {}: value {}, gradient {}",
                first_update + k,
                critic.value_loss,
                critic.grad_loss
            )));
        }
        adam_step(&mut nets.critic, &critic.grads, &mut nets.critic_opt)?;

        let states: Vec<AugmentedState> = batch
            .iter()
            .filter(|t| t.state.t < task.horizon)
            .map(|t| t.state.clone())
            .collect();
        let actor_loss = if states.is_empty() {
            f64::NAN
        } else {
            let a = actor_loss_and_param_grad(&nets.actor, &nets.critic, task, &states)?;
            if !a.loss.is_finite() || !a.grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite actor loss at update {}",
                    first_update + k
                )));
            }
            adam_step(&mut nets.actor, &a.grads, &mut nets.actor_opt)?;
            a.loss
        };
        polyak_update(&mut nets.target_critic, &nets.critic, cfg.tau)?;
        if !nets.critic.is_finite() || !nets.actor.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite parameters after update {}",
                first_update + k
            )));
        }
        metrics.push(UpdateMetrics {
            cycle,
            update_idx: first_update + k,
            critic_value_loss: critic.value_loss,
            critic_grad_loss: critic.grad_loss,
            actor_loss,
            buffer_size: buffer.len(),
            episodes_done,
        });
    }
    Ok(metrics)
}

pub const METRICS_HEADER: &str =
    "run_seed,cycle,update_idx,critic_value_loss,critic_grad_loss,actor_loss,buffer_size,episodes_done";

pub fn metrics_row(seed: u64, m: &UpdateMetrics) -> String {
    format!(
        "{seed},{},{},{},{},{},{},{}",
        m.cycle, m.update_idx, m.critic_value_loss, m.critic_grad_loss, m.actor_loss, m.buffer_size, m.episodes_done
    )
}

/// State handed to the observer after each cycle.
pub struct CycleReport<'a> {
    pub cycle: usize,
    pub episodes_done: usize,
    pub updates_done: usize,
    /// Episodes generated in this cycle, in index order.
    pub episodes: &'a [Episode],
    pub metrics: &'a [UpdateMetrics],
    pub networks: &'a Networks,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub networks: Networks,
    pub metrics: Vec<UpdateMetrics>,
    pub episodes_done: usize,
    pub updates_done: usize,
    pub cycles: usize,
    pub discarded_episodes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Worker threads for episode generation; 0 means one per core.
    pub workers: usize,
    /// Where metrics and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

/// Runs training for one seed until `M` episodes or the update budget.
pub fn train(
    task: &TaskModel,
    cfg: &TrainerConfig,
    seed: u64,
    opts: &TrainOptions,
    mut observer: impl FnMut(&CycleReport) -> Result<()>,
) -> Result<TrainOutcome> {
    task.validate()?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;

    let mut nets = Networks::init(task, cfg, seed);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut outcome_metrics = Vec::new();
    let mut episodes_done = 0;
    let mut updates_done = 0;
    let mut discarded = 0;
    let mut cycle = 0;

    let mut sink = match &opts.out_dir {
        Some(dir) => Some(RunFiles::create(dir)?),
        None => None,
    };
    if let Some(s) = &mut sink {
        s.write_networks(&nets, None)?;
    }

    while episodes_done < cfg.episodes && updates_done < cfg.update_budget {
        let end = (episodes_done + cfg.episodes_per_update).min(cfg.episodes);
        let actor = &nets.actor;
        let episodes: Vec<Episode> = pool.install(|| {
            (episodes_done..end)
                .into_par_iter()
                .map(|i| generate_episode(task, actor, cfg, seed, i))
                .collect::<Result<Vec<_>>>()
        })?;
        for ep in &episodes {
            buffer.insert_trajectory(&ep.trajectory, cfg.lookahead)?;
            discarded += ep.discarded;
        }
        episodes_done = end;

        let count = cfg.updates_in_cycle(cycle).min(cfg.update_budget - updates_done);
        let metrics = if buffer.len() >= cfg.batch_size {
            match update_cycle(task, &mut nets, &buffer, cfg, cycle, count, updates_done, episodes_done, seed) {
                Ok(m) => m,
                Err(e) => {
                    if let Some(s) = &sink {
                        s.write_diagnostic(&nets, &buffer);
                    }
                    return Err(e);
                }
            }
        } else {
            Vec::new()
        };
        updates_done += metrics.len();
        if let Some(s) = &mut sink {
            s.append_metrics(seed, &metrics)?;
            s.write_networks(&nets, Some(cycle))?;
        }
        observer(&CycleReport {
            cycle,
            episodes_done,
            updates_done,
            episodes: &episodes,
            metrics: &metrics,
            networks: &nets,
        })?;
        outcome_metrics.extend(metrics);
        cycle += 1;
    }

    Ok(TrainOutcome {
        networks: nets,
        metrics: outcome_metrics,
        episodes_done,
        updates_done,
        cycles: cycle,
        discarded_episodes: discarded,
    })
}

/// Output layout of one run: `metrics.csv`, `actor.csl`, `critic.csl`,
/// `target_critic.csl`, and `checkpoints/actor_cycleNNNN.csl` per cycle.
struct RunFiles {
    dir: PathBuf,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let ckpt = dir.join("checkpoints");
        fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let metrics_path = dir.join("metrics.csv");
        let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        Ok(RunFiles {
            dir: dir.to_path_buf(),
            metrics,
            metrics_path,
        })
    }

    fn append_metrics(&mut self, seed: u64, rows: &[UpdateMetrics]) -> Result<()> {
        let path = &self.metrics_path;
        for m in rows {
            writeln!(self.metrics, "{}", metrics_row(seed, m)).map_err(|e| Error::io(path, e))?;
        }
        self.metrics.flush().map_err(|e| Error::io(path, e))
    }

    fn write_networks(&self, nets: &Networks, cycle: Option<usize>) -> Result<()> {
        checkpoint::save(&nets.actor, &self.dir.join("actor.csl"))?;
        checkpoint::save(&nets.critic, &self.dir.join("critic.csl"))?;
        checkpoint::save(&nets.target_critic, &self.dir.join("target_critic.csl"))?;
        if let Some(c) = cycle {
            checkpoint::save(&nets.actor, &self.dir.join(format!("checkpoints/actor_cycle{c:04}.csl")))?;
            checkpoint::save(&nets.critic, &self.dir.join(format!("checkpoints/critic_cycle{c:04}.csl")))?;
        }
        Ok(())
    }

    /// Best effort: the run is already failing.
    fn write_diagnostic(&self, nets: &Networks, buffer: &ReplayBuffer) {
        let dir = self.dir.join("diagnostic");
        if fs::create_dir_all(&dir).is_ok() {
            let _ = checkpoint::save(&nets.actor, &dir.join("actor.csl"));
            let _ = checkpoint::save(&nets.critic, &dir.join("critic.csl"));
            let _ = buffer.save(&dir.join("buffer.bin"));
        }
    }
}
