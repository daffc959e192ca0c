//! Command-line driver. Each subcommand returns a process exit code:
//! 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::ddp;
use crate::error::{Error, Result};
use crate::eval::{self, baseline_ics, evaluate_policy, write_heatmaps};
use crate::gradcheck::{self, GradcheckOptions};
use crate::net::checkpoint;
use crate::trainer::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "cacto-sl", version, about = "DDP-guided actor-critic training with a Sobolev-trained critic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run with this single seed instead of `run.seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Output directory (overrides `run.out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train actor and critic for every configured seed.
    Train(Common),
    /// Evaluate an actor checkpoint, or every cycle checkpoint of a run
    /// directory, against the initial-condition warm start.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Actor checkpoint file or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference checks of all analytic derivatives.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random probes per suite.
        #[arg(long, default_value_t = 50)]
        probes: usize,
        #[arg(long, hide = true)]
        corrupt_jacobian: bool,
    },
    /// Train critics with different activations on one fixed dataset.
    CompareActivations(Common),
    /// Solve one problem and report the iteration trace.
    DdpSolve {
        #[command(flatten)]
        common: Common,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// Steps (default: the task horizon).
        #[arg(long)]
        horizon: Option<usize>,
        /// Write the per-iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

/// Parses arguments and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Eval { common, checkpoint } => cmd_eval(&common, &checkpoint),
        Command::Gradcheck {
            common,
            probes,
            corrupt_jacobian,
        } => cmd_gradcheck(&common, probes, corrupt_jacobian),
        Command::CompareActivations(c) => cmd_compare_activations(&c),
        Command::DdpSolve {
            common,
            x0,
            horizon,
            trace,
        } => cmd_ddp_solve(&common, &x0, horizon, trace.as_deref()),
    }
}

/// Loads the configuration and applies command-line overrides.
fn resolve(common: &Common) -> Result<RunConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::config(None, "--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the resolved configuration next to the outputs.
fn echo_config(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("config.resolved"), &cfg.to_text())
}

/// Prints the resolved configuration when `--dry-run` is set.
fn dry_run(common: &Common, cfg: &RunConfig) -> bool {
    if common.dry_run {
        print!("{}", cfg.to_text());
    }
    common.dry_run
}

fn cmd_train(common: &Common) -> Result<i32> {
    let cfg = resolve(common)?;
    if dry_run(common, &cfg) {
        return Ok(0);
    }
    echo_config(&cfg)?;
    for &seed in &cfg.seeds {
        let dir = cfg.out_dir.join(format!("seed_{seed}"));
        let opts = TrainOptions {
            workers: cfg.workers,
            out_dir: Some(dir.clone()),
        };
        let out = train(&cfg.task, &cfg.trainer, seed, &opts, |r| {
            if let Some(last) = r.metrics.last() {
                println!(
                    "seed {seed} cycle {} episodes {} updates {} critic {:.4e}/{:.4e} actor {:.4e}",
                    r.cycle,
                    r.episodes_done,
                    r.updates_done,
                    last.critic_value_loss,
                    last.critic_grad_loss,
                    last.actor_loss
                );
            }
            Ok(())
        })?;
        println!(
            "seed {seed}: {} episodes ({} redrawn after solver failures), {} updates -> {}",
            out.episodes_done,
            out.discarded_episodes,
            out.updates_done,
            dir.display()
        );
    }
    Ok(0)
}

/// Cycle checkpoints `checkpoints/actor_cycleNNNN.csl` of a run directory,
/// in cycle order.
pub fn cycle_checkpoints(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = run_dir.join("checkpoints");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(c) = name
            .strip_prefix("actor_cycle")
            .and_then(|r| r.strip_suffix(".csl"))
            .and_then(|d| d.parse::<usize>().ok())
        {
            out.push((c, path));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_eval(common: &Common, target: &Path) -> Result<i32> {
    let cfg = resolve(common)?;
    if dry_run(common, &cfg) {
        return Ok(0);
    }
    let settings = &cfg.trainer.ddp;
    let task = &cfg.task;
    let pool = pool(cfg.workers)?;
    let (actor_path, cycles) = if target.is_dir() {
        (target.join("actor.csl"), cycle_checkpoints(target)?)
    } else {
        (target.to_path_buf(), Vec::new())
    };
    let actor = checkpoint::load(&actor_path)?;
    if actor.input_dim() != task.n() + 1 || actor.output_dim() != task.m() {
        return Err(Error::Checkpoint {
            path: actor_path,
            msg: format!(
                "network maps {} -> {}, task needs {} -> {}",
                actor.input_dim(),
                actor.output_dim(),
                task.n() + 1,
                task.m()
            ),
        });
    }
    echo_config(&cfg)?;
    let (policy, ics) = pool.install(|| -> Result<_> {
        Ok((
            evaluate_policy(task, &actor, &cfg.eval, settings)?,
            baseline_ics(task, &cfg.eval, settings)?,
        ))
    })?;
    write(&cfg.out_dir.join("eval_grid.csv"), &eval::grid_csv(&policy, &ics)?)?;
    println!(
        "mean cost: policy warm start {:.6}, initial-condition warm start {:.6} over {} points",
        policy.mean_cost,
        ics.mean_cost,
        policy.points.len()
    );

    if !cycles.is_empty() {
        let tr = &cfg.trainer;
        let mut curve = Vec::new();
        for (c, path) in &cycles {
            let actor = checkpoint::load(path)?;
            let r = pool.install(|| evaluate_policy(task, &actor, &cfg.eval, settings))?;
            let episodes = ((c + 1) * tr.episodes_per_update).min(tr.episodes);
            println!("cycle {c}: episodes {episodes}, mean cost {:.6}", r.mean_cost);
            curve.push((episodes, r.mean_cost));
        }
        write(&cfg.out_dir.join("curve.csv"), &eval::curve_csv(&curve))?;
    }
    Ok(0)
}

fn cmd_gradcheck(common: &Common, probes: usize, corrupt_jacobian: bool) -> Result<i32> {
    let seed = common.seed.unwrap_or(0);
    let opts = GradcheckOptions {
        seed,
        probes: probes.max(1),
        corrupt_jacobian,
        ..GradcheckOptions::default()
    };
    if common.dry_run {
        println!("{opts:?}");
        return Ok(0);
    }
    let reports = gradcheck::run_all(&opts)?;
    let mut failed = 0;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        let _ = writeln!(
            stdout,
            "{:<32} max rel error {:>10.3e}  (tol {:.0e}, {} comparisons)  {verdict}",
            r.name, r.max_rel_error, r.tolerance, r.comparisons
        );
    }
    if failed > 0 {
        let _ = writeln!(stdout, "{failed} of {} suites failed", reports.len());
        return Ok(2);
    }
    Ok(0)
}

fn cmd_compare_activations(common: &Common) -> Result<i32> {
    let cfg = resolve(common)?;
    if dry_run(common, &cfg) {
        return Ok(0);
    }
    echo_config(&cfg)?;
    let pool = pool(cfg.workers)?;
    let mut summary = String::from("seed,activation,updates,held_out_grad_loss,held_out_value_loss\n");
    for &seed in &cfg.seeds {
        let runs = pool.install(|| eval::compare_activations(&cfg.task, &cfg.study, seed))?;
        let dir = cfg.out_dir.join(format!("seed_{seed}"));
        write_heatmaps(&dir, &runs)?;
        for run in &runs {
            for c in &run.checkpoints {
                summary.push_str(&format!(
                    "{seed},{},{},{},{}\n",
                    run.activation.name(),
                    c.updates,
                    c.held_out_grad_loss,
                    c.held_out_value_loss
                ));
                println!(
                    "seed {seed} {:<6} {:>6} updates: held-out gradient loss {:.4e}, value loss {:.4e}",
                    run.activation.name(),
                    c.updates,
                    c.held_out_grad_loss,
                    c.held_out_value_loss
                );
            }
        }
    }
    write(&cfg.out_dir.join("held_out.csv"), &summary)?;
    Ok(0)
}

fn cmd_ddp_solve(common: &Common, x0: &[f64], horizon: Option<usize>, trace: Option<&Path>) -> Result<i32> {
    let cfg = resolve(common)?;
    if dry_run(common, &cfg) {
        return Ok(0);
    }
    let task = &cfg.task;
    if x0.len() != task.n() {
        return Err(Error::InvalidArgument(format!(
            "--x0 needs {} values for {}, got {}",
            task.n(),
            task.kind.name(),
            x0.len()
        )));
    }
    let horizon = horizon.unwrap_or(task.horizon);
    let sol = ddp::solve(task, x0, horizon, &ddp::zero_controls(task, horizon), &cfg.trainer.ddp)?;
    if let Some(path) = trace {
        let mut s = String::from("iteration,cost,regularization,step\n");
        for r in &sol.trace {
            s.push_str(&format!("{},{},{},{}\n", r.iteration, r.cost, r.regularization, r.step));
        }
        write(path, &s)?;
    }
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        write(&dir.join("trajectory.csv"), &trajectory_csv(&sol.trajectory))?;
    }
    let tr = &sol.trajectory;
    let fmt = |v: &DVector<f64>| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
    println!(
        "status {}, cost {:.9}, {} accepted iterations",
        sol.status.as_str(),
        tr.total_cost,
        sol.iterations
    );
    println!("final state [{}]", fmt(&tr.states[horizon]));
    println!("V_x at t=0 [{}]", fmt(&tr.value_grads[0]));
    Ok(if sol.status.is_failure() { 2 } else { 0 })
}

fn trajectory_csv(tr: &ddp::Trajectory) -> String {
    let n = tr.states[0].len();
    let m = tr.controls.first().map_or(0, |u| u.len());
    let mut head = vec!["t".to_string()];
    head.extend((0..n).map(|i| format!("x{i}")));
    head.extend((0..m).map(|i| format!("u{i}")));
    head.push("stage_cost".into());
    head.extend((0..n).map(|i| format!("vx{i}")));
    let mut s = head.join(",") + "\n";
    for k in 0..tr.states.len() {
        let mut row = vec![(tr.start_time + k).to_string()];
        row.extend(tr.states[k].iter().map(|v| v.to_string()));
        match tr.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| v.to_string())),
            None => row.extend((0..m).map(|_| String::new())),
        }
        row.push(tr.stage_costs[k].to_string());
        row.extend(tr.value_grads[k].iter().map(|v| v.to_string()));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
