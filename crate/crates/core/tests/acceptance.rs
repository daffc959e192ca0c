// Acceptance suite. Runs without the libtest harness so that every criterion
// prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::time::{Duration, Instant};

use cacto_sl::buffer::{trajectory_transitions, Transition};
use cacto_sl::ddp::{self, DdpSettings, Trajectory};
use cacto_sl::eval::{self, ActivationStudy, EvalGrid};
use cacto_sl::gradcheck::{self, GradcheckOptions};
use cacto_sl::net::{logsym, Activation, Layer, MlpNetwork};
use cacto_sl::rng::{substream, Stream};
use cacto_sl::task::{CostParams, TaskKind, TaskModel};
use cacto_sl::trainer::{self, TrainOptions, TrainerConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

// ---------------------------------------------------------------- criterion 1

fn lqr_task() -> TaskModel {
    let mut task = TaskModel::new(TaskKind::DoubleIntegrator);
    task.horizon = 50;
    task.cost = CostParams {
        w_p: 0.0,
        w_bound: 0.0,
        obstacles: vec![],
        ..CostParams::default()
    };
    task
}

fn riccati_oracle() -> Outcome {
    let start = Instant::now();
    let task = lqr_task();
    let (dt, wd, wu) = (task.dt, task.cost.w_d, task.cost.w_u);
    let h = task.horizon;
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[1., 0., dt, 0., 0., 1., 0., dt, 0., 0., 1., 0., 0., 0., 0., 1.],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0., 0., 0., 0., dt, 0., 0., dt]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![wd, wd, 0.0, 0.0]));
    let r = DMatrix::identity(2, 2) * wu;

    // Cost z'Qz + u'Ru in goal-shifted coordinates, so V = z'Pz and V_x = 2Pz.
    let mut p = vec![DMatrix::zeros(4, 4); h + 1];
    let mut k = vec![DMatrix::zeros(2, 4); h];
    p[h] = q.clone();
    for t in (0..h).rev() {
        let pn = &p[t + 1];
        let s = &r + b.transpose() * pn * &b;
        let kt = s.try_inverse().unwrap() * b.transpose() * pn * &a;
        p[t] = &q + a.transpose() * pn * (&a - &b * &kt);
        k[t] = kt;
    }
    let x0 = [3.0, -2.0, 0.5, 1.0];
    let goal = DVector::from_vec(vec![task.goal[0], task.goal[1], 0.0, 0.0]);
    let mut z = DVector::from_column_slice(&x0) - &goal;
    let mut states = vec![];
    let mut controls = vec![];
    let mut grads = vec![];
    for t in 0..=h {
        states.push(&z + &goal);
        grads.push(&p[t] * &z * 2.0);
        if t < h {
            let u = -(&k[t] * &z);
            z = &a * &z + &b * &u;
            controls.push(u);
        }
    }

    let sol = ddp::solve(&task, &x0, h, &ddp::zero_controls(&task, h), &DdpSettings::default()).unwrap();
    let tr = &sol.trajectory;
    let mut worst: f64 = 0.0;
    for t in 0..=h {
        worst = worst.max(rel(&tr.states[t], &states[t]));
        worst = worst.max(rel(&tr.value_grads[t], &grads[t]));
        if t < h {
            worst = worst.max(rel(&tr.controls[t], &controls[t]));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && sol.iterations <= 2 && elapsed < Duration::from_secs(1),
        format!(
            "max rel err {worst:.2e}, {} iterations, {:.3} s",
            sol.iterations,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn value_gradient_consistency() -> Outcome {
    let start = Instant::now();
    let task = TaskModel::new(TaskKind::DoubleIntegrator);
    let settings = DdpSettings {
        max_iters: 500,
        cost_tol: 1e-14,
        grad_tol: 1e-10,
        ..DdpSettings::default()
    };
    let h = task.horizon;
    let eps = 1e-4;
    let mut rng = substream(2024, Stream::Misc, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // Left of the obstacles and away from the goal valley.
        let x0 = vec![
            rng.gen_range(-15.0..-1.0),
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let nominal = ddp::solve(&task, &x0, h, &ddp::zero_controls(&task, h), &settings).unwrap();
        let warm = nominal.trajectory.controls.clone();
        let analytic = nominal.trajectory.value_grads[0].clone();
        let mut fd = DVector::zeros(4);
        for i in 0..4 {
            let cost = |s: f64| {
                let mut x = x0.clone();
                x[i] += s * eps;
                ddp::solve(&task, &x, h, &warm, &settings).unwrap().trajectory.total_cost
            };
            fd[i] = (cost(1.0) - cost(-1.0)) / (2.0 * eps);
        }
        worst = worst.max(rel(&analytic, &fd));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-3 && elapsed < Duration::from_secs(120),
        format!("max rel err {worst:.2e} over 20 states, {:.1} s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 3

fn sobolev_double_backprop() -> Outcome {
    let start = Instant::now();
    let opts = GradcheckOptions {
        seed: 3,
        probes: 50,
        tolerance: 1e-5,
        corrupt_jacobian: false,
    };
    let reports = gradcheck::sobolev_suites(&opts).unwrap();
    let names: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.name, r.max_rel_error))
        .collect();
    let covered = ["sine", "elu", "relu"]
        .iter()
        .all(|a| reports.iter().any(|r| r.name.ends_with(a)));
    let elapsed = start.elapsed();
    outcome(
        covered && reports.iter().all(|r| r.passed()) && elapsed < Duration::from_secs(60),
        format!("{}; {:.1} s", names.join(", "), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 4

fn logsym_suite() -> Outcome {
    let e = std::f64::consts::E;
    let mut ok = logsym(0.0).abs() <= 1e-12
        && (logsym(e - 1.0) - 1.0).abs() <= 1e-12
        && (logsym(1.0 - e) + 1.0).abs() <= 1e-12;
    let xs: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 0.37 * (1.0 + (i as f64).abs() * 1e-3)).collect();
    for &x in &xs {
        ok &= (logsym(-x) + logsym(x)).abs() <= 1e-12;
    }
    for w in xs.windows(2) {
        ok &= logsym(w[1]) > logsym(w[0]);
    }
    outcome(ok, format!("{} symmetry and monotonicity samples", xs.len()))
}

// ---------------------------------------------------------------- criterion 5

fn td_semantics() -> Outcome {
    let mut task = TaskModel::new(TaskKind::SingleIntegrator);
    task.horizon = 3;
    // Positions whose normalized inputs are exact, and a target critic that
    // returns the physical x coordinate: V'(x, y, t) = 15 * (x / 15).
    let xs = [0.0, 15.0, -15.0, 7.5];
    let traj = Trajectory {
        start_time: 0,
        states: xs.iter().map(|&x| DVector::from_vec(vec![x, 0.0])).collect(),
        controls: vec![DVector::zeros(2); 3],
        stage_costs: vec![1.0, 2.0, 4.0, 8.0],
        total_cost: 15.0,
        value_grads: vec![DVector::zeros(2); 4],
    };
    let mut layer = Layer::zeros(3, 1, Activation::Linear, 1.0);
    layer.weights[(0, 0)] = 15.0;
    let critic = MlpNetwork::new(vec![layer]).unwrap();

    let cases: [(usize, [f64; 4], [f64; 4]); 3] = [
        (1, [1.0, 2.0, 12.0, 8.0], [16.0, -13.0, 12.0, 8.0]),
        (2, [3.0, 14.0, 12.0, 8.0], [-12.0, 14.0, 12.0, 8.0]),
        (50, [15.0, 14.0, 12.0, 8.0], [15.0, 14.0, 12.0, 8.0]),
    ];
    let mut ok = true;
    let mut got = vec![];
    for (l, values, targets) in cases {
        let trs = trajectory_transitions(&traj, l).unwrap();
        let refs: Vec<&Transition> = trs.iter().collect();
        let v: Vec<f64> = trs.iter().map(|t| t.value).collect();
        let bar = trainer::td_targets(&task, &critic, &refs).unwrap();
        ok &= v == values && bar == targets;
        // Terminal exactly when the window reaches the last stage.
        ok &= trs.iter().enumerate().all(|(t, tr)| tr.terminal == (t + l >= 3));
        got.push(format!("L={l} V={v:?} target={bar:?}"));
    }
    outcome(ok, got.join("; "))
}

// ------------------------------------------------------------ criteria 6 and 7

fn scaled_task() -> TaskModel {
    let mut task = TaskModel::new(TaskKind::DoubleIntegrator);
    task.horizon = 100;
    task
}

fn scaled_config(k_s: f64) -> TrainerConfig {
    TrainerConfig {
        episodes: 1_000_000,
        episodes_per_update: 50,
        k_list: vec![250, 500, 1000],
        update_budget: 10_000,
        k_s,
        ..TrainerConfig::default()
    }
}

/// `(episodes used, hard-region mean cost)` after every update cycle.
fn training_curve(task: &TaskModel, k_s: f64, seed: u64) -> Vec<(usize, f64)> {
    let cfg = scaled_config(k_s);
    let grid = EvalGrid::default();
    let mut curve = vec![];
    trainer::train(task, &cfg, seed, &TrainOptions { workers: 0, out_dir: None }, |r| {
        let res = eval::evaluate_policy(task, &r.networks.actor, &grid, &cfg.ddp)?;
        curve.push((r.episodes_done, res.mean_cost));
        Ok(())
    })
    .unwrap();
    curve
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    eval::quantile(&s, 0.5)
}

struct ScaledRuns {
    baseline: f64,
    sobolev: Vec<Vec<(usize, f64)>>,
    plain: Vec<Vec<(usize, f64)>>,
    elapsed: Duration,
}

fn scaled_runs() -> ScaledRuns {
    let start = Instant::now();
    let task = scaled_task();
    let baseline = eval::baseline_ics(&task, &EvalGrid::default(), &DdpSettings::default())
        .unwrap()
        .mean_cost;
    let sobolev = (0..3).map(|s| training_curve(&task, 1e3, s)).collect();
    let elapsed = start.elapsed();
    let plain = (0..3).map(|s| training_curve(&task, 0.0, s)).collect();
    ScaledRuns {
        baseline,
        sobolev,
        plain,
        elapsed,
    }
}

/// Per-cycle median over seeds.
fn median_curve(curves: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let cycles = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..cycles)
        .map(|c| median(&curves.iter().map(|r| r[c].1).collect::<Vec<_>>()))
        .collect()
}

fn training_efficacy(runs: &ScaledRuns) -> Outcome {
    let finals: Vec<f64> = runs.sobolev.iter().map(|c| c.last().unwrap().1).collect();
    let f = median(&finals);
    let curve = median_curve(&runs.sobolev);
    let best = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let b = runs.baseline;
    let margin = 0.1 * (b - best);
    outcome(
        f < b && b - f >= margin && runs.elapsed <= Duration::from_secs(3600),
        format!(
            "median final {f:.3} vs ICS baseline {b:.3}; best median {best:.3}, required margin {margin:.3}; finals {finals:.3?}; median curve {curve:.2?}; {:.0} s",
            runs.elapsed.as_secs_f64()
        ),
    )
}

fn sample_efficiency(runs: &ScaledRuns) -> Outcome {
    let plain_finals: Vec<f64> = runs.plain.iter().map(|c| c.last().unwrap().1).collect();
    let target = median(&plain_finals);
    let ratios: Vec<f64> = runs
        .sobolev
        .iter()
        .zip(&runs.plain)
        .map(|(s, p)| {
            let total = p.last().unwrap().0 as f64;
            s.iter()
                .find(|(_, cost)| *cost <= target)
                .map_or(f64::INFINITY, |(eps, _)| *eps as f64 / total)
        })
        .collect();
    let wins = ratios.iter().filter(|r| **r <= 0.5).count();
    outcome(
        wins >= 2,
        format!(
            "k_S=0 median final {target:.3}; episode ratios {ratios:.3?}; k_S=0 median curve {:.2?}",
            median_curve(&runs.plain)
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn activation_comparison() -> Outcome {
    let start = Instant::now();
    let task = TaskModel::new(TaskKind::SingleIntegrator);
    let study = ActivationStudy {
        activations: vec![Activation::Sine, Activation::Elu, Activation::Relu],
        lookahead: task.horizon,
        ..ActivationStudy::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let mut lines = vec![];
    let mut files_ok = true;
    for seed in 0..3u64 {
        let runs = eval::compare_activations(&task, &study, seed).unwrap();
        let loss = |a: Activation| {
            runs.iter()
                .find(|r| r.activation == a)
                .unwrap()
                .checkpoints
                .iter()
                .find(|c| c.updates == 10_000)
                .unwrap()
                .held_out_grad_loss
        };
        let (s, e, r) = (loss(Activation::Sine), loss(Activation::Elu), loss(Activation::Relu));
        if s <= e && e <= r {
            wins += 1;
        }
        lines.push(format!("seed {seed}: sine {s:.4} elu {e:.4} relu {r:.4}"));
        let sub = dir.path().join(format!("seed_{seed}"));
        eval::write_heatmaps(&sub, &runs).unwrap();
        for a in ["sine", "elu", "relu"] {
            for k in [1000, 5000, 10000] {
                let path = sub.join(format!("heatmap_{a}_{k}.csv"));
                files_ok &= std::fs::read_to_string(&path)
                    .map(|t| t.starts_with("x,y,t,V\n") && t.lines().count() > 1)
                    .unwrap_or(false);
            }
        }
    }
    outcome(
        wins >= 2 && files_ok,
        format!(
            "{}; ordering held in {wins}/3 seeds; heatmaps {}; {:.0} s",
            lines.join(", "),
            if files_ok { "complete" } else { "missing" },
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn small_config() -> (TaskModel, TrainerConfig) {
    let mut task = TaskModel::new(TaskKind::DoubleIntegrator);
    task.horizon = 40;
    let cfg = TrainerConfig {
        episodes: 24,
        episodes_per_update: 8,
        lookahead: 10,
        k_list: vec![20, 30],
        update_budget: 1000,
        ..TrainerConfig::default()
    };
    (task, cfg)
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((name, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn episode_fingerprint(task: &TaskModel, cfg: &TrainerConfig, workers: usize) -> Vec<(usize, Vec<f64>)> {
    let mut eps = vec![];
    trainer::train(task, cfg, 9, &TrainOptions { workers, out_dir: None }, |r| {
        for e in r.episodes {
            let mut flat: Vec<f64> = e.trajectory.states.iter().flat_map(|s| s.iter().copied()).collect();
            flat.extend(e.trajectory.controls.iter().flat_map(|u| u.iter().copied()));
            flat.extend(e.trajectory.value_grads.iter().flat_map(|g| g.iter().copied()));
            flat.extend(&e.trajectory.stage_costs);
            eps.push((e.index, flat));
        }
        Ok(())
    })
    .unwrap();
    eps
}

fn determinism() -> Outcome {
    let (task, cfg) = small_config();
    let root = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = root.path().join(name);
        trainer::train(&task, &cfg, 9, &TrainOptions { workers: 1, out_dir: Some(out.clone()) }, |_| Ok(())).unwrap();
        dir_bytes(&out)
    };
    let a = run("a");
    let b = run("b");
    let has_files = a.iter().any(|(n, _)| n == "metrics.csv") && a.iter().any(|(n, _)| n.ends_with(".csl"));
    let single = has_files && a == b;
    let one = episode_fingerprint(&task, &cfg, 1);
    let two = episode_fingerprint(&task, &cfg, 2);
    let multi = one.len() == cfg.episodes && one == two;
    outcome(
        single && multi,
        format!(
            "{} files byte-identical: {single}; {} episodes identical across 1 and 2 workers: {multi}",
            a.len(),
            one.len()
        ),
    )
}

fn main() {
    // Numeric arguments select criteria; anything else (libtest flags) is ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| only.is_empty() || only.contains(&id);
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {name}: {verdict} ({})", o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    if want(1) {
        report(1, "ddp-riccati oracle", riccati_oracle());
    }
    if want(2) {
        report(2, "value-gradient consistency", value_gradient_consistency());
    }
    if want(3) {
        report(3, "sobolev double backprop", sobolev_double_backprop());
    }
    if want(4) {
        report(4, "logsym", logsym_suite());
    }
    if want(5) {
        report(5, "td(L) targets", td_semantics());
    }
    if want(6) || want(7) {
        let runs = scaled_runs();
        if want(6) {
            report(6, "scaled training efficacy", training_efficacy(&runs));
        }
        if want(7) {
            report(7, "sobolev sample efficiency", sample_efficiency(&runs));
        }
    }
    if want(8) {
        report(8, "activation comparison", activation_comparison());
    }
    if want(9) {
        report(9, "determinism", determinism());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
