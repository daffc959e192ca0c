//! Run configuration: a flat text format of `dotted.key = value` lines with
//! `#` comments. Values are numbers, strings (quoted or bare words), or
//! bracketed lists, which may nest:
//!
//! ```text
//! task.kind = double_integrator
//! trainer.k_list = [1000, 2000, 4000]   # updates per cycle
//! cost.obstacles = [[4, 0, 1.5, 7.5]]
//! ```
//!
//! Every key not given takes a default that depends on the task. The resolved
//! configuration prints back in the same format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::ddp::DdpSettings;
use crate::error::{Error, Result};
use crate::eval::{ActivationStudy, EvalGrid};
use crate::net::{Activation, NetworkArch};
use crate::task::{Obstacle, TaskKind, TaskModel};
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Str(String),
    List(Vec<Value>),
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::config(Some(self.line), msg)
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.chars.peek() {
            None => Err(self.err("missing value")),
            Some('[') => {
                self.chars.next();
                let mut items = Vec::new();
                self.skip_ws();
                if self.chars.peek() == Some(&']') {
                    self.chars.next();
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.chars.next() {
                        Some(',') => continue,
                        Some(']') => return Ok(Value::List(items)),
                        _ => return Err(self.err("expected `,` or `]` in list")),
                    }
                }
            }
            Some('"') => {
                self.chars.next();
                let mut s = String::new();
                loop {
                    match self.chars.next() {
                        Some('"') => return Ok(Value::Str(s)),
                        Some(c) => s.push(c),
                        None => return Err(self.err("unterminated string")),
                    }
                }
            }
            Some(_) => {
                let mut s = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c == ',' || c == ']' || c == '[' || c.is_whitespace() {
                        break;
                    }
                    s.push(c);
                    self.chars.next();
                }
                if s.is_empty() {
                    return Err(self.err("missing value"));
                }
                let looks_numeric = s.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
                if looks_numeric {
                    s.parse::<f64>()
                        .map(Value::Num)
                        .map_err(|_| self.err(format!("invalid number `{s}`")))
                } else {
                    Ok(Value::Str(s))
                }
            }
        }
    }
}

/// Strips a trailing `#` comment outside double quotes.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses the text into `key -> (value, line)`. Duplicate keys are errors.
pub fn parse(text: &str) -> Result<BTreeMap<String, (Value, usize)>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let (key, rest) = body
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line), "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::config(Some(line), format!("invalid key `{key}`")));
        }
        let mut p = Parser {
            chars: rest.chars().peekable(),
            line,
        };
        let value = p.value()?;
        p.skip_ws();
        if p.chars.peek().is_some() {
            return Err(Error::config(Some(line), format!("trailing characters after value of `{key}`")));
        }
        if let Some((_, first)) = out.get(key) {
            return Err(Error::config(Some(line), format!("duplicate key `{key}` (first set at line {first})")));
        }
        out.insert(key.to_string(), (value, line));
    }
    Ok(out)
}

/// Consumes keys from a parsed map with typed accessors.
struct Keys {
    map: BTreeMap<String, (Value, usize)>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<(Value, usize)> {
        self.map.remove(key)
    }

    fn num(&mut self, key: &str, into: &mut f64) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *into = as_num(&v).ok_or_else(|| Error::config(Some(line), format!("`{key}` must be a number")))?;
        }
        Ok(())
    }

    fn count(&mut self, key: &str, into: &mut usize) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *into = as_count(&v).ok_or_else(|| {
                Error::config(Some(line), format!("`{key}` must be a nonnegative integer"))
            })?;
        }
        Ok(())
    }

    fn seed(&mut self, key: &str, into: &mut u64) -> Result<()> {
        let mut v = *into as usize;
        self.count(key, &mut v)?;
        *into = v as u64;
        Ok(())
    }

    fn nums(&mut self, key: &str, len: Option<usize>, into: &mut Vec<f64>) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            let bad = || Error::config(Some(line), format!("`{key}` must be a list of numbers"));
            let Value::List(items) = v else { return Err(bad()) };
            let vals = items.iter().map(as_num).collect::<Option<Vec<f64>>>().ok_or_else(bad)?;
            if let Some(n) = len {
                if vals.len() != n {
                    return Err(Error::config(
                        Some(line),
                        format!("`{key}` needs {n} entries, got {}", vals.len()),
                    ));
                }
            }
            *into = vals;
        }
        Ok(())
    }

    fn pair(&mut self, key: &str, into: &mut [f64; 2]) -> Result<()> {
        let mut v = into.to_vec();
        self.nums(key, Some(2), &mut v)?;
        into.copy_from_slice(&v);
        Ok(())
    }

    fn counts(&mut self, key: &str, into: &mut Vec<usize>) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            let bad = || Error::config(Some(line), format!("`{key}` must be a list of nonnegative integers"));
            let Value::List(items) = v else { return Err(bad()) };
            *into = items.iter().map(as_count).collect::<Option<Vec<usize>>>().ok_or_else(bad)?;
        }
        Ok(())
    }

    fn string(&mut self, key: &str) -> Result<Option<(String, usize)>> {
        match self.take(key) {
            None => Ok(None),
            Some((Value::Str(s), line)) => Ok(Some((s, line))),
            Some((Value::Num(v), line)) => Ok(Some((format!("{v}"), line))),
            Some((_, line)) => Err(Error::config(Some(line), format!("`{key}` must be a string"))),
        }
    }

    fn activation(&mut self, key: &str, into: &mut Activation) -> Result<()> {
        if let Some((s, line)) = self.string(key)? {
            *into = Activation::from_name(&s)
                .ok_or_else(|| Error::config(Some(line), format!("unknown activation `{s}` for `{key}`")))?;
        }
        Ok(())
    }

    fn arch(&mut self, prefix: &str, arch: &mut NetworkArch) -> Result<()> {
        self.counts(&format!("{prefix}.hidden"), &mut arch.hidden)?;
        self.activation(&format!("{prefix}.activation"), &mut arch.activation)?;
        self.num(&format!("{prefix}.omega_first"), &mut arch.omega_first)?;
        self.num(&format!("{prefix}.omega_hidden"), &mut arch.omega_hidden)
    }
}

fn as_num(v: &Value) -> Option<f64> {
    match v {
        Value::Num(x) => Some(*x),
        _ => None,
    }
}

fn as_count(v: &Value) -> Option<usize> {
    match v {
        Value::Num(x) if *x >= 0.0 && x.fract() == 0.0 && *x <= 2f64.powi(53) => Some(*x as usize),
        _ => None,
    }
}

/// Everything a command needs: task, training, solver, evaluation, study and
/// run plumbing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskModel,
    pub trainer: TrainerConfig,
    pub eval: EvalGrid,
    pub study: ActivationStudy,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
}

impl RunConfig {
    /// Defaults for a task: the double integrator alternates 200 episodes
    /// with the update ramp up to 50k updates, the Dubins car 500 episodes
    /// up to 170k updates.
    pub fn defaults(kind: TaskKind) -> Self {
        let task = TaskModel::new(kind);
        let (per_update, budget) = match kind {
            TaskKind::Dubins => (500, 170_000),
            _ => (200, 50_000),
        };
        let trainer = TrainerConfig {
            episodes_per_update: per_update,
            update_budget: budget,
            ..TrainerConfig::default()
        };
        RunConfig {
            study: ActivationStudy {
                lookahead: task.horizon,
                ..ActivationStudy::default()
            },
            task,
            trainer,
            eval: EvalGrid::default(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            workers: 0,
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut keys = Keys { map: parse(text)? };
        let (kind_name, line) = keys
            .string("task.kind")?
            .ok_or_else(|| Error::config(None, "missing required key `task.kind`"))?;
        let kind = TaskKind::from_name(&kind_name).ok_or_else(|| {
            Error::config(
                Some(line),
                format!("unknown task `{kind_name}` (expected single_integrator, double_integrator or dubins)"),
            )
        })?;
        let mut cfg = RunConfig::defaults(kind);
        let horizon_given = keys.map.contains_key("task.horizon");

        let t = &mut cfg.task;
        keys.count("task.horizon", &mut t.horizon)?;
        keys.num("task.dt", &mut t.dt)?;
        keys.pair("task.goal", &mut t.goal)?;
        let (n, m) = (kind.state_dim(), kind.control_dim());
        keys.nums("task.u_max", Some(m), &mut t.u_max)?;
        keys.nums("task.state_low", Some(n), &mut t.state_low)?;
        keys.nums("task.state_high", Some(n), &mut t.state_high)?;
        let c = &mut t.cost;
        keys.num("cost.w_d", &mut c.w_d)?;
        keys.num("cost.w_p", &mut c.w_p)?;
        keys.num("cost.w_ob", &mut c.w_ob)?;
        keys.num("cost.w_u", &mut c.w_u)?;
        keys.num("cost.w_bound", &mut c.w_bound)?;
        keys.num("cost.alpha1", &mut c.alpha1)?;
        keys.num("cost.alpha2", &mut c.alpha2)?;
        keys.num("cost.c2", &mut c.c2)?;
        keys.num("cost.c3", &mut c.c3)?;
        keys.num("cost.c4", &mut c.c4)?;
        if let Some((v, line)) = keys.take("cost.obstacles") {
            c.obstacles = obstacles(&v).ok_or_else(|| {
                Error::config(Some(line), "`cost.obstacles` must be a list of [cx, cy, width, height]")
            })?;
        }

        let tr = &mut cfg.trainer;
        keys.count("trainer.episodes", &mut tr.episodes)?;
        keys.count("trainer.lookahead", &mut tr.lookahead)?;
        keys.count("trainer.batch_size", &mut tr.batch_size)?;
        keys.count("trainer.episodes_per_update", &mut tr.episodes_per_update)?;
        if keys.map.contains_key("trainer.warm_start_switch") {
            let mut s = 0;
            keys.count("trainer.warm_start_switch", &mut s)?;
            tr.warm_start_switch = Some(s);
        }
        keys.counts("trainer.k_list", &mut tr.k_list)?;
        keys.num("trainer.k_s", &mut tr.k_s)?;
        keys.num("trainer.tau", &mut tr.tau)?;
        keys.num("trainer.critic_lr", &mut tr.critic_lr)?;
        keys.num("trainer.actor_lr", &mut tr.actor_lr)?;
        keys.count("trainer.update_budget", &mut tr.update_budget)?;
        keys.count("trainer.buffer_capacity", &mut tr.buffer_capacity)?;
        keys.count("trainer.max_resamples", &mut tr.max_resamples)?;
        keys.arch("critic", &mut tr.critic_arch)?;
        keys.arch("actor", &mut tr.actor_arch)?;
        ddp_keys(&mut keys, &mut tr.ddp)?;

        let e = &mut cfg.eval;
        keys.pair("eval.x_range", &mut e.x_range)?;
        keys.pair("eval.y_range", &mut e.y_range)?;
        keys.num("eval.mesh", &mut e.mesh)?;
        keys.seed("eval.heading_seed", &mut e.heading_seed)?;

        let s = &mut cfg.study;
        s.ddp = cfg.trainer.ddp.clone();
        if horizon_given {
            s.lookahead = cfg.task.horizon;
        }
        if let Some((v, line)) = keys.take("study.activations") {
            let names = match &v {
                Value::List(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::Str(s) => Activation::from_name(s),
                        _ => None,
                    })
                    .collect::<Option<Vec<_>>>(),
                _ => None,
            };
            s.activations = names.ok_or_else(|| {
                Error::config(Some(line), "`study.activations` must list relu, elu, sine or linear")
            })?;
        }
        keys.counts("study.checkpoints", &mut s.checkpoints)?;
        keys.num("study.k_s", &mut s.k_s)?;
        keys.count("study.dataset_episodes", &mut s.dataset_episodes)?;
        keys.count("study.held_out_episodes", &mut s.held_out_episodes)?;
        keys.count("study.lookahead", &mut s.lookahead)?;
        keys.count("study.batch_size", &mut s.batch_size)?;
        keys.num("study.lr", &mut s.lr)?;
        keys.num("study.tau", &mut s.tau)?;
        keys.counts("study.hidden", &mut s.hidden)?;
        keys.num("study.omega_first", &mut s.omega_first)?;
        keys.num("study.omega_hidden", &mut s.omega_hidden)?;
        keys.num("study.heatmap_mesh", &mut s.heatmap_mesh)?;

        let mut seeds: Vec<usize> = cfg.seeds.iter().map(|&s| s as usize).collect();
        let seeds_line = keys.map.get("run.seeds").map(|(_, l)| *l);
        keys.counts("run.seeds", &mut seeds)?;
        cfg.seeds = seeds.into_iter().map(|s| s as u64).collect();
        if cfg.seeds.is_empty() {
            return Err(Error::config(seeds_line, "`run.seeds` must not be empty"));
        }
        if let Some((s, _)) = keys.string("run.out_dir")? {
            cfg.out_dir = PathBuf::from(s);
        }
        keys.count("run.workers", &mut cfg.workers)?;

        if let Some((key, (_, line))) = keys.map.iter().next() {
            return Err(Error::config(Some(*line), format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Semantic checks; problems are reported as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config { .. } => e,
            other => Error::config(None, other.to_string()),
        };
        self.task.validate().map_err(as_config)?;
        self.trainer.validate().map_err(as_config)?;
        if self.seeds.is_empty() {
            return Err(Error::config(None, "`run.seeds` must not be empty"));
        }
        Ok(())
    }

    /// The resolved configuration in the input format; parsing it back gives
    /// an equal configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.task;
        let c = &t.cost;
        let tr = &self.trainer;
        let d = &tr.ddp;
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("task.kind", t.kind.name().into());
        put("task.horizon", t.horizon.to_string());
        put("task.dt", num(t.dt));
        put("task.goal", nums(&t.goal));
        put("task.u_max", nums(&t.u_max));
        put("task.state_low", nums(&t.state_low));
        put("task.state_high", nums(&t.state_high));
        put("cost.w_d", num(c.w_d));
        put("cost.w_p", num(c.w_p));
        put("cost.w_ob", num(c.w_ob));
        put("cost.w_u", num(c.w_u));
        put("cost.w_bound", num(c.w_bound));
        put("cost.alpha1", num(c.alpha1));
        put("cost.alpha2", num(c.alpha2));
        put("cost.c2", num(c.c2));
        put("cost.c3", num(c.c3));
        put("cost.c4", num(c.c4));
        let obs: Vec<String> = c
            .obstacles
            .iter()
            .map(|o| nums(&[o.center[0], o.center[1], o.axes[0], o.axes[1]]))
            .collect();
        put("cost.obstacles", format!("[{}]", obs.join(", ")));
        put("trainer.episodes", tr.episodes.to_string());
        put("trainer.lookahead", tr.lookahead.to_string());
        put("trainer.batch_size", tr.batch_size.to_string());
        put("trainer.episodes_per_update", tr.episodes_per_update.to_string());
        match tr.warm_start_switch {
            Some(v) => put("trainer.warm_start_switch", v.to_string()),
            None => put("# trainer.warm_start_switch", "trainer.episodes_per_update".into()),
        }
        put("trainer.k_list", counts(&tr.k_list));
        put("trainer.k_s", num(tr.k_s));
        put("trainer.tau", num(tr.tau));
        put("trainer.critic_lr", num(tr.critic_lr));
        put("trainer.actor_lr", num(tr.actor_lr));
        put("trainer.update_budget", tr.update_budget.to_string());
        put("trainer.buffer_capacity", tr.buffer_capacity.to_string());
        put("trainer.max_resamples", tr.max_resamples.to_string());
        for (prefix, a) in [("critic", &tr.critic_arch), ("actor", &tr.actor_arch)] {
            put(&format!("{prefix}.hidden"), counts(&a.hidden));
            put(&format!("{prefix}.activation"), a.activation.name().into());
            put(&format!("{prefix}.omega_first"), num(a.omega_first));
            put(&format!("{prefix}.omega_hidden"), num(a.omega_hidden));
        }
        put("ddp.max_iters", d.max_iters.to_string());
        put("ddp.cost_tol", num(d.cost_tol));
        put("ddp.grad_tol", num(d.grad_tol));
        put("ddp.reg_init", num(d.reg_init));
        put("ddp.reg_min", num(d.reg_min));
        put("ddp.reg_max", num(d.reg_max));
        put("ddp.reg_factor", num(d.reg_factor));
        put("ddp.line_search_steps", d.line_search_steps.to_string());
        put("ddp.line_search_factor", num(d.line_search_factor));
        put("ddp.armijo", num(d.armijo));
        let e = &self.eval;
        put("eval.x_range", nums(&e.x_range));
        put("eval.y_range", nums(&e.y_range));
        put("eval.mesh", num(e.mesh));
        put("eval.heading_seed", e.heading_seed.to_string());
        let st = &self.study;
        let acts: Vec<&str> = st.activations.iter().map(|a| a.name()).collect();
        put("study.activations", format!("[{}]", acts.join(", ")));
        put("study.checkpoints", counts(&st.checkpoints));
        put("study.k_s", num(st.k_s));
        put("study.dataset_episodes", st.dataset_episodes.to_string());
        put("study.held_out_episodes", st.held_out_episodes.to_string());
        put("study.lookahead", st.lookahead.to_string());
        put("study.batch_size", st.batch_size.to_string());
        put("study.lr", num(st.lr));
        put("study.tau", num(st.tau));
        put("study.hidden", counts(&st.hidden));
        put("study.omega_first", num(st.omega_first));
        put("study.omega_hidden", num(st.omega_hidden));
        put("study.heatmap_mesh", num(st.heatmap_mesh));
        let seeds: Vec<usize> = self.seeds.iter().map(|&x| x as usize).collect();
        put("run.seeds", counts(&seeds));
        put("run.out_dir", format!("\"{}\"", self.out_dir.display()));
        put("run.workers", self.workers.to_string());
        s
    }
}

fn ddp_keys(keys: &mut Keys, d: &mut DdpSettings) -> Result<()> {
    keys.count("ddp.max_iters", &mut d.max_iters)?;
    keys.num("ddp.cost_tol", &mut d.cost_tol)?;
    keys.num("ddp.grad_tol", &mut d.grad_tol)?;
    keys.num("ddp.reg_init", &mut d.reg_init)?;
    keys.num("ddp.reg_min", &mut d.reg_min)?;
    keys.num("ddp.reg_max", &mut d.reg_max)?;
    keys.num("ddp.reg_factor", &mut d.reg_factor)?;
    keys.count("ddp.line_search_steps", &mut d.line_search_steps)?;
    keys.num("ddp.line_search_factor", &mut d.line_search_factor)?;
    keys.num("ddp.armijo", &mut d.armijo)
}

fn obstacles(v: &Value) -> Option<Vec<Obstacle>> {
    let Value::List(items) = v else { return None };
    items
        .iter()
        .map(|item| {
            let Value::List(f) = item else { return None };
            let f = f.iter().map(as_num).collect::<Option<Vec<_>>>()?;
            (f.len() == 4).then(|| Obstacle {
                center: [f[0], f[1]],
                axes: [f[2], f[3]],
            })
        })
        .collect()
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn nums(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "))
}

fn counts(v: &[usize]) -> String {
    format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values() {
        let m = parse("a = 1.5  # note\nb = [1, [2, 3], x]\nc = \"has # hash\"\nd = sine\n\n# only comment\n").unwrap();
        assert_eq!(m["a"], (Value::Num(1.5), 1));
        assert_eq!(
            m["b"].0,
            Value::List(vec![
                Value::Num(1.0),
                Value::List(vec![Value::Num(2.0), Value::Num(3.0)]),
                Value::Str("x".into())
            ])
        );
        assert_eq!(m["c"].0, Value::Str("has # hash".into()));
        assert_eq!(m["d"].0, Value::Str("sine".into()));
        assert_eq!(m["b"].1, 2);
    }

    fn line_of(e: Error) -> Option<usize> {
        match e {
            Error::Config { line, .. } => line,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn syntax_errors_name_the_line() {
        assert_eq!(line_of(parse("a = 1\nb 2\n").unwrap_err()), Some(2));
        assert_eq!(line_of(parse("a = [1, 2\n").unwrap_err()), Some(1));
        assert_eq!(line_of(parse("a = 1\n\na = 2\n").unwrap_err()), Some(3));
        assert_eq!(line_of(parse("a = 1e\n").unwrap_err()), Some(1));
        assert_eq!(line_of(parse("a = 1 2\n").unwrap_err()), Some(1));
    }

    #[test]
    fn missing_task_kind_is_named() {
        let e = RunConfig::from_text("trainer.k_s = 1\n").unwrap_err();
        assert!(e.to_string().contains("task.kind"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn unknown_and_mistyped_keys() {
        let e = RunConfig::from_text("task.kind = dubins\ntrainer.bogus = 3\n").unwrap_err();
        assert_eq!(line_of(e), Some(2));
        let e = RunConfig::from_text("task.kind = dubins\n\ntrainer.k_list = 5\n").unwrap_err();
        assert_eq!(line_of(e), Some(3));
        let e = RunConfig::from_text("task.kind = walker\n").unwrap_err();
        assert_eq!(line_of(e), Some(1));
        let e = RunConfig::from_text("task.kind = double_integrator\ntask.u_max = [1]\n").unwrap_err();
        assert_eq!(line_of(e), Some(2));
        let e = RunConfig::from_text("task.kind = single_integrator\ntrainer.tau = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn task_dependent_defaults() {
        let d = RunConfig::from_text("task.kind = double_integrator").unwrap();
        assert_eq!(d.trainer.episodes_per_update, 200);
        assert_eq!(d.trainer.update_budget, 50_000);
        assert_eq!(d.trainer.k_list, vec![1000, 2000, 4000, 8000, 15000]);
        let c = RunConfig::from_text("task.kind = dubins").unwrap();
        assert_eq!(c.trainer.episodes_per_update, 500);
        assert_eq!(c.trainer.update_budget, 170_000);
        assert_eq!(c.task.n(), 5);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::from_text(
            "task.kind = double_integrator\ntask.horizon = 100\ntrainer.k_list = [250, 500, 1000]\n\
             cost.obstacles = [[1, 2, 3, 4]]\ncritic.activation = elu\nrun.seeds = [7, 8]\n\
             run.out_dir = \"out dir\"\nddp.max_iters = 40\n",
        )
        .unwrap();
        assert_eq!(cfg.task.horizon, 100);
        assert_eq!(cfg.study.lookahead, 100);
        assert_eq!(cfg.trainer.k_list, vec![250, 500, 1000]);
        assert_eq!(cfg.task.cost.obstacles, vec![Obstacle { center: [1.0, 2.0], axes: [3.0, 4.0] }]);
        assert_eq!(cfg.trainer.critic_arch.activation, Activation::Elu);
        assert_eq!(cfg.seeds, vec![7, 8]);
        assert_eq!(cfg.out_dir, PathBuf::from("out dir"));
        assert_eq!(cfg.trainer.ddp.max_iters, 40);
        assert_eq!(cfg.study.ddp.max_iters, 40);
    }

    #[test]
    fn resolved_text_roundtrips() {
        for kind in ["single_integrator", "double_integrator", "dubins"] {
            let cfg = RunConfig::from_text(&format!("task.kind = {kind}\ncost.w_u = 0.03\n")).unwrap();
            let text = cfg.to_text();
            assert_eq!(RunConfig::from_text(&text).unwrap(), cfg, "{text}");
        }
    }
}
