//! Experiment configs, run directories, solve-time tables and λ sweeps.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/config.json                 fully resolved config
//! <out>/curves/<arm>_seed<k>.csv    one learning curve per (arm, seed)
//! <out>/checkpoints/<arm>_seed<k>.json
//! <out>/summary.json
//! ```
//!
//! Curve columns are `iteration, seed, arm, mean_return, sd_return,
//! grad_variance, realized_kl`.

mod table1;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, FeatureSpec};
use crate::env::{self, Environment};
use crate::features::Ridge;
use crate::optimizer::{train, OptimizerSpec, TrainConfig};
use crate::policy::{FactoredPolicy, Factorization};
use crate::{Error, Result};

pub use table1::{
    improvement_percent, mean_curve_crossing, solve_iteration, solve_time_row, table1_config,
    table1_markdown, table1_report, SolveTimeRow,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: "target_matching".into(),
            params: serde_json::json!({ "m": 12 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorizationSpec {
    Independent,
    /// Factor `i` conditions on factors `0..i`.
    Chain,
    Dag { parents: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub factorization: FactorizationSpec,
    pub init_log_std: f64,
    /// Restrict each factor to the state entries the environment assigns it.
    pub use_factor_inputs: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            factorization: FactorizationSpec::Independent,
            init_log_std: 0.0,
            use_factor_inputs: true,
        }
    }
}

impl PolicyConfig {
    pub fn build(&self, env: &dyn Environment) -> Result<FactoredPolicy> {
        let m = env.spec().num_factors();
        let factorization = match &self.factorization {
            FactorizationSpec::Independent => Factorization::Independent,
            FactorizationSpec::Chain => Factorization::chain(m),
            FactorizationSpec::Dag { parents } => Factorization::Dag {
                parents: parents.clone(),
            },
        };
        let inputs = if self.use_factor_inputs {
            env.factor_inputs()
        } else {
            None
        };
        let mut p = FactoredPolicy::for_spec(env.spec(), factorization, inputs)?;
        p.set_log_std(self.init_log_std);
        Ok(p)
    }
}

/// One compared configuration: a named baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub baseline: BaselineKind,
}

impl Arm {
    pub fn new(name: &str, baseline: BaselineKind) -> Self {
        Arm {
            name: name.into(),
            baseline,
        }
    }
}

/// Everything that defines an experiment. Missing JSON fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub arms: Vec<Arm>,
    pub features: FeatureSpec,
    pub ridge: Ridge,
    pub optimizer: OptimizerSpec,
    pub iterations: usize,
    pub trajectories: usize,
    /// Overrides the environment's horizon when it has a `horizon` param.
    pub horizon: Option<usize>,
    pub gamma: f64,
    /// `None` uses Monte Carlo advantages.
    pub gae_lambda: Option<f64>,
    pub normalize_advantages: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Write an intermediate checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            arms: vec![
                Arm::new("state", BaselineKind::StateValue),
                Arm::new("action", BaselineKind::MeanMarginalized),
            ],
            features: FeatureSpec::Linear,
            ridge: Ridge::default(),
            optimizer: OptimizerSpec::default(),
            iterations: 100,
            trajectories: 150,
            horizon: None,
            gamma: 0.995,
            gae_lambda: Some(0.97),
            normalize_advantages: true,
            seeds: (0..5).collect(),
            out: PathBuf::from("runs/experiment"),
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config("config needs at least one arm".into()));
        }
        for (k, arm) in self.arms.iter().enumerate() {
            let ok = !arm.name.is_empty()
                && arm.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::Config(format!(
                    "arm name `{}` must be nonempty [A-Za-z0-9_-]",
                    arm.name
                )));
            }
            if self.arms[..k].iter().any(|a| a.name == arm.name) {
                return Err(Error::Config(format!("duplicate arm `{}`", arm.name)));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("config needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if let FeatureSpec::Rff { features: 0, .. } = self.features {
            return Err(Error::Config("RFF needs at least one feature".into()));
        }
        for arm in &self.arms {
            self.train_config(arm).validate()?;
        }
        Ok(())
    }

    /// Keeps only the named arms, in config order.
    pub fn select_arms(&mut self, names: &[String]) -> Result<()> {
        for n in names {
            if !self.arms.iter().any(|a| &a.name == n) {
                let known: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
                return Err(Error::Config(format!(
                    "unknown arm `{n}`; config has: {}",
                    known.join(", ")
                )));
            }
        }
        self.arms.retain(|a| names.contains(&a.name));
        Ok(())
    }

    pub fn train_config(&self, arm: &Arm) -> TrainConfig {
        TrainConfig {
            baseline: arm.baseline.clone(),
            features: self.features,
            ridge: self.ridge,
            optimizer: self.optimizer,
            iterations: self.iterations,
            trajectories: self.trajectories,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            normalize_advantages: self.normalize_advantages,
        }
    }

    /// The environment for `seed`, with the horizon override applied.
    pub fn build_env(&self, seed: u64) -> Result<Box<dyn Environment>> {
        let mut params = self.env.params.clone();
        if params.is_null() {
            params = empty_object();
        }
        if let (Some(h), Some(obj)) = (self.horizon, params.as_object_mut()) {
            obj.entry("horizon").or_insert(serde_json::json!(h));
        }
        let env = env::build(&self.env.name, &params, seed)?;
        if let Some(h) = self.horizon {
            if env.spec().horizon != h {
                return Err(Error::Config(format!(
                    "environment `{}` has horizon {}, config asks for {h}",
                    self.env.name,
                    env.spec().horizon
                )));
            }
        }
        Ok(env)
    }
}

/// One row of a learning-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub seed: u64,
    pub arm: String,
    pub mean_return: f64,
    pub sd_return: f64,
    pub grad_variance: f64,
    pub realized_kl: f64,
}

pub fn curve_file_name(arm: &str, seed: u64) -> String {
    format!("{arm}_seed{seed}.csv")
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    // header comes from the first serialized row
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_return: f64,
    pub best_return: f64,
    pub mean_grad_variance: f64,
    /// First 1-based iteration whose mean return exceeds the solve threshold.
    pub solve_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub baseline: String,
    pub action_dependent: bool,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_return: f64,
    /// Pointwise mean of the seeds' mean-return curves.
    pub mean_curve: Vec<f64>,
    pub mean_curve_solve_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub action_dim: usize,
    pub iterations: usize,
    pub solve_threshold: Option<f64>,
    pub arms: Vec<ArmSummary>,
}

impl RunSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

/// Summary statistics of a set of curves keyed by `(arm, seed)`.
pub fn summarize(
    config: &ExperimentConfig,
    action_dim: usize,
    threshold: Option<f64>,
    curves: &BTreeMap<(String, u64), Vec<CurveRow>>,
) -> Result<RunSummary> {
    let mut arms = Vec::with_capacity(config.arms.len());
    for arm in &config.arms {
        let mut seeds = Vec::with_capacity(config.seeds.len());
        let mut returns = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let rows = curves.get(&(arm.name.clone(), seed)).ok_or_else(|| {
                Error::InvalidInput(format!("missing curve for arm `{}` seed {seed}", arm.name))
            })?;
            let r: Vec<f64> = rows.iter().map(|x| x.mean_return).collect();
            let gv: Vec<f64> = rows.iter().map(|x| x.grad_variance).collect();
            seeds.push(SeedSummary {
                seed,
                final_return: r.last().copied().unwrap_or(f64::NAN),
                best_return: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_grad_variance: mean(&gv),
                solve_iteration: threshold.and_then(|th| solve_iteration(&r, th)),
            });
            returns.push(r);
        }
        let len = returns.iter().map(Vec::len).min().unwrap_or(0);
        let mean_curve: Vec<f64> = (0..len)
            .map(|t| returns.iter().map(|r| r[t]).sum::<f64>() / returns.len() as f64)
            .collect();
        let finals: Vec<f64> = seeds.iter().map(|s| s.final_return).collect();
        arms.push(ArmSummary {
            arm: arm.name.clone(),
            baseline: arm.baseline.label().into(),
            action_dependent: arm.baseline.is_action_dependent(),
            mean_final_return: mean(&finals),
            mean_curve_solve_iteration: threshold.and_then(|th| solve_iteration(&mean_curve, th)),
            mean_curve,
            seeds,
        });
    }
    Ok(RunSummary {
        env: config.env.name.clone(),
        action_dim,
        iterations: config.iterations,
        solve_threshold: threshold,
        arms,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains every `(arm, seed)` pair of `config` and writes the run directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let probe = config.build_env(config.seeds[0])?;
    let action_dim = probe.spec().action_dim();
    let threshold = probe.solve_threshold();
    drop(probe);

    let out = &config.out;
    for sub in ["curves", "checkpoints"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    write_json(&out.join("config.json"), config)?;

    let jobs: Vec<(&Arm, u64)> = config
        .arms
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(arm, seed)| run_one(config, arm, seed).map(|rows| ((arm.name.clone(), seed), rows)))
        .collect::<Result<Vec<_>>>()?;
    let curves: BTreeMap<_, _> = results.into_iter().collect();

    let summary = summarize(config, action_dim, threshold, &curves)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_one(config: &ExperimentConfig, arm: &Arm, seed: u64) -> Result<Vec<CurveRow>> {
    let env = config.build_env(seed)?;
    let policy = config.policy.build(env.as_ref())?;
    let tc = config.train_config(arm);
    let ckpt_dir = config.out.join("checkpoints");
    let every = config.checkpoint_every;
    let outcome = train(env.as_ref(), policy, &tc, seed, &mut |state, row| {
        if every > 0 && row.iteration % every == 0 && row.iteration < tc.iterations {
            let name = format!("{}_seed{seed}_it{}.json", arm.name, row.iteration);
            write_json(&ckpt_dir.join(name), &state.checkpoint())?;
        }
        Ok(())
    })?;
    write_json(
        &ckpt_dir.join(format!("{}_seed{seed}.json", arm.name)),
        &outcome.state.checkpoint(),
    )?;
    let rows: Vec<CurveRow> = outcome
        .curve
        .iter()
        .map(|l| CurveRow {
            iteration: l.iteration,
            seed,
            arm: arm.name.clone(),
            mean_return: l.mean_return,
            sd_return: l.sd_return,
            grad_variance: l.grad_variance,
            realized_kl: l.realized_kl,
        })
        .collect();
    write_curve(
        &config.out.join("curves").join(curve_file_name(&arm.name, seed)),
        &rows,
    )?;
    Ok(rows)
}

/// A finished run directory.
pub struct RunDir {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub curves: BTreeMap<(String, u64), Vec<CurveRow>>,
}

impl RunDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
        let summary: RunSummary = read_json(&dir.join("summary.json"))?;
        let mut curves = BTreeMap::new();
        for arm in &config.arms {
            for &seed in &config.seeds {
                let path = dir.join("curves").join(curve_file_name(&arm.name, seed));
                curves.insert((arm.name.clone(), seed), read_curve(&path)?);
            }
        }
        Ok(RunDir {
            config,
            summary,
            curves,
        })
    }

    /// Recomputes the summary from the stored CSVs.
    pub fn recompute_summary(&self) -> Result<RunSummary> {
        summarize(
            &self.config,
            self.summary.action_dim,
            self.summary.solve_threshold,
            &self.curves,
        )
    }
}

/// One training run per λ, sharing seeds; run `k` goes to `<out>/lambda_<λ>`.
pub fn lambda_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<(f64, RunSummary)>> {
    if lambdas.is_empty() {
        return Err(Error::Config("λ list is empty".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Config(format!("λ = {l} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let mut c = config.clone();
        c.gae_lambda = Some(l);
        c.out = config.out.join(format!("lambda_{l}"));
        out.push((l, run_experiment(&c)?));
    }
    let table: Vec<serde_json::Value> = out
        .iter()
        .map(|(l, s)| {
            serde_json::json!({
                "lambda": l,
                "arms": s.arms.iter().map(|a| serde_json::json!({
                    "arm": a.arm,
                    "mean_final_return": a.mean_final_return,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(&config.out.join("sweep.json"), &table)?;
    Ok(out)
}

#[cfg(test)]
mod tests;
