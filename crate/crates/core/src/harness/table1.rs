use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Arm, EnvConfig, ExperimentConfig, RunDir};
use crate::baselines::{BaselineKind, FeatureSpec};
use crate::env::solve_threshold_for;
use crate::{Error, Result};

/// Solve times of the state-only and action-dependent arms at one `m`.
///
/// Seeds that never cross the threshold count as the full budget and are
/// reported in `*_unsolved`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeRow {
    pub m: usize,
    pub threshold: f64,
    pub seeds: usize,
    pub budget: usize,
    /// Mean over seeds of each seed's first solving iteration.
    pub state_mean: f64,
    pub action_mean: f64,
    pub delta: f64,
    pub improvement_percent: f64,
    pub state_unsolved: usize,
    pub action_unsolved: usize,
    /// First iteration of the seed-averaged curve above the threshold.
    pub state_curve_crossing: Option<usize>,
    pub action_curve_crossing: Option<usize>,
}

/// First 1-based index with `curve[t] > threshold`.
pub fn solve_iteration(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&r| r > threshold).map(|t| t + 1)
}

pub fn mean_curve_crossing(curves: &[Vec<f64>], threshold: f64) -> Option<usize> {
    let len = curves.iter().map(Vec::len).min()?;
    let mean: Vec<f64> = (0..len)
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len() as f64)
        .collect();
    solve_iteration(&mean, threshold)
}

/// `(state − action) / state` in percent.
pub fn improvement_percent(state_mean: f64, action_mean: f64) -> f64 {
    100.0 * (state_mean - action_mean) / state_mean
}

pub fn solve_time_row(
    m: usize,
    threshold: f64,
    budget: usize,
    state: &[Vec<f64>],
    action: &[Vec<f64>],
) -> Result<SolveTimeRow> {
    if state.is_empty() || action.is_empty() {
        return Err(Error::InvalidInput("solve-time row needs curves for both arms".into()));
    }
    if state.len() != action.len() {
        return Err(Error::InvalidInput(format!(
            "arms have {} and {} seeds",
            state.len(),
            action.len()
        )));
    }
    let times = |curves: &[Vec<f64>]| {
        let t: Vec<Option<usize>> = curves.iter().map(|c| solve_iteration(c, threshold)).collect();
        let unsolved = t.iter().filter(|x| x.is_none()).count();
        let mean = t.iter().map(|x| x.unwrap_or(budget) as f64).sum::<f64>() / t.len() as f64;
        (mean, unsolved)
    };
    let (state_mean, state_unsolved) = times(state);
    let (action_mean, action_unsolved) = times(action);
    Ok(SolveTimeRow {
        m,
        threshold,
        seeds: state.len(),
        budget,
        state_mean,
        action_mean,
        delta: state_mean - action_mean,
        improvement_percent: improvement_percent(state_mean, action_mean),
        state_unsolved,
        action_unsolved,
        state_curve_crossing: mean_curve_crossing(state, threshold),
        action_curve_crossing: mean_curve_crossing(action, threshold),
    })
}

/// Target matching comparison of a state-value arm against a
/// mean-marginalized arm, both linear in the inputs and their squares.
pub fn table1_config(m: usize, iterations: usize, seeds: &[u64], out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvConfig {
            name: "target_matching".into(),
            params: serde_json::json!({ "m": m }),
        },
        arms: vec![
            Arm::new("state", BaselineKind::StateValue),
            Arm::new("action", BaselineKind::MeanMarginalized),
        ],
        features: FeatureSpec::Quadratic,
        iterations,
        trajectories: 150,
        seeds: seeds.to_vec(),
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// One row per run directory; each must hold a state-only and an
/// action-dependent arm.
pub fn table1_report(dirs: &[PathBuf]) -> Result<Vec<SolveTimeRow>> {
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let run = RunDir::load(dir)?;
        let c = &run.config;
        let pick = |dependent: bool| {
            c.arms
                .iter()
                .find(|a| a.baseline.is_action_dependent() == dependent)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{} has no {} arm",
                        dir.display(),
                        if dependent { "action-dependent" } else { "state-only" }
                    ))
                })
        };
        let (state_arm, action_arm) = (pick(false)?, pick(true)?);
        let m = run.summary.action_dim;
        let threshold = run.summary.solve_threshold.unwrap_or_else(|| solve_threshold_for(m));
        let curves = |arm: &Arm| -> Vec<Vec<f64>> {
            c.seeds
                .iter()
                .map(|&s| run.curves[&(arm.name.clone(), s)].iter().map(|r| r.mean_return).collect())
                .collect()
        };
        rows.push(solve_time_row(
            m,
            threshold,
            c.iterations,
            &curves(state_arm),
            &curves(action_arm),
        )?);
    }
    Ok(rows)
}

pub fn table1_markdown(rows: &[SolveTimeRow]) -> String {
    let mut s = String::from(
        "| m | threshold | state | action | delta | improvement | mean-curve state | mean-curve action |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    let cross = |c: Option<usize>| c.map_or("-".to_string(), |v| v.to_string());
    for r in rows {
        let unsolved = |n: usize| if n > 0 { format!(" ({n} unsolved)") } else { String::new() };
        s.push_str(&format!(
            "| {} | {} | {:.1}{} | {:.1}{} | {:.1} | {:.1}% | {} | {} |\n",
            r.m,
            r.threshold,
            r.state_mean,
            unsolved(r.state_unsolved),
            r.action_mean,
            unsolved(r.action_unsolved),
            r.delta,
            r.improvement_percent,
            cross(r.state_curve_crossing),
            cross(r.action_curve_crossing),
        ));
    }
    s
}
