//! Grid evaluation of a trained latent policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    diversity_score, embedding_of, mean, normalized_score, rollout, toy_score_anchors,
    trajectory_mode_label, Bandwidth, Diversity, ModeLabel, PolicyEmbedding, ScoreAnchors,
};
use crate::env::{EnvConfig, NormStats};
use crate::error::{Error, Result};
use crate::models::ModelBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Points per axis of the latent grid.
    pub grid: usize,
    pub bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episodes: 10,
            grid: 3,
            bandwidth: Bandwidth::Median,
            seed: 0,
        }
    }
}

/// `n x n` evenly spaced points over `[-1, 1]^2`, first coordinate outermost.
/// A single point sits at the origin.
pub fn z_grid(n: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    };
    axis.iter()
        .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub z: Vec<f64>,
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
    pub modes: Vec<ModeLabel>,
    pub success_rate: f64,
    pub mean_return: f64,
    /// Most frequent episode mode; ties go to the earlier label.
    pub mode: ModeLabel,
    pub embedding: PolicyEmbedding,
}

impl CellReport {
    /// At least half of the cell's episodes reached the goal.
    pub fn is_successful(&self) -> bool {
        self.success_rate >= 0.5
    }
}

/// The aggregates printed for a report; all derivable from its cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_return: f64,
    pub normalized_score: f64,
    pub diversity: Diversity,
    pub mode_histogram: BTreeMap<ModeLabel, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvConfig,
    pub anchors: ScoreAnchors,
    pub options: EvalOptions,
    pub cells: Vec<CellReport>,
    pub summary: EvalSummary,
}

fn majority(modes: &[ModeLabel]) -> ModeLabel {
    let mut counts: BTreeMap<ModeLabel, usize> = BTreeMap::new();
    for &m in modes {
        *counts.entry(m).or_default() += 1;
    }
    counts
        .iter()
        .fold((ModeLabel::Stalled, 0), |best, (&m, &c)| if c > best.1 { (m, c) } else { best })
        .0
}

fn aggregate(cells: &[CellReport], anchors: &ScoreAnchors, bandwidth: Bandwidth) -> Result<EvalSummary> {
    let returns: Vec<f64> = cells.iter().flat_map(|c| c.returns.iter().copied()).collect();
    if returns.is_empty() {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let successes = cells.iter().flat_map(|c| &c.successes).filter(|&&s| s).count();
    let mean_return = mean(returns.iter().copied());
    let phis: Vec<Vec<f64>> = cells.iter().map(|c| c.embedding.phi.to_vec()).collect();
    let mut mode_histogram = BTreeMap::new();
    for c in cells {
        *mode_histogram.entry(c.mode).or_default() += 1;
    }
    Ok(EvalSummary {
        success_rate: successes as f64 / returns.len() as f64,
        mean_return,
        normalized_score: normalized_score(mean_return, anchors.min_return, anchors.max_return)?,
        diversity: diversity_score(&phis, bandwidth)?,
        mode_histogram,
    })
}

impl EvalReport {
    /// Recomputes the summary from the raw per-episode data.
    pub fn reaggregate(&self) -> Result<EvalSummary> {
        aggregate(&self.cells, &self.anchors, self.options.bandwidth)
    }

    /// Distinct majority modes among successful cells.
    pub fn successful_modes(&self) -> Vec<ModeLabel> {
        let mut m: Vec<ModeLabel> = self
            .cells
            .iter()
            .filter(|c| c.is_successful())
            .map(|c| c.mode)
            .collect();
        m.sort();
        m.dedup();
        m
    }
}

/// Runs `options.episodes` mean-action episodes at every grid latent and
/// scores them against the scripted anchors of `env`.
pub fn evaluate(models: &ModelBundle, norm: &NormStats, env: &EnvConfig, options: &EvalOptions) -> Result<EvalReport> {
    if options.episodes == 0 || options.grid == 0 {
        return Err(Error::contract("evaluation needs at least one episode and one grid point"));
    }
    if models.config.latent_dim != 2 {
        return Err(Error::dim("evaluate", 2, models.config.latent_dim));
    }
    let anchors = toy_score_anchors(env, options.seed)?;
    let mut cells = Vec::new();
    for z in z_grid(options.grid) {
        let eps = rollout(models, norm, &z, env, options.episodes, false, options.seed)?;
        let modes: Vec<ModeLabel> = eps.iter().map(|e| trajectory_mode_label(&e.states)).collect();
        let successes: Vec<bool> = eps.iter().map(|e| e.success).collect();
        let returns: Vec<f64> = eps.iter().map(|e| e.ret).collect();
        cells.push(CellReport {
            embedding: embedding_of(&eps, &z)?,
            success_rate: successes.iter().filter(|&&s| s).count() as f64 / eps.len() as f64,
            mean_return: mean(returns.iter().copied()),
            mode: majority(&modes),
            z,
            returns,
            successes,
            modes,
        });
    }
    let summary = aggregate(&cells, &anchors, options.bandwidth)?;
    Ok(EvalReport {
        env: env.clone(),
        anchors,
        options: options.clone(),
        cells,
        summary,
    })
}
