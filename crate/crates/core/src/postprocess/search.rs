use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{postprocess, PostprocessConfig};
use crate::error::{Error, Result};
use crate::imagecore::{LabeledInstances, Raster};
use crate::metrics::evaluate;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Mpq,
    R2,
}

/// One validation image: averaged probability planes and its ground truth.
#[derive(Clone, Debug)]
pub struct ValidationItem<T> {
    pub semantic: Raster<T>,
    pub three_label: Raster<T>,
    pub truth: LabeledInstances,
}

/// Runs the full post-processing on every item and scores the result.
pub fn evaluate_config<T: Scalar>(items: &[ValidationItem<T>], cfg: &PostprocessConfig, objective: Objective, crop: Option<usize>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let preds: Vec<Result<LabeledInstances>> = items.par_iter().map(|it| postprocess(&it.semantic, &it.three_label, cfg)).collect();
    let mut pairs = Vec::with_capacity(items.len());
    for (p, it) in preds.into_iter().zip(items) {
        pairs.push((p?, it.truth.clone()));
    }
    let report = evaluate(&pairs, cfg.num_classes(), crop)?;
    match objective {
        Objective::Mpq => Ok(report.pq.mpq),
        Objective::R2 => report.r2.map(|r| r.mean).ok_or_else(|| Error::invalid("R^2 objective needs at least 2 validation images")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best_index: usize,
    pub best: PostprocessConfig,
    pub best_score: f64,
    pub scores: Vec<f64>,
}

/// Scores every candidate and returns the best; ties go to the earliest.
pub fn grid_search<T: Scalar>(
    candidates: &[PostprocessConfig],
    items: &[ValidationItem<T>],
    objective: Objective,
    crop: Option<usize>,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidate grid is empty"));
    }
    let scores = candidates
        .par_iter()
        .map(|c| evaluate_config(items, c, objective, crop))
        .collect::<Result<Vec<f64>>>()?;
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(GridResult { best_index, best: candidates[best_index].clone(), best_score: scores[best_index], scores })
}

/// Values tried per class for each parameter; an empty list leaves that
/// parameter untouched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterGrid {
    pub seed: Vec<f64>,
    pub foreground: Vec<f64>,
    pub min_area: Vec<usize>,
    pub max_area: Vec<usize>,
    pub min_solidity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchRow {
    pub round: usize,
    pub class: usize,
    pub parameter: &'static str,
    pub value: f64,
    pub score: f64,
}

impl SearchRow {
    pub const CSV_HEADER: &'static str = "round,class,parameter,value,score";

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{:.6}", self.round, self.class, self.parameter, self.value, self.score)
    }
}

const PARAMETERS: [&str; 5] = ["seed", "foreground", "min_area", "max_area", "min_solidity"];

fn with_value(base: &PostprocessConfig, class: usize, parameter: &str, value: f64) -> PostprocessConfig {
    let mut c = base.clone();
    match parameter {
        "seed" => c.watershed.seed[class] = value,
        "foreground" => c.watershed.foreground[class] = value,
        "min_area" => c.filter.min_area[class] = value as usize,
        "max_area" => c.filter.max_area[class] = value as usize,
        _ => c.filter.min_solidity[class] = value,
    }
    c
}

fn values_of(grid: &ParameterGrid, parameter: &str) -> Vec<f64> {
    match parameter {
        "seed" => grid.seed.clone(),
        "foreground" => grid.foreground.clone(),
        "min_area" => grid.min_area.iter().map(|&v| v as f64).collect(),
        "max_area" => grid.max_area.iter().map(|&v| v as f64).collect(),
        _ => grid.min_solidity.clone(),
    }
}

/// Coordinate-wise search: for every round, class and parameter in turn, all
/// grid values are scored with the other settings held fixed, and the best
/// replaces the current value only if it scores strictly higher. Candidates
/// violating config invariants are skipped. Returns the final config, its
/// score and one row per scored candidate.
pub fn coordinate_search<T: Scalar>(
    base: &PostprocessConfig,
    grid: &ParameterGrid,
    items: &[ValidationItem<T>],
    objective: Objective,
    crop: Option<usize>,
    rounds: usize,
) -> Result<(PostprocessConfig, f64, Vec<SearchRow>)> {
    base.validate()?;
    let mut current = base.clone();
    let mut current_score = evaluate_config(items, &current, objective, crop)?;
    let mut rows = Vec::new();
    for round in 0..rounds {
        for class in 0..current.num_classes() {
            for parameter in PARAMETERS {
                let candidates: Vec<(f64, PostprocessConfig)> = values_of(grid, parameter)
                    .into_iter()
                    .map(|v| (v, with_value(&current, class, parameter, v)))
                    .filter(|(_, c)| c.validate().is_ok())
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let configs: Vec<PostprocessConfig> = candidates.iter().map(|(_, c)| c.clone()).collect();
                let result = grid_search(&configs, items, objective, crop)?;
                for ((value, _), &score) in candidates.iter().zip(&result.scores) {
                    rows.push(SearchRow { round, class, parameter, value: *value, score });
                }
                if result.best_score > current_score {
                    current = result.best;
                    current_score = result.best_score;
                }
            }
        }
    }
    Ok((current, current_score, rows))
}
