//! JSON-lines episode logs: a header, one line per step, a summary.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CollisionEvent, EpisodeResult, StepRecord};
use crate::dynamics::{ControlInput, VehicleState};
use crate::scenario::ScenarioConfig;
use crate::uncertainty::Mode;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log has no step lines")]
    Empty,
    #[error("log is missing its {0} line")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        seed: u64,
        mode: Mode,
        scenario: Box<ScenarioConfig>,
        initial: Vec<VehicleState<f64>>,
    },
    Step {
        #[serde(flatten)]
        record: Box<StepRecord>,
        inputs: Vec<ControlInput<f64>>,
        states: Vec<VehicleState<f64>>,
    },
    Summary {
        success: bool,
        navigation_time: Option<f64>,
        mean_velocity: Vec<f64>,
        mean_heading: Vec<f64>,
        measured: Vec<usize>,
        backup_activations: usize,
        min_distance: f64,
        collisions: Vec<CollisionEvent>,
    },
}

/// Writes the episode; `states` on a step line are those after the step.
pub fn write_log<W: Write>(result: &EpisodeResult, config: &ScenarioConfig, mut w: W) -> Result<(), LogError> {
    let mut line = |l: &LogLine| -> Result<(), LogError> {
        serde_json::to_writer(&mut w, l).map_err(|e| LogError::Parse { line: 0, source: e })?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&LogLine::Header {
        seed: result.seed,
        mode: result.mode,
        scenario: Box::new(config.clone()),
        initial: result.states.first().cloned().unwrap_or_default(),
    })?;
    for (t, record) in result.steps.iter().enumerate() {
        line(&LogLine::Step {
            record: Box::new(record.clone()),
            inputs: result.inputs[t].clone(),
            states: result.states[t + 1].clone(),
        })?;
    }
    line(&LogLine::Summary {
        success: result.success,
        navigation_time: result.navigation_time,
        mean_velocity: result.mean_velocity.clone(),
        mean_heading: result.mean_heading.clone(),
        measured: result.measured.clone(),
        backup_activations: result.backup_activations,
        min_distance: result.min_distance,
        collisions: result.collisions.clone(),
    })?;
    Ok(())
}

/// Parses a log back into its lines; requires a header and at least one step.
pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogLine>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Parse { line: i + 1, source: e })?);
    }
    if !matches!(out.first(), Some(LogLine::Header { .. })) {
        return Err(if out.is_empty() { LogError::Empty } else { LogError::Missing("header") });
    }
    if !out.iter().any(|l| matches!(l, LogLine::Step { .. })) {
        return Err(LogError::Empty);
    }
    Ok(out)
}
